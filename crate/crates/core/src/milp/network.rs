//! Whole-network assembly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{BoundsTable, PartitionPlan, Stability};
use crate::milp::encode::{
    encode_bigm, encode_nonlifted, encode_partitioned, encode_stable, NodeEncoding, NONLIFTED_CAP,
};
use crate::milp::{LinExpr, MilpModel, Sense, VarId};
use crate::nn::{InputBox, NeuralNet};
use crate::partition::{Partition, StrategyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Formulation {
    BigM,
    Partitioned { n: usize },
    NonLifted { n: usize },
    ConvexHull,
}

impl Formulation {
    /// Number of partitions, where meaningful (`None` for the hull).
    pub fn num_partitions(&self) -> Option<usize> {
        match self {
            Formulation::BigM => Some(1),
            Formulation::Partitioned { n } | Formulation::NonLifted { n } => Some(*n),
            Formulation::ConvexHull => None,
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formulation::BigM => write!(f, "bigm"),
            Formulation::Partitioned { n } => write!(f, "partition:{n}"),
            Formulation::NonLifted { n } => write!(f, "nonlifted:{n}"),
            Formulation::ConvexHull => write!(f, "hull"),
        }
    }
}

impl FromStr for Formulation {
    type Err = Error;

    /// Accepts `bigm`, `hull`, `partition:N` and `nonlifted:N`.
    fn from_str(s: &str) -> Result<Self> {
        let parse_n = |v: &str| {
            v.parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| Error::Model(format!("bad partition count in formulation {s:?}")))
        };
        match s.split_once(':') {
            None if s == "bigm" || s == "big-m" => Ok(Formulation::BigM),
            None if s == "hull" || s == "convex-hull" => Ok(Formulation::ConvexHull),
            Some(("partition" | "part", n)) => Ok(Formulation::Partitioned { n: parse_n(n)? }),
            Some(("nonlifted", n)) => Ok(Formulation::NonLifted { n: parse_n(n)? }),
            _ => Err(Error::Model(format!(
                "unknown formulation {s:?} (expected bigm, hull, partition:N or nonlifted:N)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulationConfig {
    pub formulation: Formulation,
    /// Strategy used to split inputs; its `num_partitions` is overridden by
    /// the formulation's.
    pub strategy: StrategyConfig,
    /// Replace nodes with fixed sign by `y = 0` or `y = w.x + b`.
    pub stabilize: bool,
    pub nonlifted_cap: usize,
}

impl FormulationConfig {
    pub fn new(formulation: Formulation, strategy: StrategyConfig) -> Self {
        Self {
            formulation,
            strategy,
            stabilize: true,
            nonlifted_cap: NONLIFTED_CAP,
        }
    }

    pub fn bigm() -> Self {
        Self::new(Formulation::BigM, StrategyConfig::equal_size(1))
    }

    pub fn with_stabilize(mut self, on: bool) -> Self {
        self.stabilize = on;
        self
    }
}

/// Partition of every node of every layer under `cfg`. The output layer gets
/// a single group.
pub fn plan_partitions(net: &NeuralNet, cfg: &FormulationConfig) -> Result<PartitionPlan> {
    let last = net.layers.len() - 1;
    net.layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            (0..layer.num_nodes())
                .map(|r| {
                    let eta = layer.num_inputs();
                    if l == last {
                        return Ok(Partition::single(eta));
                    }
                    match cfg.formulation {
                        Formulation::BigM => Ok(Partition::single(eta)),
                        Formulation::ConvexHull => Ok(Partition::singletons(eta)),
                        Formulation::Partitioned { n } | Formulation::NonLifted { n } => {
                            let mut s = cfg.strategy.clone();
                            s.num_partitions = n;
                            s.partition_node(&layer.weights[r], l, r)
                        }
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkEncoding {
    pub model: MilpModel,
    pub inputs: Vec<VarId>,
    /// Encodings of the hidden nodes, `hidden[l][r]`.
    pub hidden: Vec<Vec<NodeEncoding>>,
    pub outputs: Vec<VarId>,
    pub plan: PartitionPlan,
}

impl NetworkEncoding {
    pub fn sigmas(&self) -> Vec<VarId> {
        self.hidden.iter().flatten().filter_map(|e| e.sigma).collect()
    }
}

/// Encodes one hidden node per the formulation.
pub fn encode_node(
    model: &mut MilpModel,
    cfg: &FormulationConfig,
    name: &str,
    inputs: &[VarId],
    w: &[f64],
    b: f64,
    partition: &Partition,
    bounds: &crate::interval::NodeBounds,
) -> Result<NodeEncoding> {
    if cfg.stabilize {
        match bounds.stability() {
            Stability::Inactive => return encode_stable(model, name, inputs, w, b, bounds, false),
            Stability::Active => return encode_stable(model, name, inputs, w, b, bounds, true),
            Stability::Unstable => {}
        }
    }
    match cfg.formulation {
        Formulation::BigM => encode_bigm(model, name, inputs, w, b, bounds),
        Formulation::Partitioned { .. } | Formulation::ConvexHull => {
            encode_partitioned(model, name, inputs, w, b, partition, bounds)
        }
        Formulation::NonLifted { .. } => {
            encode_nonlifted(model, name, inputs, w, b, partition, bounds, cfg.nonlifted_cap)
        }
    }
}

/// Encodes hidden layers `0..num_layers` on top of existing input variables
/// and returns their node encodings.
pub fn encode_hidden_layers(
    model: &mut MilpModel,
    net: &NeuralNet,
    inputs: &[VarId],
    cfg: &FormulationConfig,
    plan: &PartitionPlan,
    bounds: &BoundsTable,
    num_layers: usize,
) -> Result<Vec<Vec<NodeEncoding>>> {
    let mut prev: Vec<VarId> = inputs.to_vec();
    let mut hidden = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let layer = &net.layers[l];
        let mut encs = Vec::with_capacity(layer.num_nodes());
        for r in 0..layer.num_nodes() {
            let enc = encode_node(
                model,
                cfg,
                &format!("l{l}_n{r}"),
                &prev,
                &layer.weights[r],
                layer.biases[r],
                &plan[l][r],
                bounds.node(l, r),
            )?;
            encs.push(enc);
        }
        prev = encs.iter().map(|e| e.output).collect();
        hidden.push(encs);
    }
    Ok(hidden)
}

/// Encodes `net` on top of existing input variables; outputs are free
/// variables tied to the last hidden layer by equality rows.
pub fn encode_network_into(
    model: &mut MilpModel,
    net: &NeuralNet,
    inputs: &[VarId],
    cfg: &FormulationConfig,
    bounds: &BoundsTable,
) -> Result<(Vec<Vec<NodeEncoding>>, Vec<VarId>, PartitionPlan)> {
    bounds.check_shape(net)?;
    if inputs.len() != net.input_dim {
        return Err(Error::Dimension {
            expected: net.input_dim,
            got: inputs.len(),
            context: "network inputs",
        });
    }
    let plan = plan_partitions(net, cfg)?;
    let nh = net.layers.len() - 1;
    let hidden = encode_hidden_layers(model, net, inputs, cfg, &plan, bounds, nh)?;
    let last: Vec<VarId> = hidden.last().map_or_else(|| inputs.to_vec(), |h| h.iter().map(|e| e.output).collect());
    let out_layer = net.output_layer();
    let mut outputs = Vec::with_capacity(out_layer.num_nodes());
    for k in 0..out_layer.num_nodes() {
        let f = model.add_continuous(format!("f{k}"), f64::NEG_INFINITY, f64::INFINITY);
        let mut e = LinExpr::term(f, 1.0);
        for (&v, &wv) in last.iter().zip(&out_layer.weights[k]) {
            e.add(v, -wv);
        }
        model.add_constraint(format!("out{k}"), e, Sense::Eq, out_layer.biases[k]);
        outputs.push(f);
    }
    Ok((hidden, outputs, plan))
}

/// Fresh model: input variables on `input`, then the network.
pub fn encode_network(
    net: &NeuralNet,
    input: &InputBox,
    cfg: &FormulationConfig,
    bounds: &BoundsTable,
) -> Result<NetworkEncoding> {
    if input.dim() != net.input_dim {
        return Err(Error::Dimension {
            expected: net.input_dim,
            got: input.dim(),
            context: "input box",
        });
    }
    let mut model = MilpModel::new();
    let inputs: Vec<VarId> = (0..net.input_dim)
        .map(|i| model.add_continuous(format!("x{i}"), input.lower[i], input.upper[i]))
        .collect();
    let (hidden, outputs, plan) = encode_network_into(&mut model, net, &inputs, cfg, bounds)?;
    Ok(NetworkEncoding {
        model,
        inputs,
        hidden,
        outputs,
        plan,
    })
}
