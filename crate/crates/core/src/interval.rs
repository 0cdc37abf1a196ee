//! Interval-arithmetic bounds on preactivations and partition sums.
//!
//! A [`BoundsTable`] holds one [`NodeBounds`] per node of every layer
//! (including the linear output layer, which never gets a binary). Both the
//! encoders and OBBT read from it; OBBT writes tighter values back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{InputBox, NeuralNet};
use crate::partition::Partition;

/// Where a bound came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Interval,
    Obbt,
    /// OBBT was attempted but an LP did not finish; the interval value was kept.
    ObbtFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub provenance: Provenance,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            provenance: Provenance::Interval,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    /// `self` lies inside `other` up to `tol`.
    pub fn within(&self, other: &Interval, tol: f64) -> bool {
        self.lo >= other.lo - tol && self.hi <= other.hi + tol
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// Smallest interval containing both.
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
            provenance: self.provenance,
        }
    }
}

/// Phase of a ReLU implied by its preactivation bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    /// `UB <= 0`: output is identically zero.
    Inactive,
    /// `LB >= 0`: output equals the preactivation.
    Active,
    Unstable,
}

/// Bounds for one node.
///
/// `inactive[n]` bounds the partition sum `sum_{i in S_n} w_i x_i` over inputs
/// that leave the node off (preactivation <= 0), `active[n]` over inputs that
/// turn it on. Interval propagation sets both to the unconditioned range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeBounds {
    pub preact: Interval,
    pub partition: Partition,
    pub inactive: Vec<Interval>,
    pub active: Vec<Interval>,
}

impl NodeBounds {
    pub fn stability(&self) -> Stability {
        if self.preact.hi <= 0.0 {
            Stability::Inactive
        } else if self.preact.lo >= 0.0 {
            Stability::Active
        } else {
            Stability::Unstable
        }
    }

    /// Range of the node's post-ReLU output.
    pub fn output_range(&self) -> (f64, f64) {
        (self.preact.lo.max(0.0), self.preact.hi.max(0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.preact.is_finite()
            && self.inactive.iter().all(Interval::is_finite)
            && self.active.iter().all(Interval::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsTable {
    /// `layers[l][r]`, mirroring the network shape.
    pub layers: Vec<Vec<NodeBounds>>,
}

impl BoundsTable {
    pub fn node(&self, layer: usize, node: usize) -> &NodeBounds {
        &self.layers[layer][node]
    }

    /// Box on the inputs of `layer`: the input box itself for layer 0, the
    /// clamped preactivation ranges of the previous layer otherwise.
    pub fn layer_input_box(&self, layer: usize, input: &InputBox) -> InputBox {
        if layer == 0 {
            return input.clone();
        }
        let (lower, upper) = self.layers[layer - 1]
            .iter()
            .map(NodeBounds::output_range)
            .unzip();
        InputBox { lower, upper }
    }

    /// Number of hidden nodes with each stability status.
    pub fn stability_counts(&self) -> (usize, usize, usize) {
        let hidden = &self.layers[..self.layers.len().saturating_sub(1)];
        let mut counts = (0, 0, 0);
        for nb in hidden.iter().flatten() {
            match nb.stability() {
                Stability::Inactive => counts.0 += 1,
                Stability::Active => counts.1 += 1,
                Stability::Unstable => counts.2 += 1,
            }
        }
        counts
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bounds serialize")
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        Ok(serde_json::from_str(doc)?)
    }

    /// Checks that the table matches the network's shape.
    pub fn check_shape(&self, net: &NeuralNet) -> Result<()> {
        if self.layers.len() != net.layers.len() {
            return Err(Error::Dimension {
                expected: net.layers.len(),
                got: self.layers.len(),
                context: "bounds table layers",
            });
        }
        for (l, (rows, layer)) in self.layers.iter().zip(&net.layers).enumerate() {
            if rows.len() != layer.num_nodes() {
                return Err(Error::Layer {
                    layer: l,
                    field: "bounds",
                    message: format!("{} entries for {} nodes", rows.len(), layer.num_nodes()),
                });
            }
        }
        Ok(())
    }
}

/// Range of `w . x + b` over the box.
pub fn node_interval(w: &[f64], b: f64, input: &InputBox) -> (f64, f64) {
    let mut lo = b;
    let mut hi = b;
    for (i, &wi) in w.iter().enumerate() {
        let (a, c) = weighted_range(wi, input.lower[i], input.upper[i]);
        lo += a;
        hi += c;
    }
    (lo, hi)
}

/// Range of `sum_{i in subset} w_i x_i` over the box. Empty subsets give `(0, 0)`.
pub fn partition_interval(w: &[f64], subset: &[usize], input: &InputBox) -> (f64, f64) {
    subset.iter().fold((0.0, 0.0), |(lo, hi), &i| {
        let (a, c) = weighted_range(w[i], input.lower[i], input.upper[i]);
        (lo + a, hi + c)
    })
}

/// Range of `w * x` for `x` in `[lo, hi]`.
pub fn weighted_range(w: f64, lo: f64, hi: f64) -> (f64, f64) {
    if w >= 0.0 {
        (w * lo, w * hi)
    } else {
        (w * hi, w * lo)
    }
}

/// Interval bounds for one node given its input box.
pub fn interval_node_bounds(w: &[f64], b: f64, partition: &Partition, input: &InputBox) -> NodeBounds {
    let (lo, hi) = node_interval(w, b, input);
    let parts: Vec<Interval> = partition
        .subsets()
        .iter()
        .map(|s| {
            let (a, c) = partition_interval(w, s, input);
            Interval::new(a, c)
        })
        .collect();
    NodeBounds {
        preact: Interval::new(lo, hi),
        partition: partition.clone(),
        inactive: parts.clone(),
        active: parts,
    }
}

/// One partition per node of every layer; hidden layers only are used by the
/// encoders, the output layer is always a single group.
pub type PartitionPlan = Vec<Vec<Partition>>;

/// Single-group plan for every node.
pub fn single_partition_plan(net: &NeuralNet) -> PartitionPlan {
    net.layers
        .iter()
        .map(|layer| {
            (0..layer.num_nodes())
                .map(|_| Partition::single(layer.num_inputs()))
                .collect()
        })
        .collect()
}

/// Layer-by-layer interval propagation.
///
/// `plan` may cover only the hidden layers; missing layers default to a single
/// group per node.
pub fn propagate(net: &NeuralNet, input: &InputBox, plan: &PartitionPlan) -> Result<BoundsTable> {
    if input.dim() != net.input_dim {
        return Err(Error::Dimension {
            expected: net.input_dim,
            got: input.dim(),
            context: "input box",
        });
    }
    let mut table = BoundsTable { layers: Vec::with_capacity(net.layers.len()) };
    for (l, layer) in net.layers.iter().enumerate() {
        let layer_box = table.layer_input_box(l, input);
        let rows = (0..layer.num_nodes())
            .map(|r| {
                let single;
                let partition = match plan.get(l).and_then(|p| p.get(r)) {
                    Some(p) => p,
                    None => {
                        single = Partition::single(layer.num_inputs());
                        &single
                    }
                };
                interval_node_bounds(&layer.weights[r], layer.biases[r], partition, &layer_box)
            })
            .collect();
        table.layers.push(rows);
    }
    Ok(table)
}
