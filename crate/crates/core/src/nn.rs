//! Dense feed-forward ReLU networks: the JSON loader and exact evaluation.
//!
//! Evaluation here is the ground truth every MILP encoding is checked against,
//! so it does nothing but plain double-precision affine maps and `max(0, .)`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

/// One fully connected layer. `weights[r]` is the weight row of node `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn num_nodes(&self) -> usize {
        self.biases.len()
    }

    pub fn num_inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Preactivation `w_r . x + b_r` for every node.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(row, b)| dot(row, x) + b)
            .collect()
    }
}

/// A trained network: ReLU hidden layers followed by one linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralNet {
    pub input_dim: usize,
    pub layers: Vec<DenseLayer>,
}

impl NeuralNet {
    /// Builds a network and checks every structural invariant.
    pub fn new(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        let net = Self { input_dim, layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Parse("input_dim must be positive".into()));
        }
        if self.layers.len() < 2 {
            return Err(Error::Parse(format!(
                "need at least one hidden layer and an output layer, found {} layer(s)",
                self.layers.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut width = self.input_dim;
        for (idx, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != layer.biases.len() {
                return Err(Error::Layer {
                    layer: idx,
                    field: "biases",
                    message: format!(
                        "weights have {} rows but biases have length {}",
                        layer.weights.len(),
                        layer.biases.len()
                    ),
                });
            }
            if layer.weights.is_empty() {
                return Err(Error::Layer {
                    layer: idx,
                    field: "weights",
                    message: "layer has no nodes".into(),
                });
            }
            for (r, row) in layer.weights.iter().enumerate() {
                if row.len() != width {
                    return Err(Error::Layer {
                        layer: idx,
                        field: "weights",
                        message: format!("row {r} has {} columns, expected {width}", row.len()),
                    });
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Layer {
                        layer: idx,
                        field: "weights",
                        message: format!("row {r} contains a non-finite value"),
                    });
                }
            }
            if layer.biases.iter().any(|v| !v.is_finite()) {
                return Err(Error::Layer {
                    layer: idx,
                    field: "biases",
                    message: "non-finite value".into(),
                });
            }
            let expected = if idx == last {
                Activation::Linear
            } else {
                Activation::Relu
            };
            if layer.activation != expected {
                return Err(Error::Layer {
                    layer: idx,
                    field: "activation",
                    message: format!("expected {expected:?} for this position"),
                });
            }
            width = layer.num_nodes();
        }
        Ok(())
    }

    pub fn num_outputs(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::num_nodes)
    }

    /// The ReLU layers, i.e. everything except the output layer.
    pub fn hidden_layers(&self) -> &[DenseLayer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output_layer(&self) -> &DenseLayer {
        &self.layers[self.layers.len() - 1]
    }

    pub fn num_relus(&self) -> usize {
        self.hidden_layers().iter().map(DenseLayer::num_nodes).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pre = self.preactivations(x)?;
        Ok(pre.into_iter().last().unwrap_or_default())
    }

    /// Preactivation vector of every layer (the output layer's is the output).
    pub fn preactivations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: x.len(),
                context: "network input",
            });
        }
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let pre = layer.affine(&h);
            h = match layer.activation {
                Activation::Relu => pre.iter().map(|v| v.max(0.0)).collect(),
                Activation::Linear => pre.clone(),
            };
            out.push(pre);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }
}

/// Axis-aligned box on the network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
                context: "input box upper bounds",
            });
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::Instance(format!(
                    "input box dimension {i}: lower {l} exceeds upper {u}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    pub fn is_finite(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Parses and validates a network document.
///
/// The document is `{"input_dim": n, "layers": [{"weights", "biases", "activation"}]}`
/// with row-major weights. Convolutional layers are rejected; they have to be
/// lowered to dense layers before export.
pub fn load_network(document: &str) -> Result<NeuralNet> {
    let root: Value =
        serde_json::from_str(document).map_err(|e| Error::Parse(format!("invalid JSON: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::Parse("top level must be an object".into()))?;
    let input_dim = obj
        .get("input_dim")
        .ok_or_else(|| Error::Parse("missing field `input_dim`".into()))?
        .as_u64()
        .filter(|v| *v > 0)
        .ok_or_else(|| Error::Parse("`input_dim` must be a positive integer".into()))?
        as usize;
    let layers = obj
        .get("layers")
        .ok_or_else(|| Error::Parse("missing field `layers`".into()))?
        .as_array()
        .ok_or_else(|| Error::Parse("`layers` must be an array".into()))?;
    if layers.is_empty() {
        return Err(Error::Parse("`layers` is empty".into()));
    }
    let parsed = layers
        .iter()
        .enumerate()
        .map(|(idx, v)| parse_layer(idx, v))
        .collect::<Result<Vec<_>>>()?;
    NeuralNet::new(input_dim, parsed)
}

fn parse_layer(idx: usize, v: &Value) -> Result<DenseLayer> {
    let err = |field: &'static str, message: String| Error::Layer {
        layer: idx,
        field,
        message,
    };
    let obj = v
        .as_object()
        .ok_or_else(|| err("layer", "must be an object".into()))?;
    let kind = obj
        .get("type")
        .or_else(|| obj.get("kind"))
        .and_then(Value::as_str)
        .map(str::to_ascii_lowercase);
    let looks_conv = kind.as_deref().is_some_and(|k| k.contains("conv"))
        || ["kernel", "kernel_size", "filters", "stride", "padding"]
            .iter()
            .any(|k| obj.contains_key(*k));
    if looks_conv {
        return Err(err(
            "type",
            "convolutional layers are not supported; only dense layers can be encoded \
             (lower the convolution to a dense layer before export)"
                .into(),
        ));
    }
    if let Some(k) = kind.as_deref() {
        if !matches!(k, "dense" | "linear" | "fc") {
            return Err(err("type", format!("unsupported layer type `{k}`")));
        }
    }
    let weights = obj
        .get("weights")
        .ok_or_else(|| err("weights", "missing".into()))?
        .as_array()
        .ok_or_else(|| err("weights", "must be an array of rows".into()))?
        .iter()
        .enumerate()
        .map(|(r, row)| {
            row.as_array()
                .ok_or_else(|| err("weights", format!("row {r} is not an array")))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| err("weights", format!("row {r} has a non-numeric entry")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let biases = obj
        .get("biases")
        .ok_or_else(|| err("biases", "missing".into()))?
        .as_array()
        .ok_or_else(|| err("biases", "must be an array".into()))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| err("biases", "non-numeric entry".into()))
        })
        .collect::<Result<Vec<f64>>>()?;
    let activation = match obj.get("activation").and_then(Value::as_str) {
        Some("relu") => Activation::Relu,
        Some("linear") => Activation::Linear,
        Some(other) => return Err(err("activation", format!("unknown activation `{other}`"))),
        None => return Err(err("activation", "missing".into())),
    };
    Ok(DenseLayer {
        weights,
        biases,
        activation,
    })
}
