use thiserror::Error;

/// Errors raised while loading networks, building models or solving them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("network document: {0}")]
    Parse(String),

    #[error("layer {layer}: {field}: {message}")]
    Layer {
        layer: usize,
        field: &'static str,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid partition strategy: {0}")]
    Strategy(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("non-finite bound for node {0}; this encoding needs finite coefficients")]
    UnboundedNode(String),

    #[error("non-lifted encoding needs 2^{n} rows per node, above the cap of {cap} partitions; use the lifted partitioned encoder instead")]
    NonLiftedCap { n: usize, cap: usize },

    #[error("oracle refused: {unstable} unstable nodes exceed the enumeration budget of {limit}")]
    OracleBudget { unstable: usize, limit: usize },

    #[error("invalid instance: {0}")]
    Instance(String),

    #[error("LP solve failed: {0}")]
    Lp(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
