//! MILP model, node encoders and the whole-network assembler.

mod encode;
mod lp_format;
mod model;
mod network;

pub use encode::{
    encode_bigm, encode_convex_hull, encode_nonlifted, encode_partitioned, encode_stable, family_row, nonlifted_unions,
    term_bounds, NodeEncoding, NONLIFTED_CAP,
};
pub use lp_format::{format_g17, write_lp};
pub use model::{
    Constraint, ConstraintId, LinExpr, MilpModel, ObjSense, Objective, Sense, VarId, VarKind, Variable,
};
pub use network::{
    encode_hidden_layers, encode_network, encode_network_into, encode_node, plan_partitions, Formulation,
    FormulationConfig, NetworkEncoding,
};
