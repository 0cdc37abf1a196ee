//! Mixed-integer linear programming formulations for trained ReLU networks.
//!
//! Networks are encoded with the big-M formulation, the partition-based
//! formulations (lifted and non-lifted) or the convex hull, and solved by the
//! embedded branch-and-bound over a bounded-variable simplex.

pub mod bnb;
pub mod cuts;
pub mod error;
pub mod interval;
pub mod lp;
pub mod milp;
pub mod nn;
pub mod obbt;
pub mod oracle;
pub mod partition;
pub mod tasks;

pub use error::{Error, Result};
