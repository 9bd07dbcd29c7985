//! Storage allocation for a unit-size file, MDS-coded across `n` nodes that
//! fail independently with heterogeneous probabilities, under a total
//! storage budget `T`.
//!
//! The crate provides:
//!
//! * [`model`]: problem instances, the Markov reliability test and the
//!   reduction onto the unit box;
//! * [`evaluator`]: exact and Monte Carlo failure probabilities;
//! * [`bounds`]: Hoeffding and Chernoff upper bounds;
//! * [`hoeffding`]: the smallest epsilon certifiable through Hoeffding's
//!   inequality and a matching allocation;
//! * [`chernoff`]: the KKT solution of the Chernoff relaxation, its
//!   closed-form special case and the alternating `(x, t)` minimization;
//! * [`harness`]: seeded budget sweeps written as CSV.

pub mod bounds;
pub mod chernoff;
pub mod error;
pub mod evaluator;
pub mod harness;
pub mod hoeffding;
pub mod model;

pub use error::{Error, Result};
pub use model::{Allocation, Strategy, SystemProfile};
