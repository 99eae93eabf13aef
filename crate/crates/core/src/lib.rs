//! Bond percolation on random split trees and complete b-ary trees.
//!
//! The crate builds split trees, percolates them, evaluates the limit laws of
//! the giant-cluster fluctuations, and runs seeded Monte Carlo experiments
//! whose reports do not depend on the thread count.

pub mod error;
pub mod exec;
pub mod harness;
pub mod limitlaw;
pub mod perc;
pub mod quad;
pub mod regtree;
pub mod renewal;
pub mod splitvec;
pub mod stats;
pub mod treegen;

pub use error::{Error, Result};
pub use exec::Executor;
