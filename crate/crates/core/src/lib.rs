//! Quasi-dynamic traffic assignment: per-interval Frank-Wolfe user
//! equilibrium with route truncation and residual demand carried between
//! intervals, run over a fixed pool of shared-memory workers.

pub mod assignment;
pub mod demand;
pub mod engine;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod io;
pub mod loading;
pub mod network;
pub mod router;

pub use error::{Error, Result};
pub use network::{BprParams, CostVector, Link, LinkFlowVector, LinkId, LinkSpec, Network, NodeId};
