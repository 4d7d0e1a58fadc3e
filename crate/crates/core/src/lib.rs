//! Simulation and analysis toolkit for a delay-tolerant, permissioned
//! proof-of-work payment chain serving an intermittently connected community.
//!
//! The crate is organised bottom-up:
//!
//! - [`chain`]: blocks, difficulty retargeting, fork choice and validation.
//! - [`ledger`]: the user balance contract (fiat and token accounts, exchange,
//!   transfers, miner rewards, admission control) plus partition detection.
//! - [`workload`]: Poisson transaction generation.
//! - [`sim`]: the deterministic discrete-event network simulator.
//! - [`analytics`]: post-run metrics over a [`trace::SimTrace`].
//! - [`design`]: closed-form cost, outage, profit and connectivity models.
//! - [`scenario`]: experiment configuration and its INI-style text format.

pub mod analytics;
pub mod chain;
pub mod design;
pub mod ids;
pub mod ledger;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod stats;
pub mod trace;
pub mod workload;

pub use ids::{BlockId, NodeId, TxId};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
