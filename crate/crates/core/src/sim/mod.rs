//! Deterministic discrete-event simulation of miners, full nodes, light
//! nodes and an intermittently connected bank.
//!
//! Each miner runs its own exponential clock (see [`mining`]). Blocks are
//! flooded hop by hop with a fixed per-link delay; transactions are
//! delivered to every reachable miner at their shortest-path delay. Offline
//! nodes drop traffic and resynchronise from a random online peer when they
//! come back. The bank is reachable only during its connected windows, after
//! fetching the backlog over the rate-limited backhaul.

mod engine;
pub mod mining;
pub mod topology;

pub use engine::{run, SimError};
pub use mining::{choose_winner, sample_block_interval};
pub use topology::hop_distances;
