//! Two-party whitespace channel discovery.
//!
//! Alice and Bob each see a private, noisy view of a shared spectrum of `n`
//! channels. Every round both pick a channel; they rendezvous the first time
//! they pick the same channel and that channel is open for Alice, for Bob and
//! in the global environment between them.
//!
//! The crate is organised bottom-up:
//!
//! - [`env`]: the three Bernoulli environments and their index structures.
//! - [`strategy`]: per-round channel distributions (geometric, heavy-tail,
//!   uniform) and the clocked partition strategy.
//! - [`sync`]: exact per-round success probability and round-by-round
//!   simulation.
//! - [`bounds`]: dyadic decomposition diagnostics and empirical bound checks.
//! - [`harness`]: experiment sweeps, aggregation and CSV / gnuplot output.
//! - [`oracle`]: exhaustive enumeration over all environments for small `n`.
//! - [`cli`]: the `wsync` command-line front end.

pub mod bounds;
pub mod cli;
pub mod env;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod stats;
pub mod strategy;
pub mod sync;

pub use env::{Densities, Environment, OpenIndex, Party};
pub use error::{Error, Result};
pub use strategy::{ChannelDistribution, StrategySpec};
pub use sync::{ExpectedRounds, RoundOutcome, SyncProbability};
