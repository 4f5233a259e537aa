//! Sequential adaptive multi-hypothesis testing over sensor networks.
//!
//! A network of `L` sensors probes an environment whose state is one of `M`
//! hypotheses. Each time step, a sensor picks a probing action, draws an
//! observation from a finite alphabet, and accumulates log-likelihoods. Four
//! stopping protocols are implemented on top of that common engine:
//!
//! - **standard** — the classic single-sensor adaptive test: probe with the
//!   maximin action distribution of the current leader, stop when the
//!   worst-case log-likelihood ratio crosses a threshold.
//! - **fct** — a fusion-center test on the expanded action set of
//!   (action, sensor) pairs; one active sensor per step, minimizing total
//!   samples at the price of wall-clock time and communication.
//! - **dct** — a decentralized test: the fusion center splits the global
//!   threshold across sensors proportionally to their capability, sensors
//!   report local decisions when their share is reached, and the center
//!   decides on unanimity.
//! - **cct** — a fully distributed test: sensors first agree on the network
//!   capability by average consensus with a localized stopping rule, then
//!   threshold locally against the estimate, then detect network-wide
//!   agreement with gossiped counters and halt.
//!
//! The [`harness`] module drives seeded Monte Carlo experiments over these
//! protocols (in parallel with the `parallel` feature, sequentially without)
//! and evaluates the theoretical error/decision-time/communication bounds the
//! protocols are designed to meet. The `chernoff-net` binary exposes all of
//! it from the command line.

pub mod cct;
pub mod config;
pub mod dct;
pub mod engine;
mod error;
pub mod harness;
pub mod maximin;
pub mod network;
pub mod prob;

pub use error::{Error, Result};
