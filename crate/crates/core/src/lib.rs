//! Simulation and inference for randomly reinforced urns with dominated colors.
//!
//! The crate is organised bottom-up:
//!
//! - [`schedule`] and [`config`]: reinforcement families and model validation.
//! - [`urn`] and [`rng`]: trajectories driven by per-replication streams.
//! - [`statistics`]: proportions and the four CLT statistics at a checkpoint.
//! - [`inference`] and [`normal`]: plug-in variance estimators, intervals and the
//!   `H0: J = J*` test.
//! - [`anova`]: the assignment-simulation test for observed reinforcement panels.
//! - [`harness`] and [`ks`]: replicated Monte Carlo experiments.
//! - [`io`]: CSV/JSON persistence, run manifests and threshold checks.

pub mod anova;
pub mod config;
pub mod error;
pub mod harness;
pub mod inference;
pub mod io;
pub mod ks;
pub mod normal;
pub mod rng;
pub mod schedule;
pub mod statistics;
pub mod urn;

pub use config::{validate_config, UrnConfig, ValidatedConfig};
pub use error::{Error, Result};
pub use urn::{LimitProxy, Trajectory, UrnState};
