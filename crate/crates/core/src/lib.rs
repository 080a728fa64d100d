//! Reward compatibility for inverse reinforcement learning on finite-horizon
//! tabular MDPs.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`] and [`solve`] hold the tabular model and its exact dynamic
//!   programming solvers (backward induction, policy evaluation, occupancy
//!   measures, soft/entropy-regularised values).
//! * [`compat`] computes exact (non)compatibility values, feasible-set
//!   membership and best/worst compatibility under partial coverage via
//!   extended value iteration.
//! * [`sampling`] generates trajectory datasets and builds empirical models.
//! * [`online`] and [`offline`] are the two estimators that classify rewards
//!   from data only.
//! * [`instances`] builds the fixture families used as ground truth.
//! * [`bench`] runs seeded error-vs-samples experiments against the oracles.

pub mod bench;
pub mod compat;
pub mod error;
pub mod instances;
pub mod io;
pub mod mdp;
pub mod offline;
pub mod online;
pub mod par;
pub mod rng;
pub mod sampling;
pub mod solve;

pub use compat::{CompatibilityMode, CompatibilityReport, SuboptimalityBand};
pub use error::{Error, Result};
pub use mdp::{CoverageSet, LinearRewardClass, Policy, RewardFunction, TabularMdp};
pub use sampling::{EmpiricalModel, Trajectory, TrajectoryDataset};
