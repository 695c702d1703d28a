//! Exact constrained Markov decision process (CMDP) machinery for Bayesian
//! response-adaptive allocation in two-arm trials with binary outcomes.
//!
//! The crate is organised bottom-up:
//!
//! * [`state`] enumerates and indexes the trial state space.
//! * [`measure`] holds the probability laws on the success probabilities and
//!   their marginal likelihoods / predictive kernels.
//! * [`terminal`] computes end-of-trial statistics (Fisher's exact test,
//!   effect estimates, posterior MSE).
//! * [`mdp`] performs backward induction and exact forward recursion.
//! * [`lp`] is a small dense two-phase simplex solver.
//! * [`cmdp`] solves constrained problems by Lagrangian cutting planes.
//! * [`designs`] builds the named allocation procedures.
//! * [`oc`] evaluates frequentist operating characteristics.
//!
//! Without default features the crate is `no_std` and only needs `alloc`.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cmdp;
pub mod designs;
mod error;
pub mod lp;
pub mod mdp;
pub mod measure;
pub mod oc;
pub mod special;
pub mod state;
mod sweep;
pub mod terminal;

pub use error::{Error, Result};
pub use measure::{Measure, Rectangle};
pub use state::{Arm, Outcome, StateIndexer, TrialState};
