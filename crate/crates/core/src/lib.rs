//! Screening markets with noisy signals.
//!
//! The crate simulates applicants whose latent risk is observed through noisy
//! signals, fits the structural parameters by simulated method of moments,
//! runs counterfactual information structures, and measures how informative a
//! score is (ROC/AUC, binned log odds, decompositions, reject inference).
//! Supporting pieces cover fixed-effects IV on lender panels and a logistic
//! testbed for modeling-bias experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod biaslab;
pub mod econometrics;
pub mod error;
pub mod metrics;
pub mod model;
pub mod normal;
pub mod quadrature;
pub mod rng;
pub mod screening;
pub mod smm;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use model::{default_prob, posterior, sample_population, write_populations_csv, Applicant, GroupModel, Population, RiskParams, ScoreMap, SignalSpec};
