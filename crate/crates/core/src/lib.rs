//! Two-layer downlink precoding (large-scale fading precoding) for multi-cell
//! massive MIMO under spatially correlated Rician fading with random LOS phase
//! shifts.
//!
//! The pipeline is: [`scenario`] draws a network and its long-term channel
//! statistics, [`estimation`] describes the pilot observations and estimators,
//! [`linkstats`] turns both into the `b`/`C`/`ω` statistics that fully
//! determine every user's SINR, [`se_eval`] evaluates SINR and spectral
//! efficiency for a set of LSFP weights, [`optimizer`] designs those weights,
//! and [`harness`] runs whole experiments.

pub mod error;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod linkstats;
pub mod optimizer;
pub mod scenario;
pub mod se_eval;

pub use error::{Error, Result};
