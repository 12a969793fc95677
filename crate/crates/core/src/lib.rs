//! Reputation-weighted federated survival analysis.
//!
//! The crate is organised bottom-up:
//!
//! - [`survival`]: Cox proportional-hazards fitting, Breslow baseline hazard
//!   and the concordance index.
//! - [`synthetic`]: multi-center synthetic cohorts with MCAR missingness and
//!   tuned right-censoring.
//! - [`adversary`]: honest-then-ramp noise injection.
//! - [`privacy`]: clip-and-noise Gaussian mechanism for the peer channel and
//!   the matching error bounds.
//! - [`reputation`]: peer feedback, reputation updates and selection
//!   probabilities.
//! - [`clustering`]: completeness/concordance clustering of clients.
//! - [`federation`]: the round orchestrator plus FedAvg and TFFL-proxy
//!   baselines.
//! - [`experiment`] and [`output`]: config files, end-to-end runs and CSV
//!   artifacts.

pub mod adversary;
pub mod clustering;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod output;
pub mod privacy;
pub mod reputation;
pub mod seed;
pub mod survival;
pub mod synthetic;

pub use error::{Error, Result};
