//! Cox proportional-hazards modelling and concordance evaluation.

pub mod concordance;
pub mod cox;
pub mod dataset;

pub use concordance::{concordance_index, pair_counts, PairCounts};
pub use cox::{
    breslow_baseline, derivatives, fit_coxph, neg_log_partial_likelihood, risk_scores, CoxFit, CoxModel,
    Derivatives, FitConfig, MONOTONE_LIKELIHOOD_LIMIT,
};
pub use dataset::{ClientDataset, EVENT_COLUMN, TIME_COLUMN};
