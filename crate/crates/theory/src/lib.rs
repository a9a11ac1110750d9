//! Exact, enumerable checks of the statistical claims behind latent
//! drafting: posterior sufficiency, the total-variation mismatch bound,
//! the extraction/readout split of excess risk, and capacity-limited
//! bottleneck sweeps.
//!
//! Every quantity is a finite sum over explicit probability tables, so the
//! checks hold to machine precision rather than up to sampling noise.

mod ib;
mod props;
mod risk;
pub mod suites;
mod world;

pub use ib::{ib_sweep, mutual_information_sx, mutual_information_sy, IbPoint, IbSearch, EXHAUSTIVE_LIMIT};
pub use props::{
    approximation_chain_report, bayes_posterior, bayes_posterior_named, check_sufficiency, label_given_draft,
    posterior_given_draft, total_variation, tv_bound_check, ChainReport, SufficiencyReport, TvReport,
};
pub use risk::{risk_decomposition, HypothesisClasses, Loss, PairRow, Readout, RiskReport};
pub use world::{DiscreteWorld, DraftMap};

use thiserror::Error;

/// Tolerance for row sums and exact identities.
pub const TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("input error: {0}")]
    Input(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("world file line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, TheoryError>;
