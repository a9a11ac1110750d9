//! Decoupled latent-draft safety judging on a tiny from-scratch transformer.
//!
//! The pipeline: a trajectory is embedded in reasoner space, projected into
//! extractor space, compressed by an adapter-equipped extractor pass into a
//! fixed number of continuous draft rows, projected back, spliced into the
//! reasoner input, and read out as an unsafe probability from the terminal
//! hidden state.

pub mod backbone;
pub mod checkpoint;
pub mod eval;
pub mod judge;
pub mod latent;
pub mod numerics;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod trajgen;

use std::path::PathBuf;

use thiserror::Error;

pub use numerics::{NumericsError, Tensor};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("input error: {0}")]
    Input(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("non-finite loss at step {step} (batch {batch})")]
    NanLoss { step: usize, batch: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Deterministic generator used everywhere a seed is accepted.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a salt.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
