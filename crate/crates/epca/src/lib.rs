//! ePCA: covariance estimation, principal component analysis, and denoising
//! for data whose entries carry exponential-family noise (Poisson, Binomial,
//! Gaussian with known variance, Negative Binomial).
//!
//! The covariance estimator is built in stages from the sample covariance:
//! diagonal debiasing by the estimated noise variances, homogenization by the
//! inverse noise standard deviations, eigenvalue shrinkage against the
//! Marchenko-Pastur bulk, heterogenization back to the original coordinates,
//! and a final per-spike scaling that corrects the eigenvalue bias introduced
//! by heterogenization. The eigendecomposition of the resulting matrix is the
//! ePCA of the data.
//!
//! On top of the estimator the crate provides the EBLP (best-linear-predictor
//! / Wiener-filter) denoiser with ridge regularization, a projection-denoising
//! baseline, a random-matrix-theory toolkit (Marchenko-Pastur law, spike and
//! cosine maps, SNR diagnostics), seeded simulation generators, matrix and
//! genotype I/O, and the `epca` command-line tool.

pub mod covariance;
pub mod denoise;
pub mod expfam;
pub mod io;
pub mod linalg;
pub mod rmt;
pub mod simgen;

pub mod cli;
pub mod experiments;

use thiserror::Error as ThisError;

/// Crate-wide error type.
#[derive(Debug, ThisError)]
pub enum Error {
    #[error("mean {value} is outside the domain of the {family} family")]
    MeanOutOfDomain { family: String, value: f64 },

    #[error("degenerate features (noise variance below threshold) at columns {columns:?}; drop them or enable --drop-degenerate")]
    DegenerateColumns { columns: Vec<usize> },

    #[error("eigenvalue {lambda} does not exceed the bulk edge {edge}; the spike is below the phase transition")]
    BelowBulkEdge { lambda: f64, edge: f64 },

    #[error("kept spike {index} has non-positive heterogenized eigenvalue {value}")]
    NonPositiveSpike { index: usize, value: f64 },

    #[error("covariance matrix is singular (leading minor {minor}); use a ridge weight epsilon > 0")]
    SingularCovariance { minor: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("empty spectrum: no eigenvalues supplied")]
    EmptySpectrum,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trial {index} failed: {source}")]
    Trial {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("column {column} has no observed entries")]
    AllMissing { column: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
