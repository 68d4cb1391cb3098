//! Content-based retrieval over distribution signatures of deep features.
//!
//! Each item's local feature matrix is summarised as a Gaussian, either by
//! moment-matching a diagonal-covariance mixture ([`gmm`], [`signature`]) or
//! through a shrunk Sparse Matrix Transform covariance ([`smt`]). A database
//! is then ranked against a query under one of the distances in [`metrics`],
//! and [`retrieval`] wraps index construction, persistence and precision
//! evaluation.

pub mod error;
pub mod formats;
pub mod gmm;
pub mod linalg;
pub mod metrics;
pub mod retrieval;
pub mod signature;
pub mod smt;

pub use error::{Error, Result};
pub use gmm::{fit_gmm, GmmConfig, GmmModel};
pub use linalg::SymMatrix;
pub use metrics::{DistanceValue, MetricKind, MetricOptions};
pub use retrieval::{
    build_index, evaluate, gen_synthetic, load_index, rank, save_index, BuildConfig, EvalReport,
    IndexEntry, IndexMode, RankingResult, SignatureIndex,
};
pub use signature::{FeatureMatrix, GaussianSignature, SourceTag};
