//! Product-weight bootstrap for crossed random effects data.
//!
//! Count-based statistics are generic over [`Scalar`] (`f32`, `f64`, or the
//! exact rational [`Exact`]); the bootstrap engine and simulator are generic
//! over [`Real`]. The `*64` aliases fix the common `f64` instantiations.

pub mod data;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod exact_sum;
pub mod oracle;
pub mod report;
pub mod scalar;
pub mod simulator;
pub mod subset;
pub mod weights;

pub use data::{read_csv, read_jsonl, Dataset, DatasetBuilder, IngestOptions, Observation, Schema};
pub use diagnostics::{
    approx_gains, duplication_profile, exact_gains, gain_bounds, gain_report, het_gains, match_profile, profiles,
    DuplicationProfile, GainReport, HetGainReport, MatchCounts, MatchProfile,
};
pub use engine::{
    collapse_nested, contrast, run_bootstrap, run_bootstrap_with, run_naive, stability_prediction, variance_summary,
    BootstrapResult, Contrast, GroupResult, RunOptions, VarianceSummary,
};
pub use error::{DataError, DiagnosticsError, EngineError, OracleError, SimError, WeightError};
pub use exact_sum::ExactSum;
pub use scalar::{Real, Scalar};
pub use simulator::{Pattern, PatternKind, PatternSpec, Simulation, TruthRecord, TruthSpec};
pub use subset::FactorSubset;
pub use weights::{WeightConfig, WeightFamily};

/// Exact rational scalar.
pub type Exact = num_rational::BigRational;

pub type DuplicationProfile64 = DuplicationProfile<f64>;
pub type MatchProfile64 = MatchProfile<f64>;
pub type GainReport64 = GainReport<f64>;
pub type BootstrapResult64 = BootstrapResult<f64>;
pub type GroupResult64 = GroupResult<f64>;
pub type VarianceSummary64 = VarianceSummary<f64>;
pub type Contrast64 = Contrast<f64>;
