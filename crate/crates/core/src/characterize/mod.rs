//! Parameter estimation and long-run analytics.

pub mod duty;
pub mod fit;
pub mod noise;
pub mod sweep;
pub mod trace;

use thiserror::Error;

pub use duty::{duty_cycle_report, summarize_trace, DutyCycleReport, DutyPoint, Histogram, TraceSummary};
pub use fit::{fit_pump_sweep, model_curve, synthetic_sweep, Estimate, FitOptions, FitResult, PumpSweepPoint, ThresholdMode};
pub use noise::{contaminate_electronic_noise, correct_electronic_noise};
pub use sweep::{read_sweep, write_sweep};
pub use trace::{read_trace, validate_trace, write_trace, TraceRecord, TraceWriter};

#[derive(Debug, Error)]
pub enum CharacterizeError {
    #[error("variance must be positive and finite, got {0}")]
    NonPositiveVariance(f64),
    #[error("electronic-noise clearance must be positive, got {0} dB")]
    Clearance(f64),
    #[error("unphysical: dark noise exceeds signal (raw {raw}, clearance {clearance_db} dB)")]
    DarkNoiseExceedsSignal { raw: f64, clearance_db: f64 },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace time must be strictly increasing (row {row}: t = {t})")]
    NonMonotonicTime { row: usize, t: f64 },
    #[error("fit needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("pump ratios span {span:.3}; at least {required} is needed")]
    NarrowPumpSpan { span: f64, required: f64 },
    #[error("both quadratures required")]
    MissingQuadrature,
    #[error("sweep point {index}: {reason}")]
    InvalidPoint { index: usize, reason: String },
    #[error("fit did not converge from any start (best eta {eta:.4}, theta {theta:.3e} rad)")]
    NonConvergence { eta: f64, theta: f64 },
    #[error("schema error at row {row}, column `{column}`: {reason}")]
    Schema {
        row: usize,
        column: String,
        reason: String,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
