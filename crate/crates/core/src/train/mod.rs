//! Training, evaluation and sweeps.

pub mod adam;
pub mod audit;
pub mod probe;
pub mod sweep;
pub mod trainer;

pub use adam::{Adam, AdamConfig};
pub use audit::{auroc_low_is_positive, positive_score_audit, positive_scores, AuditResult};
pub use probe::{linear_probe, ProbeConfig, ProbeResult};
pub use sweep::{aggregate, run_sweep, CellSummary, SweepGrid, SweepLoss, SweepRow};
pub use trainer::{
    evaluate_run, train_contrastive, EncoderSpec, EpochRecord, LossKind, RunEvaluation, RunHistory, TrainConfig,
    Warmup,
};
