//! Experiment orchestration: configuration, training, evaluation, the
//! interpolation analysis and the gradient-check suite.

pub mod analysis;
pub mod config;
pub mod gradcheck;
pub mod train;

pub use analysis::{analyze_interpolation, spearman, CurveRow, CurveTable};
pub use config::{DatasetKind, DatasetSpec, MethodSpec, ModelSpec, TrainConfig, TrainSpec};
pub use gradcheck::{gradcheck, GradcheckReport, GradcheckSpec};
pub use train::{evaluate, train, train_on, write_outputs, EvalMetrics, RunReport, TrainOutcome};
