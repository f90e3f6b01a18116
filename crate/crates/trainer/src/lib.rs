//! Training orchestration: configuration, the off-policy loop over
//! vectorized environments, checkpoints, metrics, evaluation, sweeps and
//! learning-curve export.

pub mod checkpoint;
pub mod config;
pub mod env;
pub mod eval;
pub mod learner;
pub mod metrics;
pub mod plot;
pub mod sweep;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{Algorithm, EnvKind, RunConfig, SymmetryMode, TrainSection};
pub use eval::{evaluate, EvalStats};
pub use learner::Learner;
pub use metrics::{columns, MetricsTable};
pub use plot::{export_curves, XAxis};
pub use sweep::{sweep, Axis, PointResult};
pub use train::{resume, train, RunSummary, Trainer};
