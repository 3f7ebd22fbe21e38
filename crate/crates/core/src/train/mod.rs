//! Distillation training: configuration, optimization state, the step
//! function, the epoch loop and the ablation runner.

mod ablation;
mod config;
mod fit;
mod state;

pub use ablation::{
    ablation_matrix, run_ablation, AblationRow, AblationTable, Axis, RowSummary, SeedResult, FAA, FAB, FAT,
};
pub use config::{Components, FeatureTerm, Mode, RegressorInit, Toggle, TrainConfig};
pub use fit::{
    fit, load_teacher, pretrain_teacher, resolve_teacher, EpochEval, FitOptions, FitOutcome, RunLayout, StepRecord,
};
pub use state::{train_step, TrainState};
