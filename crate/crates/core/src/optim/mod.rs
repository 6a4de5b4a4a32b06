//! Adam, the two training stages and the finite-difference gradient checker.

mod adam;
pub mod gradcheck;
mod objective;
mod state;
mod train;

pub use adam::{AdamState, ParamGroup};
pub use objective::{Objective, ObjectiveConfig, Sample};
pub use state::{
    init_mixture, init_offsets, initial_state, view_codes, LearningRates, MlpSettings, SceneGrad,
    SceneState, TrainSchedule, GROUPS,
};
pub use train::{moving_average, train_stage1, train_stage2, StageResult, TraceRecorder, TrainObserver};
