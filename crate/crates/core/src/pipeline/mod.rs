//! End-to-end orchestration: segmentation, refinement, volumetry and
//! nutrient accounting per meal, plus the dataset-level commands.

mod commands;
mod config;
mod resample;
mod stages;

pub use commands::{
    cmd_eval, cmd_intake, cmd_report, cmd_segment, cmd_synth, cmd_train, cmd_volume, list_meals, load_models,
    plate_library_for, run_meal, MealRun, Models, TrainSummary, CHECKPOINT_FILE, COOCCURRENCE_FILE,
};
pub use config::{EvalSplit, PipelineConfig};
pub use resample::{downsample_frame, downsample_labels, upsample_labels};
pub use stages::{
    fit_frame_tray, intake_from_measurement, measure_meal, segment_frame, FrameLabels, ItemMeasurement,
    MealMeasurement, Refinement, Segmentation,
};
