use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::context::ContextParams;
use crate::crf::CrfParams;
use crate::data::read_json;
use crate::error::Result;
use crate::intake::ReportFormat;
use crate::segnet::{NetworkConfig, TrainConfig};
use crate::synth::SynthOptions;
use crate::volumetry::RansacParams;

/// Which meals `eval` scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Test,
    All,
}

/// Everything a run depends on. Loaded from one JSON file; command-line
/// flags override individual fields afterwards.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset root holding `meal_*` directories.
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub cooccurrence: Option<PathBuf>,
    /// Plate models; defaults to `plates.json` next to the meals, then to
    /// the built-in library.
    pub plate_library: Option<PathBuf>,
    pub seed: u64,
    /// Use annotation label maps instead of the network.
    pub use_gt_labels: bool,
    /// Write intermediate maps and meshes per meal.
    pub dump_stages: bool,
    pub report_format: ReportFormat,
    pub eval_split: EvalSplit,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub crf: CrfParams,
    pub context: ContextParams,
    pub ransac: RansacParams,
    pub synth: SynthOptions,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.crf.validate()?;
        self.context.validate()
    }
}
