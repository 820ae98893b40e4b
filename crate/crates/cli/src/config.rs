use std::fs;
use std::path::{Path, PathBuf};

use cvgeo_core::data::SyntheticConfig;
use cvgeo_core::orientation::{OrientationOptions, RegressionConfig};
use cvgeo_core::trainer::TrainingConfig;
use cvgeo_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a command may read, loaded from one JSON file. Sections a
/// command does not use are ignored but still validated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synthetic: SyntheticConfig,
    pub split: SplitConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub orientation: OrientationOptions,
    pub regression: RegressionConfig,
    pub ablation: AblationConfig,
    pub data: DataConfig,
}

/// Pair counts written by `gen`; `synthetic.n_pairs` is ignored there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Rotate every test aerial by a random angle and record it.
    pub rotate_test: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 800,
            val: 100,
            test: 100,
            rotate_test: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub curve_max_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            curve_max_k: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Alignment,
    Mining,
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub kind: AblationKind,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            kind: AblationKind::Alignment,
            seeds: vec![0],
        }
    }
}

/// Dataset manifests; when the training ones are absent, `train` and
/// `ablate` generate synthetic pairs in memory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.training.validate()?;
        self.orientation.validate()?;
        if self.split.train + self.split.val + self.split.test == 0 {
            return Err(Error::Config("split must contain at least one pair".into()));
        }
        if self.eval.ks.contains(&0) {
            return Err(Error::Config("eval.ks must be positive".into()));
        }
        if self.ablation.seeds.is_empty() {
            return Err(Error::Config("ablation.seeds must not be empty".into()));
        }
        if self.regression.hidden == 0 || self.regression.batch == 0 {
            return Err(Error::Config(
                "regression hidden and batch must be positive".into(),
            ));
        }
        Ok(())
    }
}
