use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::episodes::EpisodeSpec;
use crate::error::{Error, Result};
use crate::ivdh::FusionTrainConfig;
use crate::pvdh::PvdhParams;
use crate::relations::SelectionParams;
use crate::synthetic::SyntheticSpec;

/// Which hallucinated rows join the support set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Support rows only.
    Baseline,
    /// Support plus fused features.
    IvdhG,
    /// Support plus estimated prototypes and resampled rows.
    Pvdh,
    /// Support plus estimated prototypes, no resampling.
    PvdhP,
    /// As `Pvdh` but base classes ranked visually, without the semantic stage.
    PvdhV,
    /// Everything: fused features, prototypes and resampled rows.
    Full,
}

impl Pipeline {
    pub const ALL: [Pipeline; 6] = [
        Pipeline::Baseline,
        Pipeline::IvdhG,
        Pipeline::Pvdh,
        Pipeline::PvdhP,
        Pipeline::PvdhV,
        Pipeline::Full,
    ];

    pub fn uses_fusion(self) -> bool {
        matches!(self, Pipeline::IvdhG | Pipeline::Full)
    }

    pub fn uses_prototypes(self) -> bool {
        matches!(
            self,
            Pipeline::Pvdh | Pipeline::PvdhP | Pipeline::PvdhV | Pipeline::Full
        )
    }

    pub fn resamples(self) -> bool {
        matches!(self, Pipeline::Pvdh | Pipeline::PvdhV | Pipeline::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Baseline => "baseline",
            Pipeline::IvdhG => "ivdh_g",
            Pipeline::Pvdh => "pvdh",
            Pipeline::PvdhP => "pvdh_p",
            Pipeline::PvdhV => "pvdh_v",
            Pipeline::Full => "full",
        }
    }
}

impl std::str::FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pipeline {s:?}")))
    }
}

/// Where the banks come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Files {
        features: PathBuf,
        semantics: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSettings {
    /// Fusion strength. `None` means 0.3 for a trained network, or the value
    /// stored in a loaded one.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub train: FusionTrainConfig,
    /// Serialized network to use instead of training one.
    #[serde(default)]
    pub network: Option<PathBuf>,
}

pub const DEFAULT_LAMBDA: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub episodes: EpisodeSpec,
    /// `None` picks the shot-dependent defaults.
    #[serde(default)]
    pub selection: Option<SelectionParams>,
    #[serde(default)]
    pub pvdh: PvdhParams,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub fusion: FusionSettings,
    #[serde(default = "default_pipeline")]
    pub pipeline: Pipeline,
    #[serde(default)]
    pub classifier: ClassifierConfig,
}

fn default_tau() -> f64 {
    0.5
}

fn default_pipeline() -> Pipeline {
    Pipeline::Full
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSource::default(),
            episodes: EpisodeSpec::default(),
            selection: None,
            pvdh: PvdhParams::default(),
            tau: default_tau(),
            fusion: FusionSettings::default(),
            pipeline: default_pipeline(),
            classifier: ClassifierConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn selection_params(&self) -> SelectionParams {
        self.selection
            .unwrap_or_else(|| SelectionParams::for_shots(self.episodes.k_shot))
    }

    /// Relative file paths are taken relative to `dir`.
    pub fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let DataSource::Files {
            features,
            semantics,
        } = &mut self.data
        {
            fix(features);
            fix(semantics);
        }
        if let Some(p) = &mut self.fusion.network {
            fix(p);
        }
    }
}
