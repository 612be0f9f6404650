use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::classifier::{Provenance, TrainSet};
use crate::episodes::PRNG_NAME;
use crate::error::{Error, Result};
use crate::ivdh::FusionTrainReport;

/// Training-set composition of one episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCounts {
    pub support: usize,
    pub ivdh: usize,
    pub prototype: usize,
    pub resampled: usize,
}

impl RowCounts {
    pub fn of(ts: &TrainSet) -> Self {
        RowCounts {
            support: ts.count(Provenance::Support),
            ivdh: ts.count(Provenance::Ivdh),
            prototype: ts.count(Provenance::Prototype),
            resampled: ts.count(Provenance::Resampled),
        }
    }

    pub fn total(&self) -> usize {
        self.support + self.ivdh + self.prototype + self.resampled
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub prng: String,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub master_seed: u64,
    pub train_rows: RowCounts,
    pub fusion: Option<FusionTrainReport>,
}

impl Metadata {
    pub fn new(master_seed: u64, train_rows: RowCounts, fusion: Option<FusionTrainReport>) -> Self {
        Metadata {
            prng: PRNG_NAME.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            master_seed,
            train_rows,
            fusion,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub per_episode: Vec<f64>,
    pub metadata: Metadata,
}

impl RunResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Mean and `1.96 · s / sqrt(T)` with `s` the sample standard deviation.
pub fn aggregate(per_episode: &[f64]) -> (f64, f64) {
    let t = per_episode.len();
    if t == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = per_episode.iter().sum::<f64>() / t as f64;
    if t == 1 {
        return (mean, 0.0);
    }
    let var = per_episode.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
    (mean, 1.96 * var.sqrt() / (t as f64).sqrt())
}
