//! N-way K-shot episode sampling with per-episode derived seeds.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{FeatureBank, Split};

/// Name of the generator behind every seeded stream in this crate.
pub const PRNG_NAME: &str = "ChaCha8 (rand_chacha), seeds via splitmix64";

pub(crate) type Rng = ChaCha8Rng;

pub(crate) fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for episode `index`. For a fixed master seed this is a bijection
/// of the index.
pub fn derive_episode_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed) ^ index)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    #[serde(default = "default_m_query")]
    pub m_query: usize,
    #[serde(default = "default_episode_count")]
    pub episode_count: usize,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_m_query() -> usize {
    15
}

fn default_episode_count() -> usize {
    1000
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            n_way: 5,
            k_shot: 1,
            m_query: default_m_query(),
            episode_count: default_episode_count(),
            master_seed: 0,
        }
    }
}

impl EpisodeSpec {
    pub fn check(&self) -> Result<()> {
        for (name, v) in [
            ("n_way", self.n_way),
            ("k_shot", self.k_shot),
            ("m_query", self.m_query),
            ("episode_count", self.episode_count),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// One labelled feature row drawn into an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Class index within the episode, in `[0, n_way)`.
    pub label: usize,
    /// Row index within the class in the source bank.
    pub row: usize,
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub index: usize,
    pub seed: u64,
    pub class_ids: Vec<String>,
    pub support: Vec<Sample>,
    pub query: Vec<Sample>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.class_ids.len()
    }

    pub fn support_of(&self, label: usize) -> impl Iterator<Item = &Sample> {
        self.support.iter().filter(move |s| s.label == label)
    }
}

/// Draws episode `index`: classes uniformly without replacement from the
/// novel split, then `k_shot + m_query` rows per class without replacement,
/// the first `k_shot` going to the support set.
pub fn sample_episode(bank: &FeatureBank, spec: &EpisodeSpec, index: usize) -> Result<Episode> {
    spec.check()?;
    let novel: Vec<_> = bank.split(Split::Novel).collect();
    if novel.len() < spec.n_way {
        return Err(Error::InsufficientClasses {
            needed: spec.n_way,
            available: novel.len(),
        });
    }
    let seed = derive_episode_seed(spec.master_seed, index as u64);
    let mut rng = rng(seed);
    let per_class = spec.k_shot + spec.m_query;

    let chosen = index::sample(&mut rng, novel.len(), spec.n_way);
    let mut class_ids = Vec::with_capacity(spec.n_way);
    let mut support = Vec::with_capacity(spec.n_way * spec.k_shot);
    let mut query = Vec::with_capacity(spec.n_way * spec.m_query);
    for (label, ci) in chosen.iter().enumerate() {
        let class = novel[ci];
        let rows = class.rows(bank.dim);
        if rows < per_class {
            return Err(Error::InsufficientSamples {
                class_id: class.class_id.clone(),
                needed: per_class,
                available: rows,
            });
        }
        class_ids.push(class.class_id.clone());
        let picks = index::sample(&mut rng, rows, per_class);
        for (j, row) in picks.iter().enumerate() {
            let sample = Sample {
                label,
                row,
                feature: class.row_f64(bank.dim, row),
            };
            if j < spec.k_shot {
                support.push(sample);
            } else {
                query.push(sample);
            }
        }
    }
    Ok(Episode {
        index,
        seed,
        class_ids,
        support,
        query,
    })
}
