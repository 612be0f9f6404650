//! Episode loop: assemble each episode's training set for the chosen
//! pipeline, train a classifier, score the queries and aggregate.
//!
//! All classifier inputs live in the power-transformed space. Episodes are
//! independent given their derived seeds, so the worker pool size never
//! changes a result.

mod config;
mod export;
mod results;
mod sweep;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

pub use config::{DataSource, FusionSettings, Pipeline, RunConfig, DEFAULT_LAMBDA};
pub use export::{export_projection, projection_rows, provenance_name, read_projection, ProjectionRow};
pub use results::{aggregate, Metadata, RowCounts, RunResult};
pub use sweep::SweepParam;

use crate::classifier::{evaluate_episode, train_classifier, Provenance, TrainSet};
use crate::episodes::{derive_episode_seed, sample_episode, Episode};
use crate::error::{Error, Result};
use crate::ivdh::{hallucinate_support, train_fusion, FusionNetwork, FusionTrainReport};
use crate::pvdh::{estimate_class, resample};
use crate::relations::{Ranking, Selector};
use crate::stats::{BaseClassStats, Space, StatsCache, Tukey};
use crate::store::{read_bank, validate_pair, FeatureBank, SemanticBank};
use crate::synthetic::generate;

type TrainedNetwork = (Arc<FusionNetwork>, Option<FusionTrainReport>);

/// Loaded banks plus caches shared by every run over them.
pub struct Runner {
    semantics: Arc<SemanticBank>,
    stats: StatsCache,
    networks: Mutex<HashMap<String, TrainedNetwork>>,
    workers: Option<usize>,
}

/// Everything an episode needs that does not change between episodes.
pub struct EpisodeContext<'a> {
    pub config: &'a RunConfig,
    pub tukey: Tukey,
    pub selector: Option<Selector<'a>>,
    pub network: Option<Arc<FusionNetwork>>,
}

impl Runner {
    pub fn new(features: FeatureBank, semantics: SemanticBank) -> Result<Self> {
        let report = validate_pair(&features, &semantics);
        if !report.is_empty() {
            return Err(Error::InvalidBank(report.to_string()));
        }
        Ok(Runner {
            semantics: Arc::new(semantics),
            stats: StatsCache::new(Arc::new(features)),
            networks: Mutex::new(HashMap::new()),
            workers: None,
        })
    }

    pub fn from_source(source: &DataSource) -> Result<Self> {
        match source {
            DataSource::Synthetic(spec) => {
                let (f, s) = generate(spec)?;
                Runner::new(f, s)
            }
            DataSource::Files {
                features,
                semantics,
            } => Runner::new(read_bank(features)?, read_bank(semantics)?),
        }
    }

    /// Caps the worker pool; `None` uses rayon's default.
    pub fn with_workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    pub fn features(&self) -> &FeatureBank {
        self.stats.bank()
    }

    pub fn semantics(&self) -> &SemanticBank {
        &self.semantics
    }

    pub fn base_stats(&self, space: Space) -> Result<Arc<BaseClassStats>> {
        self.stats.get(space)
    }

    /// The fusion network for `settings`, trained once and cached.
    pub fn network(
        &self,
        settings: &FusionSettings,
    ) -> Result<(Arc<FusionNetwork>, Option<FusionTrainReport>)> {
        let key = serde_json::to_string(settings)?;
        if let Some(hit) = self.networks.lock().expect("network cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let built = match &settings.network {
            Some(path) => {
                let mut net = FusionNetwork::load(path)?;
                if net.d != self.features().dim || net.m != self.semantics.dim {
                    return Err(Error::Config(format!(
                        "network {} expects d={}, m={} but the banks have d={}, m={}",
                        path.display(),
                        net.d,
                        net.m,
                        self.features().dim,
                        self.semantics.dim
                    )));
                }
                if let Some(lambda) = settings.lambda {
                    net = FusionNetwork { lambda, ..net };
                }
                (Arc::new(net), None)
            }
            None => {
                let raw = self.stats.get(Space::Raw)?;
                let lambda = settings.lambda.unwrap_or(DEFAULT_LAMBDA);
                let (net, report) =
                    train_fusion(self.features(), &self.semantics, &raw, &settings.train, lambda)?;
                (Arc::new(net), Some(report))
            }
        };
        self.networks
            .lock()
            .expect("network cache poisoned")
            .insert(key, built.clone());
        Ok(built)
    }

    /// Builds the per-run context and returns it with the Tukey-space stats
    /// it borrows from.
    fn with_context<T>(
        &self,
        config: &RunConfig,
        f: impl FnOnce(&EpisodeContext<'_>, Option<FusionTrainReport>) -> Result<T>,
    ) -> Result<T> {
        config.episodes.check()?;
        config.pvdh.check()?;
        let tukey = Tukey::new(config.tau)?;
        let stats = if config.pipeline.uses_prototypes() {
            Some(self.stats.get(Space::Tukey(tukey))?)
        } else {
            None
        };
        let selector = match &stats {
            Some(s) => {
                config.selection_params().check(s.len())?;
                Some(Selector::new(s, &self.semantics)?)
            }
            None => None,
        };
        let (network, report) = if config.pipeline.uses_fusion() {
            let (n, r) = self.network(&config.fusion)?;
            (Some(n), r)
        } else {
            (None, None)
        };
        let ctx = EpisodeContext {
            config,
            tukey,
            selector,
            network,
        };
        f(&ctx, report)
    }

    /// Training set for one episode, in transformed space.
    pub fn assemble(&self, ctx: &EpisodeContext<'_>, episode: &Episode) -> Result<TrainSet> {
        let cfg = ctx.config;
        let n = episode.n_way();
        let mut ts = TrainSet::new(self.features().dim, n);
        for s in &episode.support {
            ts.push(ctx.tukey.apply(&s.feature)?, s.label, Provenance::Support)?;
        }
        let class_semantics = episode
            .class_ids
            .iter()
            .map(|id| self.semantics.get_f64(id))
            .collect::<Result<Vec<_>>>()?;

        if let Some(net) = &ctx.network {
            for (f, label) in hallucinate_support(net, &episode.support, &class_semantics)? {
                ts.push(ctx.tukey.apply(&f)?, label, Provenance::Ivdh)?;
            }
        }

        if let Some(selector) = &ctx.selector {
            let ranking = if cfg.pipeline == Pipeline::PvdhV {
                Ranking::VisualOnly
            } else {
                Ranking::SemanticVisual
            };
            let sel = cfg.selection_params();
            for (label, v_y) in class_semantics.iter().enumerate() {
                let support_t = episode
                    .support_of(label)
                    .map(|s| ctx.tukey.apply(&s.feature))
                    .collect::<Result<Vec<_>>>()?;
                let est = estimate_class(&support_t, v_y, selector, &sel, &cfg.pvdh, ranking)?;
                ts.push(est.mu_hat.clone(), label, Provenance::Prototype)?;
                if cfg.pipeline.resamples() && cfg.pvdh.resample_count > 0 {
                    let seed = derive_episode_seed(episode.seed, label as u64 + 1);
                    let draws = resample(&est, cfg.pvdh.resample_count, seed, cfg.pvdh.jitter)?;
                    for row in draws.row_iter() {
                        ts.push(row.iter().copied().collect(), label, Provenance::Resampled)?;
                    }
                }
            }
        }
        Ok(ts)
    }

    fn run_episode(&self, ctx: &EpisodeContext<'_>, index: usize) -> Result<(f64, RowCounts)> {
        let episode = sample_episode(self.features(), &ctx.config.episodes, index)?;
        let ts = self.assemble(ctx, &episode)?;
        let (clf, _) = train_classifier(&ts, &ctx.config.classifier)?;
        let query = episode
            .query
            .iter()
            .map(|q| Ok((ctx.tukey.apply(&q.feature)?, q.label)))
            .collect::<Result<Vec<_>>>()?;
        Ok((evaluate_episode(&clf, &query)?, RowCounts::of(&ts)))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.workers {
            builder = builder.num_threads(w.max(1));
        }
        builder
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
    }

    pub fn run(&self, config: &RunConfig) -> Result<RunResult> {
        let pool = self.pool()?;
        self.with_context(config, |ctx, fusion_report| {
            let outcomes: Vec<(f64, RowCounts)> = pool.install(|| {
                (0..config.episodes.episode_count)
                    .into_par_iter()
                    .map(|i| self.run_episode(ctx, i).map_err(|e| e.in_episode(i)))
                    .collect::<Result<Vec<_>>>()
            })?;
            let per_episode: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
            let (mean_accuracy, ci95) = aggregate(&per_episode);
            let mut echo = config.clone();
            echo.selection = Some(config.selection_params());
            Ok(RunResult {
                config: echo,
                mean_accuracy,
                ci95,
                per_episode,
                metadata: Metadata::new(config.episodes.master_seed, outcomes[0].1, fusion_report),
            })
        })
    }

    /// One result per value; seeds are shared so differences come from the
    /// parameter alone.
    pub fn sweep(&self, config: &RunConfig, param: SweepParam, values: &[f64]) -> Result<Vec<RunResult>> {
        values
            .iter()
            .map(|&v| self.run(&param.apply(config, v)?))
            .collect()
    }

    /// Labelled rows of one episode for external plotting.
    pub fn episode_projection(&self, config: &RunConfig, index: usize) -> Result<Vec<ProjectionRow>> {
        self.with_context(config, |ctx, _| {
            let episode = sample_episode(self.features(), &config.episodes, index)?;
            let ts = self.assemble(ctx, &episode)?;
            let mut rows = projection_rows(&ts, &episode.class_ids);
            for q in &episode.query {
                rows.push(ProjectionRow {
                    label: episode.class_ids[q.label].clone(),
                    provenance: "query".into(),
                    feature: ctx.tukey.apply(&q.feature)?,
                });
            }
            Ok(rows)
        })
    }
}

/// Loads or generates the configured data and runs it.
pub fn run(config: &RunConfig) -> Result<RunResult> {
    Runner::from_source(&config.data)?.run(config)
}

pub fn sweep(config: &RunConfig, param: SweepParam, values: &[f64]) -> Result<Vec<RunResult>> {
    Runner::from_source(&config.data)?.sweep(config, param, values)
}
