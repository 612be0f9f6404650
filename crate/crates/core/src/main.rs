use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use semhallu::harness::{export_projection, Pipeline, RunConfig, Runner, SweepParam};
use semhallu::pvdh::Merging;
use semhallu::relations::SelectionParams;
use semhallu::store::{load_bank, read_bank, validate_pair, write_bank, Bank};
use semhallu::synthetic::{generate, SyntheticSpec};
use semhallu::{Error, Result};

#[derive(Parser)]
#[command(name = "semhallu", version, about = "Few-shot evaluation with hallucinated features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one pipeline over the configured episodes.
    Run {
        #[command(flatten)]
        common: Common,
        /// Results file; printed to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run once per value of one parameter, with shared seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of lambda, tau, alpha, p, q, resample_count.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write synthetic feature and semantic banks.
    Synth {
        /// JSON synthetic spec; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        semantics: PathBuf,
    },
    /// Train the fusion network on the base split and save it.
    TrainFusion {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Check a bank file, or a feature/semantic pair.
    Validate {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        semantics: Option<PathBuf>,
    },
    /// Write the labelled training and query rows of one episode as CSV.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pipeline: Option<String>,
    #[arg(long)]
    n_way: Option<usize>,
    #[arg(long)]
    k_shot: Option<usize>,
    /// Query samples per class.
    #[arg(long)]
    m_query: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    resample_count: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// after_estimation, before_estimation or no_merging.
    #[arg(long)]
    merging: Option<String>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_name<T: DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Config(format!("unknown {what} {s:?}")))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(path) => {
            let mut config = RunConfig::load(path)?;
            config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
            Ok(config)
        }
        None => Ok(RunConfig::default()),
    }
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut c = load_config(self.config.as_deref())?;
        if let Some(p) = &self.pipeline {
            c.pipeline = p.parse::<Pipeline>()?;
        }
        if let Some(v) = self.n_way {
            c.episodes.n_way = v;
        }
        if let Some(v) = self.k_shot {
            c.episodes.k_shot = v;
        }
        if let Some(v) = self.m_query {
            c.episodes.m_query = v;
        }
        if let Some(v) = self.episodes {
            c.episodes.episode_count = v;
        }
        if let Some(v) = self.seed {
            c.episodes.master_seed = v;
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
        if let Some(v) = self.alpha {
            c.pvdh.alpha = v;
        }
        if self.p.is_some() || self.q.is_some() {
            let current: SelectionParams = c.selection_params();
            c.selection = Some(SelectionParams {
                p: self.p.unwrap_or(current.p),
                q: self.q.unwrap_or(current.q),
                ..current
            });
        }
        if let Some(v) = self.resample_count {
            c.pvdh.resample_count = v;
        }
        if let Some(v) = self.lambda {
            c.fusion.lambda = Some(v);
        }
        if let Some(m) = &self.merging {
            c.pvdh.merging = parse_name::<Merging>("merging strategy", m)?;
        }
        Ok(c)
    }

    fn runner(&self, config: &RunConfig) -> Result<Runner> {
        Ok(Runner::from_source(&config.data)?.with_workers(self.workers))
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, format!("{text}\n")).map_err(|e| Error::Config(format!(
            "cannot write {}: {e}",
            path.display()
        ))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, output } => {
            let config = common.config()?;
            let result = common.runner(&config)?.run(&config)?;
            emit(&result.to_json()?, output.as_deref())?;
            if output.is_some() {
                eprintln!(
                    "{}: {:.2} ± {:.2}",
                    config.pipeline.name(),
                    100.0 * result.mean_accuracy,
                    100.0 * result.ci95
                );
            }
        }
        Command::Sweep {
            common,
            param,
            values,
            output,
        } => {
            let param: SweepParam = param.parse()?;
            let config = common.config()?;
            let results = common.runner(&config)?.sweep(&config, param, &values)?;
            emit(&serde_json::to_string_pretty(&results)?, output.as_deref())?;
        }
        Command::Synth {
            spec,
            seed,
            features,
            semantics,
        } => {
            let mut spec: SyntheticSpec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                    SyntheticSpec::from_json(&text)?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (f, s) = generate(&spec)?;
            write_bank(&f, &features)?;
            write_bank(&s, &semantics)?;
        }
        Command::TrainFusion {
            config,
            iterations,
            lambda,
            seed,
            output,
        } => {
            let mut config = load_config(config.as_deref())?;
            config.fusion.network = None;
            if let Some(v) = iterations {
                config.fusion.train.iterations = v;
            }
            if let Some(v) = seed {
                config.fusion.train.seed = v;
            }
            if lambda.is_some() {
                config.fusion.lambda = lambda;
            }
            let (net, report) = Runner::from_source(&config.data)?.network(&config.fusion)?;
            net.save(&output)?;
            if let Some(r) = report {
                eprintln!(
                    "held-out loss {:.6} -> {:.6}",
                    r.initial_heldout_loss, r.final_heldout_loss
                );
            }
        }
        Command::Validate {
            features,
            semantics,
        } => match (features, semantics) {
            (Some(f), Some(s)) => {
                let report = validate_pair(&read_bank(&f)?, &read_bank(&s)?);
                if !report.is_empty() {
                    return Err(Error::InvalidBank(report.to_string()));
                }
                println!("ok");
            }
            (Some(path), None) | (None, Some(path)) => {
                let summary = match load_bank(&path)? {
                    Bank::Features(b) => format!("feature bank, d={}, {} classes", b.dim, b.classes.len()),
                    Bank::Semantics(b) => format!("semantic bank, m={}, {} entries", b.dim, b.entries.len()),
                    Bank::ActivationMaps(b) => format!("activation maps, {} entries", b.entries.len()),
                };
                println!("ok: {summary}");
            }
            (None, None) => {
                return Err(Error::Config("pass --features and/or --semantics".into()));
            }
        },
        Command::Export {
            common,
            episode,
            output,
        } => {
            let config = common.config()?;
            let rows = common.runner(&config)?.episode_projection(&config, episode)?;
            export_projection(&rows, &output)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
