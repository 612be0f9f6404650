//! Prototype-view hallucination: estimate a novel class's prototype and
//! covariance from the base classes each support sample selects, then draw
//! new features from the estimated Gaussian.
//!
//! Per support sample `f'` (already power-transformed) with selected bases
//! `B`:
//!
//! ```text
//! μ' = α · mean(μ_c, c ∈ B) + (1 − α) · f'
//! Σ' = mean(Σ_c, c ∈ B) + β · 11ᵀ
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::episodes::rng;
use crate::error::{Error, Result};
use crate::relations::{Ranking, SelectionParams, Selector};
use crate::stats::BaseClassStats;

/// How the K per-shot candidates are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Merging {
    /// Average the K candidate prototypes and covariances.
    #[default]
    AfterEstimation,
    /// Average the K support features first, then estimate once.
    BeforeEstimation,
    /// Keep the K candidates as an equal-weight Gaussian mixture.
    NoMerging,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvdhParams {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_resample")]
    pub resample_count: usize,
    #[serde(default)]
    pub merging: Merging,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_alpha() -> f64 {
    0.6
}

fn default_beta() -> f64 {
    0.2
}

fn default_resample() -> usize {
    200
}

fn default_jitter() -> f64 {
    1e-6
}

impl Default for PvdhParams {
    fn default() -> Self {
        PvdhParams {
            alpha: default_alpha(),
            beta: default_beta(),
            resample_count: default_resample(),
            merging: Merging::default(),
            jitter: default_jitter(),
        }
    }
}

impl PvdhParams {
    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "jitter must be >= 0, got {}",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// `α · mean(μ_c) + (1 − α) · f'`.
pub fn candidate_prototype(
    f_tukey: &[f64],
    bases: &[usize],
    stats: &BaseClassStats,
    alpha: f64,
) -> Result<Vec<f64>> {
    if bases.is_empty() {
        return Err(Error::EmptyInput("no base classes selected"));
    }
    if f_tukey.len() != stats.dim {
        return Err(Error::DimensionMismatch {
            expected: stats.dim,
            found: f_tukey.len(),
        });
    }
    let q = bases.len() as f64;
    let mut mean = vec![0.0; stats.dim];
    for &b in bases {
        for (acc, v) in mean.iter_mut().zip(&stats.classes[b].mu) {
            *acc += v;
        }
    }
    Ok(mean
        .iter()
        .zip(f_tukey)
        .map(|(m, f)| alpha * (m / q) + (1.0 - alpha) * f)
        .collect())
}

/// `mean(Σ_c) + β · 11ᵀ`.
pub fn candidate_covariance(bases: &[usize], stats: &BaseClassStats, beta: f64) -> Result<DMatrix<f64>> {
    if bases.is_empty() {
        return Err(Error::EmptyInput("no base classes selected"));
    }
    let mut sum = DMatrix::zeros(stats.dim, stats.dim);
    for &b in bases {
        sum += &stats.classes[b].sigma;
    }
    sum /= bases.len() as f64;
    sum.add_scalar_mut(beta);
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub mu: Vec<f64>,
    pub sigma: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NovelClassEstimate {
    pub mu_hat: Vec<f64>,
    pub sigma_hat: DMatrix<f64>,
    /// Per-shot candidates; only filled for [`Merging::NoMerging`].
    pub components: Vec<Component>,
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let k = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}

/// Estimates the distribution of a novel class from its transformed
/// support rows and its class embedding `v_y`.
pub fn estimate_class(
    support_tukey: &[Vec<f64>],
    v_y: &[f64],
    selector: &Selector<'_>,
    sel: &SelectionParams,
    params: &PvdhParams,
    ranking: Ranking,
) -> Result<NovelClassEstimate> {
    if support_tukey.is_empty() {
        return Err(Error::EmptyInput("support set of the class is empty"));
    }
    params.check()?;
    let stats = selector.stats();
    let candidate = |f: &[f64]| -> Result<Component> {
        let bases = selector.select(f, v_y, sel, ranking)?;
        Ok(Component {
            mu: candidate_prototype(f, &bases, stats, params.alpha)?,
            sigma: candidate_covariance(&bases, stats, params.beta)?,
        })
    };

    if params.merging == Merging::BeforeEstimation {
        let c = candidate(&mean_rows(support_tukey))?;
        return Ok(NovelClassEstimate {
            mu_hat: c.mu,
            sigma_hat: c.sigma,
            components: Vec::new(),
        });
    }

    let components = support_tukey
        .iter()
        .map(|f| candidate(f))
        .collect::<Result<Vec<_>>>()?;
    let mus: Vec<Vec<f64>> = components.iter().map(|c| c.mu.clone()).collect();
    let mu_hat = mean_rows(&mus);
    let mut sigma_hat = DMatrix::zeros(stats.dim, stats.dim);
    for c in &components {
        sigma_hat += &c.sigma;
    }
    sigma_hat /= components.len() as f64;
    let components = if params.merging == Merging::NoMerging {
        components
    } else {
        Vec::new()
    };
    Ok(NovelClassEstimate {
        mu_hat,
        sigma_hat,
        components,
    })
}

/// A factor `L` with `L Lᵀ = Σ + jitter · I`.
///
/// Cholesky first; if that fails the eigenvalues are clipped at zero and the
/// symmetric square root is used instead, which also covers singular and
/// all-zero covariances.
pub fn sampling_factor(sigma: &DMatrix<f64>, jitter: f64) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    let mut jittered = sigma.clone();
    for i in 0..d {
        jittered[(i, i)] += jitter;
    }
    if let Some(ch) = Cholesky::new(jittered.clone()) {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(jittered);
    let min_eigenvalue = eig.eigenvalues.min();
    if !eig.eigenvalues.iter().all(|v| v.is_finite()) {
        return Err(Error::Factorization { min_eigenvalue });
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let factor = &eig.eigenvectors * DMatrix::from_diagonal(&root);
    if factor.iter().all(|v| v.is_finite()) {
        Ok(factor)
    } else {
        Err(Error::Factorization { min_eigenvalue })
    }
}

/// Draws `count` rows from the estimate (row-major `count × d` matrix).
pub fn resample(est: &NovelClassEstimate, count: usize, seed: u64, jitter: f64) -> Result<DMatrix<f64>> {
    let d = est.mu_hat.len();
    let mut out = DMatrix::zeros(count, d);
    if count == 0 {
        return Ok(out);
    }
    let mut r = rng(seed);
    let mut draw = |mu: &[f64], factor: &DMatrix<f64>, row: usize, r: &mut crate::episodes::Rng| {
        let z = DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal));
        let x = factor * z;
        for j in 0..d {
            out[(row, j)] = mu[j] + x[j];
        }
    };
    // a single component is the merged estimate itself
    if est.components.len() <= 1 {
        let factor = sampling_factor(&est.sigma_hat, jitter)?;
        for row in 0..count {
            draw(&est.mu_hat, &factor, row, &mut r);
        }
    } else {
        let factors = est
            .components
            .iter()
            .map(|c| sampling_factor(&c.sigma, jitter))
            .collect::<Result<Vec<_>>>()?;
        for row in 0..count {
            let k = r.random_range(0..est.components.len());
            draw(&est.components[k].mu, &factors[k], row, &mut r);
        }
    }
    Ok(out)
}
