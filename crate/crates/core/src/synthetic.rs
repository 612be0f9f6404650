//! Synthetic base/novel banks with a tunable link between semantic and
//! visual geometry.
//!
//! Each class draws a latent `z ∈ R^m`, which is also its semantic vector.
//! Its visual mean is `ρ · A z + (1 − ρ) · u` where `A` is a fixed
//! `d × m` map with orthonormal columns (scaled by `class_scale`) and `u`
//! an independent random vector of matching magnitude. One global
//! translation then lifts every mean to at least `3 · spread`, so the
//! geometry between classes is untouched. Rows are the mean plus isotropic
//! Gaussian noise, clamped at zero.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::episodes::rng;
use crate::error::{Error, Result};
use crate::store::{ClassFeatures, FeatureBank, SemanticBank, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "d_base")]
    pub n_base: usize,
    #[serde(default = "d_novel")]
    pub n_novel: usize,
    #[serde(default = "d_dim")]
    pub d: usize,
    #[serde(default = "d_m")]
    pub m: usize,
    #[serde(default = "d_samples")]
    pub samples_per_class: usize,
    #[serde(default = "d_rho")]
    pub rho: f64,
    #[serde(default = "d_spread")]
    pub spread: f64,
    /// Length scale of the latent-to-visual map.
    #[serde(default = "d_class_scale")]
    pub class_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_base() -> usize {
    64
}
fn d_novel() -> usize {
    20
}
fn d_dim() -> usize {
    64
}
fn d_m() -> usize {
    16
}
fn d_samples() -> usize {
    200
}
fn d_rho() -> f64 {
    0.9
}
fn d_spread() -> f64 {
    0.3
}
fn d_class_scale() -> f64 {
    0.5
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_base: d_base(),
            n_novel: d_novel(),
            d: d_dim(),
            m: d_m(),
            samples_per_class: d_samples(),
            rho: d_rho(),
            spread: d_spread(),
            class_scale: d_class_scale(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_base == 0
            || self.n_novel == 0
            || self.d == 0
            || self.m == 0
            || self.samples_per_class == 0
        {
            return Err(Error::InvalidParameter(
                "synthetic counts and dimensions must be positive".into(),
            ));
        }
        if self.m > self.d {
            return Err(Error::InvalidParameter(format!(
                "semantic dimension {} exceeds feature dimension {}",
                self.m, self.d
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if !(self.spread > 0.0 && self.spread.is_finite())
            || !(self.class_scale > 0.0 && self.class_scale.is_finite())
        {
            return Err(Error::InvalidParameter(
                "spread and class_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Generated banks plus the true class means.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub features: FeatureBank,
    pub semantics: SemanticBank,
    pub means: BTreeMap<String, Vec<f64>>,
}

pub fn base_id(i: usize) -> String {
    format!("base_{i:03}")
}

pub fn novel_id(i: usize) -> String {
    format!("novel_{i:03}")
}

pub fn generate(spec: &SyntheticSpec) -> Result<(FeatureBank, SemanticBank)> {
    let data = generate_with_means(spec)?;
    Ok((data.features, data.semantics))
}

pub fn generate_with_means(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.check()?;
    let (d, m) = (spec.d, spec.m);
    let mut r = rng(spec.seed);
    let normal = |r: &mut crate::episodes::Rng| r.sample::<f64, _>(StandardNormal);

    let gaussian = DMatrix::from_fn(d, m, |_, _| normal(&mut r));
    let map = gaussian.qr().q() * spec.class_scale;
    let u_scale = spec.class_scale * (m as f64 / d as f64).sqrt();

    let ids: Vec<(String, Split)> = (0..spec.n_base)
        .map(|i| (base_id(i), Split::Base))
        .chain((0..spec.n_novel).map(|i| (novel_id(i), Split::Novel)))
        .collect();

    let mut latents = Vec::with_capacity(ids.len());
    let mut means = Vec::with_capacity(ids.len());
    for _ in &ids {
        let z = DVector::from_fn(m, |_, _| normal(&mut r));
        let u = DVector::from_fn(d, |_, _| normal(&mut r) * u_scale);
        let mean = &map * &z * spec.rho + u * (1.0 - spec.rho);
        latents.push(z);
        means.push(mean);
    }
    let lowest = means
        .iter()
        .flat_map(|v| v.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let shift = 3.0 * spec.spread - lowest;
    for mean in means.iter_mut() {
        mean.add_scalar_mut(shift);
    }

    let mut classes = Vec::with_capacity(ids.len());
    let mut entries = BTreeMap::new();
    let mut true_means = BTreeMap::new();
    for (((id, split), z), mean) in ids.into_iter().zip(&latents).zip(&means) {
        let mut data = Vec::with_capacity(spec.samples_per_class * d);
        for _ in 0..spec.samples_per_class {
            for j in 0..d {
                let v = mean[j] + spec.spread * normal(&mut r);
                data.push(v.max(0.0) as f32);
            }
        }
        entries.insert(id.clone(), z.iter().map(|&v| v as f32).collect());
        true_means.insert(id.clone(), mean.iter().copied().collect());
        classes.push(ClassFeatures::new(id, split, data));
    }
    Ok(SyntheticData {
        features: FeatureBank::new(d, classes)?,
        semantics: SemanticBank::new(m, entries)?,
        means: true_means,
    })
}
