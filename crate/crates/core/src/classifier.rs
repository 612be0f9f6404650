//! Per-episode multinomial logistic regression.
//!
//! Training minimises the weighted mean cross-entropy plus `l2/2 · ‖W‖²`
//! with full-batch gradient descent from zero. Inputs are centred and
//! scaled per coordinate before training and the affine map is folded back
//! into the returned weights, so the classifier always acts on raw inputs.
//! The step is `min(learning_rate, 1/L)` with `L` an upper bound on the
//! curvature, which keeps every iteration a descent step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Support,
    Ivdh,
    Prototype,
    Resampled,
}

/// Loss weight per row origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProvenanceWeights {
    pub support: f64,
    pub ivdh: f64,
    pub prototype: f64,
    pub resampled: f64,
}

impl Default for ProvenanceWeights {
    fn default() -> Self {
        ProvenanceWeights {
            support: 1.0,
            ivdh: 1.0,
            prototype: 1.0,
            resampled: 1.0,
        }
    }
}

impl ProvenanceWeights {
    pub fn of(&self, p: Provenance) -> f64 {
        match p {
            Provenance::Support => self.support,
            Provenance::Ivdh => self.ivdh,
            Provenance::Prototype => self.prototype,
            Provenance::Resampled => self.resampled,
        }
    }
}

/// Training rows with class indices in `[0, n_classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSet {
    pub dim: usize,
    pub n_classes: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub provenance: Vec<Provenance>,
}

impl TrainSet {
    pub fn new(dim: usize, n_classes: usize) -> Self {
        TrainSet {
            dim,
            n_classes,
            rows: Vec::new(),
            labels: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>, label: usize, provenance: Provenance) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: row.len(),
            });
        }
        if label >= self.n_classes {
            return Err(Error::InvalidParameter(format!(
                "label {label} outside [0, {})",
                self.n_classes
            )));
        }
        self.rows.push(row);
        self.labels.push(label);
        self.provenance.push(provenance);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.provenance.iter().filter(|p| **p == provenance).count()
    }

    pub fn check(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "a classifier needs at least 2 classes, got {}",
                self.n_classes
            )));
        }
        let mut seen = vec![false; self.n_classes];
        for &l in &self.labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidParameter(format!(
                "class {missing} has no training rows"
            )));
        }
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("training rows must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub weights: ProvenanceWeights,
}

fn default_l2() -> f64 {
    1e-3
}

fn default_iterations() -> usize {
    1000
}

fn default_lr() -> f64 {
    0.1
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            l2: default_l2(),
            iterations: default_iterations(),
            learning_rate: default_lr(),
            weights: ProvenanceWeights::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    /// `N × d`.
    pub weight: DMatrix<f64>,
    pub bias: Vec<f64>,
    pub l2: f64,
}

impl LinearClassifier {
    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weight.ncols()
    }

    fn logits(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: f.len(),
            });
        }
        Ok((0..self.n_classes())
            .map(|c| {
                self.bias[c]
                    + self
                        .weight
                        .row(c)
                        .iter()
                        .zip(f)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
            })
            .collect())
    }
}

/// Loss values recorded during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub step: f64,
    /// `(iteration, loss)` every `CHECKPOINT` iterations and at the end.
    pub checkpoints: Vec<(usize, f64)>,
}

impl TrainTrace {
    pub fn initial_loss(&self) -> f64 {
        self.checkpoints[0].1
    }

    pub fn final_loss(&self) -> f64 {
        self.checkpoints.last().expect("trace is never empty").1
    }
}

const CHECKPOINT: usize = 100;

/// Softmax of `logits`, shifted by the maximum for stability.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn predict_proba(clf: &LinearClassifier, f: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&clf.logits(f)?))
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn predict(clf: &LinearClassifier, f: &[f64]) -> Result<usize> {
    Ok(argmax(&clf.logits(f)?))
}

/// Fraction of queries whose predicted class equals the label.
pub fn evaluate_episode(clf: &LinearClassifier, query: &[(Vec<f64>, usize)]) -> Result<f64> {
    if query.is_empty() {
        return Err(Error::EmptyInput("query set is empty"));
    }
    let mut correct = 0usize;
    for (f, label) in query {
        if predict(clf, f)? == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / query.len() as f64)
}

/// Objective value and gradients.
pub struct Objective {
    pub loss: f64,
    /// `N × d`.
    pub weight: DMatrix<f64>,
    pub bias: Vec<f64>,
}

/// Weighted mean cross-entropy plus `l2/2 · ‖W‖²` over the rows of `x`
/// (`M × d`), for `weight` of shape `N × d`.
pub fn objective(
    weight: &DMatrix<f64>,
    bias: &[f64],
    x: &DMatrix<f64>,
    labels: &[usize],
    sample_weights: &[f64],
    l2: f64,
) -> Result<Objective> {
    let (m, d) = x.shape();
    if weight.ncols() != d || weight.nrows() != bias.len() {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: weight.ncols(),
        });
    }
    if labels.len() != m || sample_weights.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: labels.len().min(sample_weights.len()),
        });
    }
    let wt = weight.transpose();
    let mut logits = DMatrix::zeros(m, bias.len());
    let mut grad_logits = DMatrix::zeros(m, bias.len());
    let total_weight: f64 = sample_weights.iter().sum();
    let ce = softmax_rows(
        x,
        &wt,
        bias,
        labels,
        sample_weights,
        total_weight,
        &mut logits,
        &mut grad_logits,
    );
    let gw = x.tr_mul(&grad_logits).transpose() + weight * l2;
    let gb = grad_logits.row_sum().iter().copied().collect();
    Ok(Objective {
        loss: ce + 0.5 * l2 * weight.norm_squared(),
        weight: gw,
        bias: gb,
    })
}

/// Fills `logits` and the gradient of the weighted cross-entropy with
/// respect to the logits; returns the weighted mean cross-entropy.
#[allow(clippy::too_many_arguments)]
fn softmax_rows(
    x: &DMatrix<f64>,
    wt: &DMatrix<f64>,
    bias: &[f64],
    labels: &[usize],
    sample_weights: &[f64],
    total_weight: f64,
    logits: &mut DMatrix<f64>,
    grad: &mut DMatrix<f64>,
) -> f64 {
    logits.gemm(1.0, x, wt, 0.0);
    let n = bias.len();
    let mut ce = 0.0;
    let mut p = vec![0.0; n];
    for i in 0..x.nrows() {
        let mut max = f64::NEG_INFINITY;
        for c in 0..n {
            let z = logits[(i, c)] + bias[c];
            p[c] = z;
            max = max.max(z);
        }
        let mut total = 0.0;
        for pc in p.iter_mut() {
            *pc = (*pc - max).exp();
            total += *pc;
        }
        let w = sample_weights[i] / total_weight;
        let y = labels[i];
        ce -= w * (p[y] / total).ln();
        for c in 0..n {
            let prob = p[c] / total;
            grad[(i, c)] = w * (prob - if c == y { 1.0 } else { 0.0 });
        }
    }
    ce
}

/// One pass over the rows: fills the gradient of the weighted
/// cross-entropy in `gw`, `gb` and returns the cross-entropy.
#[allow(clippy::too_many_arguments)]
fn accumulate(
    xs: &[f64],
    d: usize,
    labels: &[usize],
    row_weights: &[f64],
    w: &[f64],
    bias: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    z: &mut [f64],
) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected above.
        return unsafe { accumulate_avx2(xs, d, labels, row_weights, w, bias, gw, gb, z) };
    }
    accumulate_body(xs, d, labels, row_weights, w, bias, gw, gb, z)
}

// Same operation order as the portable path, so results are identical.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn accumulate_avx2(
    xs: &[f64],
    d: usize,
    labels: &[usize],
    row_weights: &[f64],
    w: &[f64],
    bias: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    z: &mut [f64],
) -> f64 {
    accumulate_body(xs, d, labels, row_weights, w, bias, gw, gb, z)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn accumulate_body(
    xs: &[f64],
    d: usize,
    labels: &[usize],
    row_weights: &[f64],
    w: &[f64],
    bias: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    z: &mut [f64],
) -> f64 {
    let n = bias.len();
    gw.iter_mut().for_each(|g| *g = 0.0);
    gb.iter_mut().for_each(|g| *g = 0.0);
    let mut ce = 0.0;
    for (i, xi) in xs.chunks_exact(d).enumerate() {
        let mut max = f64::NEG_INFINITY;
        for c in 0..n {
            z[c] = bias[c] + dot(&w[c * d..(c + 1) * d], xi);
            max = max.max(z[c]);
        }
        let mut total = 0.0;
        for zc in z.iter_mut() {
            *zc = (*zc - max).exp();
            total += *zc;
        }
        let (rw, y) = (row_weights[i], labels[i]);
        ce -= rw * (z[y] / total).ln();
        for c in 0..n {
            let g = rw * (z[c] / total - if c == y { 1.0 } else { 0.0 });
            gb[c] += g;
            for (a, b) in gw[c * d..(c + 1) * d].iter_mut().zip(xi) {
                *a += g * b;
            }
        }
    }
    ce
}

#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn top_eigenvalue(gram: &DMatrix<f64>) -> f64 {
    let mut v = DVector::from_element(gram.nrows(), 1.0 / (gram.nrows() as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w);
        v = w / norm;
    }
    lambda
}

pub fn train_classifier(ts: &TrainSet, cfg: &ClassifierConfig) -> Result<(LinearClassifier, TrainTrace)> {
    ts.check()?;
    if cfg.l2.is_nan() || cfg.l2 < 0.0 || cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidParameter(
            "l2 must be >= 0 and the learning rate positive".into(),
        ));
    }
    let (m, d, n) = (ts.len(), ts.dim, ts.n_classes);
    let sample_weights: Vec<f64> = ts.provenance.iter().map(|p| cfg.weights.of(*p)).collect();
    let total: f64 = sample_weights.iter().sum();
    if sample_weights.iter().any(|w| w.is_nan() || *w < 0.0) || total.is_nan() || total <= 0.0 {
        return Err(Error::InvalidParameter(
            "row weights must be >= 0 with a positive total".into(),
        ));
    }
    let total_weight: f64 = sample_weights.iter().sum();

    // standardise columns
    let mut center = vec![0.0; d];
    for r in &ts.rows {
        for (c, v) in center.iter_mut().zip(r) {
            *c += v;
        }
    }
    center.iter_mut().for_each(|c| *c /= m as f64);
    let mut scale = vec![0.0; d];
    for r in &ts.rows {
        for j in 0..d {
            scale[j] += (r[j] - center[j]).powi(2);
        }
    }
    for s in scale.iter_mut() {
        *s = (*s / m as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let x = DMatrix::from_fn(m, d, |i, j| (ts.rows[i][j] - center[j]) / scale[j]);

    // curvature bound: softmax Hessian <= 1/2 · weighted Gram of [x, 1]
    let mut aug = DMatrix::from_element(m, d + 1, 1.0);
    aug.view_mut((0, 0), (m, d)).copy_from(&x);
    for (i, mut row) in aug.row_iter_mut().enumerate() {
        row *= (sample_weights[i] / total_weight).sqrt();
    }
    let gram = aug.tr_mul(&aug);
    let curvature = 0.5 * top_eigenvalue(&gram) * 1.05 + cfg.l2;
    let step = if curvature > 0.0 {
        cfg.learning_rate.min(1.0 / curvature)
    } else {
        cfg.learning_rate
    };

    // row-major copies for the fused per-row pass below
    let xs: Vec<f64> = (0..m).flat_map(|i| x.row(i).iter().copied().collect::<Vec<_>>()).collect();
    let row_weights: Vec<f64> = sample_weights.iter().map(|w| w / total_weight).collect();
    let mut w = vec![0.0; n * d];
    let mut bias = vec![0.0; n];
    let mut gw = vec![0.0; n * d];
    let mut gb = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut checkpoints = Vec::new();
    for it in 0..=cfg.iterations {
        let ce = accumulate(&xs, d, &ts.labels, &row_weights, &w, &bias, &mut gw, &mut gb, &mut z);
        let loss = ce + 0.5 * cfg.l2 * w.iter().map(|v| v * v).sum::<f64>();
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite classifier loss at iteration {it}"
            )));
        }
        if it % CHECKPOINT == 0 || it == cfg.iterations {
            checkpoints.push((it, loss));
        }
        if it == cfg.iterations {
            break;
        }
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= step * (g + cfg.l2 * *wv);
        }
        for (b, g) in bias.iter_mut().zip(&gb) {
            *b -= step * g;
        }
    }

    // fold the standardisation back into the weights
    let mut weight = DMatrix::zeros(n, d);
    let mut raw_bias = bias;
    for c in 0..n {
        for j in 0..d {
            let v = w[c * d + j] / scale[j];
            weight[(c, j)] = v;
            raw_bias[c] -= v * center[j];
        }
    }
    Ok((
        LinearClassifier {
            weight,
            bias: raw_bias,
            l2: cfg.l2,
        },
        TrainTrace { step, checkpoints },
    ))
}
