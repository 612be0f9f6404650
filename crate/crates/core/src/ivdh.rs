//! Instance-view hallucination: a one-layer semantic fusion network that
//! nudges each support feature towards its class prototype, and the
//! attention-map emphasis applied to raw images.
//!
//! The network computes
//!
//! ```text
//! h   = W (f ⊕ v) + b
//! out = ReLU(f + λ · tanh(h))
//! ```
//!
//! and is trained with mini-batch SGD on the mean squared distance between
//! `out` and the raw-space prototype of the sample's class.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_file, Decoder, Encoder};
use crate::episodes::{rng, Sample};
use crate::error::{Error, Result};
use crate::stats::{BaseClassStats, Space};
use crate::store::{FeatureBank, SemanticBank, Split};

pub const NETWORK_MAGIC: &[u8; 4] = b"FSFN";

#[derive(Clone, Debug, PartialEq)]
pub struct FusionNetwork {
    pub d: usize,
    pub m: usize,
    pub lambda: f64,
    /// `d × (d + m)`; the first `d` columns act on the visual feature.
    pub weight: DMatrix<f64>,
    pub bias: Vec<f64>,
}

impl FusionNetwork {
    pub fn zeros(d: usize, m: usize, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(FusionNetwork {
            d,
            m,
            lambda,
            weight: DMatrix::zeros(d, d + m),
            bias: vec![0.0; d],
        })
    }

    /// Weights uniform in `±1/sqrt(d + m)`, bias zero.
    pub fn init(d: usize, m: usize, lambda: f64, seed: u64) -> Result<Self> {
        let mut net = FusionNetwork::zeros(d, m, lambda)?;
        let bound = 1.0 / ((d + m) as f64).sqrt();
        let mut r = rng(seed);
        // row-major fill so the draw order does not depend on storage order
        for i in 0..d {
            for j in 0..d + m {
                net.weight[(i, j)] = r.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    fn check_inputs(&self, f: &[f64], v: &[f64]) -> Result<()> {
        if f.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: f.len(),
            });
        }
        if v.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: v.len(),
            });
        }
        Ok(())
    }

    fn hidden(&self, f: &[f64], v: &[f64]) -> Vec<f64> {
        (0..self.d)
            .map(|i| {
                let row = self.weight.row(i);
                let mut acc = self.bias[i];
                for (j, x) in f.iter().chain(v).enumerate() {
                    acc += row[j] * x;
                }
                acc
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.lambda.is_finite()
            && self.weight.iter().all(|w| w.is_finite())
            && self.bias.iter().all(|b| b.is_finite())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }

    /// `FSFN  version  d  m  λ:f32  W row-major f32  b f32`
    pub fn encode(&self) -> Result<Vec<u8>> {
        if !self.is_finite() {
            return Err(Error::InvalidParameter(
                "refusing to write a network with non-finite parameters".into(),
            ));
        }
        let mut enc = Encoder::new(NETWORK_MAGIC);
        enc.len_u32(self.d, "d")?;
        enc.len_u32(self.m, "m")?;
        enc.f32(self.lambda as f32);
        for i in 0..self.d {
            for j in 0..self.d + self.m {
                enc.f32(self.weight[(i, j)] as f32);
            }
        }
        for b in &self.bias {
            enc.f32(*b as f32);
        }
        Ok(enc.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new(bytes, NETWORK_MAGIC)?;
        let d = dec.u32("d")? as usize;
        let m = dec.u32("m")? as usize;
        let lambda = dec.f32("lambda")? as f64;
        let w = dec.f32s(d * (d + m), "weight matrix")?;
        let b = dec.f32s(d, "bias")?;
        dec.finish()?;
        check_lambda(lambda)?;
        let net = FusionNetwork {
            d,
            m,
            lambda,
            weight: DMatrix::from_row_iterator(d, d + m, w.into_iter().map(f64::from)),
            bias: b.into_iter().map(f64::from).collect(),
        };
        if !net.is_finite() {
            return Err(Error::InvalidParameter("network has non-finite parameters".into()));
        }
        Ok(net)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    Ok(())
}

/// `ReLU(f + λ · tanh(W (f ⊕ v) + b))`.
pub fn fuse_forward(net: &FusionNetwork, f: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    net.check_inputs(f, v)?;
    let h = net.hidden(f, v);
    Ok(f.iter()
        .zip(&h)
        .map(|(fi, hi)| (fi + net.lambda * hi.tanh()).max(0.0))
        .collect())
}

/// One training example: feature, class embedding, class prototype.
#[derive(Clone, Copy, Debug)]
pub struct FusionExample<'a> {
    pub feature: &'a [f64],
    pub semantic: &'a [f64],
    pub target: &'a [f64],
}

/// Mean over the batch of `‖out − target‖²`.
pub fn fusion_loss(net: &FusionNetwork, batch: &[FusionExample<'_>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("fusion loss over an empty batch"));
    }
    let mut total = 0.0;
    for ex in batch {
        let out = fuse_forward(net, ex.feature, ex.semantic)?;
        check_target(net, ex.target)?;
        total += out
            .iter()
            .zip(ex.target)
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

fn check_target(net: &FusionNetwork, target: &[f64]) -> Result<()> {
    if target.len() != net.d {
        return Err(Error::DimensionMismatch {
            expected: net.d,
            found: target.len(),
        });
    }
    Ok(())
}

/// Loss with its gradients with respect to the weight and bias.
pub struct FusionGradient {
    pub loss: f64,
    pub weight: DMatrix<f64>,
    pub bias: Vec<f64>,
}

pub fn fusion_gradient(net: &FusionNetwork, batch: &[FusionExample<'_>]) -> Result<FusionGradient> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("fusion gradient over an empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut gw = DMatrix::zeros(net.d, net.d + net.m);
    let mut gb = vec![0.0; net.d];
    let mut loss = 0.0;
    for ex in batch {
        net.check_inputs(ex.feature, ex.semantic)?;
        check_target(net, ex.target)?;
        let h = net.hidden(ex.feature, ex.semantic);
        for i in 0..net.d {
            let t = h[i].tanh();
            let z = ex.feature[i] + net.lambda * t;
            let out = z.max(0.0);
            let diff = out - ex.target[i];
            loss += diff * diff;
            // ReLU subgradient at 0 is 0
            if z <= 0.0 {
                continue;
            }
            let dh = 2.0 * diff * scale * net.lambda * (1.0 - t * t);
            if dh == 0.0 {
                continue;
            }
            gb[i] += dh;
            for (j, x) in ex.feature.iter().chain(ex.semantic).enumerate() {
                gw[(i, j)] += dh * x;
            }
        }
    }
    Ok(FusionGradient {
        loss: loss * scale,
        weight: gw,
        bias: gb,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionTrainConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_iterations() -> usize {
    100_000
}

fn default_batch() -> usize {
    5
}

fn default_lr() -> f64 {
    0.01
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        FusionTrainConfig {
            iterations: default_iterations(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            seed: 0,
        }
    }
}

/// Held-out losses before and after training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionTrainReport {
    pub initial_heldout_loss: f64,
    pub final_heldout_loss: f64,
    pub train_examples: usize,
    pub heldout_examples: usize,
}

/// Every tenth row of each base class is held out to monitor training.
const HOLDOUT_STRIDE: usize = 10;

struct BaseExamples {
    features: Vec<Vec<f64>>,
    semantic: Vec<Vec<f64>>,
    class: Vec<usize>,
    targets: Vec<Vec<f64>>,
}

impl BaseExamples {
    fn example(&self, i: usize) -> FusionExample<'_> {
        FusionExample {
            feature: &self.features[i],
            semantic: &self.semantic[self.class[i]],
            target: &self.targets[self.class[i]],
        }
    }
}

/// Trains the fusion network on the base split.
///
/// Fails with [`Error::Divergence`] when a loss or parameter becomes
/// non-finite, or when the held-out loss ends above its initial value.
pub fn train_fusion(
    bank: &FeatureBank,
    semantics: &SemanticBank,
    raw_stats: &BaseClassStats,
    cfg: &FusionTrainConfig,
    lambda: f64,
) -> Result<(FusionNetwork, FusionTrainReport)> {
    if raw_stats.space != Space::Raw {
        return Err(Error::InvalidParameter(
            "fusion targets must be raw-space prototypes".into(),
        ));
    }
    if cfg.iterations == 0 || cfg.batch_size == 0 || cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidParameter(
            "iterations, batch size and learning rate must be positive".into(),
        ));
    }
    let d = bank.dim;
    let m = semantics.dim;
    let mut data = BaseExamples {
        features: Vec::new(),
        semantic: Vec::new(),
        class: Vec::new(),
        targets: Vec::new(),
    };
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for (ci, class) in bank.split(Split::Base).enumerate() {
        let stats = &raw_stats.classes[raw_stats
            .position(&class.class_id)
            .ok_or_else(|| Error::UnknownClass(class.class_id.clone()))?];
        let v = semantics.get_f64(&class.class_id)?;
        if v.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: v.len(),
            });
        }
        data.semantic.push(v);
        data.targets.push(stats.mu.clone());
        for r in 0..class.rows(d) {
            let idx = data.features.len();
            data.features.push(class.row_f64(d, r));
            data.class.push(ci);
            if r % HOLDOUT_STRIDE == HOLDOUT_STRIDE - 1 {
                heldout.push(idx);
            } else {
                train.push(idx);
            }
        }
    }
    if data.features.is_empty() {
        return Err(Error::EmptyInput("no base samples to train the fusion network"));
    }
    if train.is_empty() {
        train = heldout.clone();
    }
    if heldout.is_empty() {
        heldout = train.clone();
    }

    let heldout_batch: Vec<_> = heldout.iter().map(|&i| data.example(i)).collect();
    let mut net = FusionNetwork::init(d, m, lambda, cfg.seed)?;
    let initial = fusion_loss(&net, &heldout_batch)?;

    let mut r = rng(cfg.seed.wrapping_add(1));
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for it in 0..cfg.iterations {
        batch.clear();
        for _ in 0..cfg.batch_size {
            batch.push(data.example(train[r.random_range(0..train.len())]));
        }
        let grad = fusion_gradient(&net, &batch)?;
        if !grad.loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite fusion loss at iteration {it}"
            )));
        }
        net.weight -= &grad.weight * cfg.learning_rate;
        for (b, g) in net.bias.iter_mut().zip(&grad.bias) {
            *b -= cfg.learning_rate * g;
        }
        if !net.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite fusion parameters at iteration {it}"
            )));
        }
    }

    let final_loss = fusion_loss(&net, &heldout_batch)?;
    if !final_loss.is_finite() || final_loss > initial {
        return Err(Error::Divergence(format!(
            "held-out fusion loss rose from {initial:.6} to {final_loss:.6}"
        )));
    }
    Ok((
        net,
        FusionTrainReport {
            initial_heldout_loss: initial,
            final_heldout_loss: final_loss,
            train_examples: train.len(),
            heldout_examples: heldout.len(),
        },
    ))
}

/// One fused feature per support sample, labels preserved.
///
/// `class_semantics[label]` is the embedding of the episode class `label`.
pub fn hallucinate_support(
    net: &FusionNetwork,
    support: &[Sample],
    class_semantics: &[Vec<f64>],
) -> Result<Vec<(Vec<f64>, usize)>> {
    support
        .iter()
        .map(|s| {
            let v = class_semantics
                .get(s.label)
                .ok_or_else(|| Error::MissingSemantic(format!("episode class {}", s.label)))?;
            Ok((fuse_forward(net, &s.feature, v)?, s.label))
        })
        .collect()
}

/// An `height × width × channels` image stored row-major, channels last.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// `x' = (M^t + 1) ⊙ x`, broadcasting the map over channels.
pub fn apply_attention(x: &Image, map: &crate::store::AttentionMap, t: f64) -> Result<Image> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "smoothing exponent must be positive, got {t}"
        )));
    }
    if x.data.len() != x.height * x.width * x.channels {
        return Err(Error::DimensionMismatch {
            expected: x.height * x.width * x.channels,
            found: x.data.len(),
        });
    }
    if map.height != x.height || map.width != x.width {
        return Err(Error::InvalidParameter(format!(
            "map shape {}x{} does not match image {}x{}",
            map.height, map.width, x.height, x.width
        )));
    }
    if map.values.len() != map.height * map.width {
        return Err(Error::DimensionMismatch {
            expected: map.height * map.width,
            found: map.values.len(),
        });
    }
    if let Some(v) = map.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidParameter(format!(
            "map value {v} outside [0, 1]"
        )));
    }
    let mut data = x.data.clone();
    for (p, &m) in map.values.iter().enumerate() {
        let gain = (m as f64).powf(t) + 1.0;
        for c in 0..x.channels {
            data[p * x.channels + c] *= gain;
        }
    }
    Ok(Image {
        data,
        ..x.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::AttentionMap;
    use proptest::prelude::*;
    use rand::Rng;

    fn net_2x3(lambda: f64) -> FusionNetwork {
        FusionNetwork {
            d: 2,
            m: 1,
            lambda,
            weight: DMatrix::from_row_slice(2, 3, &[0.5, -0.25, 1.0, -1.5, 0.75, 0.2]),
            bias: vec![0.1, -0.3],
        }
    }

    #[test]
    fn forward_degenerate_cases() {
        let f = [0.7, 2.0, 0.0];
        let mut net = FusionNetwork::init(3, 2, 0.0, 7).unwrap();
        assert_eq!(fuse_forward(&net, &f, &[1.0, -1.0]).unwrap(), f.to_vec());
        net = FusionNetwork::zeros(3, 2, 0.9).unwrap();
        assert_eq!(fuse_forward(&net, &f, &[1.0, -1.0]).unwrap(), f.to_vec());
        assert!(fuse_forward(&net, &[1.0], &[1.0, -1.0]).is_err());
        assert!(fuse_forward(&net, &f, &[1.0]).is_err());
    }

    #[test]
    fn forward_matches_scalar_evaluation() {
        let net = net_2x3(0.3);
        // h0 = 0.5*1 - 0.25*2 + 1.0*1 + 0.1 = 1.1
        // h1 = -1.5*1 + 0.75*2 + 0.2*1 - 0.3 = -0.1
        let expected = [
            (1.0f64 + 0.3 * 1.1f64.tanh()).max(0.0),
            (2.0f64 + 0.3 * (-0.1f64).tanh()).max(0.0),
        ];
        let out = fuse_forward(&net, &[1.0, 2.0], &[1.0]).unwrap();
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-15, "{o} vs {e}");
        }
    }

    #[test]
    fn loss_examples() {
        // a zero network maps every sample to itself
        let net = FusionNetwork::zeros(2, 1, 0.3).unwrap();
        let f = [1.0, 2.0];
        let ex = FusionExample {
            feature: &f,
            semantic: &[0.5],
            target: &f,
        };
        assert_eq!(fusion_loss(&net, &[ex]).unwrap(), 0.0);

        let target = [4.0, 6.0];
        let ex = FusionExample {
            feature: &f,
            semantic: &[0.5],
            target: &target,
        };
        assert_eq!(fusion_loss(&net, &[ex]).unwrap(), 25.0);
        assert!(fusion_loss(&net, &[]).is_err());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn loss_matches_recomputation() {
        let mut r = rng(19);
        for trial in 0..20 {
            let (d, m) = (1 + trial % 5, 1 + trial % 3);
            let net = FusionNetwork::init(d, m, 0.4, trial as u64).unwrap();
            let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..4)
                .map(|_| {
                    (
                        (0..d).map(|_| r.random_range(0.0..2.0)).collect(),
                        (0..m).map(|_| r.random_range(-1.0..1.0)).collect(),
                        (0..d).map(|_| r.random_range(0.0..2.0)).collect(),
                    )
                })
                .collect();
            let batch: Vec<_> = rows
                .iter()
                .map(|(f, v, t)| FusionExample {
                    feature: f,
                    semantic: v,
                    target: t,
                })
                .collect();
            let mut oracle = 0.0;
            for (f, v, t) in &rows {
                for i in 0..d {
                    let mut h = net.bias[i];
                    for j in 0..d {
                        h += net.weight[(i, j)] * f[j];
                    }
                    for j in 0..m {
                        h += net.weight[(i, d + j)] * v[j];
                    }
                    let o = (f[i] + net.lambda * h.tanh()).max(0.0);
                    oracle += (o - t[i]).powi(2);
                }
            }
            oracle /= rows.len() as f64;
            let got = fusion_loss(&net, &batch).unwrap();
            assert!((got - oracle).abs() <= 1e-10, "{got} vs {oracle}");
            assert!((fusion_gradient(&net, &batch).unwrap().loss - oracle).abs() <= 1e-10);
        }
    }

    #[test]
    fn network_file_round_trip() {
        let net = net_2x3(0.25);
        let bytes = net.encode().unwrap();
        assert_eq!(&bytes[..4], b"FSFN");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 4 + 6 * 4 + 2 * 4);
        let back = FusionNetwork::decode(&bytes).unwrap();
        assert_eq!(back.encode().unwrap(), bytes);
        assert_eq!(back.weight[(1, 0)], -1.5);

        assert!(matches!(
            FusionNetwork::decode(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[3] = b'X';
        assert!(matches!(
            FusionNetwork::decode(&bad),
            Err(Error::UnrecognizedFormat { .. })
        ));
    }

    #[test]
    fn hallucinate_counts_and_identity() {
        let net = FusionNetwork::init(2, 1, 0.0, 1).unwrap();
        let support: Vec<Sample> = (0..5)
            .map(|label| Sample {
                label,
                row: 0,
                feature: vec![label as f64, 1.0],
            })
            .collect();
        let sems: Vec<Vec<f64>> = (0..5).map(|c| vec![c as f64]).collect();
        let out = hallucinate_support(&net, &support, &sems).unwrap();
        assert_eq!(out.len(), 5);
        for (s, (f, label)) in support.iter().zip(&out) {
            assert_eq!(&s.feature, f);
            assert_eq!(s.label, *label);
        }
        assert!(matches!(
            hallucinate_support(&net, &support, &sems[..3]),
            Err(Error::MissingSemantic(_))
        ));
    }

    #[test]
    fn attention_examples() {
        let img = Image {
            height: 1,
            width: 2,
            channels: 2,
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        let zeros = AttentionMap::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert_eq!(apply_attention(&img, &zeros, 0.5).unwrap(), img);
        let ones = AttentionMap::new(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(
            apply_attention(&img, &ones, 0.5).unwrap().data,
            vec![2.0, 4.0, 6.0, 8.0]
        );
        let px = Image {
            height: 1,
            width: 1,
            channels: 1,
            data: vec![8.0],
        };
        let quarter = AttentionMap::new(1, 1, vec![0.25]).unwrap();
        assert_eq!(apply_attention(&px, &quarter, 0.5).unwrap().data, vec![12.0]);

        let wrong = AttentionMap::new(2, 1, vec![0.0, 0.0]).unwrap();
        assert!(apply_attention(&img, &wrong, 0.5).is_err());
        let out_of_range = AttentionMap {
            height: 1,
            width: 2,
            values: vec![0.5, 1.2],
        };
        assert!(apply_attention(&img, &out_of_range, 0.5).is_err());
        assert!(apply_attention(&img, &zeros, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn forward_stays_within_lambda(
            lambda in 0.0f64..1.0,
            seed in any::<u64>(),
            f in prop::collection::vec(0.0f64..3.0, 4),
            v in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            let net = FusionNetwork::init(4, 2, lambda, seed).unwrap();
            let out = fuse_forward(&net, &f, &v).unwrap();
            for (o, fi) in out.iter().zip(&f) {
                prop_assert!(*o >= 0.0);
                prop_assert!((o - fi).abs() <= lambda + 1e-12);
            }
        }

        #[test]
        fn attention_is_monotone_in_map(
            a in prop::collection::vec(0.0f32..=1.0, 6),
            bump in prop::collection::vec(0.0f32..=1.0, 6),
            x in prop::collection::vec(0.0f64..10.0, 12),
            t in 0.1f64..3.0,
        ) {
            let b: Vec<f32> = a.iter().zip(&bump).map(|(u, w)| (u + w).min(1.0)).collect();
            let img = Image { height: 2, width: 3, channels: 2, data: x };
            let lo = apply_attention(&img, &AttentionMap::new(2, 3, a).unwrap(), t).unwrap();
            let hi = apply_attention(&img, &AttentionMap::new(2, 3, b).unwrap(), t).unwrap();
            for ((l, h), x) in lo.data.iter().zip(&hi.data).zip(&img.data) {
                prop_assert!(l <= h);
                prop_assert!(*l >= *x && *h <= 2.0 * x + 1e-12);
            }
        }
    }
}
