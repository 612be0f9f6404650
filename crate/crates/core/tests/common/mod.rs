//! Independent reference implementations shared by the integration tests
//! and the acceptance suite. Plain loops over `Vec<f64>`; nothing here
//! calls the library code it is compared against.

#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semhallu::classifier::objective;
use semhallu::ivdh::{fusion_gradient, fusion_loss, FusionExample, FusionNetwork};
use semhallu::store::{FeatureBank, SemanticBank, Split};
use semhallu::synthetic::SyntheticSpec;

pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_base: 16,
        n_novel: 8,
        d: 12,
        m: 4,
        samples_per_class: 40,
        seed,
        ..SyntheticSpec::default()
    }
}

pub fn tukey(x: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        (x + 1e-6).ln()
    } else {
        x.powf(tau)
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

pub struct OracleBase {
    pub id: String,
    pub semantic: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

/// Transformed prototypes and unbiased covariances of the base classes.
pub fn oracle_bases(bank: &FeatureBank, semantics: &SemanticBank, tau: f64) -> Vec<OracleBase> {
    let d = bank.dim;
    let mut out = Vec::new();
    for class in &bank.classes {
        if class.split != Split::Base {
            continue;
        }
        let n = class.data.len() / d;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..d).map(|j| tukey(class.data[i * d + j] as f64, tau)).collect())
            .collect();
        let mut mu = vec![0.0; d];
        for r in &rows {
            for j in 0..d {
                mu[j] += r[j];
            }
        }
        for v in mu.iter_mut() {
            *v /= n as f64;
        }
        let mut sigma = vec![vec![0.0; d]; d];
        for r in &rows {
            for a in 0..d {
                for b in 0..d {
                    sigma[a][b] += (r[a] - mu[a]) * (r[b] - mu[b]);
                }
            }
        }
        for row in sigma.iter_mut() {
            for v in row.iter_mut() {
                *v /= (n - 1) as f64;
            }
        }
        let semantic = semantics.entries[&class.class_id].iter().map(|&v| v as f64).collect();
        out.push(OracleBase {
            id: class.class_id.clone(),
            semantic,
            mu,
            sigma,
        });
    }
    out
}

/// Semantic shortlist of `p`, then the `q` visually closest; ties by id.
/// `p = None` ranks all base classes visually.
pub fn oracle_select(bases: &[OracleBase], f: &[f64], v_y: &[f64], p: Option<usize>, q: usize) -> Vec<String> {
    fn by<'a>(key: &dyn Fn(&OracleBase) -> f64, pool: Vec<&'a OracleBase>, n: usize) -> Vec<&'a OracleBase> {
        let mut scored: Vec<(f64, &OracleBase)> = pool.into_iter().map(|b| (key(b), b)).collect();
        scored.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.id.cmp(&y.1.id)));
        scored.into_iter().take(n).map(|(_, b)| b).collect()
    }
    let all: Vec<&OracleBase> = bases.iter().collect();
    let shortlist = match p {
        Some(p) => by(&|b| sq_dist(v_y, &b.semantic), all, p),
        None => all,
    };
    by(&|b| sq_dist(f, &b.mu), shortlist, q)
        .into_iter()
        .map(|b| b.id.clone())
        .collect()
}

/// Per-shot candidate prototype and covariance, averaged over the shots.
#[allow(clippy::too_many_arguments)]
pub fn oracle_estimate(
    bases: &[OracleBase],
    support_raw: &[Vec<f64>],
    v_y: &[f64],
    tau: f64,
    p: usize,
    q: usize,
    alpha: f64,
    beta: f64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = support_raw[0].len();
    let k = support_raw.len() as f64;
    let mut mu_hat = vec![0.0; d];
    let mut sigma_hat = vec![vec![0.0; d]; d];
    for raw in support_raw {
        let f: Vec<f64> = raw.iter().map(|&x| tukey(x, tau)).collect();
        let chosen = oracle_select(bases, &f, v_y, Some(p), q);
        let picked: Vec<&OracleBase> = chosen
            .iter()
            .map(|id| bases.iter().find(|b| &b.id == id).unwrap())
            .collect();
        let qn = picked.len() as f64;
        for j in 0..d {
            let mean_mu: f64 = picked.iter().map(|b| b.mu[j]).sum::<f64>() / qn;
            mu_hat[j] += (alpha * mean_mu + (1.0 - alpha) * f[j]) / k;
        }
        for a in 0..d {
            for b in 0..d {
                let mean_sigma: f64 = picked.iter().map(|c| c.sigma[a][b]).sum::<f64>() / qn;
                sigma_hat[a][b] += (mean_sigma + beta) / k;
            }
        }
    }
    (mu_hat, sigma_hat)
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)` over all entries.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

const STEP: f64 = 1e-5;

/// Random small fusion instance away from ReLU kinks; returns the relative
/// error between the analytic and central-difference gradients.
pub fn fusion_gradient_error(seed: u64) -> f64 {
    let mut r = test_rng(seed);
    let d = r.random_range(1..=8);
    let m = r.random_range(1..=4);
    let lambda = r.random_range(0.1..1.0);
    let mut net = FusionNetwork::init(d, m, lambda, seed).unwrap();
    for b in net.bias.iter_mut() {
        *b = r.random_range(-0.5..0.5);
    }
    let batch_len = r.random_range(1..=5);
    let mut data = Vec::new();
    while data.len() < batch_len {
        let f: Vec<f64> = (0..d).map(|_| r.random_range(0.0..2.0)).collect();
        let v: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..d).map(|_| r.random_range(0.0..2.0)).collect();
        // keep the pre-activation clear of zero so differences stay smooth
        let near_kink = (0..d).any(|i| {
            let mut h = net.bias[i];
            for (j, x) in f.iter().chain(&v).enumerate() {
                h += net.weight[(i, j)] * x;
            }
            (f[i] + lambda * h.tanh()).abs() < 1e-3
        });
        if !near_kink {
            data.push((f, v, t));
        }
    }
    let batch: Vec<FusionExample<'_>> = data
        .iter()
        .map(|(f, v, t)| FusionExample {
            feature: f,
            semantic: v,
            target: t,
        })
        .collect();
    let g = fusion_gradient(&net, &batch).unwrap();
    assert!((g.loss - fusion_loss(&net, &batch).unwrap()).abs() < 1e-12);

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for i in 0..d {
        for j in 0..d + m {
            let orig = net.weight[(i, j)];
            net.weight[(i, j)] = orig + STEP;
            let up = fusion_loss(&net, &batch).unwrap();
            net.weight[(i, j)] = orig - STEP;
            let down = fusion_loss(&net, &batch).unwrap();
            net.weight[(i, j)] = orig;
            analytic.push(g.weight[(i, j)]);
            numeric.push((up - down) / (2.0 * STEP));
        }
        let orig = net.bias[i];
        net.bias[i] = orig + STEP;
        let up = fusion_loss(&net, &batch).unwrap();
        net.bias[i] = orig - STEP;
        let down = fusion_loss(&net, &batch).unwrap();
        net.bias[i] = orig;
        analytic.push(g.bias[i]);
        numeric.push((up - down) / (2.0 * STEP));
    }
    relative_error(&analytic, &numeric)
}

/// Same check for the regularised classifier objective (`d ≤ 8`, `N ≤ 4`).
pub fn classifier_gradient_error(seed: u64) -> f64 {
    let mut r = test_rng(seed ^ 0xc1a5);
    let n = r.random_range(2..=4);
    let d = r.random_range(1..=8);
    let rows = r.random_range(3..=20);
    let x = DMatrix::from_fn(rows, d, |_, _| r.random_range(-2.0..2.0));
    let labels: Vec<usize> = (0..rows).map(|_| r.random_range(0..n)).collect();
    let weights: Vec<f64> = (0..rows).map(|_| r.random_range(0.5..2.0)).collect();
    let l2 = r.random_range(0.0..0.1);
    let mut w = DMatrix::from_fn(n, d, |_, _| r.random_range(-1.0..1.0));
    let mut b: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let obj = objective(&w, &b, &x, &labels, &weights, l2).unwrap();
    let loss = |w: &DMatrix<f64>, b: &[f64]| objective(w, b, &x, &labels, &weights, l2).unwrap().loss;

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for c in 0..n {
        for j in 0..d {
            let orig = w[(c, j)];
            w[(c, j)] = orig + STEP;
            let up = loss(&w, &b);
            w[(c, j)] = orig - STEP;
            let down = loss(&w, &b);
            w[(c, j)] = orig;
            analytic.push(obj.weight[(c, j)]);
            numeric.push((up - down) / (2.0 * STEP));
        }
        let orig = b[c];
        b[c] = orig + STEP;
        let up = loss(&w, &b);
        b[c] = orig - STEP;
        let down = loss(&w, &b);
        b[c] = orig;
        analytic.push(obj.bias[c]);
        numeric.push((up - down) / (2.0 * STEP));
    }
    relative_error(&analytic, &numeric)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let rank = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                out[k] = rank;
            }
            i = j + 1;
        }
        out
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..ra.len() {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma).powi(2);
        vb += (rb[i] - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}
