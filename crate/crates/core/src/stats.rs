//! Class prototypes, covariances and the power transform applied before
//! prototype-view estimation.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{FeatureBank, Split};

/// Offset added before the logarithm when `tau == 0`; ReLU features contain
/// exact zeros.
pub const LOG_EPSILON: f64 = 1e-6;

/// Exponent of the ladder-of-powers transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tukey {
    pub tau: f64,
}

impl Default for Tukey {
    fn default() -> Self {
        Tukey { tau: 0.5 }
    }
}

impl Tukey {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must be finite and >= 0, got {tau}"
            )));
        }
        Ok(Tukey { tau })
    }

    /// `f^tau` elementwise, or `ln(f + LOG_EPSILON)` when `tau == 0`.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        let mut out = f.to_vec();
        self.apply_in_place(&mut out)?;
        Ok(out)
    }

    pub fn apply_in_place(&self, f: &mut [f64]) -> Result<()> {
        if let Some(index) = f.iter().position(|v| *v < 0.0 || v.is_nan()) {
            return Err(Error::NegativeValue {
                index,
                value: f[index],
            });
        }
        if self.tau == 0.0 {
            f.iter_mut().for_each(|v| *v = (*v + LOG_EPSILON).ln());
        } else if self.tau != 1.0 {
            let tau = self.tau;
            f.iter_mut().for_each(|v| *v = v.powf(tau));
        }
        Ok(())
    }
}

/// Rows of `features` as an `n × d` matrix.
pub fn rows_to_matrix(rows: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j])
}

/// Elementwise mean of the rows.
pub fn compute_prototype(features: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("prototype of zero rows"));
    }
    Ok(features
        .column_iter()
        .map(|col| col.iter().sum::<f64>() / n as f64)
        .collect())
}

/// Unbiased sample covariance (divisor `n - 1`) about `mu`.
pub fn compute_covariance(features: &DMatrix<f64>, mu: &[f64]) -> Result<DMatrix<f64>> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    if mu.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: mu.len(),
        });
    }
    let centered = DMatrix::from_fn(n, d, |i, j| features[(i, j)] - mu[j]);
    let mut cov = centered.tr_mul(&centered) / (n - 1) as f64;
    // gemm can leave last-bit asymmetry
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// Feature space the statistics were computed in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Space {
    Raw,
    Tukey(Tukey),
}

impl Space {
    fn key(self) -> Option<u64> {
        match self {
            Space::Raw => None,
            Space::Tukey(t) => Some(t.tau.to_bits()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaseClass {
    pub class_id: String,
    pub mu: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub count: usize,
}

/// Prototype and covariance of every base class, in bank order.
#[derive(Clone, Debug)]
pub struct BaseClassStats {
    pub space: Space,
    pub dim: usize,
    pub classes: Vec<BaseClass>,
}

impl BaseClassStats {
    pub fn compute(bank: &FeatureBank, space: Space) -> Result<Self> {
        let mut classes = Vec::new();
        for class in bank.split(Split::Base) {
            let n = class.rows(bank.dim);
            if n < 2 {
                return Err(Error::InsufficientSamples {
                    class_id: class.class_id.clone(),
                    needed: 2,
                    available: n,
                });
            }
            let mut x = DMatrix::from_row_slice(
                n,
                bank.dim,
                &class.data.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            );
            if let Space::Tukey(t) = space {
                t.apply_in_place(x.as_mut_slice())?;
            }
            let mu = compute_prototype(&x)?;
            let sigma = compute_covariance(&x, &mu)?;
            classes.push(BaseClass {
                class_id: class.class_id.clone(),
                mu,
                sigma,
                count: n,
            });
        }
        if classes.is_empty() {
            return Err(Error::EmptyInput("feature bank has no base classes"));
        }
        Ok(BaseClassStats {
            space,
            dim: bank.dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn position(&self, class_id: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.class_id == class_id)
    }
}

/// Write-once cache of base statistics for one bank, keyed by space.
pub struct StatsCache {
    bank: Arc<FeatureBank>,
    entries: Mutex<HashMap<Option<u64>, Arc<BaseClassStats>>>,
}

impl StatsCache {
    pub fn new(bank: Arc<FeatureBank>) -> Self {
        StatsCache {
            bank,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn bank(&self) -> &Arc<FeatureBank> {
        &self.bank
    }

    pub fn get(&self, space: Space) -> Result<Arc<BaseClassStats>> {
        let mut entries = self.entries.lock().expect("stats cache poisoned");
        if let Some(s) = entries.get(&space.key()) {
            return Ok(Arc::clone(s));
        }
        let stats = Arc::new(BaseClassStats::compute(&self.bank, space)?);
        entries.insert(space.key(), Arc::clone(&stats));
        Ok(stats)
    }
}
