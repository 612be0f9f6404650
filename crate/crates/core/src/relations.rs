//! Semantic and visual distances, and the ranking that picks the base
//! classes a novel sample borrows statistics from.
//!
//! Both ranking stages order by ascending distance and break ties by
//! ascending class id, so results never depend on bank order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::BaseClassStats;
use crate::store::SemanticBank;

fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Squared Euclidean distance between two class embeddings.
pub fn semantic_distance(v_y: &[f64], v_c: &[f64]) -> Result<f64> {
    squared_distance(v_y, v_c)
}

/// Squared Euclidean distance between a transformed sample and a base
/// prototype in the same space.
pub fn visual_distance(f_prime: &[f64], mu_c: &[f64]) -> Result<f64> {
    squared_distance(f_prime, mu_c)
}

/// The `k` candidates with the smallest distance, ascending, ties by id.
///
/// `distances[i]` and `ids[i]` describe candidate `i`; only the indices in
/// `candidates` take part.
pub fn rank_smallest(distances: &[f64], ids: &[&str], candidates: &[usize], k: usize) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| {
        distances[a]
            .total_cmp(&distances[b])
            .then_with(|| ids[a].cmp(ids[b]))
    });
    order.truncate(k);
    order
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionParams {
    /// Semantic shortlist size.
    pub p: usize,
    /// Base classes kept after the visual stage.
    pub q: usize,
    /// Semantic neighbours for attention-map hallucination.
    pub k: usize,
}

impl SelectionParams {
    /// `p = 10` for one shot and `p = 32` otherwise, with `q = 2`, `k = 1`.
    pub fn for_shots(k_shot: usize) -> Self {
        SelectionParams {
            p: if k_shot <= 1 { 10 } else { 32 },
            q: 2,
            k: 1,
        }
    }

    pub fn check(&self, base_count: usize) -> Result<()> {
        if self.q == 0 || self.p == 0 || self.k == 0 {
            return Err(Error::InvalidParameter(
                "p, q and k must be positive".to_string(),
            ));
        }
        if self.q > self.p || self.p > base_count {
            return Err(Error::InvalidParameter(format!(
                "need q <= p <= base count, got q={} p={} with {base_count} base classes",
                self.q, self.p
            )));
        }
        if self.k > base_count {
            return Err(Error::InvalidParameter(format!(
                "k={} exceeds {base_count} base classes",
                self.k
            )));
        }
        Ok(())
    }
}

/// How base classes are ranked for a novel sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    /// Semantic top-p shortlist, then visual top-q within it.
    SemanticVisual,
    /// Visual top-q over all base classes.
    VisualOnly,
}

/// Base-class statistics joined with their semantic vectors.
pub struct Selector<'a> {
    stats: &'a BaseClassStats,
    semantic: Vec<Vec<f64>>,
}

impl<'a> Selector<'a> {
    pub fn new(stats: &'a BaseClassStats, semantics: &SemanticBank) -> Result<Self> {
        let semantic = stats
            .classes
            .iter()
            .map(|c| semantics.get_f64(&c.class_id))
            .collect::<Result<Vec<_>>>()?;
        Ok(Selector { stats, semantic })
    }

    pub fn stats(&self) -> &BaseClassStats {
        self.stats
    }

    pub fn class_id(&self, base: usize) -> &str {
        &self.stats.classes[base].class_id
    }

    pub fn ids(&self, bases: &[usize]) -> Vec<String> {
        bases.iter().map(|&b| self.class_id(b).to_string()).collect()
    }

    fn id_refs(&self) -> Vec<&str> {
        self.stats.classes.iter().map(|c| c.class_id.as_str()).collect()
    }

    /// The `k` base classes semantically closest to `v_y`, ascending.
    pub fn top_k_semantic(&self, v_y: &[f64], k: usize) -> Result<Vec<usize>> {
        let n = self.stats.len();
        if k == 0 || k > n {
            return Err(Error::InvalidParameter(format!(
                "k={k} out of range for {n} base classes"
            )));
        }
        let dist = self
            .semantic
            .iter()
            .map(|v_c| semantic_distance(v_y, v_c))
            .collect::<Result<Vec<_>>>()?;
        let all: Vec<usize> = (0..n).collect();
        Ok(rank_smallest(&dist, &self.id_refs(), &all, k))
    }

    /// The `q` members of `shortlist` visually closest to `f_tukey`.
    pub fn top_q_visual(&self, f_tukey: &[f64], shortlist: &[usize], q: usize) -> Result<Vec<usize>> {
        if q == 0 || q > shortlist.len() {
            return Err(Error::InvalidParameter(format!(
                "q={q} out of range for a shortlist of {}",
                shortlist.len()
            )));
        }
        let mut dist = vec![f64::INFINITY; self.stats.len()];
        for &c in shortlist {
            dist[c] = visual_distance(f_tukey, &self.stats.classes[c].mu)?;
        }
        Ok(rank_smallest(&dist, &self.id_refs(), shortlist, q))
    }

    /// Base classes correlated with a sample of class `y` (embedding `v_y`).
    pub fn select(
        &self,
        f_tukey: &[f64],
        v_y: &[f64],
        params: &SelectionParams,
        ranking: Ranking,
    ) -> Result<Vec<usize>> {
        params.check(self.stats.len())?;
        let shortlist = match ranking {
            Ranking::SemanticVisual => self.top_k_semantic(v_y, params.p)?,
            Ranking::VisualOnly => (0..self.stats.len()).collect(),
        };
        self.top_q_visual(f_tukey, &shortlist, params.q)
    }
}
