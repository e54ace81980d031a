//! In-memory embedding dataset: validation, row normalization and
//! dataset-level similarity statistics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Row norm below this counts as numerically zero.
pub(crate) const ZERO_NORM_EPS: f64 = 1e-12;

/// Norm below which a suppressed row is flagged suppressed-to-zero and
/// excluded from future neighborhoods.
pub(crate) const SUPPRESSED_ZERO_NORM: f64 = 1e-8;

/// Unit-norm tolerance for normalized datasets.
const UNIT_NORM_TOL: f64 = 1e-6;

/// An n x d matrix of embeddings with one opaque string id per row.
///
/// Datasets are immutable after construction; extraction sessions mutate
/// private clones only.
#[derive(Debug, Clone)]
pub struct EmbeddingDataset {
    ids: Vec<String>,
    vectors: Array2<f64>,
    normalized: bool,
    zeroed: Vec<bool>,
}

/// Mean and standard deviation of pairwise cosine similarity over a seeded
/// sample of row pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityStats {
    pub mu: f64,
    pub sigma: f64,
    pub sample_pairs: usize,
}

impl EmbeddingDataset {
    /// Builds a dataset from explicit ids and vectors. Rows are taken as-is
    /// (`normalized` starts out false).
    pub fn new(ids: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        Self::from_parts(ids, vectors, false)
    }

    /// Builds a dataset whose ids are the decimal row indices.
    pub fn from_vectors(vectors: Array2<f64>) -> Result<Self> {
        let ids = (0..vectors.nrows()).map(|i| i.to_string()).collect();
        Self::new(ids, vectors)
    }

    pub(crate) fn from_parts(
        ids: Vec<String>,
        vectors: Array2<f64>,
        normalized: bool,
    ) -> Result<Self> {
        let (n, d) = vectors.dim();
        if n < 2 || d < 2 {
            return Err(Error::TooSmall { rows: n, cols: d });
        }
        if ids.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{} ids for {} rows",
                ids.len(),
                n
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        for id in &ids {
            if id.contains('\n') {
                return Err(Error::BadId {
                    id: id.clone(),
                    detail: "ids may not contain newlines".into(),
                });
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId { id: id.clone() });
            }
        }
        for ((r, c), v) in vectors.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: "<memory>".into(),
                    row: r as u64,
                    col: c,
                });
            }
        }
        let zeroed = vec![false; n];
        Ok(Self {
            ids,
            vectors,
            normalized,
            zeroed,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    /// Linear scan; datasets resolve at most a handful of ids per run.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn row(&self, index: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(index)
    }

    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    /// True when the row was shrunk below norm 1e-8 by concept suppression.
    pub fn is_zeroed(&self, index: usize) -> bool {
        self.zeroed[index]
    }

    pub fn zeroed_count(&self) -> usize {
        self.zeroed.iter().filter(|z| **z).count()
    }

    pub fn row_norm(&self, index: usize) -> f64 {
        norm(self.vectors.row(index))
    }

    /// Indices of rows that can still participate in similarity search.
    pub(crate) fn alive_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| !self.zeroed[i] && self.row_norm(i) > ZERO_NORM_EPS)
    }

    pub(crate) fn assign_row(&mut self, index: usize, values: &Array1<f64>) {
        self.vectors.row_mut(index).assign(values);
    }

    pub(crate) fn mark_zeroed(&mut self, index: usize) {
        self.zeroed[index] = true;
    }

    /// Returns a copy with every row scaled to unit Euclidean norm.
    ///
    /// Zero-norm rows are rejected by id; cosine similarity has no meaning
    /// for them.
    pub fn normalize_rows(&self) -> Result<Self> {
        let mut vectors = self.vectors.clone();
        for (i, mut row) in vectors.rows_mut().into_iter().enumerate() {
            let n = norm(row.view());
            if n < ZERO_NORM_EPS {
                return Err(Error::ZeroNormRow {
                    id: self.ids[i].clone(),
                });
            }
            row.mapv_inplace(|v| v / n);
        }
        Ok(Self {
            ids: self.ids.clone(),
            vectors,
            normalized: true,
            zeroed: self.zeroed.clone(),
        })
    }

    /// Estimates the mean and standard deviation of pairwise cosine
    /// similarity from seeded random row pairs.
    ///
    /// When the requested pair count covers the full set of distinct pairs
    /// the estimate is exhaustive; otherwise at least 1000 pairs are drawn
    /// so the estimate stays meaningful.
    pub fn estimate_similarity_stats(
        &self,
        sample_pairs: usize,
        seed: u64,
    ) -> Result<SimilarityStats> {
        if !self.normalized {
            return Err(Error::NotNormalized);
        }
        if sample_pairs == 0 {
            return Err(Error::InvalidConfig("sample_pairs must be >= 1".into()));
        }
        let rows: Vec<usize> = self.alive_rows().collect();
        let m = rows.len();
        if m < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: m });
        }
        let norms: Vec<f64> = rows.iter().map(|&i| self.row_norm(i)).collect();

        let total = m * (m - 1) / 2;
        let target = sample_pairs.max(1000);

        let mut count = 0usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut push = |s: f64| {
            let s = s.clamp(-1.0, 1.0);
            sum += s;
            sum_sq += s * s;
            count += 1;
        };

        if target >= total {
            for a in 0..m {
                for b in (a + 1)..m {
                    let s = self.vectors.row(rows[a]).dot(&self.vectors.row(rows[b]))
                        / (norms[a] * norms[b]);
                    push(s);
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..target {
                let a = rng.random_range(0..m);
                let mut b = rng.random_range(0..m - 1);
                if b >= a {
                    b += 1;
                }
                let s = self.vectors.row(rows[a]).dot(&self.vectors.row(rows[b]))
                    / (norms[a] * norms[b]);
                push(s);
            }
        }

        let mu = sum / count as f64;
        let var = (sum_sq / count as f64 - mu * mu).max(0.0);
        Ok(SimilarityStats {
            mu: mu.clamp(-1.0, 1.0),
            sigma: var.sqrt(),
            sample_pairs: count,
        })
    }

    /// Checks the structural invariants. Loaders and tests call this;
    /// the hot path assumes it.
    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.vectors.dim();
        if n < 2 || d < 2 {
            return Err(Error::TooSmall { rows: n, cols: d });
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        for id in &self.ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId { id: id.clone() });
            }
        }
        for ((r, c), v) in self.vectors.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: "<memory>".into(),
                    row: r as u64,
                    col: c,
                });
            }
        }
        if self.normalized {
            for i in 0..n {
                let nr = self.row_norm(i);
                if self.zeroed[i] {
                    continue;
                }
                if (nr - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::ZeroNormRow {
                        id: self.ids[i].clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}
