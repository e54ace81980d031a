//! Cosine similarity and thresholded neighborhood search.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::store::{norm, EmbeddingDataset, SimilarityStats, ZERO_NORM_EPS};
use crate::util::cmp_f64;

/// Rows of a dataset whose similarity to a query row clears a threshold.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub query_index: usize,
    /// Ascending row indices, query excluded.
    pub member_indices: Vec<usize>,
    /// Cosine similarity to the query, aligned with `member_indices`.
    pub similarities: Vec<f64>,
    /// The threshold actually applied (mu + z * sigma).
    pub threshold: f64,
    /// True when the strict threshold produced too few members and the
    /// top rows by similarity were returned instead.
    pub fallback: bool,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.member_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_indices.is_empty()
    }
}

pub fn cosine_similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na < ZERO_NORM_EPS || nb < ZERO_NORM_EPS {
        return Err(Error::ZeroNormVector);
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Finds all rows with `Sim(query, row) >= mu + z * sigma`, excluding the
/// query itself and rows suppressed to zero.
///
/// When fewer than `min_neighborhood` rows qualify the result falls back to
/// the top rows by similarity and `fallback` is set.
pub fn find_neighborhood(
    ds: &EmbeddingDataset,
    query_index: usize,
    stats: &SimilarityStats,
    z: f64,
    min_neighborhood: usize,
) -> Result<Neighborhood> {
    if query_index >= ds.len() {
        return Err(Error::IndexOutOfRange {
            index: query_index,
            len: ds.len(),
        });
    }
    let query = ds.row(query_index);
    let qn = norm(query);
    if ds.is_zeroed(query_index) || qn < ZERO_NORM_EPS {
        return Err(Error::ZeroNormVector);
    }

    let threshold = stats.mu + z * stats.sigma;
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for i in ds.alive_rows() {
        if i == query_index {
            continue;
        }
        let rn = ds.row_norm(i);
        let sim = (ds.row(i).dot(&query) / (rn * qn)).clamp(-1.0, 1.0);
        scored.push((i, sim));
    }

    let mut selected: Vec<(usize, f64)> = scored
        .iter()
        .copied()
        .filter(|(_, s)| *s >= threshold)
        .collect();
    let mut fallback = false;
    if selected.len() < min_neighborhood {
        fallback = true;
        scored.sort_unstable_by(|a, b| cmp_f64(b.1, a.1).then(a.0.cmp(&b.0)));
        scored.truncate(min_neighborhood);
        selected = scored;
    }
    selected.sort_unstable_by_key(|(i, _)| *i);

    let (member_indices, similarities) = selected.into_iter().unzip();
    Ok(Neighborhood {
        query_index,
        member_indices,
        similarities,
        threshold,
        fallback,
    })
}

/// Symmetric matrix of pairwise cosine similarities between the given rows.
pub fn pairwise_similarity_matrix(
    ds: &EmbeddingDataset,
    indices: &[usize],
) -> Result<Array2<f64>> {
    let m = indices.len();
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: m });
    }
    let mut unit = Array2::zeros((m, ds.dim()));
    for (r, &i) in indices.iter().enumerate() {
        if i >= ds.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: ds.len(),
            });
        }
        let rn = ds.row_norm(i);
        if rn < ZERO_NORM_EPS {
            return Err(Error::ZeroNormVector);
        }
        let mut row = unit.row_mut(r);
        row.assign(&ds.row(i));
        row.mapv_inplace(|v| v / rn);
    }

    let mut out = unit.dot(&unit.t());
    for i in 0..m {
        out[(i, i)] = 1.0;
        for j in (i + 1)..m {
            let v = out[(i, j)].clamp(-1.0, 1.0);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}
