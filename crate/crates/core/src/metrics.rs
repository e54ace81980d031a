//! The four evaluation scores (relevance, consistency, inner diversity,
//! cross diversity) plus the two comparison baselines.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExtractionConfig;
use crate::error::{Error, Result};
use crate::extractor::extract_concepts;
use crate::store::{norm, EmbeddingDataset, ZERO_NORM_EPS};
use crate::util::{cmp_f64, mix_seed};

const MIN_POOL: usize = 30;
const MIN_DIST_SIGMA: f64 = 1e-6;

/// Distribution of query-to-concept similarities over a reference pool.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConceptDistribution {
    pub mu: f64,
    pub sigma: f64,
    pub pool_size: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConceptScores {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rs: Option<f64>,
    pub cs: f64,
    pub ids: f64,
    pub ids_degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conc_cds: Option<f64>,
}

/// Per-concept scores plus their image-level means.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub per_concept: Vec<ConceptScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub im_rs: Option<f64>,
    pub im_cs: f64,
    pub im_ids: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub im_cds: Option<f64>,
    /// Leading-component count used by the inner-diversity score.
    pub k_components: usize,
}

/// One concept-like item to score: an embedding plus its retrieved rows.
#[derive(Debug, Clone)]
pub struct ScoredSet {
    pub embedding: Array1<f64>,
    pub member_indices: Vec<usize>,
}

/// A baseline's concept-like set.
#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub sets: Vec<ScoredSet>,
    /// Set when the dataset was too small for the requested pool.
    pub shrunk: bool,
}

/// Standard normal CDF via the complementary error function;
/// absolute error well under 1e-7.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Extracts concepts for `pool_images` seeded random queries and returns
/// all resulting concept embeddings.
pub fn build_concept_pool(
    ds: &EmbeddingDataset,
    config: &ExtractionConfig,
    pool_images: usize,
    seed: u64,
) -> Result<Vec<Array1<f64>>> {
    if pool_images == 0 {
        return Err(Error::InvalidConfig("pool_images must be >= 1".into()));
    }
    let eligible: Vec<usize> = ds.alive_rows().collect();
    if eligible.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x9001));
    let take = pool_images.min(eligible.len());
    let picked = rand::seq::index::sample(&mut rng, eligible.len(), take);
    let mut queries: Vec<usize> = picked.iter().map(|i| eligible[i]).collect();
    queries.sort_unstable();

    let pools: Vec<Vec<Array1<f64>>> = queries
        .par_iter()
        .map(|&q| {
            let cfg = ExtractionConfig {
                seed: mix_seed(seed, q as u64),
                ..config.clone()
            };
            match extract_concepts(ds, q, &cfg) {
                Ok(res) => res
                    .concepts
                    .into_iter()
                    .filter(|c| !c.concept_embedding.near_zero)
                    .map(|c| c.concept_embedding.vector)
                    .collect(),
                Err(_) => Vec::new(),
            }
        })
        .collect();
    Ok(pools.into_iter().flatten().collect())
}

/// Mean and standard deviation of `Sim(query, e_c)` over the pool.
pub fn build_concept_distribution(
    ds: &EmbeddingDataset,
    query_index: usize,
    pool: &[Array1<f64>],
) -> Result<ConceptDistribution> {
    if pool.len() < MIN_POOL {
        return Err(Error::PoolTooSmall {
            needed: MIN_POOL,
            got: pool.len(),
        });
    }
    if query_index >= ds.len() {
        return Err(Error::IndexOutOfRange {
            index: query_index,
            len: ds.len(),
        });
    }
    let query = ds.row(query_index);
    let qn = norm(query);
    if qn < ZERO_NORM_EPS {
        return Err(Error::ZeroNormVector);
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for e in pool {
        let en = norm(e.view());
        if en < ZERO_NORM_EPS {
            return Err(Error::ZeroNormVector);
        }
        let s = (query.dot(e) / (qn * en)).clamp(-1.0, 1.0);
        sum += s;
        sum_sq += s * s;
    }
    let mu = sum / pool.len() as f64;
    let var = (sum_sq / pool.len() as f64 - mu * mu).max(0.0);
    Ok(ConceptDistribution {
        mu,
        sigma: var.sqrt(),
        pool_size: pool.len(),
    })
}

/// `Phi((Sim(query, concept) - mu) / sigma)`.
pub fn relevance_score(
    query: ArrayView1<'_, f64>,
    concept: ArrayView1<'_, f64>,
    dist: &ConceptDistribution,
) -> Result<f64> {
    if dist.sigma < MIN_DIST_SIGMA {
        return Err(Error::DegenerateDistribution { sigma: dist.sigma });
    }
    let qn = norm(query);
    let cn = norm(concept);
    if qn < ZERO_NORM_EPS || cn < ZERO_NORM_EPS {
        return Err(Error::ZeroNormVector);
    }
    let sim = (query.dot(&concept) / (qn * cn)).clamp(-1.0, 1.0);
    Ok(normal_cdf((sim - dist.mu) / dist.sigma).clamp(0.0, 1.0))
}

/// Norm of the mean embedding. Unit-norm rows make this a consistency
/// measure: unrelated directions cancel, a shared one survives.
pub fn consistency_score(rows: ArrayView2<'_, f64>) -> f64 {
    if rows.nrows() == 0 {
        return 0.0;
    }
    let mean = rows.mean_axis(Axis(0)).expect("non-empty");
    norm(mean.view()).min(1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct InnerDiversity {
    pub value: f64,
    /// Set when the rows carried no variance at all.
    pub degenerate: bool,
}

/// Fraction of centered variance captured by the top `k` principal
/// components of the retrieved rows.
pub fn inner_diversity_score(rows: ArrayView2<'_, f64>, k: usize) -> Result<InnerDiversity> {
    let (m, d) = rows.dim();
    if k < 1 {
        return Err(Error::InvalidConfig("K must be >= 1".into()));
    }
    if m < k + 1 {
        return Err(Error::TooFewSamples { needed: k + 1, got: m });
    }
    let mut x = rows.to_owned();
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    for mut row in x.rows_mut() {
        row -= &mean;
    }
    let scatter = x.t().dot(&x);
    let sym = DMatrix::from_fn(d, d, |r, c| scatter[(r, c)]);
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut lams: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    lams.sort_unstable_by(|a, b| cmp_f64(*b, *a));
    let total: f64 = lams.iter().sum();
    if total <= 1e-18 {
        return Ok(InnerDiversity {
            value: 0.0,
            degenerate: true,
        });
    }
    let top: f64 = lams.iter().take(k).sum();
    Ok(InnerDiversity {
        value: (top / total).clamp(0.0, 1.0),
        degenerate: false,
    })
}

/// `CDS(a, b) = (1 - Sim(a, b)) / 2`.
pub fn cds_pair(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na < ZERO_NORM_EPS || nb < ZERO_NORM_EPS {
        return Err(Error::ZeroNormVector);
    }
    let sim = (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0);
    Ok((0.5 * (1.0 - sim)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct CrossDiversity {
    /// Minimum CDS to any other concept, per concept. Empty for a single
    /// concept, whose cross diversity is undefined.
    pub per_concept: Vec<f64>,
    pub im_cds: Option<f64>,
}

pub fn cross_diversity(concepts: &[Array1<f64>]) -> Result<CrossDiversity> {
    if concepts.is_empty() {
        return Err(Error::InvalidConfig("need at least one concept".into()));
    }
    if concepts.len() == 1 {
        return Ok(CrossDiversity {
            per_concept: Vec::new(),
            im_cds: None,
        });
    }
    let mut per_concept = Vec::with_capacity(concepts.len());
    for (i, a) in concepts.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, b) in concepts.iter().enumerate() {
            if i == j {
                continue;
            }
            best = best.min(cds_pair(a.view(), b.view())?);
        }
        per_concept.push(best);
    }
    let im = per_concept.iter().sum::<f64>() / per_concept.len() as f64;
    Ok(CrossDiversity {
        per_concept,
        im_cds: Some(im),
    })
}

// ---------------------------------------------------------------------------
// baselines
// ---------------------------------------------------------------------------

fn ranked_neighbors(ds: &EmbeddingDataset, query_index: usize) -> Result<Vec<usize>> {
    if query_index >= ds.len() {
        return Err(Error::IndexOutOfRange {
            index: query_index,
            len: ds.len(),
        });
    }
    let query = ds.row(query_index);
    let qn = norm(query);
    if qn < ZERO_NORM_EPS {
        return Err(Error::ZeroNormVector);
    }
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for i in ds.alive_rows() {
        if i == query_index {
            continue;
        }
        let rn = ds.row_norm(i);
        scored.push((i, (ds.row(i).dot(&query) / (rn * qn)).clamp(-1.0, 1.0)));
    }
    scored.sort_unstable_by(|a, b| cmp_f64(b.1, a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().map(|(i, _)| i).collect())
}

/// Plain retrieval split into rank-consecutive sets; each set's concept
/// embedding is the mean of its members.
pub fn baseline_retrieval(
    ds: &EmbeddingDataset,
    query_index: usize,
    total_n: usize,
    sets: usize,
) -> Result<BaselineOutput> {
    if sets < 1 || total_n < sets {
        return Err(Error::InvalidConfig(
            "need total_n >= sets >= 1".into(),
        ));
    }
    let ranked = ranked_neighbors(ds, query_index)?;
    let avail = ranked.len().min(total_n);
    let per_set = avail / sets;
    if per_set == 0 {
        return Err(Error::TooFewSamples {
            needed: sets,
            got: avail,
        });
    }
    let shrunk = avail < total_n;
    let mut out = Vec::with_capacity(sets);
    for s in 0..sets {
        let members: Vec<usize> = ranked[s * per_set..(s + 1) * per_set].to_vec();
        let mut mean = Array1::<f64>::zeros(ds.dim());
        for &m in &members {
            mean += &ds.row(m);
        }
        mean /= members.len() as f64;
        out.push(ScoredSet {
            embedding: mean,
            member_indices: members,
        });
    }
    Ok(BaselineOutput { sets: out, shrunk })
}

/// Seeded k-means (10 restarts, Lloyd iterations to movement < 1e-6) over
/// the query's nearest pool; empty clusters re-seed from the farthest point.
pub fn baseline_kmeans(
    ds: &EmbeddingDataset,
    query_index: usize,
    k: usize,
    pool_n: usize,
    seed: u64,
) -> Result<BaselineOutput> {
    if k < 1 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let ranked = ranked_neighbors(ds, query_index)?;
    let pool: Vec<usize> = ranked.into_iter().take(pool_n).collect();
    if pool.len() < k {
        return Err(Error::TooFewSamples {
            needed: k,
            got: pool.len(),
        });
    }
    let shrunk = pool.len() < pool_n;
    let points: Vec<Array1<f64>> = pool.iter().map(|&i| ds.row(i).to_owned()).collect();

    let mut best: Option<(f64, Vec<usize>, Vec<Array1<f64>>)> = None;
    for restart in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, restart));
        let init = rand::seq::index::sample(&mut rng, points.len(), k);
        let mut centroids: Vec<Array1<f64>> = init.iter().map(|i| points[i].clone()).collect();
        let mut assignment = vec![0usize; points.len()];

        for _ in 0..300 {
            // assign
            for (pi, p) in points.iter().enumerate() {
                let mut best_c = 0;
                let mut best_d = f64::INFINITY;
                for (ci, c) in centroids.iter().enumerate() {
                    let diff = p - c;
                    let d2 = diff.dot(&diff);
                    if d2 < best_d {
                        best_d = d2;
                        best_c = ci;
                    }
                }
                assignment[pi] = best_c;
            }
            // refill empty clusters from the farthest point
            for ci in 0..k {
                if assignment.iter().any(|&a| a == ci) {
                    continue;
                }
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = {
                            let diff = &points[a] - &centroids[assignment[a]];
                            diff.dot(&diff)
                        };
                        let db = {
                            let diff = &points[b] - &centroids[assignment[b]];
                            diff.dot(&diff)
                        };
                        cmp_f64(da, db).then(b.cmp(&a))
                    })
                    .expect("non-empty pool");
                assignment[far] = ci;
                centroids[ci] = points[far].clone();
            }
            // update
            let mut moved: f64 = 0.0;
            for ci in 0..k {
                let members: Vec<usize> = (0..points.len())
                    .filter(|&p| assignment[p] == ci)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let mut mean = Array1::<f64>::zeros(ds.dim());
                for &m in &members {
                    mean += &points[m];
                }
                mean /= members.len() as f64;
                let diff = &mean - &centroids[ci];
                moved = moved.max(diff.dot(&diff).sqrt());
                centroids[ci] = mean;
            }
            if moved < 1e-6 {
                break;
            }
        }

        let inertia: f64 = points
            .iter()
            .zip(&assignment)
            .map(|(p, &a)| {
                let diff = p - &centroids[a];
                diff.dot(&diff)
            })
            .sum();
        let better = match &best {
            None => true,
            Some((cur, _, _)) => inertia < *cur,
        };
        if better {
            best = Some((inertia, assignment.clone(), centroids.clone()));
        }
    }

    let (_, assignment, centroids) = best.expect("at least one restart");
    let mut sets = Vec::with_capacity(k);
    for ci in 0..k {
        let members: Vec<usize> = pool
            .iter()
            .enumerate()
            .filter(|(pi, _)| assignment[*pi] == ci)
            .map(|(_, &row)| row)
            .collect();
        let mut embedding = centroids[ci].clone();
        let en = norm(embedding.view());
        if en > ZERO_NORM_EPS {
            embedding.mapv_inplace(|v| v / en);
        } else if let Some(&first) = members.first() {
            embedding = ds.row(first).to_owned();
        }
        sets.push(ScoredSet {
            embedding,
            member_indices: members,
        });
    }
    Ok(BaselineOutput { sets, shrunk })
}

/// Scores a list of concept-like sets uniformly. `dist` enables the
/// relevance score; without it `rs`/`im_rs` stay absent.
pub fn evaluate_sets(
    ds: &EmbeddingDataset,
    query_index: usize,
    sets: &[ScoredSet],
    dist: Option<&ConceptDistribution>,
    k_ids: usize,
) -> Result<MetricsReport> {
    if sets.is_empty() {
        return Err(Error::InvalidConfig("no sets to score".into()));
    }
    let embeddings: Vec<Array1<f64>> = sets.iter().map(|s| s.embedding.clone()).collect();
    let cross = cross_diversity(&embeddings)?;

    let mut per_concept = Vec::with_capacity(sets.len());
    for (i, set) in sets.iter().enumerate() {
        let rows = gather_rows(ds, &set.member_indices);
        let ids = inner_diversity_score(rows.view(), k_ids)?;
        let rs = match dist {
            Some(d) => Some(relevance_score(
                ds.row(query_index),
                set.embedding.view(),
                d,
            )?),
            None => None,
        };
        per_concept.push(ConceptScores {
            rs,
            cs: consistency_score(rows.view()),
            ids: ids.value,
            ids_degenerate: ids.degenerate,
            conc_cds: cross.per_concept.get(i).copied(),
        });
    }

    let mean = |f: &dyn Fn(&ConceptScores) -> f64| {
        per_concept.iter().map(|c| f(c)).sum::<f64>() / per_concept.len() as f64
    };
    Ok(MetricsReport {
        im_rs: dist.map(|_| mean(&|c| c.rs.unwrap_or(0.0))),
        im_cs: mean(&|c| c.cs),
        im_ids: mean(&|c| c.ids),
        im_cds: cross.im_cds,
        per_concept,
        k_components: k_ids,
    })
}

fn gather_rows(ds: &EmbeddingDataset, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), ds.dim()));
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).assign(&ds.row(i));
    }
    out
}
