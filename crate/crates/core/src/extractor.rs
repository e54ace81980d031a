//! The full extraction loop: neighborhood -> surrogate -> subspace ->
//! retrieval -> suppression, iterated until the requested number of
//! concepts is out or the working copy stops separating.

use std::collections::HashSet;

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::config::ExtractionConfig;
use crate::error::{Error, Result};
use crate::neighborhood::find_neighborhood;
use crate::store::{norm, EmbeddingDataset, SimilarityStats, SUPPRESSED_ZERO_NORM, ZERO_NORM_EPS};
use crate::subspace::{
    fit_concept_subspace, fit_concept_subspace_centered, project_to_concept, retrieve_by_concept,
    ConceptEmbedding, ConceptSubspace,
};
use crate::surrogate::{select_surrogate, ConceptSet};
use crate::util::{cmp_f64, mix_seed};

const STATS_SALT: u64 = 0x57A7;

/// One extracted concept.
#[derive(Debug, Clone)]
pub struct ExtractedConcept {
    /// 1-based position in the extraction order.
    pub ordinal: usize,
    pub concept_set: ConceptSet,
    pub subspace: ConceptSubspace,
    pub concept_embedding: ConceptEmbedding,
    /// `(row index, similarity)` ranked descending.
    pub retrieved: Vec<(usize, f64)>,
    /// Rows updated by suppression after this concept (empty for the last).
    pub suppressed_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Completed,
    Exhausted,
}

#[derive(Debug, Clone)]
pub struct ExtractionResult {
    pub query_index: usize,
    pub concepts: Vec<ExtractedConcept>,
    pub stats_used: SimilarityStats,
    pub config: ExtractionConfig,
    pub termination: Termination,
}

/// Outcome of one suppression pass.
#[derive(Debug, Clone)]
pub struct SuppressionOutcome {
    /// Ascending indices of the rows that were updated.
    pub indices: Vec<usize>,
    /// Set when the update fraction rounded down to zero rows.
    pub noop: bool,
}

/// Runs the extraction loop for one query.
///
/// The input dataset is never mutated: the loop works on a private clone.
/// Neighborhoods and surrogates see the suppressed working copy, while the
/// query projection and retrieval use the original embeddings so reported
/// results are unaffected by suppression residue.
pub fn extract_concepts(
    ds: &EmbeddingDataset,
    query_index: usize,
    config: &ExtractionConfig,
) -> Result<ExtractionResult> {
    config.validate()?;
    if !ds.is_normalized() {
        return Err(Error::NotNormalized);
    }
    if query_index >= ds.len() {
        return Err(Error::IndexOutOfRange {
            index: query_index,
            len: ds.len(),
        });
    }
    if ds.is_zeroed(query_index) || ds.row_norm(query_index) < ZERO_NORM_EPS {
        return Err(Error::ZeroNormVector);
    }

    let stats =
        ds.estimate_similarity_stats(config.stats_sample_pairs, mix_seed(config.seed, STATS_SALT))?;

    let mut working = ds.clone();
    let mut concepts: Vec<ExtractedConcept> = Vec::new();
    let mut exclude: HashSet<usize> = HashSet::new();
    exclude.insert(query_index);
    let mut termination = Termination::Completed;

    for ordinal in 1..=config.num_concepts {
        if working.is_zeroed(query_index) || working.row_norm(query_index) < ZERO_NORM_EPS {
            termination = Termination::Exhausted;
            break;
        }

        let nbr = find_neighborhood(
            &working,
            query_index,
            &stats,
            config.z,
            config.min_neighborhood,
        )?;

        let iter_seed = mix_seed(config.seed, ordinal as u64);
        let concept_set = match select_surrogate(&working, &nbr, query_index, config, iter_seed) {
            Ok(cs) => cs,
            Err(Error::NoConceptFound) => {
                termination = Termination::Exhausted;
                break;
            }
            Err(e) => return Err(e),
        };

        let members = gather_rows(&working, &concept_set.member_indices);
        let fit = if config.center_pca {
            fit_concept_subspace_centered(members.view(), config.tau1)
        } else {
            fit_concept_subspace(members.view(), config.tau1)
        };
        let subspace = match fit {
            Ok(s) => s,
            Err(Error::TooFewSamples { .. }) | Err(Error::RankDeficient) => {
                termination = Termination::Exhausted;
                break;
            }
            Err(e) => return Err(e),
        };

        // project the original query embedding, not the working copy's row
        let mut concept_embedding = project_to_concept(ds.row(query_index), &subspace);
        concept_embedding.source_query = Some(query_index);
        if concept_embedding.near_zero {
            termination = Termination::Exhausted;
            break;
        }

        let retrieval_exclude: HashSet<usize> = if config.exclude_prior_retrieved {
            exclude.clone()
        } else {
            [query_index].into_iter().collect()
        };
        let retrieval =
            match retrieve_by_concept(ds, &concept_embedding, config.retrieve_n, &retrieval_exclude)
            {
                Ok(r) => r,
                Err(Error::ZeroConceptEmbedding) => {
                    termination = Termination::Exhausted;
                    break;
                }
                Err(e) => return Err(e),
            };
        if config.exclude_prior_retrieved {
            exclude.extend(retrieval.items.iter().map(|(i, _)| *i));
        }

        let mut concept = ExtractedConcept {
            ordinal,
            concept_set,
            subspace,
            concept_embedding,
            retrieved: retrieval.items,
            suppressed_indices: Vec::new(),
        };

        // suppression is skipped after the final concept
        if ordinal < config.num_concepts {
            let outcome = suppress_concept(&mut working, &concept, config)?;
            concept.suppressed_indices = outcome.indices;
        }
        concepts.push(concept);
    }

    Ok(ExtractionResult {
        query_index,
        concepts,
        stats_used: stats,
        config: config.clone(),
        termination,
    })
}

/// Removes a concept's subspace component from the working rows that best
/// match the concept set's mean embedding.
///
/// The top `floor(update_fraction * n)` rows by cosine similarity to the
/// mean get `e <- e - W (W^T e)`. Updated rows are not re-normalized; rows
/// shrinking below norm 1e-8 are flagged suppressed-to-zero and drop out of
/// future neighborhoods.
pub fn suppress_concept(
    working: &mut EmbeddingDataset,
    concept: &ExtractedConcept,
    config: &ExtractionConfig,
) -> Result<SuppressionOutcome> {
    let n = working.len();
    let count = (config.update_fraction * n as f64).floor() as usize;
    if count == 0 {
        return Ok(SuppressionOutcome {
            indices: Vec::new(),
            noop: true,
        });
    }

    let members = &concept.concept_set.member_indices;
    if members.is_empty() {
        return Ok(SuppressionOutcome {
            indices: Vec::new(),
            noop: true,
        });
    }
    let mut mean = Array1::<f64>::zeros(working.dim());
    for &m in members {
        mean += &working.row(m);
    }
    mean /= members.len() as f64;
    let mean_norm = norm(mean.view());
    if mean_norm < ZERO_NORM_EPS {
        return Ok(SuppressionOutcome {
            indices: Vec::new(),
            noop: true,
        });
    }

    let mut scored: Vec<(usize, f64)> = Vec::new();
    for i in working.alive_rows() {
        let rn = working.row_norm(i);
        let sim = working.row(i).dot(&mean) / (rn * mean_norm);
        scored.push((i, sim));
    }
    scored.sort_unstable_by(|a, b| cmp_f64(b.1, a.1).then(a.0.cmp(&b.0)));
    scored.truncate(count);

    let basis = &concept.subspace.basis;
    let mut indices: Vec<usize> = scored.iter().map(|(i, _)| *i).collect();
    indices.sort_unstable();
    for &i in &indices {
        let row = working.row(i).to_owned();
        let coords = basis.t().dot(&row);
        let updated = &row - &basis.dot(&coords);
        if norm(updated.view()) < SUPPRESSED_ZERO_NORM {
            working.mark_zeroed(i);
        }
        working.assign_row(i, &updated);
    }

    Ok(SuppressionOutcome {
        indices,
        noop: false,
    })
}

fn gather_rows(ds: &EmbeddingDataset, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), ds.dim()));
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).assign(&ds.row(i));
    }
    out
}
