//! Surrogate selection: every neighborhood member is scored by how cleanly
//! it splits the neighborhood's similarity values into two Gaussian modes;
//! the best split defines the concept member set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ExtractionConfig;
use crate::error::{Error, Result};
use crate::mixture::{assign_components, fit_gmm_1d, membership_probability, Gmm2};
use crate::neighborhood::Neighborhood;
use crate::store::{norm, EmbeddingDataset};
use crate::util::mix_seed;

/// Why a candidate was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectionReason {
    TooFewConcept,
    TooFewNonconcept,
    QueryNotInConcept,
    DegenerateFit,
}

/// One evaluated neighborhood member.
#[derive(Debug, Clone)]
pub struct SurrogateCandidate {
    pub candidate_index: usize,
    /// Absent when the fit itself failed (too few or identical values).
    pub gmm: Option<Gmm2>,
    /// `(mu1 - sigma1) - (mu2 + sigma2)`; negative infinity without a fit.
    pub sep_score: f64,
    pub concept_count: usize,
    pub nonconcept_count: usize,
    /// Posterior membership of the query's similarity in the high mode.
    pub query_membership: f64,
    pub valid: bool,
    pub rejection_reason: Option<RejectionReason>,
}

/// The concept member set induced by the winning surrogate.
#[derive(Debug, Clone)]
pub struct ConceptSet {
    pub surrogate: SurrogateCandidate,
    /// Ascending dataset row indices; query excluded.
    pub member_indices: Vec<usize>,
    /// Posterior membership per member, aligned with `member_indices`.
    pub membership_probabilities: Vec<f64>,
}

/// Gap between the high mode's lower bound and the low mode's upper bound.
pub fn sep_score(g: &Gmm2) -> f64 {
    (g.mu1 - g.sigma1) - (g.mu2 + g.sigma2)
}

/// Fits a mixture to the similarities between `candidate_index` and every
/// other neighborhood member (the query's similarity is held out of the fit
/// and scored afterwards), then applies the validity criteria.
///
/// Never fails: a degenerate fit yields `valid = false` so the candidate
/// loop can continue.
pub fn evaluate_candidate(
    ds: &EmbeddingDataset,
    nbr: &Neighborhood,
    candidate_index: usize,
    query_index: usize,
    config: &ExtractionConfig,
    seed: u64,
) -> SurrogateCandidate {
    let rejected = |reason: RejectionReason| SurrogateCandidate {
        candidate_index,
        gmm: None,
        sep_score: f64::NEG_INFINITY,
        concept_count: 0,
        nonconcept_count: 0,
        query_membership: 0.0,
        valid: false,
        rejection_reason: Some(reason),
    };

    debug_assert!(nbr.member_indices.binary_search(&candidate_index).is_ok());
    let cand = ds.row(candidate_index);
    let cn = norm(cand);
    if cn < 1e-12 {
        return rejected(RejectionReason::DegenerateFit);
    }

    let mut values = Vec::with_capacity(nbr.member_indices.len().saturating_sub(1));
    for &m in &nbr.member_indices {
        if m == candidate_index {
            continue;
        }
        let rn = ds.row_norm(m);
        values.push((ds.row(m).dot(&cand) / (rn * cn)).clamp(-1.0, 1.0));
    }

    let gmm = match fit_gmm_1d(&values, &config.em_config(), seed) {
        Ok(g) => g,
        Err(_) => return rejected(RejectionReason::DegenerateFit),
    };

    let assignment = assign_components(&gmm, &values);
    let query = ds.row(query_index);
    let qn = norm(query);
    let query_sim = (query.dot(&cand) / (qn * cn)).clamp(-1.0, 1.0);
    let query_membership = membership_probability(&gmm, query_sim);

    let min_count = config.resolved_min_component_count(nbr.len());
    let rejection_reason = if assignment.high_count < min_count {
        Some(RejectionReason::TooFewConcept)
    } else if assignment.low_count < min_count {
        Some(RejectionReason::TooFewNonconcept)
    } else if query_membership < config.tau {
        Some(RejectionReason::QueryNotInConcept)
    } else {
        None
    };

    SurrogateCandidate {
        candidate_index,
        sep_score: sep_score(&gmm),
        gmm: Some(gmm),
        concept_count: assignment.high_count,
        nonconcept_count: assignment.low_count,
        query_membership,
        valid: rejection_reason.is_none(),
        rejection_reason,
    }
}

/// Evaluates the candidate pool and returns the concept set of the valid
/// candidate with the highest separation score.
///
/// The winner must separate its modes by more than `min_sep_score`:
/// a near-unimodal neighborhood (every fit overlapping) carries no concept,
/// and the caller is told so via [`Error::NoConceptFound`]. Ties break
/// toward the higher concept-mode mean, then the lower candidate index.
pub fn select_surrogate(
    ds: &EmbeddingDataset,
    nbr: &Neighborhood,
    query_index: usize,
    config: &ExtractionConfig,
    seed: u64,
) -> Result<ConceptSet> {
    let em_min = config.em_config().min_samples;
    if nbr.len() < em_min + 1 {
        return Err(Error::NoConceptFound);
    }

    let mut pool: Vec<usize> = nbr.member_indices.clone();
    if pool.len() > config.max_candidates {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xCA9D));
        let picked = rand::seq::index::sample(&mut rng, pool.len(), config.max_candidates);
        let mut subset: Vec<usize> = picked.iter().map(|i| pool[i]).collect();
        subset.sort_unstable();
        pool = subset;
    }

    let candidates: Vec<SurrogateCandidate> = pool
        .par_iter()
        .map(|&c| evaluate_candidate(ds, nbr, c, query_index, config, mix_seed(seed, c as u64)))
        .collect();

    let mut best: Option<&SurrogateCandidate> = None;
    for cand in candidates.iter().filter(|c| c.valid) {
        if cand.sep_score <= config.min_sep_score {
            continue;
        }
        best = match best {
            None => Some(cand),
            Some(cur) => {
                let cur_mu = cur.gmm.map(|g| g.mu1).unwrap_or(f64::NEG_INFINITY);
                let new_mu = cand.gmm.map(|g| g.mu1).unwrap_or(f64::NEG_INFINITY);
                if cand.sep_score > cur.sep_score
                    || (cand.sep_score == cur.sep_score && new_mu > cur_mu)
                    || (cand.sep_score == cur.sep_score
                        && new_mu == cur_mu
                        && cand.candidate_index < cur.candidate_index)
                {
                    Some(cand)
                } else {
                    Some(cur)
                }
            }
        };
    }
    let winner = best.ok_or(Error::NoConceptFound)?.clone();
    let gmm = winner.gmm.expect("winner always carries a fit");

    let cand_row = ds.row(winner.candidate_index);
    let cn = norm(cand_row);
    let mut member_indices = Vec::new();
    let mut membership_probabilities = Vec::new();
    for &m in &nbr.member_indices {
        let rn = ds.row_norm(m);
        let sim = (ds.row(m).dot(&cand_row) / (rn * cn)).clamp(-1.0, 1.0);
        let p = membership_probability(&gmm, sim);
        if p > config.tau {
            member_indices.push(m);
            membership_probabilities.push(p);
        }
    }

    Ok(ConceptSet {
        surrogate: winner,
        member_indices,
        membership_probabilities,
    })
}
