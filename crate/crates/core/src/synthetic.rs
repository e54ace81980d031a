//! Planted-concept dataset generation and recovery scoring.
//!
//! Every image is a normalized sum of its sampled concept directions plus
//! optional per-concept attribute offsets and Gaussian noise. The planted
//! labels provide the ground truth that stands in for non-reproducible
//! vision-dataset experiments.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::ExtractionResult;
use crate::store::EmbeddingDataset;

#[derive(Debug, Clone, Copy)]
pub struct PlantedSpec {
    pub n: usize,
    pub d: usize,
    /// Number of planted concept directions.
    pub g: usize,
    /// Inclusive range of concepts per image.
    pub concepts_per_image: (usize, usize),
    pub noise_sigma: f64,
    /// Per-concept count of intra-concept variation directions.
    pub attribute_axes: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PlantedTruth {
    /// g x d, mutually orthonormal rows.
    pub concept_directions: Array2<f64>,
    /// (g * axes) x d when attribute axes were requested; concept c owns
    /// rows `c*axes .. (c+1)*axes`.
    pub attribute_axes: Option<Array2<f64>>,
    /// Sorted concept indices per image.
    pub labels: Vec<Vec<usize>>,
    /// Attribute coordinates per image, aligned with `labels` x axes.
    pub attribute_coordinates: Vec<Vec<f64>>,
}

/// Serialized truth sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthDocument {
    pub schema_version: u32,
    pub n: usize,
    pub d: usize,
    pub g: usize,
    pub attribute_axes_per_concept: usize,
    pub seed: u64,
    pub labels: Vec<Vec<usize>>,
    pub attribute_coordinates: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concept_directions: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribute_axis_directions: Option<Vec<Vec<f64>>>,
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.n < 2 || self.d < 2 {
            return bad(format!("need n >= 2 and d >= 2, got {}x{}", self.n, self.d));
        }
        if self.g == 0 {
            return bad("need at least one concept direction".into());
        }
        if self.g * 2 > self.d {
            return bad(format!("g = {} exceeds d/2 = {}", self.g, self.d / 2));
        }
        let (lo, hi) = self.concepts_per_image;
        if lo < 1 || lo > hi || hi > self.g {
            return bad(format!("bad concepts_per_image range {lo}..={hi}"));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0".into());
        }
        let axes = self.attribute_axes.unwrap_or(0);
        if self.g * (1 + axes) > self.d {
            return bad(format!(
                "g * (1 + attribute_axes) = {} exceeds d = {}",
                self.g * (1 + axes),
                self.d
            ));
        }
        Ok(())
    }
}

/// Deterministically generates the dataset and its ground truth.
///
/// Values are quantized to f32 so the canonical binary format round-trips
/// bit-exactly.
pub fn generate_planted(spec: &PlantedSpec) -> Result<(EmbeddingDataset, PlantedTruth)> {
    spec.validate()?;
    let axes_per = spec.attribute_axes.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let frame = orthonormal_rows(spec.g * (1 + axes_per), spec.d, &mut rng);
    let directions = frame.slice(ndarray::s![0..spec.g, ..]).to_owned();
    let axes = if axes_per > 0 {
        Some(frame.slice(ndarray::s![spec.g.., ..]).to_owned())
    } else {
        None
    };

    let (lo, hi) = spec.concepts_per_image;
    let mut vectors = Array2::zeros((spec.n, spec.d));
    let mut labels = Vec::with_capacity(spec.n);
    let mut coordinates = Vec::with_capacity(spec.n);

    for i in 0..spec.n {
        let count = rng.random_range(lo..=hi);
        let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, spec.g, count).into_vec();
        chosen.sort_unstable();

        let mut v = Array1::<f64>::zeros(spec.d);
        for &c in &chosen {
            v += &directions.row(c);
        }
        let mut coords = Vec::new();
        if let Some(ax) = &axes {
            for &c in &chosen {
                for a in 0..axes_per {
                    let t: f64 = rng.random_range(-0.5..0.5);
                    v.scaled_add(t, &ax.row(c * axes_per + a));
                    coords.push(t);
                }
            }
        }
        if spec.noise_sigma > 0.0 {
            for x in v.iter_mut() {
                *x += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let n = v.dot(&v).sqrt();
        v.mapv_inplace(|x| ((x / n) as f32) as f64);
        vectors.row_mut(i).assign(&v);
        labels.push(chosen);
        coordinates.push(coords);
    }

    let ds = EmbeddingDataset::from_parts(
        (0..spec.n).map(|i| i.to_string()).collect(),
        vectors,
        true,
    )?;
    Ok((
        ds,
        PlantedTruth {
            concept_directions: directions,
            attribute_axes: axes,
            labels,
            attribute_coordinates: coordinates,
        },
    ))
}

/// Orthonormalizes seeded Gaussian rows with twice-applied modified
/// Gram-Schmidt.
fn orthonormal_rows(rows: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    assert!(rows <= d);
    let mut m = Array2::<f64>::zeros((rows, d));
    for v in m.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    for i in 0..rows {
        for _pass in 0..2 {
            for j in 0..i {
                let proj = m.row(i).dot(&m.row(j));
                let prev = m.row(j).to_owned();
                let mut row = m.row_mut(i);
                row.scaled_add(-proj, &prev);
            }
        }
        let n = m.row(i).dot(&m.row(i)).sqrt();
        m.row_mut(i).mapv_inplace(|x| x / n);
    }
    m
}

#[derive(Debug, Clone)]
pub struct ConceptRecovery {
    pub ordinal: usize,
    /// Planted concept holding the majority label among retrieved images.
    pub matched_concept: usize,
    /// Fraction of retrieved images carrying the matched label.
    pub purity: f64,
}

#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub per_concept: Vec<ConceptRecovery>,
    /// Distinct matched planted concepts over
    /// `min(num_concepts, query's planted concept count)`.
    pub coverage: f64,
}

impl RecoveryReport {
    pub fn mean_purity(&self) -> f64 {
        if self.per_concept.is_empty() {
            return 0.0;
        }
        self.per_concept.iter().map(|c| c.purity).sum::<f64>() / self.per_concept.len() as f64
    }
}

pub fn score_recovery(result: &ExtractionResult, truth: &PlantedTruth) -> RecoveryReport {
    score_recovery_labels(result, &truth.labels)
}

/// Label-only variant for truth loaded from a sidecar without directions.
pub fn score_recovery_labels(result: &ExtractionResult, labels: &[Vec<usize>]) -> RecoveryReport {
    let mut per_concept = Vec::new();
    let mut matched = std::collections::HashSet::new();
    for concept in &result.concepts {
        if concept.retrieved.is_empty() {
            continue;
        }
        let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
        for (idx, _) in &concept.retrieved {
            for &l in &labels[*idx] {
                *counts.entry(l).or_insert(0) += 1;
            }
        }
        // majority label; BTreeMap iteration makes ties resolve to the
        // smallest concept index
        let (&best, &count) = counts
            .iter()
            .max_by_key(|(l, c)| (**c, std::cmp::Reverse(**l)))
            .expect("retrieved is non-empty");
        matched.insert(best);
        per_concept.push(ConceptRecovery {
            ordinal: concept.ordinal,
            matched_concept: best,
            purity: count as f64 / concept.retrieved.len() as f64,
        });
    }
    let query_concepts = labels[result.query_index].len();
    let denom = result.config.num_concepts.min(query_concepts).max(1);
    RecoveryReport {
        per_concept,
        coverage: matched.len() as f64 / denom as f64,
    }
}

pub fn write_truth(path: &Path, truth: &PlantedTruth, spec: &PlantedSpec, include_directions: bool) -> Result<()> {
    let doc = TruthDocument {
        schema_version: 1,
        n: truth.labels.len(),
        d: truth.concept_directions.ncols(),
        g: truth.concept_directions.nrows(),
        attribute_axes_per_concept: spec.attribute_axes.unwrap_or(0),
        seed: spec.seed,
        labels: truth.labels.clone(),
        attribute_coordinates: truth.attribute_coordinates.clone(),
        concept_directions: include_directions.then(|| {
            truth
                .concept_directions
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect()
        }),
        attribute_axis_directions: match (&truth.attribute_axes, include_directions) {
            (Some(ax), true) => Some(ax.rows().into_iter().map(|r| r.to_vec()).collect()),
            _ => None,
        },
    };
    let json = serde_json::to_string_pretty(&serde_json::to_value(&doc)?)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_truth(path: &Path) -> Result<TruthDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExtractionConfig;
    use crate::neighborhood::cosine_similarity;

    fn spec(n: usize, d: usize, g: usize, noise: f64, seed: u64) -> PlantedSpec {
        PlantedSpec {
            n,
            d,
            g,
            concepts_per_image: (1, 1),
            noise_sigma: noise,
            attribute_axes: None,
            seed,
        }
    }

    #[test]
    fn infeasible_specs_rejected() {
        assert!(generate_planted(&spec(100, 8, 5, 0.0, 1)).is_err());
        let bad_axes = PlantedSpec {
            attribute_axes: Some(3),
            ..spec(100, 16, 5, 0.0, 1)
        };
        assert!(generate_planted(&bad_axes).is_err());
    }

    #[test]
    fn directions_are_orthonormal() {
        let (_, truth) = generate_planted(&spec(50, 32, 10, 0.1, 3)).unwrap();
        let d = &truth.concept_directions;
        for i in 0..d.nrows() {
            for j in 0..d.nrows() {
                let dot = d.row(i).dot(&d.row(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9, "({i},{j}) -> {dot}");
            }
        }
    }

    #[test]
    fn noiseless_single_concept_images_equal_directions() {
        let (ds, truth) = generate_planted(&spec(20, 16, 4, 0.0, 9)).unwrap();
        for i in 0..ds.len() {
            let c = truth.labels[i][0];
            let sim = cosine_similarity(ds.row(i), truth.concept_directions.row(c)).unwrap();
            assert!(sim > 1.0 - 1e-6, "image {i} sim {sim}");
        }
    }

    #[test]
    fn shared_concept_images_are_closer() {
        let s = PlantedSpec {
            concepts_per_image: (1, 1),
            ..spec(60, 16, 4, 0.0, 11)
        };
        let (ds, truth) = generate_planted(&s).unwrap();
        let a = (0..ds.len()).find(|&i| truth.labels[i] == vec![0]).unwrap();
        let b = (a + 1..ds.len()).find(|&i| truth.labels[i] == vec![0]).unwrap();
        let c = (0..ds.len()).find(|&i| truth.labels[i] == vec![1]).unwrap();
        let same = cosine_similarity(ds.row(a), ds.row(b)).unwrap();
        let diff = cosine_similarity(ds.row(a), ds.row(c)).unwrap();
        assert!(same > diff);
    }

    #[test]
    fn generation_is_bit_identical_under_seed() {
        let s = PlantedSpec {
            n: 500,
            d: 64,
            g: 10,
            concepts_per_image: (1, 3),
            noise_sigma: 0.15,
            attribute_axes: Some(1),
            seed: 7,
        };
        let (a, ta) = generate_planted(&s).unwrap();
        let (b, tb) = generate_planted(&s).unwrap();
        assert_eq!(a.vectors(), b.vectors());
        assert_eq!(ta.labels, tb.labels);
        assert_eq!(ta.attribute_coordinates, tb.attribute_coordinates);
    }

    #[test]
    fn truth_sidecar_round_trips() {
        let s = spec(30, 16, 4, 0.1, 21);
        let (_, truth) = generate_planted(&s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        write_truth(&path, &truth, &s, true).unwrap();
        let doc = read_truth(&path).unwrap();
        assert_eq!(doc.labels, truth.labels);
        assert_eq!(doc.g, 4);
        assert!(doc.concept_directions.is_some());
        // directions can be omitted
        write_truth(&path, &truth, &s, false).unwrap();
        let doc = read_truth(&path).unwrap();
        assert!(doc.concept_directions.is_none());
    }

    fn fake_result(query: usize, retrieved: Vec<Vec<usize>>) -> ExtractionResult {
        use crate::extractor::{ExtractedConcept, Termination};
        use crate::mixture::Gmm2;
        use crate::subspace::{ConceptEmbedding, ConceptSubspace};
        use crate::surrogate::{ConceptSet, SurrogateCandidate};
        let concepts = retrieved
            .into_iter()
            .enumerate()
            .map(|(i, r)| ExtractedConcept {
                ordinal: i + 1,
                concept_set: ConceptSet {
                    surrogate: SurrogateCandidate {
                        candidate_index: 0,
                        gmm: Some(Gmm2 {
                            pi1: 0.5,
                            pi2: 0.5,
                            mu1: 1.0,
                            mu2: 0.0,
                            sigma1: 0.1,
                            sigma2: 0.1,
                            log_likelihood: 0.0,
                            converged: true,
                            iterations: 1,
                        }),
                        sep_score: 1.0,
                        concept_count: 1,
                        nonconcept_count: 1,
                        query_membership: 1.0,
                        valid: true,
                        rejection_reason: None,
                    },
                    member_indices: vec![],
                    membership_probabilities: vec![],
                },
                subspace: ConceptSubspace {
                    basis: Array2::eye(2),
                    component_variances: vec![1.0, 1.0],
                    total_variance: 2.0,
                    k: 2,
                    captured_ratio: 1.0,
                },
                concept_embedding: ConceptEmbedding {
                    vector: Array1::zeros(2),
                    source_query: Some(query),
                    near_zero: false,
                },
                retrieved: r.into_iter().map(|i| (i, 1.0)).collect(),
                suppressed_indices: vec![],
            })
            .collect();
        ExtractionResult {
            query_index: query,
            concepts,
            stats_used: crate::store::SimilarityStats {
                mu: 0.0,
                sigma: 1.0,
                sample_pairs: 1000,
            },
            config: ExtractionConfig {
                num_concepts: 3,
                ..Default::default()
            },
            termination: Termination::Completed,
        }
    }

    #[test]
    fn purity_and_coverage_arithmetic() {
        // labels: rows 0..9 -> A(0), 10..19 -> B(1), 20..29 -> C(2)
        let mut labels: Vec<Vec<usize>> = Vec::new();
        for i in 0..30 {
            labels.push(vec![i / 10]);
        }
        labels[5] = vec![0, 1, 2]; // the query carries all three

        // pure A retrieval
        let r = fake_result(5, vec![(0..10).collect()]);
        let rep = score_recovery_labels(&r, &labels);
        assert_eq!(rep.per_concept[0].purity, 1.0);
        assert_eq!(rep.per_concept[0].matched_concept, 0);

        // 16/20 majority
        let mut mixed: Vec<usize> = (0..8).collect();
        mixed.extend([0, 1, 2, 3, 4, 5, 6, 7]); // 16 A-labeled entries
        mixed.extend([10, 11, 20, 21]); // 4 non-A
        let r = fake_result(5, vec![mixed]);
        let rep = score_recovery_labels(&r, &labels);
        assert!((rep.per_concept[0].purity - 0.8).abs() < 1e-12);

        // three concepts matching three distinct planted concepts
        let r = fake_result(
            5,
            vec![(0..10).collect(), (10..20).collect(), (20..30).collect()],
        );
        let rep = score_recovery_labels(&r, &labels);
        assert_eq!(rep.coverage, 1.0);
    }
}
