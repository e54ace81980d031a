//! Concept retrieval over precomputed embedding matrices.
//!
//! Given a dataset of image embeddings and a query row, the extractor finds
//! subsets of the dataset that share one abstract concept with the query.
//! The pipeline per concept:
//!
//! 1. collect the query's similarity neighborhood,
//! 2. pick the neighborhood member whose similarity values split most
//!    cleanly into two Gaussian modes (the *surrogate*); the high mode is
//!    the concept member set,
//! 3. span the member set's principal directions, project the query into
//!    that subspace and retrieve the nearest rows,
//! 4. subtract the subspace component from the rows that match the concept
//!    best, so the next iteration surfaces something different.
//!
//! [`metrics`] scores results on relevance, consistency, inner diversity
//! and cross diversity, with plain retrieval and k-means baselines for
//! comparison. [`synthetic`] generates planted-concept datasets that act as
//! ground truth for recovery tests.

pub mod config;
pub mod error;
pub mod extractor;
pub mod io;
pub mod metrics;
pub mod mixture;
pub mod neighborhood;
pub mod store;
pub mod subspace;
pub mod surrogate;
pub mod synthetic;

mod util;

pub use config::ExtractionConfig;
pub use error::{Error, Result};
pub use extractor::{
    extract_concepts, suppress_concept, ExtractedConcept, ExtractionResult, SuppressionOutcome,
    Termination,
};
pub use io::{load_embeddings, EmbeddingFormat};
pub use metrics::{
    baseline_kmeans, baseline_retrieval, build_concept_distribution, build_concept_pool,
    consistency_score, cross_diversity, evaluate_sets, inner_diversity_score, relevance_score,
    ConceptDistribution, MetricsReport, ScoredSet,
};
pub use mixture::{
    assign_components, fit_gmm_1d, fit_gmm_1d_traced, membership_probability, EmConfig, Gmm2,
};
pub use neighborhood::{
    cosine_similarity, find_neighborhood, pairwise_similarity_matrix, Neighborhood,
};
pub use store::{EmbeddingDataset, SimilarityStats};
pub use subspace::{
    fit_concept_subspace, fit_concept_subspace_centered, navigate_component, project_to_concept,
    retrieve_by_concept, ConceptEmbedding, ConceptSubspace, Retrieval,
};
pub use surrogate::{
    evaluate_candidate, select_surrogate, sep_score, ConceptSet, SurrogateCandidate,
};
pub use synthetic::{
    generate_planted, read_truth, score_recovery, score_recovery_labels, write_truth,
    PlantedSpec, PlantedTruth, RecoveryReport, TruthDocument,
};
