//! The PCA concept subspace: rank selection, projection, retrieval and
//! principal-direction navigation.

use std::collections::HashSet;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::store::{norm, EmbeddingDataset, ZERO_NORM_EPS};
use crate::util::cmp_f64;

/// Flagging threshold for projections that landed (numerically) at zero.
pub const NEAR_ZERO_PROJECTION: f64 = 1e-6;

/// Orthonormal basis of the top principal directions of a concept's member
/// embeddings.
#[derive(Debug, Clone)]
pub struct ConceptSubspace {
    /// d x k, orthonormal columns, sign-canonicalized.
    pub basis: Array2<f64>,
    /// Variances of the k retained components, descending.
    pub component_variances: Vec<f64>,
    /// Total variance across all components.
    pub total_variance: f64,
    pub k: usize,
    /// Fraction of total variance captured by the k components.
    pub captured_ratio: f64,
}

/// A query embedding projected into a concept subspace.
#[derive(Debug, Clone)]
pub struct ConceptEmbedding {
    pub vector: Array1<f64>,
    pub source_query: Option<usize>,
    /// Set when the projection norm fell below 1e-6.
    pub near_zero: bool,
}

/// Ranked retrieval output.
#[derive(Debug, Clone)]
pub struct Retrieval {
    /// `(row index, similarity)` in descending similarity, ties by index.
    pub items: Vec<(usize, f64)>,
    /// True when exclusions exhausted the dataset before `n` items.
    pub truncated: bool,
}

/// Smallest k whose cumulative share of the total variance reaches `tau1`.
/// `variances` must be sorted descending.
pub fn select_k(variances: &[f64], tau1: f64) -> usize {
    let total: f64 = variances.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut cum = 0.0;
    for (i, v) in variances.iter().enumerate() {
        cum += v;
        if cum / total >= tau1 {
            return i + 1;
        }
    }
    variances.len()
}

/// Fits the concept subspace on raw (uncentered) member embeddings.
///
/// The leading direction therefore tracks the members' common component,
/// which is what projection and suppression need to act on.
pub fn fit_concept_subspace(members: ArrayView2<'_, f64>, tau1: f64) -> Result<ConceptSubspace> {
    fit_impl(members, tau1, false)
}

/// Classic PCA variant: members are mean-centered before the fit.
pub fn fit_concept_subspace_centered(
    members: ArrayView2<'_, f64>,
    tau1: f64,
) -> Result<ConceptSubspace> {
    fit_impl(members, tau1, true)
}

fn fit_impl(members: ArrayView2<'_, f64>, tau1: f64, center: bool) -> Result<ConceptSubspace> {
    let (m, d) = members.dim();
    if m < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: m });
    }
    if !(tau1 > 0.0 && tau1 <= 1.0) {
        return Err(Error::InvalidConfig("tau1 must lie in (0, 1]".into()));
    }

    let mut x = members.to_owned();
    if center {
        let mean = x
            .mean_axis(ndarray::Axis(0))
            .expect("m >= 3 rows");
        for mut row in x.rows_mut() {
            row -= &mean;
        }
    }

    // right singular vectors of x == eigenvectors of the d x d scatter matrix
    let scatter = x.t().dot(&x);
    let sym = DMatrix::from_fn(d, d, |r, c| scatter[(r, c)]);
    let eig = nalgebra::SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| cmp_f64(eig.eigenvalues[b], eig.eigenvalues[a]).then(a.cmp(&b)));

    let lam_max = eig.eigenvalues[order[0]].max(0.0);
    if lam_max <= 1e-18 {
        return Err(Error::RankDeficient);
    }
    let cutoff = lam_max * 1e-12;
    let denom = (m - 1) as f64;
    let variances: Vec<f64> = order
        .iter()
        .map(|&i| eig.eigenvalues[i])
        .take_while(|&l| l > cutoff)
        .map(|l| l / denom)
        .collect();

    let k = select_k(&variances, tau1);
    debug_assert!(k >= 1);

    let mut basis = Array2::zeros((d, k));
    for (col, &src) in order.iter().take(k).enumerate() {
        // canonical sign: the largest-magnitude entry is positive
        let column = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 1..d {
            if column[r].abs() > column[pivot].abs() {
                pivot = r;
            }
        }
        let flip = if column[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            basis[(r, col)] = column[r] * flip;
        }
    }

    let total_variance: f64 = variances.iter().sum();
    let captured: f64 = variances[..k].iter().sum();
    Ok(ConceptSubspace {
        basis,
        component_variances: variances[..k].to_vec(),
        total_variance,
        k,
        captured_ratio: captured / total_variance,
    })
}

/// Projects a query embedding onto the subspace: `e_c = W (W^T q)`.
pub fn project_to_concept(
    query: ArrayView1<'_, f64>,
    subspace: &ConceptSubspace,
) -> ConceptEmbedding {
    let coords = subspace.basis.t().dot(&query);
    let vector = subspace.basis.dot(&coords);
    let near_zero = norm(vector.view()) < NEAR_ZERO_PROJECTION;
    ConceptEmbedding {
        vector,
        source_query: None,
        near_zero,
    }
}

/// Top-n rows by cosine similarity to the concept embedding, skipping the
/// `exclude` set and rows suppressed to zero.
pub fn retrieve_by_concept(
    ds: &EmbeddingDataset,
    concept: &ConceptEmbedding,
    n: usize,
    exclude: &HashSet<usize>,
) -> Result<Retrieval> {
    if n < 1 {
        return Err(Error::InvalidConfig("retrieve count must be >= 1".into()));
    }
    let cn = norm(concept.vector.view());
    if cn < ZERO_NORM_EPS {
        return Err(Error::ZeroConceptEmbedding);
    }

    let mut scored: Vec<(usize, f64)> = Vec::new();
    for i in ds.alive_rows() {
        if exclude.contains(&i) {
            continue;
        }
        let rn = ds.row_norm(i);
        let sim = (ds.row(i).dot(&concept.vector) / (rn * cn)).clamp(-1.0, 1.0);
        scored.push((i, sim));
    }
    scored.sort_unstable_by(|a, b| cmp_f64(b.1, a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    let truncated = scored.len() < n;
    Ok(Retrieval {
        items: scored,
        truncated,
    })
}

/// Walks one principal direction: for each offset `t` the retrieval target
/// is `e_c + t * sqrt(var_component) * w_component`. Offset 0 reproduces
/// [`retrieve_by_concept`] exactly.
pub fn navigate_component(
    subspace: &ConceptSubspace,
    center: &ConceptEmbedding,
    component: usize,
    offsets: &[f64],
    ds: &EmbeddingDataset,
    per_step_n: usize,
    exclude: &HashSet<usize>,
) -> Result<Vec<Retrieval>> {
    if component >= subspace.k {
        return Err(Error::ComponentOutOfRange {
            component,
            k: subspace.k,
        });
    }
    if offsets.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidConfig("offsets must be finite".into()));
    }
    let step = subspace.component_variances[component].sqrt();
    let direction = subspace.basis.column(component);

    let mut out = Vec::with_capacity(offsets.len());
    for &t in offsets {
        let target = if t == 0.0 {
            center.vector.clone()
        } else {
            &center.vector + &(&direction * (t * step))
        };
        let probe = ConceptEmbedding {
            near_zero: norm(target.view()) < NEAR_ZERO_PROJECTION,
            vector: target,
            source_query: center.source_query,
        };
        out.push(retrieve_by_concept(ds, &probe, per_step_n, exclude)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Rows +-sqrt(v_i) along axis i produce zero-mean data whose component
    /// variances are proportional to v_i, for both fit variants.
    fn axis_variance_rows(vars: &[f64], d: usize) -> Array2<f64> {
        let mut rows = Array2::zeros((2 * vars.len(), d));
        for (i, &v) in vars.iter().enumerate() {
            rows[(2 * i, i)] = v.sqrt();
            rows[(2 * i + 1, i)] = -v.sqrt();
        }
        rows
    }

    #[test]
    fn k_selection_four_three_two_one() {
        let rows = axis_variance_rows(&[4.0, 3.0, 2.0, 1.0], 6);
        let s = fit_concept_subspace(rows.view(), 0.25).unwrap();
        assert_eq!(s.k, 1);
        assert!((s.captured_ratio - 0.4).abs() < 1e-9);
    }

    #[test]
    fn k_selection_isotropic_eight() {
        let rows = axis_variance_rows(&[1.0; 8], 8);
        let s = fit_concept_subspace(rows.view(), 0.25).unwrap();
        assert_eq!(s.k, 2);
        assert!((s.captured_ratio - 0.25).abs() < 1e-9);
    }

    #[test]
    fn full_capture_gives_rank() {
        let rows = axis_variance_rows(&[5.0, 2.0, 1.0], 7);
        let s = fit_concept_subspace(rows.view(), 1.0).unwrap();
        assert_eq!(s.k, 3);
        assert!((s.captured_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn captured_ratio_matches_selection_rule() {
        let rows = axis_variance_rows(&[4.0, 3.0, 2.0, 1.0, 0.5], 8);
        for tau1 in [0.1, 0.3, 0.5, 0.75, 0.95, 1.0] {
            let s = fit_concept_subspace(rows.view(), tau1).unwrap();
            assert!(s.captured_ratio >= tau1 - 1e-12);
            assert_eq!(s.k, select_k_brute(&all_variances(&rows), tau1));
        }
    }

    fn all_variances(rows: &Array2<f64>) -> Vec<f64> {
        // full-capture fit exposes the whole nonzero spectrum
        fit_concept_subspace(rows.view(), 1.0)
            .unwrap()
            .component_variances
    }

    fn select_k_brute(vars: &[f64], tau1: f64) -> usize {
        let total: f64 = vars.iter().sum();
        for k in 1..=vars.len() {
            if vars[..k].iter().sum::<f64>() / total >= tau1 {
                return k;
            }
        }
        vars.len()
    }

    #[test]
    fn basis_is_orthonormal() {
        let rows = axis_variance_rows(&[3.0, 2.0, 1.0], 5);
        let s = fit_concept_subspace(rows.view(), 0.9).unwrap();
        let gram = s.basis.t().dot(&s.basis);
        for i in 0..s.k {
            for j in 0..s.k {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - expect).abs() <= 1e-6);
            }
        }
        // descending variances
        for w in s.component_variances.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
    }

    #[test]
    fn rank_zero_members_rejected() {
        let rows = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        assert!(matches!(
            fit_concept_subspace_centered(rows.view(), 0.5),
            Err(Error::RankDeficient)
        ));
        let zeros = Array2::zeros((3, 4));
        assert!(matches!(
            fit_concept_subspace(zeros.view(), 0.5),
            Err(Error::RankDeficient)
        ));
    }

    #[test]
    fn projection_identity_on_span() {
        let rows = axis_variance_rows(&[2.0, 1.0], 4);
        let s = fit_concept_subspace(rows.view(), 1.0).unwrap();
        let q = array![0.3, -0.7, 0.0, 0.0];
        let p = project_to_concept(q.view(), &s);
        for (a, b) in p.vector.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        // idempotency
        let pp = project_to_concept(p.vector.view(), &s);
        for (a, b) in pp.vector.iter().zip(p.vector.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_of_orthogonal_query_is_flagged_zero() {
        let rows = axis_variance_rows(&[2.0, 1.0], 4);
        let s = fit_concept_subspace(rows.view(), 1.0).unwrap();
        let q = array![0.0, 0.0, 0.5, 0.5];
        let p = project_to_concept(q.view(), &s);
        assert!(p.near_zero);
        assert!(norm(p.vector.view()) < 1e-9);
    }

    #[test]
    fn coordinate_projection_example() {
        let subspace = ConceptSubspace {
            basis: array![[1.0], [0.0], [0.0]],
            component_variances: vec![1.0],
            total_variance: 1.0,
            k: 1,
            captured_ratio: 1.0,
        };
        let q = array![0.6, 0.8, 0.0];
        let p = project_to_concept(q.view(), &subspace);
        assert_eq!(p.vector, array![0.6, 0.0, 0.0]);
    }

    #[test]
    fn retrieval_finds_aligned_row_first() {
        let ds = EmbeddingDataset::from_vectors(array![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.707, 0.707, 0.0],
            [0.0, 0.0, 1.0]
        ])
        .unwrap();
        let concept = ConceptEmbedding {
            vector: array![2.0, 0.0, 0.0],
            source_query: None,
            near_zero: false,
        };
        let r = retrieve_by_concept(&ds, &concept, 1, &HashSet::new()).unwrap();
        assert_eq!(r.items[0].0, 0);
        assert!(!r.truncated);
    }

    #[test]
    fn excluding_everything_yields_empty_flagged() {
        let ds = EmbeddingDataset::from_vectors(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let concept = ConceptEmbedding {
            vector: array![1.0, 0.0],
            source_query: None,
            near_zero: false,
        };
        let exclude: HashSet<usize> = [0, 1].into_iter().collect();
        let r = retrieve_by_concept(&ds, &concept, 3, &exclude).unwrap();
        assert!(r.items.is_empty());
        assert!(r.truncated);
    }

    #[test]
    fn zero_concept_embedding_rejected() {
        let ds = EmbeddingDataset::from_vectors(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let concept = ConceptEmbedding {
            vector: array![0.0, 0.0],
            source_query: None,
            near_zero: true,
        };
        assert!(matches!(
            retrieve_by_concept(&ds, &concept, 1, &HashSet::new()),
            Err(Error::ZeroConceptEmbedding)
        ));
    }

    #[test]
    fn navigate_offset_zero_matches_retrieve() {
        let ds = EmbeddingDataset::from_vectors(array![
            [0.9, 0.1, 0.0],
            [0.8, 0.2, 0.1],
            [0.1, 0.9, 0.2],
            [0.2, 0.1, 0.9]
        ])
        .unwrap();
        let rows = axis_variance_rows(&[2.0, 1.0], 3);
        let s = fit_concept_subspace(rows.view(), 1.0).unwrap();
        let center = project_to_concept(ds.row(0), &s);
        let direct = retrieve_by_concept(&ds, &center, 3, &HashSet::new()).unwrap();
        let nav =
            navigate_component(&s, &center, 0, &[0.0], &ds, 3, &HashSet::new()).unwrap();
        assert_eq!(nav[0].items, direct.items);
    }

    #[test]
    fn navigate_rejects_bad_component() {
        let rows = axis_variance_rows(&[2.0, 1.0], 3);
        let s = fit_concept_subspace(rows.view(), 1.0).unwrap();
        let ds = EmbeddingDataset::from_vectors(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
            .unwrap();
        let center = project_to_concept(ds.row(0), &s);
        assert!(matches!(
            navigate_component(&s, &center, 5, &[0.0], &ds, 1, &HashSet::new()),
            Err(Error::ComponentOutOfRange { .. })
        ));
    }

    #[test]
    fn projection_is_contraction() {
        let rows = axis_variance_rows(&[3.0, 2.0], 6);
        let s = fit_concept_subspace(rows.view(), 1.0).unwrap();
        let q = array![0.4, -0.2, 0.3, 0.1, -0.5, 0.2];
        let p = project_to_concept(q.view(), &s);
        assert!(norm(p.vector.view()) <= norm(q.view()));
    }
}
