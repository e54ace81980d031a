//! Two-component 1-D Gaussian mixtures fitted with EM.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const LN_SQRT_TAU: f64 = 0.918_938_533_204_672_74; // ln(sqrt(2*pi))
const IDENTICAL_TOL: f64 = 1e-9;

/// EM settings. The variance floor keeps components from collapsing onto
/// duplicate values.
#[derive(Debug, Clone, Copy)]
pub struct EmConfig {
    pub min_samples: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub sigma_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            min_samples: 20,
            max_iterations: 200,
            tolerance: 1e-7,
            sigma_floor: 1e-4,
        }
    }
}

/// A fitted two-component mixture in canonical order: component 1 is the
/// higher-mean component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gmm2 {
    pub pi1: f64,
    pub pi2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Which mixture component a value was assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    /// The high-mean component.
    High,
    /// The low-mean component.
    Low,
}

#[derive(Debug, Clone)]
pub struct ComponentAssignment {
    pub labels: Vec<Component>,
    pub high_count: usize,
    pub low_count: usize,
}

pub fn fit_gmm_1d(values: &[f64], config: &EmConfig, seed: u64) -> Result<Gmm2> {
    fit_gmm_1d_traced(values, config, seed).map(|(g, _)| g)
}

/// Like [`fit_gmm_1d`] but also returns the per-iteration log-likelihood
/// trajectory of the winning run.
pub fn fit_gmm_1d_traced(
    values: &[f64],
    config: &EmConfig,
    seed: u64,
) -> Result<(Gmm2, Vec<f64>)> {
    if values.len() < config.min_samples {
        return Err(Error::TooFewSamples {
            needed: config.min_samples,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteSample);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let spread = sorted[sorted.len() - 1] - sorted[0];
    if spread < IDENTICAL_TOL {
        return Err(Error::DegenerateValues {
            tolerance: IDENTICAL_TOL,
        });
    }

    // Initialization 1: median split. Values above the median seed the
    // high component, values below seed the low one.
    let half = sorted.len() / 2;
    let (lo, hi) = sorted.split_at(half);
    let init_median = Params {
        mu1: mean(hi),
        sigma1: std_dev(hi).max(config.sigma_floor),
        mu2: mean(lo),
        sigma2: std_dev(lo).max(config.sigma_floor),
        pi1: hi.len() as f64 / sorted.len() as f64,
    };

    // Initialization 2: one seeded random restart.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let global_sigma = std_dev(&sorted).max(config.sigma_floor);
    let mut a = sorted[rng.random_range(0..sorted.len())];
    let mut b = sorted[rng.random_range(0..sorted.len())];
    if (a - b).abs() < IDENTICAL_TOL {
        a = sorted[0];
        b = sorted[sorted.len() - 1];
    }
    let init_random = Params {
        mu1: a.max(b),
        sigma1: global_sigma,
        mu2: a.min(b),
        sigma2: global_sigma,
        pi1: 0.5,
    };

    let run_a = run_em(values, init_median, config);
    let run_b = run_em(values, init_random, config);
    let (fit, trace) = if run_b.0.log_likelihood > run_a.0.log_likelihood {
        run_b
    } else {
        run_a
    };
    Ok((fit, trace))
}

#[derive(Debug, Clone, Copy)]
struct Params {
    mu1: f64,
    sigma1: f64,
    mu2: f64,
    sigma2: f64,
    pi1: f64,
}

fn run_em(values: &[f64], init: Params, config: &EmConfig) -> (Gmm2, Vec<f64>) {
    let n = values.len() as f64;
    let mut p = init;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut log_likelihood = f64::NEG_INFINITY;

    for _ in 0..config.max_iterations {
        iterations += 1;

        // E-step in log space; also accumulates the observed-data
        // log-likelihood for this parameter set.
        let mut ll = 0.0;
        let mut w1 = 0.0;
        let mut s1 = 0.0;
        let mut r = Vec::with_capacity(values.len());
        for &x in values {
            let l1 = p.pi1.ln() + log_pdf(x, p.mu1, p.sigma1);
            let l2 = (1.0 - p.pi1).ln() + log_pdf(x, p.mu2, p.sigma2);
            let m = l1.max(l2);
            let lse = m + ((l1 - m).exp() + (l2 - m).exp()).ln();
            ll += lse;
            let r1 = (l1 - lse).exp();
            r.push(r1);
            w1 += r1;
            s1 += r1 * x;
        }
        trace.push(ll);
        let delta = ll - log_likelihood;
        log_likelihood = ll;
        if delta.abs() < config.tolerance {
            converged = true;
            break;
        }

        let w2 = n - w1;
        if w1 < 1e-10 || w2 < 1e-10 {
            // one component lost all responsibility; further updates are
            // undefined, keep the current parameters
            break;
        }

        // M-step
        let mu1 = s1 / w1;
        let mu2 = values
            .iter()
            .zip(&r)
            .map(|(&x, &r1)| (1.0 - r1) * x)
            .sum::<f64>()
            / w2;
        let var1 = values
            .iter()
            .zip(&r)
            .map(|(&x, &r1)| r1 * (x - mu1) * (x - mu1))
            .sum::<f64>()
            / w1;
        let var2 = values
            .iter()
            .zip(&r)
            .map(|(&x, &r1)| (1.0 - r1) * (x - mu2) * (x - mu2))
            .sum::<f64>()
            / w2;
        p = Params {
            mu1,
            sigma1: var1.sqrt().max(config.sigma_floor),
            mu2,
            sigma2: var2.sqrt().max(config.sigma_floor),
            pi1: w1 / n,
        };
    }

    // canonical order: component 1 has the higher mean
    let (pi1, mu1, sigma1, pi2, mu2, sigma2) = if p.mu1 >= p.mu2 {
        (p.pi1, p.mu1, p.sigma1, 1.0 - p.pi1, p.mu2, p.sigma2)
    } else {
        (1.0 - p.pi1, p.mu2, p.sigma2, p.pi1, p.mu1, p.sigma1)
    };
    (
        Gmm2 {
            pi1,
            pi2,
            mu1,
            mu2,
            sigma1,
            sigma2,
            log_likelihood,
            converged,
            iterations,
        },
        trace,
    )
}

fn log_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_TAU
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Posterior probabilities of (high, low) component membership at `x`,
/// computed in log space.
pub fn posteriors(g: &Gmm2, x: f64) -> (f64, f64) {
    let l1 = g.pi1.ln() + log_pdf(x, g.mu1, g.sigma1);
    let l2 = g.pi2.ln() + log_pdf(x, g.mu2, g.sigma2);
    let m = l1.max(l2);
    let e1 = (l1 - m).exp();
    let e2 = (l2 - m).exp();
    (e1 / (e1 + e2), e2 / (e1 + e2))
}

/// Posterior probability that `x` belongs to the high-mean component.
pub fn membership_probability(g: &Gmm2, x: f64) -> f64 {
    posteriors(g, x).0
}

/// Hard assignment at the posterior-0.5 boundary, with per-component counts.
pub fn assign_components(g: &Gmm2, values: &[f64]) -> ComponentAssignment {
    let mut labels = Vec::with_capacity(values.len());
    let mut high_count = 0;
    for &x in values {
        if membership_probability(g, x) >= 0.5 {
            labels.push(Component::High);
            high_count += 1;
        } else {
            labels.push(Component::Low);
        }
    }
    let low_count = values.len() - high_count;
    ComponentAssignment {
        labels,
        high_count,
        low_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn bimodal_sample(
        n: usize,
        pi_high: f64,
        mu_high: f64,
        s_high: f64,
        mu_low: f64,
        s_low: f64,
        seed: u64,
    ) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                if rng.random_range(0.0..1.0) < pi_high {
                    mu_high + s_high * z
                } else {
                    mu_low + s_low * z
                }
            })
            .collect()
    }

    #[test]
    fn identical_values_are_degenerate() {
        let values = vec![0.5; 100];
        assert!(matches!(
            fit_gmm_1d(&values, &EmConfig::default(), 0),
            Err(Error::DegenerateValues { .. })
        ));
    }

    #[test]
    fn too_few_samples_rejected() {
        let values = vec![0.1, 0.9];
        assert!(matches!(
            fit_gmm_1d(&values, &EmConfig::default(), 0),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn recovers_generator_parameters() {
        let values = bimodal_sample(2000, 0.3, 0.8, 0.05, 0.4, 0.1, 7);
        let g = fit_gmm_1d(&values, &EmConfig::default(), 7).unwrap();
        assert!((g.mu1 - 0.8).abs() < 0.02, "mu1={}", g.mu1);
        assert!((g.mu2 - 0.4).abs() < 0.02, "mu2={}", g.mu2);
        assert!((g.sigma1 - 0.05).abs() < 0.02);
        assert!((g.sigma2 - 0.1).abs() < 0.02);
        assert!((g.pi1 - 0.3).abs() < 0.05);
        assert!((g.pi1 + g.pi2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn point_masses_recover_weights_and_floor_sigma() {
        let cfg = EmConfig::default();
        let mut values = vec![0.2; 600];
        values.extend(vec![0.9; 400]);
        let g = fit_gmm_1d(&values, &cfg, 1).unwrap();
        assert!((g.mu1 - 0.9).abs() < 1e-3);
        assert!((g.mu2 - 0.2).abs() < 1e-3);
        assert!((g.pi1 - 0.4).abs() < 1e-2);
        assert!((g.pi2 - 0.6).abs() < 1e-2);
        assert!(g.sigma1 <= cfg.sigma_floor * 1.01);
        assert!(g.sigma2 <= cfg.sigma_floor * 1.01);
    }

    #[test]
    fn log_likelihood_non_decreasing() {
        let values = bimodal_sample(1500, 0.4, 0.7, 0.08, 0.3, 0.12, 3);
        let (_, trace) = fit_gmm_1d_traced(&values, &EmConfig::default(), 3).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "ll dropped: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn permutation_invariance() {
        let values = bimodal_sample(1000, 0.35, 0.75, 0.06, 0.35, 0.1, 11);
        let mut reversed = values.clone();
        reversed.reverse();
        let a = fit_gmm_1d(&values, &EmConfig::default(), 5).unwrap();
        let b = fit_gmm_1d(&reversed, &EmConfig::default(), 5).unwrap();
        assert!((a.mu1 - b.mu1).abs() < 1e-6);
        assert!((a.mu2 - b.mu2).abs() < 1e-6);
        assert!((a.sigma1 - b.sigma1).abs() < 1e-6);
        assert!((a.pi1 - b.pi1).abs() < 1e-6);
    }

    #[test]
    fn symmetric_mixture_midpoint_is_half() {
        let g = Gmm2 {
            pi1: 0.5,
            pi2: 0.5,
            mu1: 0.8,
            mu2: 0.2,
            sigma1: 0.1,
            sigma2: 0.1,
            log_likelihood: 0.0,
            converged: true,
            iterations: 1,
        };
        assert!((membership_probability(&g, 0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn far_tail_belongs_to_high_component() {
        let g = Gmm2 {
            pi1: 0.5,
            pi2: 0.5,
            mu1: 0.8,
            mu2: 0.2,
            sigma1: 0.05,
            sigma2: 0.05,
            log_likelihood: 0.0,
            converged: true,
            iterations: 1,
        };
        assert!(membership_probability(&g, 0.8 + 10.0 * 0.05) >= 0.999);
    }

    #[test]
    fn membership_matches_direct_density_evaluation() {
        // direct density oracle: pi1*N1(x) / (pi1*N1(x) + pi2*N2(x))
        let oracle = |pi1: f64, mu1: f64, s1: f64, mu2: f64, s2: f64, x: f64| {
            let n1 = (-0.5 * ((x - mu1) / s1).powi(2)).exp() / s1;
            let n2 = (-0.5 * ((x - mu2) / s2).powi(2)).exp() / s2;
            pi1 * n1 / (pi1 * n1 + (1.0 - pi1) * n2)
        };
        let gauss = |s1: f64, s2: f64| Gmm2 {
            pi1: 0.5,
            pi2: 0.5,
            mu1: 0.8,
            mu2: 0.4,
            sigma1: s1,
            sigma2: s2,
            log_likelihood: 0.0,
            converged: true,
            iterations: 1,
        };
        // with sigma 0.1 the posterior at 0.7 sits near 0.982
        let g = gauss(0.1, 0.1);
        let expect = oracle(0.5, 0.8, 0.1, 0.4, 0.1, 0.7);
        assert!((membership_probability(&g, 0.7) - expect).abs() < 1e-12);
        assert!((expect - 0.98201).abs() < 1e-5);
        // with sigma 0.05 the components barely overlap at 0.7
        let g = gauss(0.05, 0.05);
        let expect = oracle(0.5, 0.8, 0.05, 0.4, 0.05, 0.7);
        assert!((membership_probability(&g, 0.7) - expect).abs() < 1e-12);
        assert!(expect > 0.999_999);
    }

    #[test]
    fn posteriors_sum_to_one() {
        let g = Gmm2 {
            pi1: 0.3,
            pi2: 0.7,
            mu1: 0.9,
            mu2: 0.1,
            sigma1: 0.2,
            sigma2: 0.05,
            log_likelihood: 0.0,
            converged: true,
            iterations: 1,
        };
        for i in 0..100 {
            let x = -1.0 + i as f64 * 0.03;
            let (p1, p2) = posteriors(&g, x);
            assert!((p1 + p2 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn membership_monotone_for_equal_sigmas() {
        let g = Gmm2 {
            pi1: 0.4,
            pi2: 0.6,
            mu1: 0.7,
            mu2: 0.3,
            sigma1: 0.1,
            sigma2: 0.1,
            log_likelihood: 0.0,
            converged: true,
            iterations: 1,
        };
        let mut prev = 0.0;
        for i in 0..200 {
            let x = -1.0 + i as f64 * 0.01;
            let p = membership_probability(&g, x);
            assert!(p >= prev - 1e-12);
            prev = p;
        }
    }

    #[test]
    fn assign_components_splits_at_boundary() {
        let g = Gmm2 {
            pi1: 0.5,
            pi2: 0.5,
            mu1: 0.8,
            mu2: 0.2,
            sigma1: 0.05,
            sigma2: 0.05,
            log_likelihood: 0.0,
            converged: true,
            iterations: 1,
        };
        let at_high = vec![0.8; 10];
        let a = assign_components(&g, &at_high);
        assert_eq!(a.high_count, 10);
        assert!(a.labels.iter().all(|l| *l == Component::High));
        let at_low = vec![0.2; 10];
        let a = assign_components(&g, &at_low);
        assert_eq!(a.low_count, 10);
    }

    #[test]
    fn assign_components_planted_split() {
        let values = bimodal_sample(2000, 0.4, 0.8, 0.05, 0.3, 0.08, 9);
        let g = fit_gmm_1d(&values, &EmConfig::default(), 9).unwrap();
        let a = assign_components(&g, &values);
        let frac = a.high_count as f64 / values.len() as f64;
        assert!((frac - 0.4).abs() < 0.05, "high fraction {frac}");
    }

    #[test]
    fn deterministic_under_seed() {
        let values = bimodal_sample(800, 0.5, 0.6, 0.1, 0.2, 0.1, 21);
        let a = fit_gmm_1d(&values, &EmConfig::default(), 13).unwrap();
        let b = fit_gmm_1d(&values, &EmConfig::default(), 13).unwrap();
        assert_eq!(a, b);
    }
}
