//! Malliavin covariance at and around the energy minimiser.

use hypodense::fgauss::{FbmSampler, FbmSpec, Hurst, IncrementGram};
use hypodense::fields::{PolynomialFields, VectorFieldSystem};
use hypodense::malliavin::{
    eigen_tail, malliavin_q, nondegeneracy_ratio, reduced_cov_c, stochastic_q, CovMatrix,
};
use hypodense::minimizer::{minimize_energy, MinimizerOptions, MinimizerResult};
use hypodense::rde::{
    increment_gradient, pair_gradient, skeleton_gradient, solve_scaled_shifted, solve_skeleton, SolveOptions,
};
use hypodense::roughlift::lift_grid_path;

fn heisenberg_min(h: &str, m: usize) -> (PolynomialFields, MinimizerResult) {
    let vf = PolynomialFields::heisenberg();
    let spec = FbmSpec::new(Hurst::parse(h).unwrap(), 2, m).unwrap();
    let res = minimize_energy(&vf, &[0.0; 3], &[1.0, 0.0, 0.0], spec, &MinimizerOptions::default()).unwrap();
    (vf, res)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn heisenberg_q_block_structure() {
    for h in ["1/2", "2/5"] {
        let (_, res) = heisenberg_min(h, 64);
        let q = &res.q_at_min;
        assert!((q.get(0, 0) - 1.0).abs() < 1e-3 && (q.get(1, 1) - 1.0).abs() < 1e-3, "H={h}: {q:?}");
        assert!(q.get(0, 1).abs() < 1e-3 && q.get(0, 2).abs() < 1e-3, "H={h}: {q:?}");
        assert!(q.symmetry_defect() < 1e-10 && q.min_eigenvalue() > -1e-9);
    }
}

// φ¹₁ is a centred Gaussian vector with covariance Q(γ̄); compare entrywise
// using the sample standard error of each product moment.
#[test]
fn linear_response_covariance_matches_q() {
    let (vf, res) = heisenberg_min("1/2", 64);
    let sk = solve_skeleton(&vf, &[0.0; 3], &res.gamma_bar).unwrap();
    let grad = skeleton_gradient(&vf, &sk).unwrap();
    let sampler = FbmSampler::new(&res.gamma_bar.spec).unwrap();
    let n = 100_000;
    let samples: Vec<Vec<f64>> = (0..n).map(|i| pair_gradient(&grad, &sampler.path(21, i as u64))).collect();
    for k in 0..3 {
        for l in 0..=k {
            let prods: Vec<f64> = samples.iter().map(|s| s[k] * s[l]).collect();
            let mean = prods.iter().sum::<f64>() / n as f64;
            let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let target = res.q_at_min.get(k, l);
            assert!((mean - target).abs() < 4.0 * se, "({k},{l}): {mean} vs {target} ± {se}");
        }
    }
}

#[test]
fn stochastic_q_scales_exactly() {
    let (vf, res) = heisenberg_min("1/2", 64);
    let spec = res.gamma_bar.spec;
    let gram = IncrementGram::new(&spec);
    let w = lift_grid_path(&FbmSampler::new(&spec).unwrap().path(2, 0), 2).unwrap();
    for eps in [0.5, 0.125, 0.03] {
        let s = solve_scaled_shifted(&vf, &[0.0; 3], &w, &res.gamma_bar, eps, spec.hurst, SolveOptions::default()).unwrap();
        let qt = stochastic_q(&vf, &s, &gram, eps).unwrap();
        let rows = malliavin_q(&increment_gradient(&vf, &s).unwrap(), &gram).unwrap();
        assert_eq!(qt.entries, rows.scale(eps * eps).entries);
    }
}

#[test]
fn normalised_determinant_stays_near_its_limit() {
    let (vf, res) = heisenberg_min("1/2", 64);
    let spec = res.gamma_bar.spec;
    let gram = IncrementGram::new(&spec);
    let sampler = FbmSampler::new(&spec).unwrap();
    let limit = res.q_at_min.det();
    for eps in [1.0 / 16.0, 1.0 / 32.0] {
        let ratios: Vec<f64> = (0..200)
            .map(|i| {
                let w = lift_grid_path(&sampler.path(8, i), 2).unwrap();
                let s = solve_scaled_shifted(&vf, &[0.0; 3], &w, &res.gamma_bar, eps, spec.hurst, SolveOptions::default())
                    .unwrap();
                stochastic_q(&vf, &s, &gram, eps).unwrap().scale(1.0 / (eps * eps)).det() / limit
            })
            .collect();
        let med = median(ratios);
        assert!((0.1..=10.0).contains(&med), "ε = {eps}: median ratio {med}");
    }
}

// ε⁻²C^ε concentrates on its deterministic limit as ε ↓ 0.
#[test]
fn lognormal_reduced_covariance_concentrates() {
    let vf = PolynomialFields::lognormal(0.5);
    let spec = FbmSpec::new(Hurst::parse("2/5").unwrap(), 1, 64).unwrap();
    let res = minimize_energy(&vf, &[1.0], &[1.5], spec, &MinimizerOptions::default()).unwrap();
    let sampler = FbmSampler::new(&spec).unwrap();
    let sample = |eps: f64| -> Vec<CovMatrix> {
        (0..600)
            .map(|i| {
                let w = lift_grid_path(&sampler.path(4, i), 2).unwrap();
                let s = solve_scaled_shifted(&vf, &[1.0], &w, &res.gamma_bar, eps, spec.hurst, SolveOptions::default())
                    .unwrap();
                reduced_cov_c(&vf, &s, 1.0).unwrap()
            })
            .collect()
    };
    let epsilons = [1.0 / 16.0, 1.0 / 64.0];
    let report = eigen_tail(&[sample(epsilons[0]), sample(epsilons[1])], &epsilons).unwrap();
    let (m0, m1) = (report.per_epsilon[0].median(), report.per_epsilon[1].median());
    assert!((m0 / m1 - 1.0).abs() < 0.1, "{m0} vs {m1}");
}

#[test]
fn q_dominates_reduced_covariance() {
    let (vf, res) = heisenberg_min("1/2", 64);
    let spec = res.gamma_bar.spec;
    let gram = IncrementGram::new(&spec);
    let sampler = FbmSampler::new(&spec).unwrap();
    let eps = 0.25;
    let ratios: Vec<f64> = (0..100)
        .map(|i| {
            let w = lift_grid_path(&sampler.path(6, i), 2).unwrap();
            let s = solve_scaled_shifted(&vf, &[0.0; 3], &w, &res.gamma_bar, eps, spec.hurst, SolveOptions::default())
                .unwrap();
            let q = stochastic_q(&vf, &s, &gram, eps).unwrap();
            let c = reduced_cov_c(&vf, &s, eps).unwrap();
            nondegeneracy_ratio(&q, &c, s.j.last().unwrap())
        })
        .collect();
    assert!(ratios.iter().all(|r| r.is_finite() && *r > 0.0), "{ratios:?}");
}

#[test]
fn fixture_matrices_are_psd() {
    let cases: Vec<(PolynomialFields, Vec<f64>, Vec<f64>)> = vec![
        (PolynomialFields::bridge1d(), vec![0.0], vec![1.0]),
        (PolynomialFields::lognormal(0.5), vec![1.0], vec![1.5]),
        (PolynomialFields::heisenberg(), vec![0.0; 3], vec![1.0, 0.5, 0.0]),
    ];
    for (vf, a, ap) in cases {
        let spec = FbmSpec::new(Hurst::parse("7/20").unwrap(), vf.noise_dim(), 64).unwrap();
        let res = minimize_energy(&vf, &a, &ap, spec, &MinimizerOptions::default()).unwrap();
        let sk = solve_skeleton(&vf, &a, &res.gamma_bar).unwrap();
        let q = malliavin_q(&skeleton_gradient(&vf, &sk).unwrap(), &IncrementGram::new(&spec)).unwrap();
        assert!(q.min_eigenvalue() >= -1e-9 && q.symmetry_defect() <= 1e-10, "n = {}", vf.state_dim());
    }
}
