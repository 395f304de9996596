//! Minimiser properties that go beyond single fixtures.

use hypodense::fgauss::{fbm_cov, CMElement, FbmSpec, Hurst};
use hypodense::fields::{PolynomialFields, VectorFieldSystem};
use hypodense::minimizer::{hessian_check, minimize_energy, multiplier_identity_check, MinimizerOptions, MinimizerResult};

fn run<V: VectorFieldSystem>(vf: &V, a: &[f64], ap: &[f64], h: &str, m: usize) -> MinimizerResult {
    let spec = FbmSpec::new(Hurst::parse(h).unwrap(), vf.noise_dim(), m).unwrap();
    let res = minimize_energy(vf, a, ap, spec, &MinimizerOptions::default()).unwrap();
    assert!(res.converged && res.constraint_residual <= 1e-8, "{:?}", res.warnings);
    res
}

fn sup_distance(g: &CMElement, f: impl Fn(f64) -> Vec<f64>) -> f64 {
    (0..=256)
        .map(|k| {
            let t = k as f64 / 256.0;
            g.eval(t).iter().zip(f(t)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[test]
fn heisenberg_rotation_equivariance() {
    let vf = PolynomialFields::heisenberg();
    let (xi, eta) = (1.0, 0.5);
    let r = f64::hypot(xi, eta);
    for h in ["7/20", "1/2"] {
        let general = run(&vf, &[0.0; 3], &[xi, eta, 0.0], h, 64);
        let axis = run(&vf, &[0.0; 3], &[r, 0.0, 0.0], h, 64);
        assert!((general.energy - axis.energy).abs() < 1e-6);
        // Rotating the axis minimiser by the angle of (ξ, η) reproduces the other.
        let (c, s) = (xi / r, eta / r);
        let d = sup_distance(&general.gamma_bar, |t| {
            let v = axis.gamma_bar.eval(t);
            vec![c * v[0] - s * v[1], s * v[0] + c * v[1]]
        });
        assert!(d < 1e-3, "H={h}: {d}");
        for (got, want) in axis.nu_bar.iter().zip([r, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-3, "H={h}: ν̄ = {:?}", axis.nu_bar);
        }
    }
}

#[test]
fn closed_form_minimisers() {
    let sigma = 0.5;
    let c = 1.5f64.ln() / sigma;
    for h in ["7/20", "2/5", "1/2"] {
        let hv = Hurst::parse(h).unwrap().value();
        let ln = run(&PolynomialFields::lognormal(sigma), &[1.0], &[1.5], h, 64);
        assert!(sup_distance(&ln.gamma_bar, |t| vec![c * fbm_cov(1.0, t, hv)]) < 1e-3);
        assert!((ln.energy - 0.5 * c * c).abs() < 1e-4);
        let br = run(&PolynomialFields::bridge1d(), &[0.0], &[2.0], h, 64);
        assert!(sup_distance(&br.gamma_bar, |t| vec![2.0 * fbm_cov(1.0, t, hv)]) < 1e-6);
        assert!((br.energy - 2.0).abs() < 1e-8);
    }
}

#[test]
fn energy_is_stable_under_grid_refinement() {
    let cases: Vec<(PolynomialFields, Vec<f64>, Vec<f64>)> = vec![
        (PolynomialFields::bridge1d(), vec![0.0], vec![1.0]),
        (PolynomialFields::lognormal(0.5), vec![1.0], vec![1.5]),
        (PolynomialFields::heisenberg(), vec![0.0; 3], vec![1.0, 0.5, 0.0]),
    ];
    for (vf, a, ap) in cases {
        let coarse = run(&vf, &a, &ap, "2/5", 64);
        let fine = run(&vf, &a, &ap, "2/5", 128);
        assert!((coarse.energy - fine.energy).abs() <= 1e-4, "n = {}", vf.state_dim());
    }
}

#[test]
fn multiplier_identity_holds_in_mean_square() {
    let vf = PolynomialFields::heisenberg();
    let res = run(&vf, &[0.0; 3], &[1.0, 0.5, 0.0], "2/5", 64);
    let report = multiplier_identity_check(&vf, &res, 1000, 9).unwrap();
    assert!(report.rms <= 1e-3 * report.gamma_norm, "{report:?}");
}

#[test]
fn hessian_is_positive_on_fixtures() {
    let vf = PolynomialFields::heisenberg();
    let res = run(&vf, &[0.0; 3], &[1.0, 0.5, 0.0], "2/5", 64);
    assert!(hessian_check(&vf, &res, 6, 1).unwrap().min > 0.0);
    let vf = PolynomialFields::bridge1d();
    let res = run(&vf, &[0.0], &[1.0], "2/5", 64);
    assert!(hessian_check(&vf, &res, 6, 1).unwrap().min > 0.0);
}
