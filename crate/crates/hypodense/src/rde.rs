//! Step-N Euler scheme for RDEs driven by (x, λ), Jacobi flows, the skeleton
//! ODE, the fractional Taylor terms φ^κ and their remainders.
//!
//! The scheme is written over [`Scalar`], so one implementation serves plain
//! solves, exact step derivatives (dual numbers) and the ε-expansion (jets).

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{compositions, enumerate_exponents, Exponent, IndexSet};
use crate::error::{invalid, Error, Result};
use crate::fgauss::{CMElement, Hurst};
use crate::fields::VectorFieldSystem;
use crate::metrics::GridPath;
use crate::roughlift::{lift_grid_path, RoughPathGrid};
use crate::scalar::{Dual, Jet, JetBasis, Scalar};
use crate::tensor_sig::TruncatedSignature;

const BLOW_UP: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Propagate J and K alongside the state.
    pub jacobians: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { jacobians: true }
    }
}

/// Solution path with the Jacobi flow J and its inverse K at grid points.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub y: GridPath,
    /// J(t_k); empty when jacobians were not requested.
    pub j: Vec<DMatrix<f64>>,
    /// K(t_k) = J(t_k)⁻¹; empty when jacobians were not requested.
    pub k: Vec<DMatrix<f64>>,
    pub driver: Arc<RoughPathGrid>,
}

impl SolveResult {
    pub fn endpoint(&self) -> &[f64] {
        self.y.endpoint()
    }

    pub fn has_jacobians(&self) -> bool {
        !self.j.is_empty()
    }

    /// max_k ‖J(t_k)K(t_k) − I‖_∞.
    pub fn jk_defect(&self) -> f64 {
        self.j
            .iter()
            .zip(&self.k)
            .map(|(j, k)| {
                let n = j.nrows();
                (j * k - DMatrix::identity(n, n)).abs().max()
            })
            .fold(0.0, f64::max)
    }
}

/// Driver coordinate a < d carries V_{a+1}; coordinate d (time) carries V₀.
fn field_of(a: usize, d: usize) -> usize {
    if a < d {
        a + 1
    } else {
        0
    }
}

fn active_coordinates<V: VectorFieldSystem>(vf: &V) -> Vec<usize> {
    let d = vf.noise_dim();
    let mut active: Vec<usize> = (0..d).collect();
    if vf.has_drift() {
        active.push(d);
    }
    active
}

/// One step y ↦ y + Σ_{|w|≤N} 𝒱_w Id(y) S^w with S the cell signature over
/// (x¹..x^d, λ).
pub(crate) fn scheme_step<V: VectorFieldSystem, T: Scalar>(
    vf: &V,
    y: &[T],
    s: &TruncatedSignature<T>,
    active: &[usize],
) -> Vec<T> {
    let n = vf.state_dim();
    let d = vf.noise_dim();
    let fields: Vec<Vec<T>> = active.iter().map(|&a| vf.eval_vec(field_of(a, d), y)).collect();
    let mut out = y.to_vec();
    for (ai, &a) in active.iter().enumerate() {
        let c = s.get1(a);
        for k in 0..n {
            out[k] += fields[ai][k] * c;
        }
    }
    if s.depth() >= 2 {
        // Σ_{a,b} S^{ab} ∇V_b·V_a.
        for &b in active {
            let mut u = vec![T::zero(); n];
            for (ai, &a) in active.iter().enumerate() {
                let c = s.get2(a, b);
                for k in 0..n {
                    u[k] += fields[ai][k] * c;
                }
            }
            let z: Vec<Dual<T>> = y.iter().zip(&u).map(|(&p, &q)| Dual::new(p, q)).collect();
            let v = vf.eval_vec(field_of(b, d), &z);
            for k in 0..n {
                out[k] += v[k].eps;
            }
        }
    }
    if s.depth() == 3 {
        // Σ_{a,b,c} S^{abc} D_{V_a}(∇V_c·V_b).
        for &b in active {
            for &c in active {
                let mut u = vec![T::zero(); n];
                for (ai, &a) in active.iter().enumerate() {
                    let w = s.get3(a, b, c);
                    for k in 0..n {
                        u[k] += fields[ai][k] * w;
                    }
                }
                let z: Vec<Dual<T>> = y.iter().zip(&u).map(|(&p, &q)| Dual::new(p, q)).collect();
                let fb = vf.eval_vec(field_of(b, d), &z);
                let w: Vec<Dual<Dual<T>>> = z.iter().zip(&fb).map(|(&p, &q)| Dual::new(p, q)).collect();
                let v = vf.eval_vec(field_of(c, d), &w);
                for k in 0..n {
                    out[k] += v[k].eps.eps;
                }
            }
        }
    }
    out
}

/// Exact derivative of the step map in y.
fn step_jacobian<V: VectorFieldSystem>(
    vf: &V,
    y: &[f64],
    s: &TruncatedSignature<Dual<f64>>,
    active: &[usize],
) -> DMatrix<f64> {
    let n = vf.state_dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut z: Vec<Dual<f64>> = y.iter().map(|&v| Dual::constant(v)).collect();
    for l in 0..n {
        z[l].eps = 1.0;
        let out = scheme_step(vf, &z, s, active);
        for k in 0..n {
            jac[(k, l)] = out[k].eps;
        }
        z[l].eps = 0.0;
    }
    jac
}

fn check_shapes<V: VectorFieldSystem>(vf: &V, a: &[f64], driver_dim: usize) -> Result<()> {
    if a.len() != vf.state_dim() {
        return invalid(format!("initial state has length {}, expected {}", a.len(), vf.state_dim()));
    }
    if driver_dim != vf.noise_dim() + 1 {
        return invalid(format!(
            "driver lives in ℝ^{driver_dim}, expected noise dimension {} plus time",
            vf.noise_dim()
        ));
    }
    Ok(())
}

pub fn solve_rde<V: VectorFieldSystem>(vf: &V, a: &[f64], driver: &RoughPathGrid) -> Result<SolveResult> {
    solve_rde_with(vf, a, Arc::new(driver.clone()), SolveOptions::default())
}

pub fn solve_rde_with<V: VectorFieldSystem>(
    vf: &V,
    a: &[f64],
    driver: Arc<RoughPathGrid>,
    opts: SolveOptions,
) -> Result<SolveResult> {
    check_shapes(vf, a, driver.dim())?;
    let n = vf.state_dim();
    let m = driver.cells();
    let active = active_coordinates(vf);
    let mut values = Vec::with_capacity(n * (m + 1));
    values.extend_from_slice(a);
    let mut y = a.to_vec();
    let mut js = Vec::new();
    let mut ks = Vec::new();
    if opts.jacobians {
        js.reserve(m + 1);
        ks.reserve(m + 1);
        js.push(DMatrix::identity(n, n));
        ks.push(DMatrix::identity(n, n));
    }
    for cell in 0..m {
        let s = driver.cell(cell);
        if opts.jacobians {
            let sd: TruncatedSignature<Dual<f64>> = s.cast();
            let dk = step_jacobian(vf, &y, &sd, &active);
            let inv = dk.clone().try_inverse().ok_or_else(|| {
                Error::NumericalDegeneracy(format!("step map not invertible at cell {cell}"))
            })?;
            let j = &dk * js.last().expect("J starts at I");
            let k = ks.last().expect("K starts at I") * inv;
            js.push(j);
            ks.push(k);
        }
        y = scheme_step(vf, &y, s, &active);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= BLOW_UP) {
            return Err(Error::BlowUp { cell, norm });
        }
        values.extend_from_slice(&y);
    }
    Ok(SolveResult {
        y: GridPath::new(n, values)?,
        j: js,
        k: ks,
        driver,
    })
}

/// Driver of the scaled-shifted equation: (τ_γ(εw), ε^{1/H} λ).
pub fn scaled_shifted_driver(
    w: &RoughPathGrid,
    gamma: &CMElement,
    epsilon: f64,
    hurst: Hurst,
) -> Result<RoughPathGrid> {
    if !(0.0..=1.0).contains(&epsilon) {
        return invalid(format!("ε = {epsilon} outside [0,1]"));
    }
    let g = gamma.render(w.cells());
    let shifted = w.dilate(epsilon).young_translate(&g)?;
    Ok(shifted.pair_with_time(epsilon.powf(hurst.inv())))
}

pub fn solve_scaled_shifted<V: VectorFieldSystem>(
    vf: &V,
    a: &[f64],
    w: &RoughPathGrid,
    gamma: &CMElement,
    epsilon: f64,
    hurst: Hurst,
    opts: SolveOptions,
) -> Result<SolveResult> {
    let driver = scaled_shifted_driver(w, gamma, epsilon, hurst)?;
    solve_rde_with(vf, a, Arc::new(driver), opts)
}

/// Skeleton φ⁰(γ): the equation driven by the depth-2 lift of γ, no drift.
pub fn solve_skeleton<V: VectorFieldSystem>(vf: &V, a: &[f64], gamma: &CMElement) -> Result<SolveResult> {
    solve_skeleton_depth(vf, a, gamma, 2, SolveOptions::default())
}

/// Skeleton solve with an explicit step order (matching an expansion's depth).
pub fn solve_skeleton_depth<V: VectorFieldSystem>(
    vf: &V,
    a: &[f64],
    gamma: &CMElement,
    depth: usize,
    opts: SolveOptions,
) -> Result<SolveResult> {
    let g = gamma.render(gamma.spec.m);
    let driver = lift_grid_path(&g, depth)?.pair_with_time(0.0);
    solve_rde_with(vf, a, Arc::new(driver), opts)
}

/// Per-cell n×d matrices A_p with ∂y_1/∂(increment of cell p in coordinate i)
/// = A_p[:, i], exact for the discrete scheme: A_p = J_1 K_{p+1} ∂_ΔF.
pub fn increment_gradient<V: VectorFieldSystem>(vf: &V, res: &SolveResult) -> Result<Vec<DMatrix<f64>>> {
    if !res.has_jacobians() {
        return invalid("increment gradient needs a solve with jacobians");
    }
    let (n, d) = (vf.state_dim(), vf.noise_dim());
    let m = res.driver.cells();
    let active = active_coordinates(vf);
    let j1 = &res.j[m];
    let mut out = Vec::with_capacity(m);
    for p in 0..m {
        let log = res.driver.cell(p).log();
        let y: Vec<Dual<f64>> = res.y.point(p).iter().map(|&v| Dual::constant(v)).collect();
        let mut df = DMatrix::zeros(n, d);
        for i in 0..d {
            let mut l: TruncatedSignature<Dual<f64>> = log.cast();
            l.level_mut(1)[i].eps = 1.0;
            let cell = l.exp();
            let step = scheme_step(vf, &y, &cell, &active);
            for k in 0..n {
                df[(k, i)] = step[k].eps;
            }
        }
        out.push(j1 * &res.k[p + 1] * df);
    }
    Ok(out)
}

/// Integrand of ⟨Dφ⁰₁, h⟩ rendered as one n×d matrix per cell.
pub fn skeleton_gradient<V: VectorFieldSystem>(vf: &V, sk: &SolveResult) -> Result<Vec<DMatrix<f64>>> {
    increment_gradient(vf, sk)
}

/// Σ_p A_p Δh_p: the discrete pairing of a gradient with a grid path.
pub fn pair_gradient(grad: &[DMatrix<f64>], h: &GridPath) -> Vec<f64> {
    let n = grad[0].nrows();
    let mut out = vec![0.0; n];
    for (p, a) in grad.iter().enumerate() {
        let dh = h.increment(p);
        for k in 0..n {
            for (i, v) in dh.iter().enumerate() {
                out[k] += a[(k, i)] * v;
            }
        }
    }
    out
}

/// φ^κ paths for κ ∈ Λ₁ ∩ [0, κ_max] around the skeleton of γ.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpansionTerms {
    pub gamma: CMElement,
    pub hurst: Hurst,
    pub exponents: Vec<Exponent>,
    pub paths: Vec<GridPath>,
}

impl ExpansionTerms {
    /// Σ_{j≤k} ε^{κ_j} φ^{κ_j}.
    pub fn partial_sum(&self, epsilon: f64, k: usize) -> GridPath {
        let mut acc = self.paths[0].clone();
        for j in 1..=k.min(self.paths.len() - 1) {
            let c = epsilon.powf(self.exponents[j].value());
            acc = acc.add(&self.paths[j].scale(c)).expect("same shape");
        }
        acc
    }

    pub fn term(&self, kappa: &Exponent) -> Option<&GridPath> {
        self.exponents.iter().position(|e| e == kappa).map(|i| &self.paths[i])
    }
}

/// Derivative order of the fields needed for the terms up to κ_max: the
/// longest composition in the φ^κ recursion plus the scheme's own N−1.
fn required_derivative_order(hurst: Hurst, kappa_max: f64, depth: usize) -> usize {
    let lambda1 = enumerate_exponents(hurst, IndexSet::L1, kappa_max);
    let positive: Vec<Exponent> = lambda1.iter().copied().filter(|e| e.value() > 0.0).collect();
    let mut longest = 0;
    for target in &lambda1 {
        let shifts = [
            target.value() - 1.0,
            target.value(),
            target.value() - hurst.inv(),
        ];
        for (si, t) in shifts.iter().enumerate() {
            if *t <= 0.0 {
                continue;
            }
            let tgt = match si {
                0 => target.shifted(-1, 0),
                1 => *target,
                _ => target.shifted(0, -1),
            };
            for c in compositions(&positive, &tgt) {
                longest = longest.max(c.len());
            }
        }
    }
    longest + depth - 1
}

fn jet_driver(
    x: &RoughPathGrid,
    gamma: &GridPath,
    basis: &'static JetBasis,
) -> Result<RoughPathGrid<Jet>> {
    let eps = Jet::monomial(basis, 1, 0, 1.0);
    let theta = Jet::monomial(basis, 0, 1, 1.0);
    let xj: RoughPathGrid<Jet> = x.cast();
    Ok(xj.dilate(eps).young_translate(gamma)?.pair_with_time(theta))
}

fn jet_solve<V: VectorFieldSystem>(
    vf: &V,
    a: &[f64],
    driver: &RoughPathGrid<Jet>,
    basis: &'static JetBasis,
    keep_path: bool,
) -> Result<Vec<Vec<Jet>>> {
    let active = active_coordinates(vf);
    let mut y: Vec<Jet> = a.iter().map(|&v| Jet::constant(basis, v)).collect();
    let mut path = vec![y.clone()];
    for cell in 0..driver.cells() {
        y = scheme_step(vf, &y, driver.cell(cell), &active);
        let norm = y.iter().map(|v| v.re() * v.re()).sum::<f64>().sqrt();
        if !(norm <= BLOW_UP) {
            return Err(Error::BlowUp { cell, norm });
        }
        if keep_path {
            path.push(y.clone());
        }
    }
    if !keep_path {
        path = vec![y];
    }
    Ok(path)
}

fn check_expansion_inputs<V: VectorFieldSystem>(
    vf: &V,
    a: &[f64],
    gamma_dim: usize,
    x: &RoughPathGrid,
    hurst: Hurst,
    kappa_max: f64,
) -> Result<&'static JetBasis> {
    check_shapes(vf, a, x.dim() + 1)?;
    if gamma_dim != x.dim() {
        return invalid("γ and the driver differ in dimension");
    }
    if !(0.0..=4.0 + 1e-12).contains(&kappa_max) {
        return invalid(format!("κ_max = {kappa_max} outside [0, 4]"));
    }
    if let Some(order) = vf.max_derivative_order() {
        let need = required_derivative_order(hurst, kappa_max, x.depth());
        if order < need {
            return Err(Error::Capability(format!(
                "terms up to κ = {kappa_max} need derivatives of order {need}, fields provide {order}"
            )));
        }
    }
    JetBasis::get(hurst.inv(), kappa_max)
}

/// Groups jet coefficients into the Λ₁ exponents they belong to.
fn collect_terms(jets: &[Jet], basis: &'static JetBasis, exps: &[Exponent], hurst: Hurst) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; jets.len()]; exps.len()];
    for (idx, &(u, v)) in basis.monomials().iter().enumerate() {
        let e = Exponent::new(u as i64, v as i64, hurst);
        if let Some(slot) = exps.iter().position(|x| *x == e) {
            for (k, j) in jets.iter().enumerate() {
                out[slot][k] += j.coeffs().get(idx).copied().unwrap_or(0.0);
            }
        }
    }
    out
}

/// Fractional Taylor terms of ỹ^ε: the exact ε-expansion of the discrete
/// scheme driven by (τ_γ(εx), ε^{1/H}λ).
pub fn expansion_terms<V: VectorFieldSystem>(
    vf: &V,
    a: &[f64],
    gamma: &CMElement,
    x: &RoughPathGrid,
    hurst: Hurst,
    kappa_max: f64,
) -> Result<ExpansionTerms> {
    let basis = check_expansion_inputs(vf, a, gamma.dim(), x, hurst, kappa_max)?;
    let g = gamma.render(x.cells());
    let driver = jet_driver(x, &g, basis)?;
    let path = jet_solve(vf, a, &driver, basis, true)?;
    let exps = enumerate_exponents(hurst, IndexSet::L1, kappa_max);
    let n = vf.state_dim();
    let mut values = vec![Vec::with_capacity(n * path.len()); exps.len()];
    for point in &path {
        let grouped = collect_terms(point, basis, &exps, hurst);
        for (slot, vals) in grouped.into_iter().enumerate() {
            values[slot].extend(vals);
        }
    }
    let paths = values
        .into_iter()
        .map(|v| GridPath::new(n, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpansionTerms {
        gamma: gamma.clone(),
        hurst,
        exponents: exps,
        paths,
    })
}

/// Endpoint values φ^κ_1 only, for Monte Carlo use.
pub fn expansion_endpoint<V: VectorFieldSystem>(
    vf: &V,
    a: &[f64],
    gamma_grid: &GridPath,
    x: &RoughPathGrid,
    hurst: Hurst,
    kappa_max: f64,
) -> Result<Vec<Vec<f64>>> {
    let basis = check_expansion_inputs(vf, a, gamma_grid.dim(), x, hurst, kappa_max)?;
    let driver = jet_driver(x, gamma_grid, basis)?;
    let end = jet_solve(vf, a, &driver, basis, false)?;
    let exps = enumerate_exponents(hurst, IndexSet::L1, kappa_max);
    Ok(collect_terms(&end[0], basis, &exps, hurst))
}

/// r^{κ_{k+1}}_ε = ỹ^ε − Σ_{j≤k} ε^{κ_j} φ^{κ_j}.
pub fn remainder<V: VectorFieldSystem>(
    vf: &V,
    a: &[f64],
    terms: &ExpansionTerms,
    x: &RoughPathGrid,
    epsilon: f64,
    k: usize,
) -> Result<GridPath> {
    if k >= terms.paths.len() {
        return invalid(format!("expansion has only {} terms", terms.paths.len()));
    }
    let res = solve_scaled_shifted(
        vf,
        a,
        x,
        &terms.gamma,
        epsilon,
        terms.hurst,
        SolveOptions { jacobians: false },
    )?;
    res.y.add(&terms.partial_sum(epsilon, k).scale(-1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fgauss::{fbm_cov, FbmSpec};
    use crate::fields::PolynomialFields;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_walk(rng: &mut ChaCha8Rng, d: usize, m: usize, scale: f64) -> GridPath {
        let mut v = vec![0.0; d];
        for k in 0..m * d {
            let prev = v[k];
            v.push(prev + scale * (rng.gen::<f64>() - 0.5));
        }
        GridPath::new(d, v).unwrap()
    }

    fn spec(h: &str, d: usize, m: usize) -> FbmSpec {
        FbmSpec::new(Hurst::parse(h).unwrap(), d, m).unwrap()
    }

    #[test]
    fn zero_driver_is_stationary() {
        let vf = PolynomialFields::heisenberg();
        let driver = lift_grid_path(&GridPath::zeros(2, 8), 2).unwrap().pair_with_time(0.0);
        let res = solve_rde(&vf, &[1.0, 2.0, 3.0], &driver).unwrap();
        assert_eq!(res.endpoint(), &[1.0, 2.0, 3.0]);
        assert!(res.jk_defect() == 0.0);
    }

    #[test]
    fn heisenberg_step2_is_exact() {
        let vf = PolynomialFields::heisenberg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_walk(&mut rng, 2, 32, 1.0);
        let x = lift_grid_path(&w, 2).unwrap();
        let a = [0.3, -0.2, 0.5];
        let res = solve_rde(&vf, &a, &x.pair_with_time(0.0)).unwrap();
        for k in 0..=32 {
            let s = x.prefix(k);
            let exact = a[2] + 2.0 * (a[1] * s.get1(0) - a[0] * s.get1(1)) + 2.0 * (s.get2(1, 0) - s.get2(0, 1));
            assert!((res.y.point(k)[2] - exact).abs() < 1e-12);
        }
        assert!(res.jk_defect() < 1e-12);
    }

    #[test]
    fn lognormal_converges_to_exponential_flow() {
        let sigma = 0.5;
        let vf = PolynomialFields::lognormal(sigma);
        let mut prev = f64::INFINITY;
        for m in [128, 256, 512, 1024] {
            let w = GridPath::from_fn(1, m, |t| vec![0.8 * (3.0 * std::f64::consts::PI * t).sin() + 0.5 * t]);
            let x = lift_grid_path(&w, 3).unwrap().pair_with_time(0.0);
            let res = solve_rde(&vf, &[1.0], &x).unwrap();
            let err = (res.endpoint()[0] / (sigma * w.endpoint()[0]).exp() - 1.0).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn blow_up_is_reported() {
        let mut vf = PolynomialFields::new(1, 1);
        vf.add_term(1, 0, 1.0, &[3]).unwrap();
        let x = lift_grid_path(&GridPath::from_fn(1, 16, |t| vec![40.0 * t]), 2).unwrap();
        let r = solve_rde(&vf, &[1.0], &x.pair_with_time(0.0));
        assert!(matches!(r, Err(Error::BlowUp { .. })));
    }

    #[test]
    fn skeleton_examples() {
        let sp = spec("1/2", 2, 256);
        let vf = PolynomialFields::heisenberg();
        let zero = solve_skeleton(&vf, &[0.1, 0.2, 0.3], &CMElement::zero(sp)).unwrap();
        assert!(zero.y.values().chunks(3).all(|p| p == [0.1, 0.2, 0.3]));
        let g = CMElement::kernel(sp, 1.0, &[1.0, 0.5]).unwrap();
        let sk = solve_skeleton(&vf, &[0.0; 3], &g).unwrap();
        let e = sk.endpoint();
        assert!((e[0] - 1.0).abs() < 1e-6 && (e[1] - 0.5).abs() < 1e-6 && e[2].abs() < 1e-6);

        let sp1 = spec("2/5", 1, 128);
        let ln = PolynomialFields::lognormal(0.5);
        let g = CMElement::kernel(sp1, 1.0, &[0.8]).unwrap();
        let sk = solve_skeleton(&ln, &[1.0], &g).unwrap();
        assert!((sk.endpoint()[0] - (0.5f64 * 0.8).exp()).abs() < 1e-4);
    }

    #[test]
    fn skeleton_gradient_examples() {
        let sp = spec("2/5", 1, 32);
        let bridge = PolynomialFields::bridge1d();
        let g = CMElement::kernel(sp, 0.5, &[0.7]).unwrap();
        let sk = solve_skeleton(&bridge, &[0.0], &g).unwrap();
        let grad = skeleton_gradient(&bridge, &sk).unwrap();
        assert!(grad.iter().all(|a| (a[(0, 0)] - 1.0).abs() < 1e-14));

        // Directional derivative against finite differences.
        let sp = spec("2/5", 2, 64);
        let vf = PolynomialFields::heisenberg().with_drift(0, 0.3, &[0, 1, 0]).unwrap();
        let g = CMElement::kernel(sp, 1.0, &[1.0, 0.5]).unwrap();
        let h = CMElement::new(sp, vec![0.25, 0.75], vec![vec![0.4, -0.3], vec![0.2, 0.9]]).unwrap();
        let sk = solve_skeleton(&vf, &[0.1, 0.0, 0.0], &g).unwrap();
        let grad = skeleton_gradient(&vf, &sk).unwrap();
        let lin = pair_gradient(&grad, &h.render(64));
        let mut ratios = Vec::new();
        for s in [1e-2, 1e-3] {
            let mut gs = g.clone();
            gs = CMElement::new(
                sp,
                vec![1.0, 0.25, 0.75],
                vec![
                    vec![gs.coeffs()[0][0], s * 0.4, s * -0.3],
                    vec![gs.coeffs()[1][0], s * 0.2, s * 0.9],
                ],
            )
            .unwrap();
            let y1 = solve_skeleton(&vf, &[0.1, 0.0, 0.0], &gs).unwrap();
            let err: f64 = (0..3)
                .map(|k| (y1.endpoint()[k] - sk.endpoint()[k] - s * lin[k]).abs())
                .fold(0.0, f64::max);
            ratios.push(err / s);
        }
        assert!(ratios[1] < 0.2 * ratios[0] + 1e-12, "{ratios:?}");
    }

    #[test]
    fn heisenberg_first_row_is_first_component_of_h() {
        let sp = spec("1/2", 2, 64);
        let vf = PolynomialFields::heisenberg();
        let g = CMElement::kernel(sp, 1.0, &[1.3, 0.0]).unwrap();
        let sk = solve_skeleton(&vf, &[0.0; 3], &g).unwrap();
        let grad = skeleton_gradient(&vf, &sk).unwrap();
        let h = CMElement::new(sp, vec![0.5, 1.0], vec![vec![0.3, -0.7], vec![1.1, 0.2]]).unwrap();
        let hv = h.render(64);
        let lin = pair_gradient(&grad, &hv);
        assert!((lin[0] - hv.endpoint()[0]).abs() < 1e-12);
        assert!((lin[1] - hv.endpoint()[1]).abs() < 1e-12);
    }

    #[test]
    fn expansion_leading_terms() {
        let sp = spec("1/2", 2, 32);
        let vf = PolynomialFields::heisenberg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = lift_grid_path(&random_walk(&mut rng, 2, 32, 0.5), 2).unwrap();
        let a = [0.2, -0.1, 0.4];
        // γ = 0, drift-free: φ¹_t = σ(a)(x_t − x_0).
        let terms = expansion_terms(&vf, &a, &CMElement::zero(sp), &x, sp.hurst, 2.0).unwrap();
        assert_eq!(terms.exponents.len(), 3);
        for k in 0..=32 {
            let s = x.prefix(k);
            let phi1 = terms.paths[1].point(k);
            let expect = [s.get1(0), s.get1(1), 2.0 * a[1] * s.get1(0) - 2.0 * a[0] * s.get1(1)];
            for i in 0..3 {
                assert!((phi1[i] - expect[i]).abs() < 1e-12);
            }
        }
        // φ⁰ equals the skeleton solve of the same depth; φ^κ(0) = 0.
        let g = CMElement::kernel(sp, 1.0, &[1.0, 0.5]).unwrap();
        let terms = expansion_terms(&vf, &a, &g, &x, sp.hurst, 2.0).unwrap();
        let sk = solve_skeleton_depth(&vf, &a, &g, 2, SolveOptions { jacobians: false }).unwrap();
        for k in 0..=32 {
            for i in 0..3 {
                assert!((terms.paths[0].point(k)[i] - sk.y.point(k)[i]).abs() < 1e-9);
            }
        }
        for p in &terms.paths[1..] {
            assert!(p.point(0).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn first_order_term_matches_gradient_pairing() {
        let sp = spec("1/2", 2, 32);
        let vf = PolynomialFields::heisenberg();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let wp = random_walk(&mut rng, 2, 32, 0.5);
        let x = lift_grid_path(&wp, 2).unwrap();
        let g = CMElement::kernel(sp, 1.0, &[1.0, 0.5]).unwrap();
        let terms = expansion_terms(&vf, &[0.0; 3], &g, &x, sp.hurst, 2.0).unwrap();
        let sk = solve_skeleton(&vf, &[0.0; 3], &g).unwrap();
        let lin = pair_gradient(&skeleton_gradient(&vf, &sk).unwrap(), &wp);
        for i in 0..3 {
            assert!((terms.paths[1].endpoint()[i] - lin[i]).abs() < 1e-12);
        }
    }

    // Variation of constants at 10× refinement for V₁ = σy: the skeleton is
    // a e^{σγ_t}, and φ¹_t = σ a e^{σγ_t} (x_t − x_0).
    #[test]
    fn lognormal_first_term_oracle() {
        let sigma = 0.5;
        let vf = PolynomialFields::lognormal(sigma);
        let m = 64;
        let sp = spec("2/5", 1, m);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let wp = random_walk(&mut rng, 1, m, 0.3);
        let x = lift_grid_path(&wp, 2).unwrap();
        let g = CMElement::kernel(sp, 1.0, &[0.9]).unwrap();
        let terms = expansion_terms(&vf, &[1.0], &g, &x, sp.hurst, 2.0).unwrap();
        let fine = 10 * m;
        let mut phi = 0.0;
        let mut worst: f64 = 0.0;
        let gam = |t: f64| 0.9 * fbm_cov(1.0, t, 0.4);
        let wv = |t: f64| {
            let k = ((t * m as f64).floor() as usize).min(m - 1);
            let th = t * m as f64 - k as f64;
            wp.point(k)[0] * (1.0 - th) + wp.point(k + 1)[0] * th
        };
        let gl = |t: f64| {
            let k = ((t * m as f64).floor() as usize).min(m - 1);
            let th = t * m as f64 - k as f64;
            gam(k as f64 / m as f64) * (1.0 - th) + gam((k + 1) as f64 / m as f64) * th
        };
        for j in 0..fine {
            let (t0, t1) = (j as f64 / fine as f64, (j + 1) as f64 / fine as f64);
            let tm = 0.5 * (t0 + t1);
            // dφ = σ φ dγ + σ y dx with y = e^{σγ}; midpoint integration.
            let ym = (sigma * gl(tm)).exp();
            let dg = gl(t1) - gl(t0);
            let dx = wv(t1) - wv(t0);
            let phim = phi + 0.5 * (sigma * phi * dg + sigma * ym * dx);
            phi += sigma * phim * dg + sigma * ym * dx;
            if (j + 1) % 10 == 0 {
                let k = (j + 1) / 10;
                let got = terms.paths[1].point(k)[0];
                worst = worst.max((got - phi).abs() / phi.abs().max(1e-3));
            }
        }
        assert!(worst < 1e-4, "relative error {worst}");
    }

    #[test]
    fn jets_reproduce_pipeline_at_fixed_epsilon() {
        let sp = spec("2/5", 1, 16);
        let vf = PolynomialFields::lognormal(0.5).with_drift(0, 0.2, &[1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = lift_grid_path(&random_walk(&mut rng, 1, 16, 0.4), 2).unwrap();
        let g = CMElement::kernel(sp, 1.0, &[0.6]).unwrap();
        let terms = expansion_terms(&vf, &[1.0], &g, &x, sp.hurst, 4.0).unwrap();
        let eps = 0.01;
        let full = solve_scaled_shifted(&vf, &[1.0], &x, &g, eps, sp.hurst, SolveOptions::default()).unwrap();
        let approx = terms.partial_sum(eps, terms.paths.len() - 1);
        assert!((full.endpoint()[0] - approx.endpoint()[0]).abs() < 1e-9);
    }

    #[test]
    fn capability_error_for_limited_fields() {
        struct Rough(PolynomialFields);
        impl VectorFieldSystem for Rough {
            fn state_dim(&self) -> usize {
                1
            }
            fn noise_dim(&self) -> usize {
                1
            }
            fn has_drift(&self) -> bool {
                false
            }
            fn eval<T: Scalar>(&self, i: usize, y: &[T], out: &mut [T]) {
                self.0.eval(i, y, out)
            }
            fn max_derivative_order(&self) -> Option<usize> {
                Some(2)
            }
        }
        let vf = Rough(PolynomialFields::lognormal(0.5));
        let sp = spec("2/5", 1, 8);
        let x = lift_grid_path(&GridPath::zeros(1, 8), 2).unwrap();
        let g = CMElement::zero(sp);
        assert!(expansion_terms(&vf, &[1.0], &g, &x, sp.hurst, 1.0).is_ok());
        assert!(matches!(
            expansion_terms(&vf, &[1.0], &g, &x, sp.hurst, 3.0),
            Err(Error::Capability(_))
        ));
    }
}
