//! Fractional Brownian motion: covariance, grid sampling and the
//! Cameron–Martin space in the reproducing-kernel basis {R(t_k,·)}.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mc::{ordered_map, sample_rng};
use crate::metrics::GridPath;

/// Hurst parameter in (1/4, 1/2], optionally carried as an exact fraction p/q.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hurst {
    value: f64,
    exact: Option<(u64, u64)>,
}

impl Hurst {
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.25 && value <= 0.5) {
            return invalid(format!("Hurst parameter {value} outside (1/4, 1/2]"));
        }
        Ok(Self { value, exact: None })
    }

    pub fn rational(p: u64, q: u64) -> Result<Self> {
        if q == 0 || p == 0 {
            return invalid("Hurst fraction needs positive numerator and denominator");
        }
        let g = gcd(p, q);
        let (p, q) = (p / g, q / g);
        let mut h = Self::new(p as f64 / q as f64)?;
        h.exact = Some((p, q));
        Ok(h)
    }

    /// Accepts "p/q" or a decimal literal.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((p, q)) = s.split_once('/') {
            let p = p.trim().parse::<u64>();
            let q = q.trim().parse::<u64>();
            match (p, q) {
                (Ok(p), Ok(q)) => Self::rational(p, q),
                _ => invalid(format!("cannot parse Hurst fraction `{s}`")),
            }
        } else {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse Hurst value `{s}`")))
                .and_then(Self::new)
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn exact(&self) -> Option<(u64, u64)> {
        self.exact
    }

    pub fn inv(&self) -> f64 {
        match self.exact {
            Some((p, q)) => q as f64 / p as f64,
            None => 1.0 / self.value,
        }
    }

    /// Step order ⌊1/H⌋ of the rough-path lift.
    pub fn depth(&self) -> usize {
        match self.exact {
            Some((p, q)) => (q / p) as usize,
            None => (1.0 / self.value + 1e-12).floor() as usize,
        }
    }
}

impl fmt::Display for Hurst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.exact {
            Some((p, q)) => write!(f, "{p}/{q}"),
            None => write!(f, "{}", self.value),
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// R(s,t) = ½(s^{2H} + t^{2H} − |t−s|^{2H}).
pub fn fbm_cov(s: f64, t: f64, h: f64) -> f64 {
    let e = 2.0 * h;
    0.5 * (s.abs().powf(e) + t.abs().powf(e) - (t - s).abs().powf(e))
}

/// fBm on [0,1] in ℝ^d observed on the M-cell uniform grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbmSpec {
    pub hurst: Hurst,
    pub dim: usize,
    pub m: usize,
}

impl FbmSpec {
    pub fn new(hurst: Hurst, dim: usize, m: usize) -> Result<Self> {
        if dim == 0 || m < 2 {
            return invalid(format!("fBm spec needs d ≥ 1 and M ≥ 2 (got d={dim}, M={m})"));
        }
        Ok(Self { hurst, dim, m })
    }

    pub fn h(&self) -> f64 {
        self.hurst.value()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.m as f64
    }
}

/// Covariance Γ_pq of the grid increments Δw_p = w_{t_{p+1}} − w_{t_p}.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementGram {
    spec: FbmSpec,
    matrix: DMatrix<f64>,
}

impl IncrementGram {
    pub fn new(spec: &FbmSpec) -> Self {
        let m = spec.m;
        let h = spec.h();
        let r = |a: usize, b: usize| fbm_cov(spec.time(a), spec.time(b), h);
        let matrix = DMatrix::from_fn(m, m, |p, q| {
            r(p + 1, q + 1) - r(p + 1, q) - r(p, q + 1) + r(p, q)
        });
        Self { spec: *spec, matrix }
    }

    pub fn spec(&self) -> &FbmSpec {
        &self.spec
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Σ_{p,q} f_p g_q Γ_pq for scalar step functions given by cell values.
    pub fn pair(&self, f: &[f64], g: &[f64]) -> f64 {
        let m = self.spec.m;
        let mut acc = 0.0;
        for p in 0..m {
            if f[p] == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for q in 0..m {
                row += self.matrix[(p, q)] * g[q];
            }
            acc += f[p] * row;
        }
        acc
    }
}

/// Pairing in the dual Cameron–Martin norm of ℝ^d-valued step functions;
/// `f[i]` holds the cell values of component i.
pub fn htilde_inner(f: &[Vec<f64>], g: &[Vec<f64>], gram: &IncrementGram) -> Result<f64> {
    let m = gram.spec().m;
    if f.len() != g.len() || f.iter().chain(g).any(|c| c.len() != m) {
        return invalid(format!("step functions must have {m} cell values per component"));
    }
    Ok(f.iter().zip(g).map(|(a, b)| gram.pair(a, b)).sum())
}

/// Exact Gaussian sampler on the grid via the Cholesky factor of Γ.
#[derive(Clone, Debug)]
pub struct FbmSampler {
    spec: FbmSpec,
    chol: Vec<f64>,
}

impl FbmSampler {
    pub fn new(spec: &FbmSpec) -> Result<Self> {
        let gram = IncrementGram::new(spec);
        let m = spec.m;
        let jitter = 1e-12 * gram.matrix.trace();
        let a = &gram.matrix + DMatrix::identity(m, m) * jitter;
        let l = a.cholesky().ok_or_else(|| {
            Error::NumericalDegeneracy(format!("increment Gram not positive definite (M={m})"))
        })?;
        let l = l.l();
        let mut chol = vec![0.0; m * (m + 1) / 2];
        for p in 0..m {
            for q in 0..=p {
                chol[p * (p + 1) / 2 + q] = l[(p, q)];
            }
        }
        Ok(Self { spec: *spec, chol })
    }

    pub fn spec(&self) -> &FbmSpec {
        &self.spec
    }

    /// Path number `index` of the stream `seed`.
    pub fn path(&self, seed: u64, index: u64) -> GridPath {
        let (m, d) = (self.spec.m, self.spec.dim);
        let mut rng = sample_rng(seed, index);
        let mut values = vec![0.0; d * (m + 1)];
        let mut z = vec![0.0; m];
        for i in 0..d {
            for zp in z.iter_mut() {
                *zp = StandardNormal.sample(&mut rng);
            }
            let mut level = 0.0;
            for p in 0..m {
                let row = &self.chol[p * (p + 1) / 2..p * (p + 1) / 2 + p + 1];
                let inc: f64 = row.iter().zip(&z).map(|(l, z)| l * z).sum();
                level += inc;
                values[(p + 1) * d + i] = level;
            }
        }
        GridPath::new(d, values).expect("finite samples")
    }
}

/// `n_paths` independent fBm grid paths.
pub fn sample_fbm(spec: &FbmSpec, n_paths: usize, seed: u64) -> Result<Vec<GridPath>> {
    if n_paths == 0 {
        return invalid("need at least one path");
    }
    let sampler = FbmSampler::new(spec)?;
    Ok(ordered_map(n_paths, |k| sampler.path(seed, k as u64)))
}

/// Cameron–Martin element γ^i(·) = Σ_k a^i_k R(t_k, ·).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMElement {
    pub spec: FbmSpec,
    knots: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
}

impl CMElement {
    pub fn new(spec: FbmSpec, knots: Vec<f64>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if coeffs.len() != spec.dim || coeffs.iter().any(|c| c.len() != knots.len()) {
            return invalid("coefficient array must be d × (number of knots)");
        }
        if knots.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return invalid("knots must lie in [0,1]");
        }
        Ok(Self { spec, knots, coeffs })
    }

    /// Knots at every grid time t_1..t_M with zero coefficients.
    pub fn zero(spec: FbmSpec) -> Self {
        let knots = (1..=spec.m).map(|k| spec.time(k)).collect::<Vec<_>>();
        let coeffs = vec![vec![0.0; spec.m]; spec.dim];
        Self { spec, knots, coeffs }
    }

    /// γ = v·R(t, ·).
    pub fn kernel(spec: FbmSpec, t: f64, v: &[f64]) -> Result<Self> {
        Self::new(spec, vec![t], v.iter().map(|c| vec![*c]).collect())
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.coeffs
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let h = self.spec.h();
        let kern: Vec<f64> = self.knots.iter().map(|&s| fbm_cov(s, t, h)).collect();
        self.coeffs
            .iter()
            .map(|a| a.iter().zip(&kern).map(|(x, y)| x * y).sum())
            .collect()
    }

    /// Values at the M+1 points of the `m`-cell grid.
    pub fn render(&self, m: usize) -> GridPath {
        GridPath::from_fn(self.dim(), m, |t| self.eval(t))
    }

    /// Gram matrix G_kl = R(t_k, t_l) of the knots.
    pub fn gram(&self) -> DMatrix<f64> {
        kernel_gram(&self.knots, self.spec.h())
    }

    pub fn norm_sq(&self) -> f64 {
        let g = self.gram();
        let k = self.knots.len();
        let g = g + DMatrix::identity(k, k) * 1e-12;
        self.coeffs
            .iter()
            .map(|a| {
                let v = DVector::from_column_slice(a);
                (v.transpose() * &g * &v)[(0, 0)]
            })
            .sum()
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        for a in out.coeffs.iter_mut() {
            for v in a.iter_mut() {
                *v *= c;
            }
        }
        out
    }
}

pub fn kernel_gram(knots: &[f64], h: f64) -> DMatrix<f64> {
    let k = knots.len();
    DMatrix::from_fn(k, k, |a, b| fbm_cov(knots[a], knots[b], h))
}

pub fn cm_norm_sq(gamma: &CMElement) -> f64 {
    gamma.norm_sq()
}

/// ⟨γ, w⟩ = Σ_i Σ_k a^i_k w^i(t_k) for knots on the grid of `w`.
pub fn paley_wiener(gamma: &CMElement, w: &GridPath) -> Result<f64> {
    if w.dim() != gamma.dim() {
        return invalid("γ and w differ in dimension");
    }
    let m = w.cells() as f64;
    let mut acc = 0.0;
    for (k, &t) in gamma.knots.iter().enumerate() {
        let idx = (t * m).round();
        if (idx / m - t).abs() > 1e-12 {
            return invalid(format!("knot {t} is not a point of the {m}-cell grid"));
        }
        let wp = w.point(idx as usize);
        for (i, a) in gamma.coeffs.iter().enumerate() {
            acc += a[k] * wp[i];
        }
    }
    Ok(acc)
}

/// Discrete Volterra factorisation of [R(t_i,t_j)]_{i,j≥1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolterraReport {
    /// max |L Lᵀ − R|.
    pub reconstruction_residual: f64,
    /// max |L⁻¹ R L⁻ᵀ − I|, with the triangular solves done independently.
    pub unitarity_residual: f64,
    /// (L Lᵀ) at (t_M, t_M), which should equal R(1,1) = 1.
    pub terminal_variance: f64,
    /// Kernel samples K(t_i, s_j) = L_ij / √Δs, row-major lower triangle.
    pub kernel: Vec<f64>,
}

pub fn volterra_checks(h: f64, m: usize) -> Result<VolterraReport> {
    if m < 1 {
        return invalid("grid needs at least one cell");
    }
    let times: Vec<f64> = (1..=m).map(|k| k as f64 / m as f64).collect();
    let r = kernel_gram(&times, h);
    let chol = r.clone().cholesky().ok_or_else(|| {
        Error::NumericalDegeneracy(format!("covariance on {m} points is not positive definite"))
    })?;
    let l = chol.l();
    let llt = &l * l.transpose();
    let reconstruction_residual = (&llt - &r).abs().max();
    let linv_r = l
        .solve_lower_triangular(&r)
        .ok_or_else(|| Error::NumericalDegeneracy("singular Volterra factor".into()))?;
    let inner = l
        .solve_lower_triangular(&linv_r.transpose())
        .ok_or_else(|| Error::NumericalDegeneracy("singular Volterra factor".into()))?;
    let unitarity_residual = (inner - DMatrix::identity(m, m)).abs().max();
    let ds = 1.0 / m as f64;
    let mut kernel = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in 0..=i {
            kernel.push(l[(i, j)] / ds.sqrt());
        }
    }
    Ok(VolterraReport {
        reconstruction_residual,
        unitarity_residual,
        terminal_variance: llt[(m - 1, m - 1)],
        kernel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(h: f64, d: usize, m: usize) -> FbmSpec {
        FbmSpec::new(Hurst::new(h).unwrap(), d, m).unwrap()
    }

    #[test]
    fn hurst_parsing() {
        let h = Hurst::parse("2/5").unwrap();
        assert_eq!(h.exact(), Some((2, 5)));
        assert_eq!(h.depth(), 2);
        assert_eq!(Hurst::parse("6/20").unwrap().exact(), Some((3, 10)));
        assert_eq!(Hurst::parse("1/3").unwrap().depth(), 3);
        assert_eq!(Hurst::parse("0.4").unwrap().exact(), None);
        assert!(Hurst::parse("1/4").is_err());
        assert!(Hurst::parse("0.6").is_err());
        assert!(Hurst::parse("x").is_err());
        assert_eq!(Hurst::parse("1/2").unwrap().to_string(), "1/2");
    }

    #[test]
    fn covariance_examples() {
        assert_relative_eq!(fbm_cov(1.0, 1.0, 0.3), 1.0);
        assert_relative_eq!(fbm_cov(0.3, 0.3, 0.4), 0.3f64.powf(0.8), max_relative = 1e-14);
        assert_relative_eq!(fbm_cov(0.3, 0.7, 0.5), 0.3, max_relative = 1e-14);
    }

    #[test]
    fn htilde_examples() {
        let sp = spec(0.35, 1, 16);
        let gram = IncrementGram::new(&sp);
        let ones = vec![vec![1.0; 16]];
        assert_relative_eq!(htilde_inner(&ones, &ones, &gram).unwrap(), 1.0, max_relative = 1e-12);
        let ind = |k: usize| vec![(0..16).map(|p| if p < k { 1.0 } else { 0.0 }).collect::<Vec<_>>()];
        let got = htilde_inner(&ind(4), &ind(11), &gram).unwrap();
        assert_relative_eq!(got, fbm_cov(0.25, 11.0 / 16.0, 0.35), max_relative = 1e-12);

        let bm = IncrementGram::new(&spec(0.5, 1, 8));
        let f = vec![vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0, 1.0, -1.0]];
        let g = vec![vec![0.5, 1.0, 1.0, 2.0, -1.0, 0.0, 2.0, 1.0]];
        let l2: f64 = f[0].iter().zip(&g[0]).map(|(a, b)| a * b / 8.0).sum();
        assert_relative_eq!(htilde_inner(&f, &g, &bm).unwrap(), l2, max_relative = 1e-12);
    }

    #[test]
    fn cm_norm_examples() {
        let sp = spec(0.4, 2, 32);
        let g = CMElement::kernel(sp, 1.0, &[1.0, 0.0]).unwrap();
        assert_relative_eq!(cm_norm_sq(&g), 1.0, max_relative = 1e-10);
        assert_relative_eq!(cm_norm_sq(&g.scale(1.7)), 1.7 * 1.7, max_relative = 1e-10);
        assert_eq!(cm_norm_sq(&CMElement::zero(sp)), 0.0);
    }

    #[test]
    fn paley_wiener_examples() {
        let sp = spec(0.3, 2, 8);
        let w = GridPath::from_fn(2, 8, |t| vec![t * t, -t]);
        let g = CMElement::kernel(sp, 1.0, &[1.0, 0.0]).unwrap();
        assert_eq!(paley_wiener(&g, &w).unwrap(), 1.0);
        assert_eq!(paley_wiener(&CMElement::zero(sp), &w).unwrap(), 0.0);
        let off = CMElement::kernel(sp, 0.3, &[1.0, 0.0]).unwrap();
        assert!(paley_wiener(&off, &w).is_err());
    }

    #[test]
    fn volterra_brownian_kernel() {
        let rep = volterra_checks(0.5, 16).unwrap();
        assert!(rep.reconstruction_residual < 1e-12);
        assert!(rep.unitarity_residual < 1e-10);
        assert_relative_eq!(rep.terminal_variance, 1.0, max_relative = 1e-12);
        // Discrete 1_{[0,t]}: K(t_i, s_j) = 1 for j ≤ i.
        assert!(rep.kernel.iter().all(|k| (k - 1.0).abs() < 1e-10));
        let rep = volterra_checks(0.4, 256).unwrap();
        assert!(rep.reconstruction_residual < 1e-8);
    }

    #[test]
    fn sampler_is_reproducible() {
        let sp = spec(0.4, 2, 16);
        let s = FbmSampler::new(&sp).unwrap();
        assert_eq!(s.path(5, 9), s.path(5, 9));
        assert_ne!(s.path(5, 9), s.path(5, 10));
        assert_eq!(s.path(5, 9).point(0), &[0.0, 0.0]);
    }

    #[test]
    fn terminal_variance_and_isometry() {
        let sp = spec(0.35, 1, 32);
        let n = 100_000;
        let paths = sample_fbm(&sp, n, 11).unwrap();
        let v: f64 = paths.iter().map(|p| p.endpoint()[0].powi(2)).sum::<f64>() / n as f64;
        let se = (2.0 / n as f64).sqrt();
        assert!((v - 1.0).abs() < 4.0 * se, "Var(w_1) = {v}");

        let gamma = CMElement::new(sp, vec![0.25, 0.5, 1.0], vec![vec![0.7, -1.2, 0.4]]).unwrap();
        let norm = cm_norm_sq(&gamma);
        let sq: Vec<f64> = paths.iter().map(|p| paley_wiener(&gamma, p).unwrap().powi(2)).collect();
        let mean = sq.iter().sum::<f64>() / n as f64;
        let var = sq.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - norm).abs() < 4.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn brownian_increments_uncorrelated() {
        let sp = spec(0.5, 1, 8);
        let n = 100_000;
        let paths = sample_fbm(&sp, n, 3).unwrap();
        let prod: Vec<f64> = paths.iter().map(|p| p.increment(1)[0] * p.increment(5)[0]).collect();
        let mean = prod.iter().sum::<f64>() / n as f64;
        // Var of a product of independent N(0, 1/8) variables is 1/64.
        let se = (1.0 / 64.0 / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * se);
    }

    proptest! {
        #[test]
        fn htilde_matches_cm_norm(coeffs in prop::collection::vec(-2.0f64..2.0, 8), h in 0.26f64..0.5) {
            let m = 8;
            let sp = spec(h, 1, m);
            let gram = IncrementGram::new(&sp);
            let knots: Vec<f64> = (1..=m).map(|k| k as f64 / m as f64).collect();
            let gamma = CMElement::new(sp, knots, vec![coeffs.clone()]).unwrap();
            // f = Σ a_k 1_{[0,t_k]}: the value on cell p is Σ_{k ≥ p+1} a_k.
            let f: Vec<f64> = (0..m).map(|p| coeffs[p..].iter().sum()).collect();
            let ht = htilde_inner(std::slice::from_ref(&f), std::slice::from_ref(&f), &gram).unwrap();
            prop_assert!(ht >= -1e-12);
            prop_assert!((ht - cm_norm_sq(&gamma)).abs() < 1e-10 * (1.0 + ht));
        }
    }
}
