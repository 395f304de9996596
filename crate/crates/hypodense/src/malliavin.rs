//! Malliavin covariance matrices, the reduced covariance C^ε, Hörmander
//! bracket ranks and eigenvalue-tail diagnostics.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fgauss::IncrementGram;
use crate::fields::{sigma_matrix, VectorFieldSystem};
use crate::rde::{increment_gradient, SolveResult};
use crate::scalar::{Hyper, Scalar, HYPER_GENERATORS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovKind {
    Deterministic,
    Stochastic,
    Reduced,
    Empirical,
}

/// Symmetric n×n matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix {
    pub n: usize,
    pub entries: Vec<f64>,
    pub kind: CovKind,
}

impl CovMatrix {
    pub fn from_matrix(m: &DMatrix<f64>, kind: CovKind) -> Self {
        let n = m.nrows();
        let entries = (0..n * n).map(|i| m[(i / n, i % n)]).collect();
        Self { n, entries, kind }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.entries)
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.entries[k * self.n + l]
    }

    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.n {
            for l in 0..k {
                worst = worst.max((self.get(k, l) - self.get(l, k)).abs());
            }
        }
        worst
    }

    /// Ascending eigenvalues of the symmetric part.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = self.matrix();
        let sym = (&m + m.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn det(&self) -> f64 {
        self.matrix().determinant()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|v| v * c).collect(),
            kind: self.kind,
        }
    }
}

/// Q_kl = Σ_i Σ_{p,q} A_p[k,i] Γ_pq A_q[l,i] for per-cell matrices A_p (n×d):
/// the dual Cameron–Martin Gram of the rows of A.
pub fn malliavin_q(a: &[DMatrix<f64>], gram: &IncrementGram) -> Result<CovMatrix> {
    let m = gram.spec().m;
    if a.len() != m {
        return invalid(format!("{} cell matrices for an {m}-cell grid", a.len()));
    }
    let (n, d) = (a[0].nrows(), a[0].ncols());
    let mut q = DMatrix::zeros(n, n);
    for i in 0..d {
        let b = DMatrix::from_fn(n, m, |k, p| a[p][(k, i)]);
        q += &b * gram.matrix() * b.transpose();
    }
    let q = (&q + q.transpose()) * 0.5;
    Ok(CovMatrix::from_matrix(&q, CovKind::Deterministic))
}

/// Q̃^ε for a scaled-shifted solve: ε² times the Gram of the ε-normalised
/// rows J₁K_{p+1}∂_ΔF.
pub fn stochastic_q<V: VectorFieldSystem>(
    vf: &V,
    res: &SolveResult,
    gram: &IncrementGram,
    epsilon: f64,
) -> Result<CovMatrix> {
    let rows = increment_gradient(vf, res)?;
    let mut q = malliavin_q(&rows, gram)?.scale(epsilon * epsilon);
    q.kind = CovKind::Stochastic;
    Ok(q)
}

fn trapezoid_weights(m: usize) -> impl Iterator<Item = f64> {
    let h = 1.0 / m as f64;
    (0..=m).map(move |k| if k == 0 || k == m { 0.5 * h } else { h })
}

/// C^ε = ∫₀¹ K_s σ^ε(y_s)(K_s σ^ε(y_s))ᵀ ds, σ^ε = εσ, by the trapezoid rule.
pub fn reduced_cov_c<V: VectorFieldSystem>(vf: &V, res: &SolveResult, epsilon: f64) -> Result<CovMatrix> {
    if !res.has_jacobians() {
        return invalid("reduced covariance needs a solve with jacobians");
    }
    let n = vf.state_dim();
    let m = res.y.cells();
    let mut c = DMatrix::zeros(n, n);
    for (k, w) in trapezoid_weights(m).enumerate() {
        let ks = &res.k[k] * sigma_matrix(vf, res.y.point(k)) * epsilon;
        c += &ks * ks.transpose() * w;
    }
    Ok(CovMatrix::from_matrix(&c, CovKind::Reduced))
}

/// Right side of ⟨v, C^ε v⟩ = Σ_i ∫⟨v, K_s V^ε_i(y_s)⟩² ds, same quadrature.
pub fn reduced_quadratic_form<V: VectorFieldSystem>(
    vf: &V,
    res: &SolveResult,
    epsilon: f64,
    v: &[f64],
) -> Result<f64> {
    if !res.has_jacobians() {
        return invalid("reduced covariance needs a solve with jacobians");
    }
    let d = vf.noise_dim();
    let mut acc = 0.0;
    for (k, w) in trapezoid_weights(res.y.cells()).enumerate() {
        let y = res.y.point(k);
        for i in 1..=d {
            let vi: Vec<f64> = vf.eval_vec(i, y).iter().map(|c| c * epsilon).collect();
            let kv = &res.k[k] * nalgebra::DVector::from_vec(vi);
            let s: f64 = kv.iter().zip(v).map(|(a, b)| a * b).sum();
            acc += w * s * s;
        }
    }
    Ok(acc)
}

/// λ_min(Q) / (λ_min(C)·λ_min(J₁J₁ᵀ)) for one sample. A distribution of these
/// bounded away from zero is the empirical face of Q ≳ J₁CJ₁ᵀ.
pub fn nondegeneracy_ratio(q: &CovMatrix, c: &CovMatrix, j1: &DMatrix<f64>) -> f64 {
    let jj = CovMatrix::from_matrix(&(j1 * j1.transpose()), CovKind::Deterministic);
    q.min_eigenvalue() / (c.min_eigenvalue() * jj.min_eigenvalue())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HormanderReport {
    /// Rank of span(𝒱₀ ∪ … ∪ 𝒱_m) for m = 0..=max_depth.
    pub ranks: Vec<usize>,
    pub total_rank: usize,
    pub state_dim: usize,
}

impl HormanderReport {
    pub fn satisfied(&self) -> bool {
        self.total_rank == self.state_dim
    }
}

/// Evaluates the bracket [V_{w₀}, [V_{w₁}, …, V_{w_last}]] at y. Each bracket
/// level differentiates along a fresh nilpotent generator.
fn bracket<V: VectorFieldSystem>(vf: &V, word: &[usize], y: &[Hyper], g: usize) -> Vec<Hyper> {
    if word.len() == 1 {
        return vf.eval_vec(word[0], y);
    }
    let (i, rest) = (word[0], &word[1..]);
    let eta = Hyper::generator(g);
    let vi = vf.eval_vec(i, y);
    let along_vi: Vec<Hyper> = y.iter().zip(&vi).map(|(&a, &b)| a + eta * b).collect();
    let du_vi = bracket(vf, rest, &along_vi, g + 1);
    let u = bracket(vf, rest, y, g + 1);
    let along_u: Vec<Hyper> = y.iter().zip(&u).map(|(&a, &b)| a + eta * b).collect();
    let dvi_u = vf.eval_vec(i, &along_u);
    du_vi
        .iter()
        .zip(&dvi_u)
        .map(|(a, b)| a.d_by(g) - b.d_by(g))
        .collect()
}

fn numerical_rank(vectors: &[Vec<f64>], n: usize) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let m = DMatrix::from_fn(n, vectors.len(), |r, c| vectors[c][r]);
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > 1e-8 * smax).count()
}

/// Ranks of the accumulated bracket spans at `point`, brackets taken with
/// V₀, …, V_d. Derivatives are exact; depth is limited by the number of
/// nilpotent generators.
pub fn hormander_rank<V: VectorFieldSystem>(vf: &V, point: &[f64], max_depth: usize) -> Result<HormanderReport> {
    let (n, d) = (vf.state_dim(), vf.noise_dim());
    if point.len() != n {
        return invalid(format!("point has length {}, expected {n}", point.len()));
    }
    if max_depth > HYPER_GENERATORS {
        return Err(Error::Capability(format!(
            "brackets deeper than {HYPER_GENERATORS} are not available"
        )));
    }
    if let Some(order) = vf.max_derivative_order() {
        if order < max_depth {
            return Err(Error::Capability(format!(
                "depth {max_depth} brackets need derivatives of order {max_depth}, fields provide {order}"
            )));
        }
    }
    let y: Vec<Hyper> = point.iter().map(|&v| Hyper::constant(v)).collect();
    let mut words: Vec<Vec<usize>> = (1..=d).map(|i| vec![i]).collect();
    let mut span = Vec::new();
    let mut ranks = Vec::with_capacity(max_depth + 1);
    for depth in 0..=max_depth {
        if depth > 0 {
            words = words
                .iter()
                .flat_map(|w| {
                    (0..=d).map(move |i| {
                        let mut nw = vec![i];
                        nw.extend_from_slice(w);
                        nw
                    })
                })
                .collect();
        }
        for w in &words {
            let v: Vec<f64> = bracket(vf, w, &y, 0).iter().map(|h| h.re()).collect();
            span.push(v);
        }
        ranks.push(numerical_rank(&span, n));
    }
    Ok(HormanderReport {
        total_rank: *ranks.last().expect("depth 0 always present"),
        ranks,
        state_dim: n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonTail {
    pub epsilon: f64,
    pub samples: usize,
    /// λ_min quantiles at 1%, 10%, 50%, 90%, 99%.
    pub quantiles: [f64; 5],
    /// Slope of log P(λ_min < ξ) against log ξ over the lower decile; absent
    /// when the decile is degenerate.
    pub lower_tail_slope: Option<f64>,
    pub mean_inverse: f64,
}

impl EpsilonTail {
    pub fn median(&self) -> f64 {
        self.quantiles[2]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub per_epsilon: Vec<EpsilonTail>,
    /// Slope of log E[λ_min⁻¹] against log(1/ε); needs two or more ε.
    pub mu_hat: Option<f64>,
}

pub const MIN_TAIL_SAMPLES: usize = 500;

pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub(crate) fn ls_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Empirical distribution of λ_min per ε. Reported, never asserted.
pub fn eigen_tail(samples: &[Vec<CovMatrix>], epsilons: &[f64]) -> Result<TailReport> {
    if samples.len() != epsilons.len() {
        return invalid("one sample list per ε is required");
    }
    let mut per = Vec::new();
    for (list, &eps) in samples.iter().zip(epsilons) {
        if list.len() < MIN_TAIL_SAMPLES {
            return invalid(format!(
                "{} samples at ε = {eps}; at least {MIN_TAIL_SAMPLES} are needed",
                list.len()
            ));
        }
        let mut lam: Vec<f64> = list.iter().map(|c| c.min_eigenvalue()).collect();
        lam.sort_by(f64::total_cmp);
        let total = lam.len();
        let quantiles = [0.01, 0.1, 0.5, 0.9, 0.99].map(|q| quantile(&lam, q));
        let decile = total / 10;
        let (mut lx, mut ly) = (Vec::new(), Vec::new());
        for (i, v) in lam[..decile].iter().enumerate() {
            if *v > 0.0 {
                lx.push(v.ln());
                ly.push(((i + 1) as f64 / total as f64).ln());
            }
        }
        let lower_tail_slope = ls_slope(&lx, &ly).filter(|s| s.is_finite());
        let mean_inverse = lam.iter().map(|v| 1.0 / v.max(f64::MIN_POSITIVE)).sum::<f64>() / total as f64;
        per.push(EpsilonTail {
            epsilon: eps,
            samples: total,
            quantiles,
            lower_tail_slope,
            mean_inverse,
        });
    }
    let x: Vec<f64> = per.iter().map(|p| (1.0 / p.epsilon).ln()).collect();
    let y: Vec<f64> = per.iter().map(|p| p.mean_inverse.ln()).collect();
    Ok(TailReport {
        per_epsilon: per,
        mu_hat: ls_slope(&x, &y),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fgauss::{FbmSpec, Hurst};
    use crate::fields::PolynomialFields;
    use crate::metrics::GridPath;
    use crate::rde::{solve_rde, solve_skeleton, skeleton_gradient};
    use crate::roughlift::lift_grid_path;
    use crate::fgauss::CMElement;

    fn spec(h: &str, d: usize, m: usize) -> FbmSpec {
        FbmSpec::new(Hurst::parse(h).unwrap(), d, m).unwrap()
    }

    #[test]
    fn constant_rows_give_terminal_variance() {
        for h in ["1/2", "2/5", "3/10"] {
            let sp = spec(h, 1, 32);
            let a = vec![DMatrix::from_element(1, 1, 1.0); 32];
            let q = malliavin_q(&a, &IncrementGram::new(&sp)).unwrap();
            assert!((q.get(0, 0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn heisenberg_q_at_kernel_minimiser() {
        // γ = (1,0)R(1,·) = (t,0): transported rows give A = (1,0 | 0,1 | 0,2−4t).
        let sp = spec("1/2", 2, 128);
        let vf = PolynomialFields::heisenberg();
        let g = CMElement::kernel(sp, 1.0, &[1.0, 0.0]).unwrap();
        let sk = solve_skeleton(&vf, &[0.0; 3], &g).unwrap();
        let q = malliavin_q(&skeleton_gradient(&vf, &sk).unwrap(), &IncrementGram::new(&sp)).unwrap();
        assert!((q.get(0, 0) - 1.0).abs() < 1e-3 && (q.get(1, 1) - 1.0).abs() < 1e-3);
        assert!(q.get(0, 1).abs() < 1e-3 && q.get(0, 2).abs() < 1e-3);
        assert!(q.get(1, 2).abs() < 1e-2);
        assert!((q.get(2, 2) - 4.0 / 3.0).abs() < 1e-2);
        assert!(q.symmetry_defect() < 1e-12 && q.min_eigenvalue() > 0.0);
    }

    #[test]
    fn reduced_cov_trivial_and_identity() {
        let vf = PolynomialFields::bridge1d();
        let x = lift_grid_path(&GridPath::zeros(1, 16), 2).unwrap().pair_with_time(0.0);
        let res = solve_rde(&vf, &[0.0], &x).unwrap();
        let c = reduced_cov_c(&vf, &res, 1.0).unwrap();
        assert!((c.get(0, 0) - 1.0).abs() < 1e-14);

        let vf = PolynomialFields::heisenberg().with_drift(2, 0.5, &[1, 1]).unwrap();
        let w = GridPath::from_fn(2, 64, |t| vec![(5.0 * t).sin(), t * t - 0.3 * t]);
        let res = solve_rde(&vf, &[0.2, 0.1, 0.0], &lift_grid_path(&w, 2).unwrap().pair_with_time(0.25)).unwrap();
        let c = reduced_cov_c(&vf, &res, 0.5).unwrap();
        for v in [[1.0, 0.0, 0.0], [0.3, -0.7, 1.1], [0.0, 0.0, 1.0]] {
            let lhs: f64 = (0..3).map(|k| (0..3).map(|l| v[k] * c.get(k, l) * v[l]).sum::<f64>()).sum();
            let rhs = reduced_quadratic_form(&vf, &res, 0.5, &v).unwrap();
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn hormander_examples() {
        let r = hormander_rank(&PolynomialFields::heisenberg(), &[0.0; 3], 1).unwrap();
        assert_eq!(r.ranks, vec![2, 3]);
        assert!(r.satisfied());
        let r = hormander_rank(&PolynomialFields::elliptic(4), &[0.3; 4], 0).unwrap();
        assert_eq!(r.ranks, vec![4]);
        let r = hormander_rank(&PolynomialFields::new(2, 2), &[1.0, 1.0], 2).unwrap();
        assert_eq!(r.total_rank, 0);
        assert!(matches!(
            hormander_rank(&PolynomialFields::heisenberg(), &[0.0; 3], 5),
            Err(Error::Capability(_))
        ));
    }

    // On ℝ² with V₁ = ∂₁ and V₂ = y₁ᵏ∂₂ the first k-fold bracket
    // ad(V₁)ᵏV₂ = k!∂₂ is what restores full rank at the origin.
    #[test]
    fn deep_brackets_need_depth_k() {
        for k in 1..=4u32 {
            let mut vf = PolynomialFields::new(2, 2);
            vf.add_term(1, 0, 1.0, &[]).unwrap();
            vf.add_term(2, 1, 1.0, &[k]).unwrap();
            let r = hormander_rank(&vf, &[0.0, 0.0], k as usize).unwrap();
            let mut expect = vec![1; k as usize];
            expect.push(2);
            assert_eq!(r.ranks, expect, "k = {k}");
        }
    }

    #[test]
    fn bracket_matches_hand_formula() {
        // [V₁,V₂] for Heisenberg is −4∂₃ everywhere.
        let vf = PolynomialFields::heisenberg();
        let y: Vec<Hyper> = [0.3, -1.2, 2.0].iter().map(|&v| Hyper::constant(v)).collect();
        let b = bracket(&vf, &[1, 2], &y, 0);
        let b: Vec<f64> = b.iter().map(|h| h.re()).collect();
        assert_eq!(b, vec![0.0, 0.0, -4.0]);
    }

    #[test]
    fn eigen_tail_of_identity_samples() {
        let id = CovMatrix::from_matrix(&DMatrix::identity(2, 2), CovKind::Reduced);
        let report = eigen_tail(&[vec![id.clone(); 600]], &[0.1]).unwrap();
        let t = &report.per_epsilon[0];
        assert_eq!(t.quantiles, [1.0; 5]);
        assert_eq!(t.mean_inverse, 1.0);
        assert!(t.lower_tail_slope.is_none());
        assert!(eigen_tail(&[vec![id; 10]], &[0.1]).is_err());
    }
}
