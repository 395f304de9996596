//! Energy minimisation min ½‖γ‖²_𝓗 subject to φ⁰₁(γ) = a′, with the Lagrange
//! multiplier ν̄ and numerical checks of the standing assumptions.
//!
//! γ is parametrised as Σ_k a_k R(t_k,·) with knots at every grid time, so
//! the energy is ½aᵀGa and the grid values are g = Ga. The endpoint of the
//! discrete skeleton depends on g only through its increments, which makes
//! the constraint Jacobian in g a difference of per-cell gradients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fgauss::{kernel_gram, paley_wiener, CMElement, FbmSampler, FbmSpec, IncrementGram};
use crate::fields::VectorFieldSystem;
use crate::malliavin::{malliavin_q, CovMatrix};
use crate::mc::{ordered_map, sample_rng};
use crate::rde::{pair_gradient, skeleton_gradient, solve_skeleton};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizerOptions {
    pub starts: usize,
    pub max_outer: usize,
    pub seed: u64,
    /// Target for |φ⁰₁(γ) − a′|.
    pub tol: f64,
    /// Random directions for the constrained Hessian check; 0 skips it.
    pub hessian_dirs: usize,
    /// Standard deviation of the random initial H-norm per component.
    pub init_scale: f64,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            max_outer: 200,
            seed: 0,
            tol: 1e-10,
            hessian_dirs: 4,
            init_scale: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinimizerResult {
    pub gamma_bar: CMElement,
    pub energy: f64,
    pub nu_bar: Vec<f64>,
    pub q_at_min: CovMatrix,
    pub constraint_residual: f64,
    /// ‖γ̄ − Σ_k ν̄_k Riesz(Dφ⁰₁)^k‖_𝓗.
    pub kkt_residual: f64,
    pub hessian_min_eig: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Energy after every outer iteration of the selected start.
    pub energy_history: Vec<f64>,
    /// Constraint residual after every outer iteration of the selected start.
    pub residual_history: Vec<f64>,
    /// Final energy per start (None for starts that did not converge).
    pub start_energies: Vec<Option<f64>>,
    /// Heuristic non-uniqueness flag: two converged starts reach the same
    /// energy (within 1e-6) at paths more than 1e-3 apart.
    pub multiple_minimisers: bool,
    pub warnings: Vec<String>,
    pub start: Vec<f64>,
    pub target: Vec<f64>,
}

struct Problem<'a, V> {
    vf: &'a V,
    a0: &'a [f64],
    target: &'a [f64],
    spec: FbmSpec,
    gram: DMatrix<f64>,
}

/// Constraint value, Jacobian in grid values and energy at one iterate.
struct Eval {
    c: DVector<f64>,
    jg: DMatrix<f64>,
    g: DVector<f64>,
    energy: f64,
    cells: Vec<DMatrix<f64>>,
}

impl<'a, V: VectorFieldSystem> Problem<'a, V> {
    fn m(&self) -> usize {
        self.spec.m
    }

    fn element(&self, a: &DVector<f64>) -> CMElement {
        let mut gamma = CMElement::zero(self.spec);
        let m = self.m();
        for (i, row) in gamma.coeffs_mut().iter_mut().enumerate() {
            row.copy_from_slice(&a.as_slice()[i * m..(i + 1) * m]);
        }
        gamma
    }

    fn grid_values(&self, a: &DVector<f64>) -> DVector<f64> {
        let (m, d) = (self.m(), self.spec.dim);
        let mut g = DVector::zeros(d * m);
        for i in 0..d {
            let ai = a.rows(i * m, m);
            g.rows_mut(i * m, m).copy_from(&(&self.gram * ai));
        }
        g
    }

    fn energy(&self, a: &DVector<f64>) -> f64 {
        0.5 * a.dot(&self.grid_values(a))
    }

    fn constraint(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        let sk = solve_skeleton(self.vf, self.a0, &self.element(a))?;
        let end = sk.endpoint();
        Ok(DVector::from_fn(end.len(), |k, _| end[k] - self.target[k]))
    }

    fn eval(&self, a: &DVector<f64>) -> Result<Eval> {
        let (m, d, n) = (self.m(), self.spec.dim, self.vf.state_dim());
        let sk = solve_skeleton(self.vf, self.a0, &self.element(a))?;
        let cells = skeleton_gradient(self.vf, &sk)?;
        let mut jg = DMatrix::zeros(n, d * m);
        for i in 0..d {
            for j in 1..=m {
                for k in 0..n {
                    let next = if j < m { cells[j][(k, i)] } else { 0.0 };
                    jg[(k, i * m + j - 1)] = cells[j - 1][(k, i)] - next;
                }
            }
        }
        let end = sk.endpoint();
        let g = self.grid_values(a);
        Ok(Eval {
            c: DVector::from_fn(n, |k, _| end[k] - self.target[k]),
            energy: 0.5 * a.dot(&g),
            jg,
            g,
            cells,
        })
    }

    /// Q = J_g G J_gᵀ with G block-diagonal over components.
    fn q(&self, jg: &DMatrix<f64>) -> DMatrix<f64> {
        let (m, d) = (self.m(), self.spec.dim);
        let n = jg.nrows();
        let mut q = DMatrix::zeros(n, n);
        for i in 0..d {
            let b = jg.columns(i * m, m);
            q += b * &self.gram * b.transpose();
        }
        (&q + q.transpose()) * 0.5
    }
}

fn solve_spd(q: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    q.clone().cholesky().map(|c| c.solve(rhs)).or_else(|| q.clone().lu().solve(rhs))
}

fn pseudo_solve(q: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let smax = q.norm();
    q.clone()
        .svd(true, true)
        .solve(rhs, 1e-12 * smax.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DVector::zeros(rhs.len()))
}

struct StartOutcome {
    a: DVector<f64>,
    iterations: usize,
    energy_history: Vec<f64>,
    residual_history: Vec<f64>,
    converged: bool,
    residual: f64,
}

/// Residual below which iterates are kept on the constraint set.
const FEASIBLE_SWITCH: f64 = 1e-6;

/// Newton projection a ← a − J_gᵀQ⁻¹c until the residual stops shrinking.
fn restore<V: VectorFieldSystem>(p: &Problem<V>, mut a: DVector<f64>, mut ev: Eval, tol: f64) -> Result<(DVector<f64>, Eval)> {
    for _ in 0..8 {
        let c = ev.c.norm();
        if c <= 1e-3 * tol {
            break;
        }
        let q = p.q(&ev.jg);
        let Some(corr) = q.clone().cholesky().map(|ch| ch.solve(&ev.c)) else {
            break;
        };
        let trial = &a - ev.jg.transpose() * corr;
        let next = match p.eval(&trial) {
            Ok(e) => e,
            Err(Error::BlowUp { .. }) => break,
            Err(e) => return Err(e),
        };
        if next.c.norm() >= c {
            break;
        }
        a = trial;
        ev = next;
    }
    Ok((a, ev))
}

fn run_start<V: VectorFieldSystem>(p: &Problem<V>, mut a: DVector<f64>, opts: &MinimizerOptions) -> Result<StartOutcome> {
    let n = p.vf.state_dim();
    let mut nu = DVector::zeros(n);
    let mut rho = 10.0;
    let mut ev = p.eval(&a)?;
    let mut energy_history = Vec::new();
    let mut residual_history = Vec::new();
    let mut feasible = false;
    let merit = |e: f64, c: &DVector<f64>, nu: &DVector<f64>, rho: f64| e - nu.dot(c) + 0.5 * rho * c.norm_squared();
    for it in 1..=opts.max_outer {
        let q = p.q(&ev.jg);
        let lin = &ev.jg * &ev.g;
        let (next, next_ev) = if feasible {
            // Projected Gauss–Newton step onto the tangent plane, then back
            // onto the constraint set; halve towards a until energy drops.
            let Some(mult) = q.clone().cholesky().map(|ch| ch.solve(&lin)) else {
                feasible = false;
                continue;
            };
            let dir = ev.jg.transpose() * mult - &a;
            let mut step = 1.0;
            let mut best = None;
            for _ in 0..30 {
                let trial = &a + &dir * step;
                if let Ok(tev) = p.eval(&trial) {
                    let (ta, tev) = restore(p, trial, tev, opts.tol)?;
                    if tev.energy <= ev.energy || step < 1e-6 {
                        best = Some((ta, tev));
                        break;
                    }
                }
                step *= 0.5;
            }
            match best {
                Some(b) => b,
                None => (a.clone(), p.eval(&a)?),
            }
        } else {
            let rhs = &nu - (&ev.c - &lin) * rho;
            let sys = DMatrix::identity(n, n) + &q * rho;
            let mu = solve_spd(&sys, &rhs).ok_or_else(|| Error::NumericalDegeneracy("I + ρQ is singular".into()))?;
            let dir = ev.jg.transpose() * mu - &a;
            let m0 = merit(ev.energy, &ev.c, &nu, rho);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let trial = &a + &dir * step;
                match p.constraint(&trial) {
                    Ok(c) => {
                        let e = p.energy(&trial);
                        if merit(e, &c, &nu, rho) <= m0 + 1e-14 * m0.abs() || step < 1e-6 {
                            accepted = Some(trial);
                            break;
                        }
                    }
                    Err(Error::BlowUp { .. }) => {}
                    Err(e) => return Err(e),
                }
                step *= 0.5;
            }
            let Some(trial) = accepted else {
                return Err(Error::NonConvergence {
                    iterations: it,
                    residual: ev.c.norm(),
                });
            };
            let tev = p.eval(&trial)?;
            let c_old = ev.c.norm();
            nu -= &tev.c * rho;
            if tev.c.norm() > 0.25 * c_old && tev.c.norm() > opts.tol {
                rho = (rho * 10.0).min(1e8);
            }
            if tev.c.norm() <= FEASIBLE_SWITCH {
                feasible = true;
                restore(p, trial, tev, opts.tol)?
            } else {
                (trial, tev)
            }
        };
        let moved = (&next - &a).norm();
        a = next;
        ev = next_ev;
        let c_new = ev.c.norm();
        energy_history.push(ev.energy);
        residual_history.push(c_new);
        if c_new <= opts.tol && moved <= 1e-9 * (1.0 + a.norm()) {
            return Ok(StartOutcome {
                a,
                iterations: it,
                energy_history,
                residual_history,
                converged: true,
                residual: c_new,
            });
        }
    }
    Ok(StartOutcome {
        residual: ev.c.norm(),
        a,
        iterations: opts.max_outer,
        energy_history,
        residual_history,
        converged: false,
    })
}

/// Multi-start augmented-Lagrangian minimisation with Gauss–Newton steps
/// a ← J_gᵀ(I + ρQ)⁻¹(ν − ρ(c − J_g g)) and a merit line search. Near the
/// constraint set the iterates are projected back onto it after every step,
/// which keeps the energy sequence non-increasing from then on.
pub fn minimize_energy<V: VectorFieldSystem>(
    vf: &V,
    a: &[f64],
    a_prime: &[f64],
    spec: FbmSpec,
    opts: &MinimizerOptions,
) -> Result<MinimizerResult> {
    let n = vf.state_dim();
    if a.len() != n || a_prime.len() != n {
        return invalid(format!("start and target must have length {n}"));
    }
    if spec.dim != vf.noise_dim() {
        return invalid("fBm dimension differs from the number of driving fields");
    }
    if a.iter().zip(a_prime).all(|(x, y)| x == y) {
        return invalid("start and target coincide");
    }
    if opts.starts == 0 {
        return invalid("at least one start is required");
    }
    let knots: Vec<f64> = (1..=spec.m).map(|k| spec.time(k)).collect();
    let problem = Problem {
        vf,
        a0: a,
        target: a_prime,
        spec,
        gram: kernel_gram(&knots, spec.h()),
    };
    let dm = spec.dim * spec.m;
    let outcomes: Vec<Result<StartOutcome>> = ordered_map(opts.starts, |s| {
        let mut rng = sample_rng(opts.seed, s as u64);
        let scale = opts.init_scale / (spec.m as f64).sqrt();
        let init = DVector::from_fn(dm, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        run_start(&problem, init, opts)
    });
    let mut start_energies = Vec::with_capacity(opts.starts);
    let mut best: Option<(usize, f64)> = None;
    let mut last_err = None;
    for (s, o) in outcomes.iter().enumerate() {
        match o {
            Ok(o) if o.converged => {
                let e = problem.energy(&o.a);
                start_energies.push(Some(e));
                if best.is_none_or(|(_, be)| e < be) {
                    best = Some((s, e));
                }
            }
            Ok(o) => {
                start_energies.push(None);
                last_err = Some(Error::NonConvergence {
                    iterations: o.iterations,
                    residual: o.residual,
                });
            }
            Err(e) => {
                start_energies.push(None);
                last_err = Some(e.clone());
            }
        }
    }
    let Some((best_idx, energy)) = best else {
        return Err(last_err.unwrap_or(Error::NonConvergence {
            iterations: opts.max_outer,
            residual: f64::NAN,
        }));
    };
    let Ok(chosen) = &outcomes[best_idx] else { unreachable!("best start converged") };
    let mut warnings = Vec::new();

    // Two distinct paths with the same energy falsify uniqueness.
    let best_path = problem.element(&chosen.a).render(spec.m);
    let mut multiple = false;
    for (s, o) in outcomes.iter().enumerate() {
        if let (Ok(o), true) = (o, s != best_idx) {
            if o.converged && (problem.energy(&o.a) - energy).abs() <= 1e-6 {
                let other = problem.element(&o.a).render(spec.m);
                let gap = other.add(&best_path.scale(-1.0))?.sup_norm();
                if gap > 1e-3 {
                    multiple = true;
                }
            }
        }
    }

    let ev = problem.eval(&chosen.a)?;
    let q = problem.q(&ev.jg);
    let rhs = &ev.jg * &ev.g;
    let nu = match q.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            warnings.push("constraint Jacobian is rank deficient at the minimiser; Q is singular".into());
            pseudo_solve(&q, &rhs)
        }
    };
    let delta = &chosen.a - ev.jg.transpose() * &nu;
    let kkt_residual = delta.dot(&problem.grid_values(&delta)).max(0.0).sqrt();
    let gamma_bar = problem.element(&chosen.a);
    let q_at_min = malliavin_q(&ev.cells, &IncrementGram::new(&spec))?;
    if q_at_min.min_eigenvalue() <= 1e-10 * q_at_min.eigenvalues().last().copied().unwrap_or(1.0).abs() {
        warnings.push("Q(γ̄) is numerically singular".into());
    }
    let mut result = MinimizerResult {
        gamma_bar,
        energy,
        nu_bar: nu.iter().copied().collect(),
        q_at_min,
        constraint_residual: ev.c.norm(),
        kkt_residual,
        hessian_min_eig: None,
        converged: true,
        iterations: chosen.iterations,
        energy_history: chosen.energy_history.clone(),
        residual_history: chosen.residual_history.clone(),
        start_energies,
        multiple_minimisers: multiple,
        warnings,
        start: a.to_vec(),
        target: a_prime.to_vec(),
    };
    if opts.hessian_dirs > 0 {
        result.hessian_min_eig = Some(hessian_check(vf, &result, opts.hessian_dirs, opts.seed)?.min);
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    pub second_differences: Vec<f64>,
    pub min: f64,
}

/// Second central difference (E(s₀) + E(−s₀) − 2E(0))/s₀² of the energy along
/// the curve through γ̄ in direction h, retracted onto the constraint set by
/// one Gauss–Newton correction. `h` holds coefficients (component-major) and
/// is first projected onto the null space of the constraint Jacobian.
pub fn constrained_second_difference<V: VectorFieldSystem>(
    vf: &V,
    res: &MinimizerResult,
    h: &[f64],
    s0: f64,
) -> Result<f64> {
    let spec = res.gamma_bar.spec;
    let knots: Vec<f64> = (1..=spec.m).map(|k| spec.time(k)).collect();
    let p = Problem {
        vf,
        a0: &res.start,
        target: &res.target,
        spec,
        gram: kernel_gram(&knots, spec.h()),
    };
    let dm = spec.dim * spec.m;
    if h.len() != dm {
        return invalid(format!("direction needs {dm} coefficients"));
    }
    let a: DVector<f64> = DVector::from_iterator(dm, res.gamma_bar.coeffs().iter().flatten().copied());
    let ev = p.eval(&a)?;
    let q = p.q(&ev.jg);
    let qinv = |v: &DVector<f64>| solve_spd(&q, v).unwrap_or_else(|| pseudo_solve(&q, v));
    let h = DVector::from_column_slice(h);
    let hg = p.grid_values(&h);
    let h = &h - ev.jg.transpose() * qinv(&(&ev.jg * hg));
    let e0 = p.energy(&a);
    let mut sum = -2.0 * e0;
    for s in [s0, -s0] {
        let trial = &a + &h * s;
        let c = p.constraint(&trial)?;
        let corrected = &trial - ev.jg.transpose() * qinv(&c);
        let c2 = p.constraint(&corrected)?.norm();
        if !(c2 <= 1e-5) {
            return Err(Error::Diagnostic(format!("retraction left a constraint residual of {c2:e}")));
        }
        sum += p.energy(&corrected);
    }
    Ok(sum / (s0 * s0))
}

/// Minimum constrained second difference over random unit directions.
pub fn hessian_check<V: VectorFieldSystem>(
    vf: &V,
    res: &MinimizerResult,
    n_dirs: usize,
    seed: u64,
) -> Result<HessianReport> {
    let spec = res.gamma_bar.spec;
    let knots: Vec<f64> = (1..=spec.m).map(|k| spec.time(k)).collect();
    let gram = kernel_gram(&knots, spec.h());
    let dm = spec.dim * spec.m;
    let diffs = ordered_map(n_dirs, |k| -> Result<f64> {
        let mut rng = sample_rng(seed ^ 0x4e55_1a11, k as u64);
        let mut h: Vec<f64> = (0..dm).map(|_| rng.sample(StandardNormal)).collect();
        let mut norm_sq = 0.0;
        for i in 0..spec.dim {
            let hi = DVector::from_column_slice(&h[i * spec.m..(i + 1) * spec.m]);
            norm_sq += hi.dot(&(&gram * &hi));
        }
        let scale = 1.0 / norm_sq.sqrt();
        h.iter_mut().for_each(|v| *v *= scale);
        constrained_second_difference(vf, res, &h, 1e-2)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let min = diffs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(HessianReport {
        second_differences: diffs,
        min,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierReport {
    pub samples: usize,
    pub max_abs: f64,
    pub rms: f64,
    pub gamma_norm: f64,
}

/// Residuals of ⟨γ̄, w⟩ = ⟨ν̄, φ¹₁(w)⟩ over fBm samples w, with φ¹₁ the linear
/// response Σ_p A_p Δw_p of the depth-2 skeleton scheme.
pub fn multiplier_identity_check<V: VectorFieldSystem>(
    vf: &V,
    res: &MinimizerResult,
    n_samples: usize,
    seed: u64,
) -> Result<MultiplierReport> {
    if n_samples == 0 {
        return invalid("at least one sample is required");
    }
    let spec = res.gamma_bar.spec;
    let sk = solve_skeleton(vf, &res.start, &res.gamma_bar)?;
    let grad = skeleton_gradient(vf, &sk)?;
    let sampler = FbmSampler::new(&spec)?;
    let residuals = ordered_map(n_samples, |k| -> Result<f64> {
        let w = sampler.path(seed, k as u64);
        let lhs = paley_wiener(&res.gamma_bar, &w)?;
        let phi1 = pair_gradient(&grad, &w);
        let rhs: f64 = res.nu_bar.iter().zip(&phi1).map(|(a, b)| a * b).sum();
        Ok(lhs - rhs)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let max_abs = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / n_samples as f64).sqrt();
    Ok(MultiplierReport {
        samples: n_samples,
        max_abs,
        rms,
        gamma_norm: res.gamma_bar.norm_sq().sqrt(),
    })
}
