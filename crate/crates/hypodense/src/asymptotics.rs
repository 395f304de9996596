//! Fractional index sets, Monte Carlo density estimators and the fit of the
//! small-time expansion p_t ~ exp(−‖γ̄‖²/2t^{2H}) t^{−nH}(α₀ + …).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fgauss::{paley_wiener, FbmSampler, FbmSpec, Hurst};
use crate::fields::VectorFieldSystem;
use crate::mc::{batch_means, ordered_map};
use crate::minimizer::MinimizerResult;
use crate::rde::{expansion_endpoint, pair_gradient, skeleton_gradient, solve_rde_with, solve_scaled_shifted, solve_skeleton, SolveOptions};
use crate::roughlift::lift_grid_path;

const VALUE_TOL: f64 = 1e-9;

/// u + v/H, kept as an integer pair so that rational H compares exactly.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Exponent {
    pub u: i64,
    pub v: i64,
    pub hurst: Hurst,
}

impl Exponent {
    pub fn new(u: i64, v: i64, hurst: Hurst) -> Self {
        Self { u, v, hurst }
    }

    pub fn zero(hurst: Hurst) -> Self {
        Self::new(0, 0, hurst)
    }

    pub fn value(&self) -> f64 {
        self.u as f64 + self.v as f64 * self.hurst.inv()
    }

    pub fn shifted(&self, du: i64, dv: i64) -> Self {
        Self::new(self.u + du, self.v + dv, self.hurst)
    }

    pub fn plus(&self, other: &Self) -> Self {
        self.shifted(other.u, other.v)
    }

    fn cmp_value(&self, other: &Self) -> Ordering {
        match self.hurst.exact() {
            // H = p/q: compare u·p + v·q.
            Some((p, q)) if other.hurst.exact() == Some((p, q)) => {
                let (p, q) = (p as i128, q as i128);
                let a = self.u as i128 * p + self.v as i128 * q;
                let b = other.u as i128 * p + other.v as i128 * q;
                a.cmp(&b)
            }
            _ => {
                let diff = self.value() - other.value();
                if diff.abs() <= VALUE_TOL {
                    Ordering::Equal
                } else if diff < 0.0 {
                    Ordering::Less
                } else {
                    Ordering::Greater
                }
            }
        }
    }
}

impl PartialEq for Exponent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_value(other) == Ordering::Equal
    }
}

impl PartialOrd for Exponent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp_value(other))
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hurst.exact() {
            Some((p, q)) => {
                let (num, den) = (self.u * p as i64 + self.v * q as i64, p as i64);
                let g = gcd(num.unsigned_abs(), den as u64).max(1) as i64;
                if den / g == 1 {
                    write!(f, "{}", num / g)
                } else {
                    write!(f, "{}/{}", num / g, den / g)
                }
            }
            None => write!(f, "{}", self.value()),
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

/// The six index sets of the expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexSet {
    L1,
    L2,
    L2Prime,
    L3,
    L3Prime,
    L4,
}

impl IndexSet {
    pub const ALL: [IndexSet; 6] = [Self::L1, Self::L2, Self::L2Prime, Self::L3, Self::L3Prime, Self::L4];

    pub fn name(&self) -> &'static str {
        match self {
            Self::L1 => "L1",
            Self::L2 => "L2",
            Self::L2Prime => "L2'",
            Self::L3 => "L3",
            Self::L3Prime => "L3'",
            Self::L4 => "L4",
        }
    }
}

impl FromStr for IndexSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace("lambda", "l").replace("prime", "'");
        Ok(match t.as_str() {
            "l1" | "1" => Self::L1,
            "l2" | "2" => Self::L2,
            "l2'" | "2'" => Self::L2Prime,
            "l3" | "3" => Self::L3,
            "l3'" | "3'" => Self::L3Prime,
            "l4" | "4" => Self::L4,
            _ => return invalid(format!("unknown index set `{s}`")),
        })
    }
}

/// Exponents deduplicated under `Exponent::eq`, keyed by value so that a
/// lookup only compares near neighbours. Closures at H close to 1/2 reach
/// tens of thousands of elements.
#[derive(Default)]
struct ExponentSet {
    by_value: BTreeMap<u64, Vec<Exponent>>,
}

impl ExponentSet {
    // Non-negative floats order like their bit patterns.
    fn key(v: f64) -> u64 {
        if v <= 0.0 {
            0
        } else {
            v.to_bits()
        }
    }

    fn insert(&mut self, e: Exponent) -> bool {
        let v = e.value();
        let range = Self::key(v - 2.0 * VALUE_TOL)..=Self::key(v + 2.0 * VALUE_TOL);
        if self.by_value.range(range).flat_map(|(_, b)| b).any(|x| *x == e) {
            return false;
        }
        self.by_value.entry(Self::key(v)).or_default().push(e);
        true
    }

    fn into_sorted(self) -> Vec<Exponent> {
        sorted(self.by_value.into_values().flatten().collect())
    }
}

fn sorted(mut v: Vec<Exponent>) -> Vec<Exponent> {
    v.sort_by(|a, b| a.cmp_value(b).then((a.v, a.u).cmp(&(b.v, b.u))));
    v
}

fn lambda1(h: Hurst, cutoff: f64) -> Vec<Exponent> {
    let mut out = ExponentSet::default();
    let mut v = 0;
    while Exponent::new(0, v, h).value() <= cutoff + VALUE_TOL {
        let mut u = 0;
        while Exponent::new(u, v, h).value() <= cutoff + VALUE_TOL {
            out.insert(Exponent::new(u, v, h));
            u += 1;
        }
        v += 1;
    }
    out.into_sorted()
}

/// {κ − shift : κ ∈ Λ₁ beyond its first `skip` elements}, truncated.
fn shifted_lambda1(h: Hurst, cutoff: f64, shift: i64, skip: usize) -> Vec<Exponent> {
    let base = lambda1(h, cutoff + shift as f64);
    sorted(
        base.into_iter()
            .skip(skip)
            .map(|k| k.shifted(-shift, 0))
            .filter(|e| e.value() <= cutoff + VALUE_TOL)
            .collect(),
    )
}

/// All finite sums a₁+…+a_m (m ≥ 1) of generators, up to the cutoff.
fn additive_closure(gens: &[Exponent], cutoff: f64) -> Vec<Exponent> {
    let mut out = ExponentSet::default();
    let mut frontier: Vec<Exponent> = Vec::new();
    for g in gens {
        if out.insert(*g) {
            frontier.push(*g);
        }
    }
    let positive: Vec<Exponent> = gens.iter().copied().filter(|g| g.value() > VALUE_TOL).collect();
    while let Some(e) = frontier.pop() {
        for g in &positive {
            let s = e.plus(g);
            if s.value() <= cutoff + VALUE_TOL && out.insert(s) {
                frontier.push(s);
            }
        }
    }
    out.into_sorted()
}

/// Sorted elements of the requested index set not exceeding `cutoff`.
pub fn enumerate_exponents(hurst: Hurst, which: IndexSet, cutoff: f64) -> Vec<Exponent> {
    match which {
        IndexSet::L1 => lambda1(hurst, cutoff),
        IndexSet::L2 => shifted_lambda1(hurst, cutoff, 1, 1),
        IndexSet::L2Prime => shifted_lambda1(hurst, cutoff, 2, 2),
        IndexSet::L3 => additive_closure(&shifted_lambda1(hurst, cutoff, 1, 1), cutoff),
        IndexSet::L3Prime => additive_closure(&shifted_lambda1(hurst, cutoff, 2, 2), cutoff),
        IndexSet::L4 => {
            let l3 = enumerate_exponents(hurst, IndexSet::L3, cutoff);
            let l3p = enumerate_exponents(hurst, IndexSet::L3Prime, cutoff);
            let mut out = ExponentSet::default();
            for a in &l3 {
                for b in &l3p {
                    let s = a.plus(b);
                    if s.value() <= cutoff + VALUE_TOL {
                        out.insert(s);
                    }
                }
            }
            out.into_sorted()
        }
    }
}

/// Ordered compositions of `target` into elements of `parts` (all positive),
/// returned as index sequences into `parts`.
pub fn compositions(parts: &[Exponent], target: &Exponent) -> Vec<Vec<usize>> {
    fn go(parts: &[Exponent], rest: Exponent, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.value().abs() <= VALUE_TOL && rest == Exponent::zero(rest.hurst) {
            out.push(prefix.clone());
            return;
        }
        for (i, p) in parts.iter().enumerate() {
            let r = rest.shifted(-p.u, -p.v);
            if r.value() >= -VALUE_TOL {
                prefix.push(i);
                go(parts, r, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    if parts.iter().any(|p| p.value() <= VALUE_TOL) {
        return out;
    }
    go(parts, *target, &mut Vec::new(), &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensityMethod {
    /// Kernel density of y^ε₁ at a′.
    Plain,
    /// Cameron–Martin shift to the minimiser γ̄.
    Shifted,
}

impl FromStr for DensityMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "plain" => Ok(Self::Plain),
            "shifted" => Ok(Self::Shifted),
            _ => invalid(format!("unknown density method `{s}`")),
        }
    }
}

/// Density p_t(a, a′) of the RDE started at `start`, evaluated at `target`.
#[derive(Clone, Debug)]
pub struct DensityProblem<'a, V> {
    pub label: String,
    pub vf: &'a V,
    pub start: Vec<f64>,
    pub target: Vec<f64>,
    pub spec: FbmSpec,
    /// Required by the shifted method; its grid must match `spec`.
    pub minimizer: Option<&'a MinimizerResult>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityOptions {
    pub method: DensityMethod,
    pub samples: usize,
    /// Common kernel bandwidth; per-coordinate Silverman-type rule if absent.
    pub bandwidth: Option<f64>,
    pub seed: u64,
    /// Shifted method: multiply by e^{⟨ν̄,u⟩/ε}, which equals one where the
    /// smoothed delta concentrates and cancels the leading fluctuation of
    /// e^{−⟨γ̄,w⟩/ε}.
    pub tilt: bool,
    /// Discard samples with sup|εw| above this radius.
    pub radius: Option<f64>,
    pub batches: usize,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            method: DensityMethod::Shifted,
            samples: 100_000,
            bandwidth: None,
            seed: 0,
            tilt: true,
            radius: None,
            batches: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub t: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
    /// Samples within two bandwidths of the target in every coordinate.
    pub hits: usize,
    pub bandwidths: Vec<f64>,
    /// Share of the estimate carried by samples with sup|εw| > 1.
    pub outer_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub model: String,
    pub method: DensityMethod,
    pub seed: u64,
    pub points: Vec<DensityPoint>,
}

impl DensityEstimate {
    pub fn ts(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.estimate).collect()
    }
}

fn silverman(u: &[Vec<f64>], n: usize) -> Vec<f64> {
    let count = u.len() as f64;
    let factor = count.powf(-1.0 / (n as f64 + 4.0));
    (0..n)
        .map(|j| {
            let mean = u.iter().map(|v| v[j]).sum::<f64>() / count;
            let var = u.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (count - 1.0).max(1.0);
            var.sqrt() * factor
        })
        .collect()
}

/// Product of normalised Gaussian kernels.
fn kernel(u: &[f64], b: &[f64]) -> f64 {
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    u.iter().zip(b).map(|(x, h)| (-0.5 * (x / h).powi(2)).exp() / (norm * h)).product()
}

fn kernel_hits(u: &[Vec<f64>], b: &[f64]) -> usize {
    u.iter().filter(|v| v.iter().zip(b).all(|(x, h)| x.abs() <= 2.0 * h)).count()
}

struct Draw {
    /// Rescaled deviation from the target.
    u: Vec<f64>,
    log_weight: f64,
    outer: bool,
    kept: bool,
}

/// One Monte Carlo point of the density at time t (ε = t^H).
pub fn estimate_density<V: VectorFieldSystem>(
    problem: &DensityProblem<V>,
    t: f64,
    opts: &DensityOptions,
) -> Result<DensityPoint> {
    let spec = problem.spec;
    let hurst = spec.hurst;
    let n = problem.vf.state_dim();
    if !(t > 0.0 && t <= 1.0) {
        return invalid(format!("t = {t} must lie in (0, 1]"));
    }
    if opts.samples < 2 * opts.batches.max(1) {
        return invalid("too few samples for the batch standard error");
    }
    if problem.start.len() != n || problem.target.len() != n {
        return invalid(format!("start and target must have length {n}"));
    }
    let eps = t.powf(hurst.value());
    let depth = hurst.depth().clamp(2, 3);
    let sampler = FbmSampler::new(&spec)?;
    let shift = match opts.method {
        DensityMethod::Plain => None,
        DensityMethod::Shifted => {
            let res = problem
                .minimizer
                .ok_or_else(|| Error::InvalidArgument("shifted estimator needs a minimiser".into()))?;
            if res.gamma_bar.spec.m != spec.m || res.gamma_bar.dim() != spec.dim {
                return invalid("minimiser grid differs from the sampling grid");
            }
            Some(res)
        }
    };
    let draws = ordered_map(opts.samples, |k| -> Result<Draw> {
        let w = sampler.path(opts.seed, k as u64);
        let sup = eps * w.sup_norm();
        let kept = opts.radius.is_none_or(|r| sup <= r);
        let x = lift_grid_path(&w, depth)?;
        let (y, log_weight) = match shift {
            None => {
                let driver = x.dilate(eps).pair_with_time(t);
                let r = solve_rde_with(problem.vf, &problem.start, driver.into(), SolveOptions { jacobians: false })?;
                (r.endpoint().to_vec(), 0.0)
            }
            Some(res) => {
                let r = solve_scaled_shifted(
                    problem.vf,
                    &problem.start,
                    &x,
                    &res.gamma_bar,
                    eps,
                    hurst,
                    SolveOptions { jacobians: false },
                )?;
                (r.endpoint().to_vec(), -paley_wiener(&res.gamma_bar, &w)? / eps)
            }
        };
        let scale = if shift.is_some() { eps } else { 1.0 };
        let u: Vec<f64> = y.iter().zip(&problem.target).map(|(a, b)| (a - b) / scale).collect();
        let tilt = match shift {
            Some(res) if opts.tilt => res.nu_bar.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / eps,
            _ => 0.0,
        };
        Ok(Draw {
            u,
            log_weight: log_weight + tilt,
            outer: sup > 1.0,
            kept,
        })
    })
    .into_iter()
    .collect::<Result<Vec<Draw>>>()?;

    let us: Vec<Vec<f64>> = draws.iter().map(|d| d.u.clone()).collect();
    let bandwidths = match opts.bandwidth {
        Some(b) if b > 0.0 => vec![b; n],
        Some(b) => return invalid(format!("bandwidth {b} must be positive")),
        None => silverman(&us, n),
    };
    if bandwidths.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::Starvation("samples have zero spread; set a bandwidth".into()));
    }
    let values: Vec<f64> = draws
        .iter()
        .map(|d| if d.kept { d.log_weight.exp() * kernel(&d.u, &bandwidths) } else { 0.0 })
        .collect();
    if values.iter().all(|v| *v < 1e-300) {
        return Err(Error::Starvation(format!(
            "all kernel weights vanish at t = {t}; use the shifted method or a larger bandwidth"
        )));
    }
    let bm = batch_means(&values, opts.batches);
    let prefactor = match shift {
        None => 1.0,
        Some(res) => eps.powi(-(n as i32)) * (-res.energy / (eps * eps)).exp(),
    };
    let total: f64 = values.iter().sum();
    let outer: f64 = values.iter().zip(&draws).filter(|(_, d)| d.outer).map(|(v, _)| v).sum();
    Ok(DensityPoint {
        t,
        estimate: prefactor * bm.mean,
        std_error: prefactor * bm.se,
        samples: opts.samples,
        hits: kernel_hits(&us, &bandwidths),
        bandwidths,
        outer_share: if total > 0.0 { outer / total } else { 0.0 },
    })
}

pub fn estimate_density_curve<V: VectorFieldSystem>(
    problem: &DensityProblem<V>,
    ts: &[f64],
    opts: &DensityOptions,
) -> Result<DensityEstimate> {
    let points = ts
        .iter()
        .map(|&t| estimate_density(problem, t, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(DensityEstimate {
        model: problem.label.clone(),
        method: opts.method,
        seed: opts.seed,
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsFit {
    /// Fitted ‖γ̄‖² from log p̂ = −r/2t^{2H} + β log t + c.
    pub rate_hat: f64,
    /// Slope of log[p̂ e^{‖γ̄‖²/2t^{2H}}] against log t; compare with −nH.
    pub prefactor_exp_hat: f64,
    /// Intercept of t^{nH}e^{‖γ̄‖²/2t^{2H}}p̂ against t^{λ₁H}.
    pub alpha0_hat: f64,
    pub lambda1: f64,
    /// Relative residuals of the two-term extrapolation.
    pub residuals: Vec<f64>,
}

fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Result<DVector<f64>> {
    let a = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    let b = DVector::from_column_slice(rhs);
    a.svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::NumericalDegeneracy(format!("least squares failed: {e}")))
}

/// Fits the small-time expansion to density estimates on a decreasing t grid.
/// `energy_sq` is ‖γ̄‖²; `drift` selects λ₁ = 2 (drift-free, only even terms)
/// or the first positive element of Λ₄.
pub fn fit_asymptotics(
    est: &DensityEstimate,
    energy_sq: f64,
    n: usize,
    hurst: Hurst,
    drift: bool,
) -> Result<AsymptoticsFit> {
    let ts = est.ts();
    let ps = est.estimates();
    if ts.len() < 3 {
        return invalid("the fit needs at least three t values");
    }
    if ts.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("t values must be strictly decreasing");
    }
    if ps.iter().any(|p| !(*p > 0.0)) {
        return invalid("non-positive density estimate in the fit window");
    }
    let h = hurst.value();
    let rows: Vec<Vec<f64>> = ts.iter().map(|t| vec![-0.5 * t.powf(-2.0 * h), t.ln(), 1.0]).collect();
    let logs: Vec<f64> = ps.iter().map(|p| p.ln()).collect();
    let rate_hat = least_squares(&rows, &logs)?[0];

    let shifted: Vec<f64> = ts
        .iter()
        .zip(&logs)
        .map(|(t, lp)| lp + energy_sq / (2.0 * t.powf(2.0 * h)))
        .collect();
    let rows: Vec<Vec<f64>> = ts.iter().map(|t| vec![t.ln(), 1.0]).collect();
    let prefactor_exp_hat = least_squares(&rows, &shifted)?[0];

    let lambda1 = if drift {
        enumerate_exponents(hurst, IndexSet::L4, 4.0)
            .iter()
            .map(|e| e.value())
            .find(|v| *v > VALUE_TOL)
            .unwrap_or(2.0)
    } else {
        2.0
    };
    let g: Vec<f64> = ts
        .iter()
        .zip(&shifted)
        .map(|(t, s)| (s + n as f64 * h * t.ln()).exp())
        .collect();
    let s: Vec<f64> = ts.iter().map(|t| t.powf(lambda1 * h)).collect();
    let rows: Vec<Vec<f64>> = s.iter().map(|v| vec![1.0, *v]).collect();
    let coef = least_squares(&rows, &g)?;
    let residuals = g
        .iter()
        .zip(&s)
        .map(|(gi, si)| (gi - coef[0] - coef[1] * si).abs() / gi.abs())
        .collect();
    Ok(AsymptoticsFit {
        rate_hat,
        prefactor_exp_hat,
        alpha0_hat: coef[0],
        lambda1,
        residuals,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadingCoefficient {
    pub alpha0: f64,
    pub std_error: f64,
    pub bandwidth: f64,
    pub samples: usize,
    /// (2π)^{−n/2}(det Q(γ̄))^{−1/2}, the mass of δ₀(φ¹₁).
    pub gaussian_mass: f64,
    pub sanity: bool,
    pub warnings: Vec<String>,
}

/// α₀ = E[e^{⟨ν̄,φ²₁⟩} δ₀(φ¹₁)] with a Gaussian-kernel delta. With `sanity`
/// the exponential factor is dropped and the result should match the
/// Gaussian mass of φ¹₁.
pub fn leading_coefficient<V: VectorFieldSystem>(
    vf: &V,
    res: &MinimizerResult,
    samples: usize,
    bandwidth: Option<f64>,
    seed: u64,
    sanity: bool,
) -> Result<LeadingCoefficient> {
    let spec = res.gamma_bar.spec;
    let n = vf.state_dim();
    let det = res.q_at_min.det();
    if !(det > 0.0) {
        return Err(Error::NumericalDegeneracy("Q(γ̄) is singular".into()));
    }
    if samples < 40 {
        return invalid("too few samples");
    }
    let b = bandwidth.unwrap_or((samples as f64).powf(-1.0 / (n as f64 + 4.0)) * det.powf(0.5 / n as f64));
    let sampler = FbmSampler::new(&spec)?;
    let gamma_grid = res.gamma_bar.render(spec.m);
    let depth = spec.hurst.depth().clamp(2, 3);
    let grad = if sanity {
        let sk = solve_skeleton(vf, &res.start, &res.gamma_bar)?;
        Some(skeleton_gradient(vf, &sk)?)
    } else {
        None
    };
    let bw = vec![b; n];
    let values = ordered_map(samples, |k| -> Result<f64> {
        let w = sampler.path(seed, k as u64);
        match &grad {
            Some(g) => Ok(kernel(&pair_gradient(g, &w), &bw)),
            None => {
                let x = lift_grid_path(&w, depth)?;
                let terms = expansion_endpoint(vf, &res.start, &gamma_grid, &x, spec.hurst, 2.0)?;
                let tilt: f64 = res.nu_bar.iter().zip(&terms[2]).map(|(a, b)| a * b).sum();
                Ok(tilt.exp() * kernel(&terms[1], &bw))
            }
        }
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let mut warnings = Vec::new();
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().sum();
    let top: f64 = sorted[..(samples / 100).max(1)].iter().sum();
    if total > 0.0 && top > 0.5 * total {
        warnings.push(
            "top 1% of samples carry over half of the mass; the variance may be infinite unless the \
             Hessian condition at the minimiser holds"
                .into(),
        );
    }
    let bm = batch_means(&values, 20);
    Ok(LeadingCoefficient {
        alpha0: bm.mean,
        std_error: bm.se,
        bandwidth: b,
        samples,
        gaussian_mass: (2.0 * std::f64::consts::PI).powf(-(n as f64) / 2.0) / det.sqrt(),
        sanity,
        warnings,
    })
}
