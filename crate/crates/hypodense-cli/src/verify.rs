//! The verification suite: one check per acceptance criterion, each returning
//! pass/fail, a short human-readable detail and the raw numbers it measured.

use std::time::Instant;

use serde::Serialize;

use hypodense::asymptotics::{
    enumerate_exponents, estimate_density, estimate_density_curve, fit_asymptotics, leading_coefficient,
    DensityOptions, DensityProblem, IndexSet,
};
use hypodense::fgauss::{fbm_cov, CMElement, FbmSampler, FbmSpec, Hurst, IncrementGram};
use hypodense::fields::{PolynomialFields, VectorFieldSystem};
use hypodense::malliavin::{eigen_tail, hormander_rank, reduced_cov_c, reduced_quadratic_form, CovMatrix};
use hypodense::mc::ordered_map;
use hypodense::metrics::GridPath;
use hypodense::minimizer::{minimize_energy, multiplier_identity_check, MinimizerOptions, MinimizerResult};
use hypodense::rde::{
    expansion_terms, pair_gradient, remainder, skeleton_gradient, solve_rde, solve_scaled_shifted, solve_skeleton,
    SolveOptions,
};
use hypodense::roughlift::{lift_grid_path, set_chen_fault, RoughPathGrid};
use hypodense::tensor_sig::TruncatedSignature;

use crate::commands::ls_slope;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::OutputDir;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Fast,
    Full,
}

impl std::str::FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "fast" => Ok(Suite::Fast),
            "full" => Ok(Suite::Full),
            other => Err(CliError::Config(format!("suite = {other}: expected fast or full"))),
        }
    }
}

/// Criteria in the fast suite; together they run well under a minute.
pub const FAST: &[u8] = &[1, 2, 3, 4, 5, 6, 7, 8, 9, 13];

/// The determinism criterion, which reruns the others.
pub const DETERMINISM: u8 = 14;

#[derive(Clone, Debug, Serialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    /// Every number the check measured, in a fixed order.
    pub payload: Vec<f64>,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} {:<22} {} ({:.1} s, budget {:.0} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds,
            self.budget_seconds
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub workers: usize,
    pub outcomes: Vec<CriterionOutcome>,
}

impl VerifyReport {
    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.passed).count()
    }

    pub fn outcome(&self, id: u8) -> Option<&CriterionOutcome> {
        self.outcomes.iter().find(|o| o.id == id)
    }
}

/// Measured values plus the list of violated bounds.
#[derive(Default)]
struct Check {
    notes: Vec<String>,
    failures: Vec<String>,
    payload: Vec<f64>,
}

impl Check {
    fn record(&mut self, label: &str, value: f64) {
        self.notes.push(format!("{label} {value:.4e}"));
        self.payload.push(value);
    }

    fn quiet(&mut self, values: impl IntoIterator<Item = f64>) {
        self.payload.extend(values);
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    /// Records `value` and requires it to be finite and at most `limit`.
    fn at_most(&mut self, label: &str, value: f64, limit: f64) {
        self.record(label, value);
        self.require(value <= limit, format!("{label} = {value:.3e} exceeds {limit:.1e}"));
    }

    fn at_least(&mut self, label: &str, value: f64, limit: f64) {
        self.record(label, value);
        self.require(value >= limit, format!("{label} = {value:.3e} below {limit:.3}"));
    }

    fn detail(&self) -> String {
        let mut s = self.notes.join("; ");
        if !self.failures.is_empty() {
            s.push_str(" | violated: ");
            s.push_str(&self.failures.join("; "));
        }
        s
    }
}

type CheckFn = fn(u64) -> hypodense::Result<Check>;

struct Criterion {
    id: u8,
    name: &'static str,
    budget_seconds: f64,
    run: CheckFn,
}

const CRITERIA: [Criterion; 13] = [
    Criterion { id: 1, name: "index sets", budget_seconds: 1.0, run: index_sets },
    Criterion { id: 2, name: "Chen identity", budget_seconds: 5.0, run: chen_identity },
    Criterion { id: 3, name: "fBm sampler", budget_seconds: 120.0, run: fbm_sampler },
    Criterion { id: 4, name: "Young translation", budget_seconds: 60.0, run: young_translation },
    Criterion { id: 5, name: "solver exactness", budget_seconds: 60.0, run: solver_exactness },
    Criterion { id: 6, name: "energy minimiser", budget_seconds: 300.0, run: minimiser },
    Criterion { id: 7, name: "Malliavin covariance", budget_seconds: 300.0, run: covariance },
    Criterion { id: 8, name: "Hormander rank", budget_seconds: 1.0, run: hormander },
    Criterion { id: 9, name: "remainder decay", budget_seconds: 120.0, run: remainder_decay },
    Criterion { id: 10, name: "density oracle", budget_seconds: 300.0, run: density_oracle },
    Criterion { id: 11, name: "rate and prefactor", budget_seconds: 600.0, run: rate_and_prefactor },
    Criterion { id: 12, name: "leading coefficient", budget_seconds: 600.0, run: leading_coeff },
    Criterion { id: 13, name: "eigenvalue tail", budget_seconds: 600.0, run: eigen_tail_stability },
];

pub fn suite_ids(suite: Suite) -> Vec<u8> {
    match suite {
        Suite::Fast => FAST.to_vec(),
        Suite::Full => CRITERIA.iter().map(|c| c.id).collect(),
    }
}

/// Runs one criterion on the current rayon pool. Library errors count as
/// failures.
pub fn run_criterion(id: u8, seed: u64) -> Option<CriterionOutcome> {
    let c = CRITERIA.iter().find(|c| c.id == id)?;
    let start = Instant::now();
    let result = (c.run)(seed.wrapping_add(id as u64));
    let seconds = start.elapsed().as_secs_f64();
    let (passed, detail, payload) = match result {
        Ok(check) => (check.failures.is_empty(), check.detail(), check.payload),
        Err(e) => (false, format!("error: {e}"), Vec::new()),
    };
    Some(CriterionOutcome {
        id,
        name: c.name,
        passed,
        detail,
        payload,
        seconds,
        budget_seconds: c.budget_seconds,
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))
}

/// Runs a suite with `workers` threads, then reruns it with a different
/// thread count and compares every payload bit for bit. `on_outcome` sees
/// each result as soon as it is available.
pub fn run_suite(
    suite: Suite,
    seed: u64,
    workers: usize,
    mut on_outcome: impl FnMut(&CriterionOutcome),
) -> Result<VerifyReport, CliError> {
    let ids = suite_ids(suite);
    let main = pool(workers)?;
    let mut outcomes = Vec::new();
    for &id in &ids {
        let o = main.install(|| run_criterion(id, seed)).expect("suite ids are known");
        on_outcome(&o);
        outcomes.push(o);
    }
    let other_workers = if workers == 1 { 2 } else { 1 };
    let other = pool(other_workers)?;
    let start = Instant::now();
    let mut mismatched = Vec::new();
    for first in &outcomes {
        let again = other.install(|| run_criterion(first.id, seed)).expect("suite ids are known");
        let same = first.payload.len() == again.payload.len()
            && first.payload.iter().zip(&again.payload).all(|(a, b)| a.to_bits() == b.to_bits())
            && first.passed == again.passed;
        if !same {
            mismatched.push(first.id.to_string());
        }
    }
    let compared: usize = outcomes.iter().map(|o| o.payload.len()).sum();
    let passed = mismatched.is_empty();
    let detail = if passed {
        format!("{compared} values from {} criteria identical with {workers} and {other_workers} workers", ids.len())
    } else {
        format!("payload differs with {other_workers} workers for criteria {}", mismatched.join(", "))
    };
    let o = CriterionOutcome {
        id: DETERMINISM,
        name: "determinism",
        passed,
        detail,
        payload: vec![compared as f64],
        seconds: start.elapsed().as_secs_f64(),
        budget_seconds: outcomes.iter().map(|o| o.budget_seconds).sum(),
    };
    on_outcome(&o);
    outcomes.push(o);
    Ok(VerifyReport { suite, seed, workers, outcomes })
}

/// The `verify` subcommand.
pub fn command(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let suite: Suite = cfg.str_or("suite", "fast").parse()?;
    let fault = match cfg.str_or("inject_fault", "none") {
        "none" => false,
        "chen" => true,
        other => return Err(CliError::Config(format!("inject_fault = {other}: expected none or chen"))),
    };
    set_chen_fault(fault);
    let report = run_suite(suite, cfg.seed()?, cfg.workers()?, |o| println!("{}", o.line()));
    set_chen_fault(false);
    let report = report?;
    out.write_csv(
        "verify.csv",
        &["id", "name", "passed", "seconds", "budget_seconds", "detail"],
        report.outcomes.iter().map(|o| {
            vec![
                o.id.to_string(),
                o.name.to_string(),
                o.passed.to_string(),
                format!("{:.3}", o.seconds),
                o.budget_seconds.to_string(),
                o.detail.clone(),
            ]
        }),
    )?;
    out.write_json("verify.json", &report)?;
    let failures = report.failures();
    if failures > 0 {
        return Err(CliError::VerificationFailed(failures));
    }
    Ok(format!("{} criteria passed", report.outcomes.len()))
}

fn hurst(s: &str) -> Hurst {
    Hurst::parse(s).expect("fixture Hurst values parse")
}

fn spec(h: &str, d: usize, m: usize) -> hypodense::Result<FbmSpec> {
    FbmSpec::new(hurst(h), d, m)
}

fn minimise<V: VectorFieldSystem>(vf: &V, a: &[f64], ap: &[f64], spec: FbmSpec) -> hypodense::Result<MinimizerResult> {
    minimize_energy(vf, a, ap, spec, &MinimizerOptions::default())
}

fn sup_distance(g: &CMElement, f: impl Fn(f64) -> Vec<f64>) -> f64 {
    (0..=256)
        .map(|k| {
            let t = k as f64 / 256.0;
            g.eval(t).iter().zip(f(t)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn index_sets(_seed: u64) -> hypodense::Result<Check> {
    let mut check = Check::default();
    let listing = |h: &str, set: IndexSet, cutoff: f64| -> Vec<String> {
        enumerate_exponents(hurst(h), set, cutoff).iter().map(|e| e.to_string()).collect()
    };
    let expected: &[(&str, f64, &[&str])] = &[
        ("2/5", 4.0, &["0", "1", "2", "5/2", "3", "7/2", "4"]),
        ("3/10", 4.5, &["0", "1", "2", "3", "10/3", "4", "13/3"]),
    ];
    for (h, cutoff, want) in expected {
        let got = listing(h, IndexSet::L1, *cutoff);
        check.notes.push(format!("H={h}: L1 = {}", got.join(",")));
        check.require(got == *want, format!("H={h}: L1 = {}", got.join(",")));
        check.quiet(enumerate_exponents(hurst(h), IndexSet::L1, *cutoff).iter().map(|e| e.value()));
    }
    let naturals: Vec<String> = (0..=10).map(|k| k.to_string()).collect();
    let mut matched = 0;
    for h in ["1/2", "1/3"] {
        for set in IndexSet::ALL {
            let got = listing(h, set, 10.0);
            if got == naturals {
                matched += 1;
            } else {
                check.failures.push(format!("H={h}: {} = {}", set.name(), got.join(",")));
            }
        }
    }
    check.record("sets equal to 0..10 at H=1/2,1/3", matched as f64);
    Ok(check)
}

/// Product of cells by balanced pairwise reduction, independent of the
/// left-to-right prefix fold.
fn tree_product(cells: &[TruncatedSignature]) -> hypodense::Result<TruncatedSignature> {
    if cells.len() == 1 {
        return Ok(cells[0].clone());
    }
    let (l, r) = cells.split_at(cells.len() / 2);
    tree_product(l)?.chen_mul(&tree_product(r)?)
}

fn chen_identity(seed: u64) -> hypodense::Result<Check> {
    let mut check = Check::default();
    let samplers = [FbmSampler::new(&spec("1/2", 2, 64)?)?, FbmSampler::new(&spec("1/2", 3, 64)?)?];
    let defects = ordered_map(100, |i| -> hypodense::Result<[f64; 3]> {
        let w = samplers[i % 2].path(seed, i as u64);
        let x = lift_grid_path(&w, 3)?;
        let mut step: f64 = 0.0;
        let mut sym: f64 = 0.0;
        for k in 0..x.cells() {
            step = step.max(x.prefix(k).chen_mul(x.cell(k))?.max_abs_diff(x.prefix(k + 1)));
            sym = sym.max(x.prefix(k + 1).level2_symmetry_defect());
        }
        let tree = tree_product(x.cell_signatures())?.max_abs_diff(x.prefix(x.cells()));
        Ok([step, tree, sym])
    })
    .into_iter()
    .collect::<hypodense::Result<Vec<_>>>()?;
    let worst = |j: usize| defects.iter().map(|d| d[j]).fold(0.0, f64::max);
    check.at_most("max prefix Chen defect", worst(0), 1e-10);
    check.at_most("max tree-product defect", worst(1), 1e-10);
    check.at_most("max level-2 symmetry defect", worst(2), 1e-10);
    let square = GridPath::new(2, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0])?;
    let s = lift_grid_path(&square, 2)?;
    let end = s.prefix(4);
    let area = 0.5 * (end.get2(0, 1) - end.get2(1, 0));
    check.at_most("square-loop area error", (area - 1.0).abs(), 1e-10);
    Ok(check)
}

/// Two-sample Kolmogorov–Smirnov statistic.
fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

fn fbm_sampler(seed: u64) -> hypodense::Result<Check> {
    const PATHS: usize = 100_000;
    const CHECKPOINTS: [usize; 8] = [0, 1, 37, 74, 111, 148, 222, 255];
    let mut check = Check::default();
    for h in ["3/10", "2/5", "1/2"] {
        let sp = spec(h, 1, 256)?;
        let sampler = FbmSampler::new(&sp)?;
        let gram = IncrementGram::new(&sp);
        let rows = ordered_map(PATHS, |i| {
            let w = sampler.path(seed, i as u64);
            let mut r = [0.0; 10];
            for (slot, &p) in r.iter_mut().zip(&CHECKPOINTS) {
                *slot = w.point(p + 1)[0] - w.point(p)[0];
            }
            r[8] = w.point(64)[0];
            r[9] = w.endpoint()[0];
            r
        });
        let mut worst_z: f64 = 0.0;
        for a in 0..8 {
            for b in 0..=a {
                let prods: Vec<f64> = rows.iter().map(|r| r[a] * r[b]).collect();
                let mean = prods.iter().sum::<f64>() / PATHS as f64;
                let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (PATHS - 1) as f64;
                let target = gram.matrix()[(CHECKPOINTS[a], CHECKPOINTS[b])];
                worst_z = worst_z.max((mean - target).abs() / (var / PATHS as f64).sqrt());
            }
        }
        check.at_most(&format!("H={h} max |z|"), worst_z, 4.0);
        // w_{1/4}·4^H has the law of w_1; compare disjoint halves.
        let scale = 4f64.powf(sp.h());
        let half = PATHS / 2;
        let xs: Vec<f64> = rows[..half].iter().map(|r| r[8] * scale).collect();
        let ys: Vec<f64> = rows[half..].iter().map(|r| r[9]).collect();
        let (n, m) = (xs.len() as f64, ys.len() as f64);
        let critical = 1.628 * ((n + m) / (n * m)).sqrt();
        let d = ks_statistic(xs, ys);
        check.at_most(&format!("H={h} KS D"), d, critical);
    }
    Ok(check)
}

/// Linear interpolation of `w` on a grid `factor` times finer.
fn refine(w: &GridPath, factor: usize) -> GridPath {
    let m = w.cells();
    GridPath::from_fn(w.dim(), m * factor, |t| {
        let s = t * m as f64;
        let k = (s.floor() as usize).min(m - 1);
        let lam = s - k as f64;
        w.point(k).iter().zip(w.point(k + 1)).map(|(a, b)| a + lam * (b - a)).collect()
    })
}

fn young_translation(seed: u64) -> hypodense::Result<Check> {
    let mut check = Check::default();
    let samplers = [FbmSampler::new(&spec("1/2", 2, 32)?)?, FbmSampler::new(&spec("1/2", 3, 32)?)?];
    let diffs = ordered_map(50, |i| -> hypodense::Result<f64> {
        let sampler = &samplers[i % 2];
        let x = sampler.path(seed, 2 * i as u64);
        let gamma = sampler.path(seed, 2 * i as u64 + 1).scale(0.5);
        let translated = lift_grid_path(&x, 3)?.young_translate(&gamma)?;
        let direct = lift_grid_path(&refine(&x.add(&gamma)?, 4), 3)?.coarsen(4)?;
        Ok((0..=x.cells())
            .map(|k| translated.prefix(k).max_abs_diff(direct.prefix(k)))
            .fold(0.0, f64::max))
    })
    .into_iter()
    .collect::<hypodense::Result<Vec<_>>>()?;
    check.at_most("max level 1-3 difference", diffs.iter().copied().fold(0.0, f64::max), 1e-8);
    Ok(check)
}

fn driver(w: &GridPath, depth: usize) -> hypodense::Result<RoughPathGrid> {
    Ok(lift_grid_path(w, depth)?.pair_with_time(0.0))
}

fn solver_exactness(seed: u64) -> hypodense::Result<Check> {
    let mut check = Check::default();
    let vf = PolynomialFields::heisenberg();
    let sampler = FbmSampler::new(&spec("1/2", 2, 64)?)?;
    let errs = ordered_map(20, |i| -> hypodense::Result<[f64; 2]> {
        let w = sampler.path(seed, i as u64);
        let f = i as f64;
        let a = [f.sin(), (2.0 * f).cos(), 0.1 * f - 1.0];
        let res = solve_rde(&vf, &a, &driver(&w, 2)?)?;
        // Third coordinate from the shoelace sum of the raw polyline.
        let mut area = 0.0;
        let mut err: f64 = 0.0;
        for k in 0..=w.cells() {
            let (w1, w2) = (w.point(k)[0], w.point(k)[1]);
            let exact = [a[0] + w1, a[1] + w2, a[2] + 2.0 * (a[1] * w1 - a[0] * w2) + 2.0 * area];
            for (y, e) in res.y.point(k).iter().zip(exact) {
                err = err.max((y - e).abs());
            }
            if k < w.cells() {
                let (d1, d2) = (w.point(k + 1)[0] - w1, w.point(k + 1)[1] - w2);
                area += w2 * d1 - w1 * d2;
            }
        }
        Ok([err, res.jk_defect()])
    })
    .into_iter()
    .collect::<hypodense::Result<Vec<_>>>()?;
    let heis = errs.iter().map(|e| e[0]).fold(0.0, f64::max);
    let mut jk = errs.iter().map(|e| e[1]).fold(0.0, f64::max);
    check.at_most("Heisenberg max error", heis, 1e-10);

    let sigma = 0.5;
    let ln = PolynomialFields::lognormal(sigma);
    let w = GridPath::from_fn(1, 1024, |t| vec![0.8 * (3.0 * std::f64::consts::PI * t).sin() + 0.5 * t]);
    let res = solve_rde(&ln, &[1.0], &driver(&w, 3)?)?;
    let rel = (0..=w.cells())
        .map(|k| (res.y.point(k)[0] / (sigma * w.point(k)[0]).exp() - 1.0).abs())
        .fold(0.0, f64::max);
    check.at_most("lognormal max relative error", rel, 1e-6);
    jk = jk.max(res.jk_defect());

    // A drifted fixture on an fBm driver exercises the full Jacobian flow.
    let drifted = PolynomialFields::lognormal(sigma).with_drift(0, 0.3, &[1])?;
    let fine = FbmSampler::new(&spec("2/5", 1, 256)?)?;
    for i in 0..5 {
        let x = lift_grid_path(&fine.path(seed, 100 + i), 3)?;
        let res = solve_scaled_shifted(&drifted, &[1.0], &x, &CMElement::zero(*fine.spec()), 0.7, fine.spec().hurst, SolveOptions::default())?;
        jk = jk.max(res.jk_defect());
    }
    check.at_most("max |JK − I|", jk, 1e-6);
    Ok(check)
}

fn minimiser(seed: u64) -> hypodense::Result<Check> {
    let mut check = Check::default();
    let vf = PolynomialFields::heisenberg();
    let (xi, eta) = (1.0, 0.5);
    for h in ["7/20", "1/2"] {
        let sp = spec(h, 2, 64)?;
        let hv = sp.h();
        let res = minimise(&vf, &[0.0; 3], &[xi, eta, 0.0], sp)?;
        let d = sup_distance(&res.gamma_bar, |t| {
            let r = fbm_cov(1.0, t, hv);
            vec![xi * r, eta * r]
        });
        check.at_most(&format!("H={h} L∞ to (ξ,η)R(1,·)"), d, 1e-3);
        let target = 0.5 * (xi * xi + eta * eta);
        check.at_most(&format!("H={h} energy error"), (res.energy - target).abs(), 1e-4);
        let r = f64::hypot(xi, eta);
        let axis = minimise(&vf, &[0.0; 3], &[r, 0.0, 0.0], sp)?;
        let nu = axis.nu_bar.iter().zip([r, 0.0, 0.0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        check.at_most(&format!("H={h} ν̄ error"), nu, 1e-3);
    }
    let bridge = PolynomialFields::bridge1d();
    let mut worst: f64 = 0.0;
    for h in ["7/20", "1/2"] {
        let sp = spec(h, 1, 64)?;
        let res = minimise(&bridge, &[0.0], &[2.0], sp)?;
        worst = worst.max(sup_distance(&res.gamma_bar, |t| vec![2.0 * fbm_cov(1.0, t, sp.h())]));
        worst = worst.max((res.energy - 2.0).abs());
    }
    check.at_most("bridge max error", worst, 1e-6);
    let sp = spec("2/5", 2, 64)?;
    let res = minimise(&vf, &[0.0; 3], &[xi, eta, 0.0], sp)?;
    let report = multiplier_identity_check(&vf, &res, 1000, seed)?;
    check.at_most("multiplier RMS / ‖γ̄‖", report.rms / report.gamma_norm, 1e-3);
    Ok(check)
}

fn covariance(seed: u64) -> hypodense::Result<Check> {
    let mut check = Check::default();
    let vf = PolynomialFields::heisenberg();
    let sp = spec("1/2", 2, 64)?;
    let res = minimise(&vf, &[0.0; 3], &[1.0, 0.0, 0.0], sp)?;
    let q = &res.q_at_min;
    let block = [(q.get(0, 0) - 1.0).abs(), (q.get(1, 1) - 1.0).abs(), q.get(0, 1).abs(), q.get(0, 2).abs()]
        .into_iter()
        .fold(0.0, f64::max);
    check.at_most("Q block error", block, 1e-3);

    let sk = solve_skeleton(&vf, &[0.0; 3], &res.gamma_bar)?;
    let grad = skeleton_gradient(&vf, &sk)?;
    let sampler = FbmSampler::new(&sp)?;
    const N: usize = 100_000;
    let samples = ordered_map(N, |i| pair_gradient(&grad, &sampler.path(seed, i as u64)));
    let mut worst_z: f64 = 0.0;
    for k in 0..3 {
        for l in 0..=k {
            let prods: Vec<f64> = samples.iter().map(|s| s[k] * s[l]).collect();
            let mean = prods.iter().sum::<f64>() / N as f64;
            let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (N - 1) as f64;
            worst_z = worst_z.max((mean - q.get(k, l)).abs() / (var / N as f64).sqrt());
        }
    }
    check.at_most("φ¹ covariance max |z|", worst_z, 4.0);

    let dirs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.6, -0.8, 0.3], [-0.2, 0.5, 1.7]];
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        let x = lift_grid_path(&sampler.path(seed, (N + i) as u64), sp.hurst.depth())?;
        let eps = 0.5;
        let s = solve_scaled_shifted(&vf, &[0.0; 3], &x, &res.gamma_bar, eps, sp.hurst, SolveOptions::default())?;
        let c = reduced_cov_c(&vf, &s, eps)?;
        for v in &dirs {
            let lhs: f64 = (0..3).flat_map(|k| (0..3).map(move |l| (k, l))).map(|(k, l)| v[k] * c.get(k, l) * v[l]).sum();
            let rhs = reduced_quadratic_form(&vf, &s, eps, v)?;
            worst = worst.max((lhs - rhs).abs() / rhs.abs().max(1.0));
        }
    }
    check.at_most("reduced-covariance identity defect", worst, 1e-9);
    Ok(check)
}

fn hormander(_seed: u64) -> hypodense::Result<Check> {
    let mut check = Check::default();
    let heis = hormander_rank(&PolynomialFields::heisenberg(), &[0.0; 3], 1)?;
    check.require(heis.ranks == [2, 3], format!("Heisenberg ranks {:?}", heis.ranks));
    let ell = hormander_rank(&PolynomialFields::elliptic(3), &[0.2, -0.1, 0.4], 0)?;
    check.require(ell.ranks == [3], format!("elliptic ranks {:?}", ell.ranks));
    let ranks: Vec<f64> = heis.ranks.iter().chain(&ell.ranks).map(|&r| r as f64).collect();
    check.notes.push(format!("Heisenberg ranks {:?}, elliptic rank {:?}", heis.ranks, ell.ranks));
    check.quiet(ranks);
    Ok(check)
}

fn remainder_decay(seed: u64) -> hypodense::Result<Check> {
    let mut check = Check::default();
    let eps: Vec<f64> = (2..=6).map(|j| 0.5f64.powi(j)).collect();
    let logs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    for h in ["1/2", "2/5"] {
        let cases: [(&str, PolynomialFields, Vec<f64>, Vec<f64>); 2] = [
            ("lognormal", PolynomialFields::lognormal(0.5), vec![1.0], vec![1.5]),
            ("Heisenberg", PolynomialFields::heisenberg(), vec![0.0; 3], vec![1.0, 0.5, 0.0]),
        ];
        for (name, vf, a, ap) in cases {
            let sp = spec(h, vf.noise_dim(), 64)?;
            let gamma = minimise(&vf, &a, &ap, sp)?.gamma_bar;
            let x = lift_grid_path(&FbmSampler::new(&sp)?.path(seed, 0), sp.hurst.depth())?;
            let terms = expansion_terms(&vf, &a, &gamma, &x, sp.hurst, 2.0)?;
            for k in 0..2 {
                let sups = eps
                    .iter()
                    .map(|&e| Ok(remainder(&vf, &a, &terms, &x, e, k)?.sup_norm().ln()))
                    .collect::<hypodense::Result<Vec<f64>>>()?;
                let kappa = terms.exponents[k + 1].value();
                check.at_least(&format!("{name} H={h} k={k} slope"), ls_slope(&logs, &sups), kappa - 0.15);
            }
        }
    }
    Ok(check)
}

fn lognormal_density(t: f64, h: f64, sigma: f64, a: f64, y: f64) -> f64 {
    let s = sigma * t.powf(h);
    let z = (y / a).ln() / s;
    (-0.5 * z * z).exp() / (y * s * (2.0 * std::f64::consts::PI).sqrt())
}

fn density_oracle(seed: u64) -> hypodense::Result<Check> {
    let mut check = Check::default();
    let sigma = 0.5;
    let vf = PolynomialFields::lognormal(sigma);
    for h in ["2/5", "1/2"] {
        let sp = spec(h, 1, 64)?;
        let res = minimise(&vf, &[1.0], &[1.5], sp)?;
        let problem = DensityProblem {
            label: "lognormal".into(),
            vf: &vf,
            start: vec![1.0],
            target: vec![1.5],
            spec: sp,
            minimizer: Some(&res),
        };
        let opts = DensityOptions { samples: 100_000, seed, ..Default::default() };
        let p = estimate_density(&problem, 0.5, &opts)?;
        let exact = lognormal_density(0.5, sp.h(), sigma, 1.0, 1.5);
        check.quiet([p.estimate, p.std_error]);
        check.at_most(&format!("H={h} relative error"), (p.estimate / exact - 1.0).abs(), 0.05);
    }
    Ok(check)
}

fn rate_and_prefactor(seed: u64) -> hypodense::Result<Check> {
    let mut check = Check::default();
    let sigma = 0.5;
    let vf = PolynomialFields::lognormal(sigma);
    let sp = spec("2/5", 1, 64)?;
    let res = minimise(&vf, &[1.0], &[1.5], sp)?;
    let problem = DensityProblem {
        label: "lognormal".into(),
        vf: &vf,
        start: vec![1.0],
        target: vec![1.5],
        spec: sp,
        minimizer: Some(&res),
    };
    let opts = DensityOptions { samples: 50_000, seed, ..Default::default() };
    let est = estimate_density_curve(&problem, &[0.4, 0.2, 0.1], &opts)?;
    check.quiet(est.estimates());
    let fit = fit_asymptotics(&est, 2.0 * res.energy, 1, sp.hurst, false)?;
    let rate = (1.5f64.ln() / sigma).powi(2);
    check.at_most("rate relative error", (fit.rate_hat / rate - 1.0).abs(), 0.10);
    check.at_most("prefactor exponent error", (fit.prefactor_exp_hat + sp.h()).abs(), 0.15);
    Ok(check)
}

fn leading_coeff(seed: u64) -> hypodense::Result<Check> {
    let mut check = Check::default();
    let vf = PolynomialFields::heisenberg();
    let sp = spec("1/2", 2, 64)?;
    let res = minimise(&vf, &[0.0; 3], &[1.0, 0.5, 0.0], sp)?;
    let sanity = leading_coefficient(&vf, &res, 1_000_000, None, seed, true)?;
    check.quiet([sanity.alpha0, sanity.gaussian_mass]);
    check.at_most("sanity branch relative error", (sanity.alpha0 / sanity.gaussian_mass - 1.0).abs(), 0.05);

    let res = minimise(&vf, &[0.0; 3], &[1.0, 0.0, 0.0], sp)?;
    let full = leading_coefficient(&vf, &res, 20_000, None, seed, false)?;
    let problem = DensityProblem {
        label: "heisenberg".into(),
        vf: &vf,
        start: vec![0.0; 3],
        target: vec![1.0, 0.0, 0.0],
        spec: sp,
        minimizer: Some(&res),
    };
    let opts = DensityOptions { samples: 50_000, seed, ..Default::default() };
    let est = estimate_density_curve(&problem, &[0.2, 0.1, 0.05], &opts)?;
    let fit = fit_asymptotics(&est, 2.0 * res.energy, 3, sp.hurst, false)?;
    check.record("α₀ direct", full.alpha0);
    check.record("α₀ fit", fit.alpha0_hat);
    check.at_most("direct/fit − 1", (full.alpha0 / fit.alpha0_hat - 1.0).abs(), 0.20);
    Ok(check)
}

fn eigen_tail_stability(seed: u64) -> hypodense::Result<Check> {
    let mut check = Check::default();
    let vf = PolynomialFields::heisenberg();
    let sp = spec("1/2", 2, 64)?;
    let sampler = FbmSampler::new(&sp)?;
    let zero = CMElement::zero(sp);
    let eps: Vec<f64> = (2..=5).map(|j| 0.5f64.powi(j)).collect();
    const N: usize = 1000;
    let mut all: Vec<Vec<CovMatrix>> = Vec::new();
    for &e in &eps {
        let cs = ordered_map(2 * N, |i| -> hypodense::Result<CovMatrix> {
            let x = lift_grid_path(&sampler.path(seed, i as u64), sp.hurst.depth())?;
            let s = solve_scaled_shifted(&vf, &[0.0; 3], &x, &zero, e, sp.hurst, SolveOptions::default())?;
            reduced_cov_c(&vf, &s, e)
        })
        .into_iter()
        .collect::<hypodense::Result<Vec<_>>>()?;
        all.push(cs);
    }
    let half: Vec<Vec<CovMatrix>> = all.iter().map(|v| v[..N].to_vec()).collect();
    let mu = eigen_tail(&half, &eps)?.mu_hat;
    let mu2 = eigen_tail(&all, &eps)?.mu_hat;
    match (mu, mu2) {
        (Some(a), Some(b)) if a.is_finite() && b.is_finite() => {
            check.at_least("μ̂ (10³ samples)", a, 0.0);
            check.record("μ̂ (2·10³ samples)", b);
            check.at_most("relative change under doubling", (a / b - 1.0).abs(), 0.30);
        }
        _ => check.failures.push(format!("μ̂ unavailable: {mu:?}, {mu2:?}")),
    }
    Ok(check)
}
