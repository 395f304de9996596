//! One function per subcommand. Each writes its tables into the output
//! directory and returns a short summary for stdout.

use serde::Serialize;

use hypodense::asymptotics::{
    enumerate_exponents, estimate_density_curve, fit_asymptotics, leading_coefficient, DensityMethod, DensityOptions,
    DensityProblem, IndexSet,
};
use hypodense::fgauss::{sample_fbm, CMElement, FbmSampler, FbmSpec, IncrementGram};
use hypodense::fields::VectorFieldSystem;
use hypodense::malliavin::{eigen_tail, hormander_rank, nondegeneracy_ratio, reduced_cov_c, stochastic_q, CovMatrix};
use hypodense::mc::ordered_map;
use hypodense::metrics::{holder_norm, pvar_norm, GridPath};
use hypodense::minimizer::{minimize_energy, multiplier_identity_check, MinimizerOptions, MinimizerResult};
use hypodense::rde::{expansion_terms, remainder, solve_scaled_shifted, solve_skeleton, SolveOptions, SolveResult};
use hypodense::roughlift::lift_grid_path;

use crate::config::{Command, RunConfig};
use crate::error::{in_module, CliError};
use crate::models::Model;
use crate::output::OutputDir;
use crate::verify;

pub fn dispatch(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    match cfg.command {
        Command::SimulateFbm => simulate_fbm(cfg, out),
        Command::Lift => lift(cfg, out),
        Command::Solve => solve(cfg, out),
        Command::Skeleton => skeleton(cfg, out),
        Command::Expand => expand(cfg, out),
        Command::Minimize => minimize(cfg, out),
        Command::Covariance => covariance(cfg, out),
        Command::Hormander => hormander(cfg, out),
        Command::Indices => indices(cfg, out),
        Command::Density => density(cfg, out),
        Command::Asymptotics => asymptotics(cfg, out),
        Command::Verify => verify::command(cfg, out),
    }
}

fn path_rows(y: &GridPath) -> Vec<Vec<f64>> {
    (0..=y.cells())
        .map(|k| {
            let mut row = vec![y.time(k)];
            row.extend_from_slice(y.point(k));
            row
        })
        .collect()
}

fn path_header(prefix: &str, n: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("{prefix}{i}")))
        .collect()
}

fn write_path(out: &mut OutputDir, name: &str, prefix: &str, y: &GridPath) -> Result<(), CliError> {
    let header = path_header(prefix, y.dim());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write_csv(name, &header, path_rows(y))
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ")
}

fn minimizer_options(cfg: &RunConfig) -> Result<MinimizerOptions, CliError> {
    let d = MinimizerOptions::default();
    Ok(MinimizerOptions {
        starts: cfg.parse_or("starts", d.starts)?,
        max_outer: cfg.parse_or("max_outer", d.max_outer)?,
        seed: cfg.seed()?,
        tol: cfg.parse_or("tol", d.tol)?,
        hessian_dirs: cfg.parse_or("hessian_dirs", d.hessian_dirs)?,
        init_scale: d.init_scale,
    })
}

fn minimise(cfg: &RunConfig, model: &Model, spec: FbmSpec) -> Result<MinimizerResult, CliError> {
    minimize_energy(&model.fields, &model.start, &model.target, spec, &minimizer_options(cfg)?)
        .map_err(in_module("minimizer"))
}

fn sample_index(cfg: &RunConfig) -> Result<u64, CliError> {
    cfg.parse_or("index", 0)
}

fn simulate_fbm(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let model = Model::from_config(cfg)?;
    let dim: usize = cfg.parse_or("dim", model.fields.noise_dim())?;
    let paths: usize = cfg.parse_or("paths", 4)?;
    let spec = FbmSpec::new(cfg.hurst()?, dim, cfg.m()?).map_err(in_module("fgauss"))?;
    let samples = sample_fbm(&spec, paths, cfg.seed()?).map_err(in_module("fgauss"))?;
    let mut header = vec!["path".to_string()];
    header.extend(path_header("w", dim));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = samples.iter().enumerate().flat_map(|(i, w)| {
        path_rows(w).into_iter().map(move |r| std::iter::once(i as f64).chain(r).collect::<Vec<f64>>())
    });
    out.write_csv("fbm.csv", &header, rows)?;
    Ok(format!("{paths} fBm paths, H = {}, M = {}", spec.hurst, spec.m))
}

#[derive(Serialize)]
struct LiftSummary {
    dim: usize,
    depth: usize,
    cells: usize,
    endpoint: Vec<Vec<f64>>,
    level2_symmetry_defect: f64,
    holder_exponent: f64,
    holder_norms: Vec<f64>,
    pvar_exponent: f64,
    pvar_norms: Vec<f64>,
}

fn lift(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let model = Model::from_config(cfg)?;
    let spec = model.spec(cfg)?;
    let depth: usize = cfg.parse_or("depth", spec.hurst.depth())?;
    let w = FbmSampler::new(&spec).map_err(in_module("fgauss"))?.path(cfg.seed()?, sample_index(cfg)?);
    let x = lift_grid_path(&w, depth).map_err(in_module("roughlift"))?;
    let d = spec.dim;
    let mut header = vec!["t".to_string()];
    for level in 1..=depth {
        let mut words = vec![String::new()];
        for _ in 0..level {
            words = words.iter().flat_map(|w| (1..=d).map(move |i| format!("{w}{i}"))).collect();
        }
        header.extend(words.into_iter().map(|w| format!("x{level}_{w}")));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..=spec.m).map(|k| {
        let s = x.prefix(k);
        std::iter::once(w.time(k))
            .chain((1..=depth).flat_map(|l| s.level(l).iter().copied()))
            .collect::<Vec<f64>>()
    });
    out.write_csv("signature.csv", &header, rows)?;
    let alpha = spec.h() - 0.05;
    let p = 1.0 / alpha;
    let metric = |f: &dyn Fn(usize) -> hypodense::Result<f64>| -> Result<Vec<f64>, CliError> {
        (1..=depth).map(|l| f(l).map_err(in_module("metrics"))).collect()
    };
    let end = x.prefix(spec.m);
    let summary = LiftSummary {
        dim: d,
        depth,
        cells: spec.m,
        endpoint: (1..=depth).map(|l| end.level(l).to_vec()).collect(),
        level2_symmetry_defect: if depth >= 2 { end.level2_symmetry_defect() } else { 0.0 },
        holder_exponent: alpha,
        holder_norms: metric(&|l| holder_norm(&x, l, alpha))?,
        pvar_exponent: p,
        pvar_norms: metric(&|l| pvar_norm(&x, l, p, 0.0, 1.0))?,
    };
    out.write_json("lift.json", &summary)?;
    Ok(format!("lifted path to depth {depth}; endpoint level 1 = [{}]", fmt_vec(end.level1())))
}

#[derive(Serialize)]
struct SolveSummary {
    epsilon: f64,
    shift: String,
    endpoint: Vec<f64>,
    jk_defect: f64,
}

fn solve(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let model = Model::from_config(cfg)?;
    let spec = model.spec(cfg)?;
    let eps: f64 = cfg.parse_or("epsilon", 1.0)?;
    let shift = cfg.str_or("shift", "none").to_string();
    let gamma = match shift.as_str() {
        "none" => CMElement::zero(spec),
        "minimizer" => minimise(cfg, &model, spec)?.gamma_bar,
        other => return Err(CliError::Config(format!("shift = {other}: expected none or minimizer"))),
    };
    let w = FbmSampler::new(&spec).map_err(in_module("fgauss"))?.path(cfg.seed()?, sample_index(cfg)?);
    let x = lift_grid_path(&w, spec.hurst.depth()).map_err(in_module("roughlift"))?;
    let res = solve_scaled_shifted(&model.fields, &model.start, &x, &gamma, eps, spec.hurst, SolveOptions::default())
        .map_err(in_module("rde"))?;
    write_path(out, "solution.csv", "y", &res.y)?;
    let summary = SolveSummary {
        epsilon: eps,
        shift,
        endpoint: res.endpoint().to_vec(),
        jk_defect: res.jk_defect(),
    };
    out.write_json("solve.json", &summary)?;
    Ok(format!("y_1 = [{}], |JK − I| = {:.2e}", fmt_vec(res.endpoint()), summary.jk_defect))
}

fn skeleton(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let model = Model::from_config(cfg)?;
    let spec = model.spec(cfg)?;
    let gamma = match cfg.list("direction")? {
        Some(v) => CMElement::kernel(spec, 1.0, &v).map_err(in_module("fgauss"))?,
        None => minimise(cfg, &model, spec)?.gamma_bar,
    };
    let sk = solve_skeleton(&model.fields, &model.start, &gamma).map_err(in_module("rde"))?;
    write_path(out, "skeleton.csv", "phi", &sk.y)?;
    write_path(out, "gamma.csv", "gamma", &gamma.render(spec.m))?;
    #[derive(Serialize)]
    struct Summary {
        endpoint: Vec<f64>,
        energy: f64,
    }
    out.write_json(
        "skeleton.json",
        &Summary {
            endpoint: sk.endpoint().to_vec(),
            energy: 0.5 * gamma.norm_sq(),
        },
    )?;
    Ok(format!("φ⁰_1 = [{}]", fmt_vec(sk.endpoint())))
}

fn dyadic_epsilons(cfg: &RunConfig, lo: i32, hi: i32) -> Result<Vec<f64>, CliError> {
    let eps = cfg
        .list("epsilons")?
        .unwrap_or_else(|| (lo..=hi).map(|j| 0.5f64.powi(j)).collect());
    if eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(CliError::Config("epsilons must lie in (0, 1]".into()));
    }
    Ok(eps)
}

pub(crate) fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn expand(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let model = Model::from_config(cfg)?;
    let spec = model.spec(cfg)?;
    let hurst = spec.hurst;
    let kappa_max: f64 = cfg.parse_or("kappa_max", (1.0 + hurst.inv()).min(4.0))?;
    let eps = dyadic_epsilons(cfg, 2, 6)?;
    let res = minimise(cfg, &model, spec)?;
    let w = FbmSampler::new(&spec).map_err(in_module("fgauss"))?.path(cfg.seed()?, sample_index(cfg)?);
    let x = lift_grid_path(&w, hurst.depth()).map_err(in_module("roughlift"))?;
    let terms = expansion_terms(&model.fields, &model.start, &res.gamma_bar, &x, hurst, kappa_max)
        .map_err(in_module("rde"))?;
    let n = model.fields.state_dim();
    let mut header = vec!["kappa".to_string()];
    header.extend((1..=n).map(|i| format!("phi{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write_csv(
        "terms.csv",
        &header,
        terms.exponents.iter().zip(&terms.paths).map(|(e, p)| {
            std::iter::once(e.to_string())
                .chain(p.endpoint().iter().map(f64::to_string))
                .collect::<Vec<String>>()
        }),
    )?;
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let logs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    for k in 0..terms.paths.len().saturating_sub(1) {
        let mut sups = Vec::new();
        for &e in &eps {
            let r = remainder(&model.fields, &model.start, &terms, &x, e, k).map_err(in_module("rde"))?;
            sups.push(r.sup_norm());
            rows.push(vec![e, k as f64, r.sup_norm()]);
        }
        let ly: Vec<f64> = sups.iter().map(|s| s.ln()).collect();
        slopes.push((terms.exponents[k + 1].value(), if eps.len() > 1 { ls_slope(&logs, &ly) } else { f64::NAN }));
    }
    out.write_csv("remainder.csv", &["epsilon", "k", "sup_norm"], rows)?;
    #[derive(Serialize)]
    struct Slope {
        k: usize,
        next_exponent: f64,
        fitted_slope: f64,
    }
    let report: Vec<Slope> = slopes
        .iter()
        .enumerate()
        .map(|(k, (kappa, s))| Slope {
            k,
            next_exponent: *kappa,
            fitted_slope: *s,
        })
        .collect();
    out.write_json("expand.json", &report)?;
    let shown: Vec<String> = report.iter().map(|s| format!("k={}: {:.3} (κ={})", s.k, s.fitted_slope, s.next_exponent)).collect();
    Ok(format!("{} terms; remainder slopes {}", terms.paths.len(), shown.join(", ")))
}

fn minimize(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let model = Model::from_config(cfg)?;
    let spec = model.spec(cfg)?;
    let res = minimise(cfg, &model, spec)?;
    out.write_json("minimizer.json", &res)?;
    write_path(out, "gamma.csv", "gamma", &res.gamma_bar.render(spec.m))?;
    let samples: usize = cfg.parse_or("multiplier_samples", 0)?;
    if samples > 0 {
        let report =
            multiplier_identity_check(&model.fields, &res, samples, cfg.seed()?).map_err(in_module("minimizer"))?;
        out.write_json("multiplier.json", &report)?;
    }
    Ok(format!(
        "energy = {:.6}, ν̄ = [{}], constraint residual = {:.1e}, converged = {}",
        res.energy,
        fmt_vec(&res.nu_bar),
        res.constraint_residual,
        res.converged
    ))
}

#[derive(Serialize)]
struct RatioSummary {
    epsilon: f64,
    quantiles: [f64; 3],
}

fn covariance(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let model = Model::from_config(cfg)?;
    let spec = model.spec(cfg)?;
    let eps = dyadic_epsilons(cfg, 2, 5)?;
    let samples: usize = cfg.parse_or("samples", 1000)?;
    let seed = cfg.seed()?;
    let res = minimise(cfg, &model, spec)?;
    out.write_json("q_at_min.json", &res.q_at_min)?;
    let gamma = match cfg.str_or("shift", "none") {
        "none" => CMElement::zero(spec),
        "minimizer" => res.gamma_bar.clone(),
        other => return Err(CliError::Config(format!("shift = {other}: expected none or minimizer"))),
    };
    let sampler = FbmSampler::new(&spec).map_err(in_module("fgauss"))?;
    let gram = IncrementGram::new(&spec);
    let mut c_samples: Vec<Vec<CovMatrix>> = Vec::new();
    let mut ratios = Vec::new();
    for &e in &eps {
        let pairs = ordered_map(samples, |k| -> hypodense::Result<(CovMatrix, f64)> {
            let x = lift_grid_path(&sampler.path(seed, k as u64), spec.hurst.depth())?;
            let s: SolveResult =
                solve_scaled_shifted(&model.fields, &model.start, &x, &gamma, e, spec.hurst, SolveOptions::default())?;
            let c = reduced_cov_c(&model.fields, &s, e)?;
            let q = stochastic_q(&model.fields, &s, &gram, e)?;
            let r = nondegeneracy_ratio(&q, &c, s.j.last().expect("jacobians requested"));
            Ok((c, r))
        })
        .into_iter()
        .collect::<hypodense::Result<Vec<_>>>()
        .map_err(in_module("malliavin"))?;
        let (cs, mut rs): (Vec<CovMatrix>, Vec<f64>) = pairs.into_iter().unzip();
        rs.sort_by(f64::total_cmp);
        let q = |p: f64| rs[((rs.len() - 1) as f64 * p).round() as usize];
        ratios.push(RatioSummary {
            epsilon: e,
            quantiles: [q(0.01), q(0.5), q(0.99)],
        });
        c_samples.push(cs);
    }
    let tail = eigen_tail(&c_samples, &eps).map_err(in_module("malliavin"))?;
    out.write_json("tail.json", &tail)?;
    out.write_json("ratios.json", &ratios)?;
    out.write_csv(
        "tail.csv",
        &["epsilon", "q01", "q10", "q50", "q90", "q99", "mean_inverse"],
        tail.per_epsilon.iter().map(|p| {
            let mut row = vec![p.epsilon];
            row.extend(p.quantiles);
            row.push(p.mean_inverse);
            row
        }),
    )?;
    Ok(format!(
        "det Q(γ̄) = {:.6}, λ_min Q(γ̄) = {:.6}, μ̂ = {}",
        res.q_at_min.det(),
        res.q_at_min.min_eigenvalue(),
        tail.mu_hat.map_or("n/a".to_string(), |m| format!("{m:.3}"))
    ))
}

fn hormander(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let model = Model::from_config(cfg)?;
    let point = cfg.list("point")?.unwrap_or_else(|| model.start.clone());
    let depth: usize = cfg.parse_or("depth", 2)?;
    let report = hormander_rank(&model.fields, &point, depth).map_err(in_module("malliavin"))?;
    out.write_json("hormander.json", &report)?;
    let ranks: Vec<String> = report.ranks.iter().map(usize::to_string).collect();
    Ok(format!(
        "ranks by depth ({}) of n = {}; condition {}",
        ranks.join(", "),
        report.state_dim,
        if report.satisfied() { "holds" } else { "fails" }
    ))
}

fn indices(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let set: IndexSet = cfg
        .str_or("set", "L1")
        .parse()
        .map_err(|e: hypodense::Error| CliError::Config(e.to_string()))?;
    let cutoff: f64 = cfg.parse_or("cutoff", 4.0)?;
    let values: Vec<String> = enumerate_exponents(cfg.hurst()?, set, cutoff)
        .iter()
        .map(|e| e.value().to_string())
        .collect();
    let line = values.join(",");
    out.write_text("indices.csv", &format!("{line}\n"))?;
    Ok(line)
}

fn density_options(cfg: &RunConfig, method: DensityMethod) -> Result<DensityOptions, CliError> {
    let d = DensityOptions::default();
    Ok(DensityOptions {
        method,
        samples: cfg.parse_or("samples", d.samples)?,
        bandwidth: cfg.opt("bandwidth")?,
        seed: cfg.seed()?,
        tilt: cfg.bool_or("tilt", d.tilt)?,
        radius: cfg.opt("radius")?,
        batches: cfg.parse_or("batches", d.batches)?,
    })
}

fn decreasing_ts(cfg: &RunConfig, default: &[f64]) -> Result<Vec<f64>, CliError> {
    let ts = cfg.list("t")?.unwrap_or_else(|| default.to_vec());
    if ts.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(CliError::Config("t values must lie in (0, 1]".into()));
    }
    Ok(ts)
}

fn density(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let model = Model::from_config(cfg)?;
    let spec = model.spec(cfg)?;
    let method: DensityMethod = cfg
        .str_or("method", "shifted")
        .parse()
        .map_err(|e: hypodense::Error| CliError::Config(e.to_string()))?;
    let opts = density_options(cfg, method)?;
    let ts = decreasing_ts(cfg, &[0.5])?;
    let res = match method {
        DensityMethod::Shifted => Some(minimise(cfg, &model, spec)?),
        DensityMethod::Plain => None,
    };
    let problem = DensityProblem {
        label: model.name.clone(),
        vf: &model.fields,
        start: model.start.clone(),
        target: model.target.clone(),
        spec,
        minimizer: res.as_ref(),
    };
    let est = estimate_density_curve(&problem, &ts, &opts).map_err(in_module("asymptotics"))?;
    let rows: Vec<Vec<String>> = est
        .points
        .iter()
        .map(|p| {
            let exact = model.exact_density(p.t, spec.hurst);
            vec![
                p.t.to_string(),
                p.estimate.to_string(),
                p.std_error.to_string(),
                p.hits.to_string(),
                p.outer_share.to_string(),
                exact.map_or(String::new(), |v| v.to_string()),
            ]
        })
        .collect();
    out.write_csv("density.csv", &["t", "estimate", "std_error", "hits", "outer_share", "oracle"], rows)?;
    out.write_json("density.json", &est)?;
    let lines: Vec<String> = est
        .points
        .iter()
        .map(|p| {
            let mut s = format!("t = {}: p̂ = {:.6e} ± {:.1e}", p.t, p.estimate, p.std_error);
            if let Some(exact) = model.exact_density(p.t, spec.hurst) {
                s.push_str(&format!(", closed form {exact:.6e} (ratio {:.4})", p.estimate / exact));
            }
            s
        })
        .collect();
    Ok(lines.join("\n"))
}

fn asymptotics(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let model = Model::from_config(cfg)?;
    let spec = model.spec(cfg)?;
    let ts = decreasing_ts(cfg, &[0.4, 0.2, 0.1])?;
    let mut opts = density_options(cfg, DensityMethod::Shifted)?;
    opts.samples = cfg.parse_or("samples", 50_000)?;
    let res = minimise(cfg, &model, spec)?;
    let problem = DensityProblem {
        label: model.name.clone(),
        vf: &model.fields,
        start: model.start.clone(),
        target: model.target.clone(),
        spec,
        minimizer: Some(&res),
    };
    let est = estimate_density_curve(&problem, &ts, &opts).map_err(in_module("asymptotics"))?;
    out.write_json("density.json", &est)?;
    let n = model.fields.state_dim();
    let fit = fit_asymptotics(&est, 2.0 * res.energy, n, spec.hurst, model.fields.has_drift())
        .map_err(in_module("asymptotics"))?;
    out.write_json("fit.json", &fit)?;
    let mut summary = format!(
        "rate {:.4} (‖γ̄‖² = {:.4}), prefactor exponent {:.4} (−nH = {:.4}), α₀ fit {:.5}",
        fit.rate_hat,
        2.0 * res.energy,
        fit.prefactor_exp_hat,
        -(n as f64) * spec.h(),
        fit.alpha0_hat
    );
    let alpha_samples: usize = cfg.parse_or("alpha_samples", 0)?;
    if alpha_samples > 0 {
        let lc = leading_coefficient(
            &model.fields,
            &res,
            alpha_samples,
            cfg.opt("bandwidth")?,
            opts.seed,
            cfg.bool_or("sanity", false)?,
        )
        .map_err(in_module("asymptotics"))?;
        out.write_json("leading_coefficient.json", &lc)?;
        summary.push_str(&format!(", α₀ direct {:.5} ± {:.1e}", lc.alpha0, lc.std_error));
    }
    Ok(summary)
}
