//! Paths on the uniform grid of [0,1] and their rough-path norms: p-variation,
//! Hölder and Besov norms, the control ω and the greedy count N_δ.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::roughlift::RoughPathGrid;
use crate::tensor_sig::TruncatedSignature;

/// Piecewise-linear path sampled at `t_k = k/M`, `k = 0..=M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    dim: usize,
    m: usize,
    values: Vec<f64>,
}

impl GridPath {
    /// `values` holds the M+1 points row by row.
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) || values.len() / dim < 2 {
            return invalid("grid path needs dim > 0 and at least two points");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("grid path values must be finite");
        }
        Ok(Self {
            dim,
            m: values.len() / dim - 1,
            values,
        })
    }

    pub fn zeros(dim: usize, m: usize) -> Self {
        Self {
            dim,
            m,
            values: vec![0.0; dim * (m + 1)],
        }
    }

    /// Samples `f(t)` at the grid times.
    pub fn from_fn(dim: usize, m: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(dim * (m + 1));
        for k in 0..=m {
            let v = f(k as f64 / m as f64);
            assert_eq!(v.len(), dim);
            values.extend(v);
        }
        Self { dim, m, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of cells M.
    pub fn cells(&self) -> usize {
        self.m
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.m as f64
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn point_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.point(self.m)
    }

    pub fn increment(&self, k: usize) -> Vec<f64> {
        let (a, b) = (self.point(k), self.point(k + 1));
        b.iter().zip(a).map(|(x, y)| x - y).collect()
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        (0..=self.m).map(|k| self.values[k * self.dim + i]).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim || self.m != other.m {
            return invalid("grid paths differ in shape");
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Self { dim: self.dim, m: self.m, values })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            m: self.m,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// max_k |x_k| with the Euclidean norm in space.
    pub fn sup_norm(&self) -> f64 {
        (0..=self.m)
            .map(|k| self.point(k).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Coarsens by keeping every `factor`-th point.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.m.is_multiple_of(factor) {
            return invalid(format!("cannot subsample {} cells by {factor}", self.m));
        }
        let mut values = Vec::with_capacity(self.dim * (self.m / factor + 1));
        for k in (0..=self.m).step_by(factor) {
            values.extend_from_slice(self.point(k));
        }
        Ok(Self { dim: self.dim, m: self.m / factor, values })
    }
}

/// Increment signatures `x_{t_a,t_b}` for all grid pairs, built by folding
/// cells left to right from every start point.
fn increment_table(x: &RoughPathGrid) -> Vec<Vec<TruncatedSignature>> {
    let m = x.cells();
    (0..=m)
        .map(|a| {
            let mut row = Vec::with_capacity(m + 1 - a);
            let mut acc = TruncatedSignature::identity(x.dim(), x.depth());
            row.push(acc.clone());
            for b in a..m {
                acc = acc.mul_unchecked(x.cell(b));
                row.push(acc.clone());
            }
            row
        })
        .collect()
}

fn grid_index(x: &RoughPathGrid, t: f64) -> Result<usize> {
    let m = x.cells();
    let k = (t * m as f64).round();
    if !(0.0..=m as f64).contains(&k) || (k / m as f64 - t).abs() > 1e-12 {
        return invalid(format!("time {t} is not a grid point of the {m}-cell grid"));
    }
    Ok(k as usize)
}

/// p/i-variation of level i over the grid interval [s,t].
pub fn pvar_norm(x: &RoughPathGrid, level: usize, p: f64, s: f64, t: f64) -> Result<f64> {
    if level == 0 || level > x.depth() {
        return invalid(format!("level {level} not present in depth-{} path", x.depth()));
    }
    let q = p / level as f64;
    if q < 1.0 {
        return invalid("p/i must be at least 1");
    }
    let (a, b) = (grid_index(x, s)?, grid_index(x, t)?);
    if a > b {
        return invalid("interval endpoints out of order");
    }
    let table: Vec<Vec<TruncatedSignature>> = increment_table_from(x, a, b);
    let row = variation_row(&table, 0, level, q);
    Ok(row[b - a].powf(1.0 / q))
}

fn increment_table_from(x: &RoughPathGrid, a: usize, b: usize) -> Vec<Vec<TruncatedSignature>> {
    (a..=b)
        .map(|start| {
            let mut row = vec![TruncatedSignature::identity(x.dim(), x.depth())];
            for c in start..b {
                let next = row.last().unwrap().mul_unchecked(x.cell(c));
                row.push(next);
            }
            row
        })
        .collect()
}

/// sup over grid pairs of |x^i_{s,t}| / (t−s)^{iα}.
pub fn holder_norm(x: &RoughPathGrid, level: usize, alpha: f64) -> Result<f64> {
    if level == 0 || level > x.depth() {
        return invalid(format!("level {level} not present"));
    }
    let table = increment_table(x);
    let m = x.cells();
    let e = level as f64 * alpha;
    let mut best: f64 = 0.0;
    for row in &table {
        for (len, sig) in row.iter().enumerate().skip(1) {
            best = best.max(sig.level_norm(level) / (len as f64 / m as f64).powf(e));
        }
    }
    Ok(best)
}

fn besov_integral(x: &RoughPathGrid, level: usize, alpha: f64, m_exp: f64) -> f64 {
    let m = x.cells();
    let h = 1.0 / m as f64;
    let q = m_exp / level as f64;
    let singular = 1.0 + alpha * m_exp;
    // Both halves of a cell carry the signature exp(½ log S_cell).
    let halves: Vec<TruncatedSignature> =
        (0..m).map(|k| x.cell(k).log().nil_scale(0.5).exp()).collect();
    let mut total = 0.0;
    for a in 0..m {
        // Cell a against itself: the cell is a segment, so |x^i_{s,t}| = c (t−s)^i.
        let c = x.cell(a).level_norm(level) / h.powi(level as i32);
        let pow = level as f64 * q - singular;
        if c > 0.0 {
            total += c.powf(q) * h.powf(pow + 2.0) / ((pow + 1.0) * (pow + 2.0));
        }
        // Off-diagonal cells by the midpoint rule.
        let mut acc = halves[a].clone();
        for b in a + 1..m {
            let sig = acc.mul_unchecked(&halves[b]);
            let dt = (b - a) as f64 * h;
            total += sig.level_norm(level).powf(q) / dt.powf(singular) * h * h;
            acc = acc.mul_unchecked(x.cell(b));
        }
    }
    total
}

/// Besov-type norm (∬_{s<t} |x^i_{s,t}|^{m/i} / (t−s)^{1+αm} ds dt)^{i/m}.
pub fn besov_norm(x: &RoughPathGrid, level: usize, alpha: f64, m_exp: f64) -> Result<f64> {
    if level == 0 || level > x.depth() {
        return invalid(format!("level {level} not present"));
    }
    if m_exp / (level as f64) < 1.0 || alpha <= 0.0 {
        return invalid("need m/i ≥ 1 and α > 0");
    }
    let fine = besov_integral(x, level, alpha, m_exp);
    if x.cells() >= 4 && x.cells() % 2 == 0 {
        let coarse = besov_integral(&x.coarsen(2)?, level, alpha, m_exp);
        if fine > 1.1 * coarse && fine > 1e-300 {
            return Err(Error::Divergence(format!(
                "Besov integral grew from {coarse:e} to {fine:e} under refinement"
            )));
        }
    }
    Ok(fine.powf(level as f64 / m_exp))
}

/// Control ω(s,t) = Σ_i ‖x^i‖^{p/i}_{p/i-var;[s,t]} tabulated at every grid pair.
#[derive(Clone, Debug)]
pub struct ControlEvaluator {
    m: usize,
    p: f64,
    table: Vec<Vec<f64>>,
}

impl ControlEvaluator {
    pub fn new(x: &RoughPathGrid, p: f64) -> Result<Self> {
        Self::with_levels(x, p, x.depth())
    }

    /// Control built from levels 1..=`levels` only.
    pub fn with_levels(x: &RoughPathGrid, p: f64, levels: usize) -> Result<Self> {
        if levels == 0 || levels > x.depth() {
            return invalid("level count outside the path depth");
        }
        if p < levels as f64 {
            return invalid("p must be at least the number of levels");
        }
        let inc = increment_table(x);
        let m = x.cells();
        let mut table = vec![vec![0.0; m + 1]; m + 1];
        for level in 1..=levels {
            let q = p / level as f64;
            for (a, row) in table.iter_mut().enumerate() {
                let v = variation_row(&inc, a, level, q);
                for b in a..=m {
                    row[b] += v[b];
                }
            }
        }
        Ok(Self { m, p, table })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn cells(&self) -> usize {
        self.m
    }

    /// ω(t_a, t_b) for grid indices a ≤ b.
    pub fn omega(&self, a: usize, b: usize) -> f64 {
        assert!(a <= b && b <= self.m);
        self.table[a][b]
    }
}

/// Exact grid-restricted variation sums: `out[b]` is the max over grid
/// partitions of [t_a, t_b] of Σ |x^i|^q.
fn variation_row(
    inc: &[Vec<TruncatedSignature>],
    a: usize,
    level: usize,
    q: f64,
) -> Vec<f64> {
    let m = inc.len() - 1;
    let mut v = vec![0.0; m + 1];
    for b in a + 1..=m {
        let mut best: f64 = 0.0;
        for u in a..b {
            best = best.max(v[u] + inc[u][b - u].level_norm(level).powf(q));
        }
        v[b] = best;
    }
    v
}

/// Greedy count N_δ: number of stopping times τ_i < 1 for
/// τ_{i+1} = first grid time t with ω(τ_i, t) ≥ δ, capped at 1.
pub fn greedy_count(omega: &ControlEvaluator, delta: f64) -> Result<usize> {
    if !(delta > 0.0) {
        return invalid("delta must be positive");
    }
    let m = omega.cells();
    let mut tau = 0;
    let mut count = 0;
    loop {
        let next = (tau + 1..=m).find(|&b| omega.omega(tau, b) >= delta);
        match next {
            Some(b) if b < m => {
                count += 1;
                tau = b;
            }
            _ => return Ok(count),
        }
    }
}
