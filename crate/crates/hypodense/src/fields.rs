//! Coefficient vector fields V₀ (drift) and V₁…V_d, with exact derivatives
//! obtained by evaluating the fields over dual numbers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{Dual, Scalar};

/// Smooth vector fields on ℝⁿ. Index 0 is the drift V₀, indices 1..=d the
/// noise fields. Implementations are generic over the scalar type so that
/// derivatives of every order come from automatic differentiation.
pub trait VectorFieldSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn has_drift(&self) -> bool;

    /// Writes V_i(y) into `out` (length n).
    fn eval<T: Scalar>(&self, i: usize, y: &[T], out: &mut [T]);

    /// Highest derivative order the fields support, `None` if smooth.
    fn max_derivative_order(&self) -> Option<usize> {
        None
    }

    fn eval_vec<T: Scalar>(&self, i: usize, y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.state_dim()];
        self.eval(i, y, &mut out);
        out
    }
}

/// Monomial `coeff·∏ y_j^{powers_j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Vector fields with polynomial components. `fields[i][k]` lists the terms of
/// component k of V_i; an empty drift means the drift is absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialFields {
    n: usize,
    d: usize,
    fields: Vec<Vec<Vec<Term>>>,
}

impl PolynomialFields {
    pub fn new(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            fields: vec![vec![Vec::new(); n]; d + 1],
        }
    }

    /// Adds `coeff·∏ y_j^{powers_j}` to component `k` of V_i.
    pub fn add_term(&mut self, i: usize, k: usize, coeff: f64, powers: &[u32]) -> Result<()> {
        if i > self.d || k >= self.n {
            return invalid(format!("field V{i} component {k} outside n={}, d={}", self.n, self.d));
        }
        if powers.len() > self.n {
            return invalid("monomial has more variables than the state");
        }
        let mut p = powers.to_vec();
        p.resize(self.n, 0);
        self.fields[i][k].push(Term { coeff, powers: p });
        Ok(())
    }

    /// Heisenberg fields V₁ = ∂₁ + 2y²∂₃, V₂ = ∂₂ − 2y¹∂₃ on ℝ³.
    pub fn heisenberg() -> Self {
        let mut f = Self::new(3, 2);
        f.add_term(1, 0, 1.0, &[]).unwrap();
        f.add_term(1, 2, 2.0, &[0, 1]).unwrap();
        f.add_term(2, 1, 1.0, &[]).unwrap();
        f.add_term(2, 2, -2.0, &[1]).unwrap();
        f
    }

    /// Geometric Brownian-type field V₁(y) = σy on ℝ.
    pub fn lognormal(sigma: f64) -> Self {
        let mut f = Self::new(1, 1);
        f.add_term(1, 0, sigma, &[1]).unwrap();
        f
    }

    /// Constant field V₁ = 1 on ℝ.
    pub fn bridge1d() -> Self {
        let mut f = Self::new(1, 1);
        f.add_term(1, 0, 1.0, &[]).unwrap();
        f
    }

    /// V_i = e_i on ℝⁿ.
    pub fn elliptic(n: usize) -> Self {
        let mut f = Self::new(n, n);
        for i in 0..n {
            f.add_term(i + 1, i, 1.0, &[]).unwrap();
        }
        f
    }

    /// Adds a drift term; convenience for building test models.
    pub fn with_drift(mut self, k: usize, coeff: f64, powers: &[u32]) -> Result<Self> {
        self.add_term(0, k, coeff, powers)?;
        Ok(self)
    }

    /// Parses a field description, one term per line:
    ///
    /// ```text
    /// dim = 3
    /// noise = 2
    /// V1[3] = 2*y2
    /// V0[1] = -0.5*y1^2*y3
    /// ```
    ///
    /// Components and variables are 1-based; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut n = None;
        let mut d = None;
        let mut pending = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (lhs, rhs) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected `=`", lineno + 1)))?;
            let (lhs, rhs) = (lhs.trim(), rhs.trim());
            match lhs {
                "dim" => n = Some(parse_usize(rhs, lineno)?),
                "noise" => d = Some(parse_usize(rhs, lineno)?),
                _ => pending.push((lineno, lhs.to_string(), rhs.to_string())),
            }
        }
        let (n, d) = match (n, d) {
            (Some(n), Some(d)) if n > 0 && d > 0 => (n, d),
            _ => return invalid("field file needs positive `dim` and `noise`"),
        };
        let mut f = Self::new(n, d);
        for (lineno, lhs, rhs) in pending {
            let err = || Error::InvalidArgument(format!("line {}: bad target `{lhs}`", lineno + 1));
            let body = lhs.strip_prefix('V').ok_or_else(err)?;
            let (fi, comp) = body.split_once('[').ok_or_else(err)?;
            let comp = comp.strip_suffix(']').ok_or_else(err)?;
            let fi: usize = fi.trim().parse().map_err(|_| err())?;
            let comp: usize = comp.trim().parse().map_err(|_| err())?;
            if comp == 0 {
                return Err(err());
            }
            for (coeff, powers) in parse_polynomial(&rhs, n)
                .map_err(|m| Error::InvalidArgument(format!("line {}: {m}", lineno + 1)))?
            {
                f.add_term(fi, comp - 1, coeff, &powers)?;
            }
        }
        Ok(f)
    }
}

fn parse_usize(s: &str, lineno: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::InvalidArgument(format!("line {}: expected an integer", lineno + 1)))
}

fn parse_polynomial(src: &str, n: usize) -> std::result::Result<Vec<(f64, Vec<u32>)>, String> {
    let mut terms = Vec::new();
    let s: String = src.chars().filter(|c| !c.is_whitespace()).collect();
    let mut chunks = Vec::new();
    let mut start = 0;
    for (i, c) in s.char_indices() {
        let after_exp = i > 0 && matches!(s.as_bytes()[i - 1], b'e' | b'E');
        if (c == '+' || c == '-') && i > start && !after_exp {
            chunks.push(&s[start..i]);
            start = i;
        }
    }
    chunks.push(&s[start..]);
    for chunk in chunks {
        if chunk.is_empty() {
            return Err("empty term".into());
        }
        let (sign, body) = match chunk.as_bytes()[0] {
            b'-' => (-1.0, &chunk[1..]),
            b'+' => (1.0, &chunk[1..]),
            _ => (1.0, chunk),
        };
        let mut coeff = sign;
        let mut powers = vec![0u32; n];
        for factor in body.split('*') {
            if let Some(var) = factor.strip_prefix('y') {
                let (idx, pow) = match var.split_once('^') {
                    Some((a, b)) => (a, b.parse::<u32>().map_err(|_| format!("bad power in `{factor}`"))?),
                    None => (var, 1),
                };
                let idx: usize = idx.parse().map_err(|_| format!("bad variable `{factor}`"))?;
                if idx == 0 || idx > n {
                    return Err(format!("variable y{idx} outside 1..={n}"));
                }
                powers[idx - 1] += pow;
            } else {
                coeff *= factor
                    .parse::<f64>()
                    .map_err(|_| format!("bad factor `{factor}`"))?;
            }
        }
        terms.push((coeff, powers));
    }
    Ok(terms)
}

impl VectorFieldSystem for PolynomialFields {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn noise_dim(&self) -> usize {
        self.d
    }

    fn has_drift(&self) -> bool {
        self.fields[0].iter().any(|c| !c.is_empty())
    }

    fn eval<T: Scalar>(&self, i: usize, y: &[T], out: &mut [T]) {
        for (k, comp) in self.fields[i].iter().enumerate() {
            let mut acc = T::zero();
            for term in comp {
                let mut m = T::from_f64(term.coeff);
                for (j, &p) in term.powers.iter().enumerate() {
                    if p > 0 {
                        m *= y[j].powi(p as i32);
                    }
                }
                acc += m;
            }
            out[k] = acc;
        }
    }
}

/// Jacobian ∇V_i(y) as an n×n matrix (row = component, column = variable).
pub fn field_jacobian<V: VectorFieldSystem>(vf: &V, i: usize, y: &[f64]) -> DMatrix<f64> {
    let n = vf.state_dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut z: Vec<Dual<f64>> = y.iter().map(|&v| Dual::constant(v)).collect();
    for l in 0..n {
        z[l].eps = 1.0;
        let out = vf.eval_vec(i, &z);
        for k in 0..n {
            jac[(k, l)] = out[k].eps;
        }
        z[l].eps = 0.0;
    }
    jac
}

/// σ(y) = [V₁(y), …, V_d(y)] as an n×d matrix.
pub fn sigma_matrix<V: VectorFieldSystem>(vf: &V, y: &[f64]) -> DMatrix<f64> {
    let (n, d) = (vf.state_dim(), vf.noise_dim());
    let mut s = DMatrix::zeros(n, d);
    for i in 0..d {
        let v = vf.eval_vec(i + 1, y);
        for k in 0..n {
            s[(k, i)] = v[k];
        }
    }
    s
}

/// Largest relative disagreement between the AD Jacobians of all fields and
/// central finite differences with step `h`.
pub fn finite_difference_defect<V: VectorFieldSystem>(vf: &V, y: &[f64], h: f64) -> f64 {
    let n = vf.state_dim();
    let mut worst: f64 = 0.0;
    for i in 0..=vf.noise_dim() {
        let jac = field_jacobian(vf, i, y);
        for l in 0..n {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[l] += h;
            ym[l] -= h;
            let fp = vf.eval_vec(i, &yp);
            let fm = vf.eval_vec(i, &ym);
            for k in 0..n {
                let fd = (fp[k] - fm[k]) / (2.0 * h);
                let scale = jac[(k, l)].abs().max(1.0);
                worst = worst.max((fd - jac[(k, l)]).abs() / scale);
            }
        }
    }
    worst
}
