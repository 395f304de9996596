//! Scalar arithmetic used by every numerical kernel.
//!
//! Vector fields and the Euler scheme are written once over [`Scalar`] and then
//! evaluated with plain `f64`, forward-mode duals (exact derivatives), nilpotent
//! multi-generator numbers (iterated Lie brackets) or lattice jets (Taylor
//! coefficients in ε and ε^{1/H}).

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::Mutex;

use crate::error::{Error, Result};

pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(v: f64) -> Self;
    /// Real part (the value with every infinitesimal set to zero).
    fn re(&self) -> f64;
    fn scale(self, c: f64) -> Self;
    fn recip(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn powi(self, n: i32) -> Self {
        if n < 0 {
            return self.recip().powi(-n);
        }
        let mut acc = Self::one();
        let mut base = self;
        let mut k = n as u32;
        while k > 0 {
            if k & 1 == 1 {
                acc *= base;
            }
            base = base * base;
            k >>= 1;
        }
        acc
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn re(&self) -> f64 {
        *self
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// First-order forward-mode dual number `re + eps·η` with `η² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Self { re, eps }
    }

    pub fn constant(re: T) -> Self {
        Self { re, eps: T::zero() }
    }

    pub fn variable(re: T) -> Self {
        Self { re, eps: T::one() }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> AddAssign for Dual<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Scalar> SubAssign for Dual<T> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Scalar> MulAssign for Dual<T> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn from_f64(v: f64) -> Self {
        Self::constant(T::from_f64(v))
    }
    fn re(&self) -> f64 {
        self.re.re()
    }
    fn scale(self, c: f64) -> Self {
        Self::new(self.re.scale(c), self.eps.scale(c))
    }
    fn recip(self) -> Self {
        let r = self.re.recip();
        Self::new(r, -(self.eps * r * r))
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Self::new(e, e * self.eps)
    }
    fn ln(self) -> Self {
        Self::new(self.re.ln(), self.eps * self.re.recip())
    }
    fn sin(self) -> Self {
        Self::new(self.re.sin(), self.re.cos() * self.eps)
    }
    fn cos(self) -> Self {
        Self::new(self.re.cos(), -(self.re.sin() * self.eps))
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Self::new(s, self.eps * s.scale(2.0).recip())
    }
}

/// Elementary functions supported by the nilpotent types, expanded around the
/// real part through their derivative sequences.
#[derive(Clone, Copy)]
enum Elementary {
    Exp,
    Ln,
    Sin,
    Cos,
    Pow(f64),
}

fn derivatives(f: Elementary, x: f64, order: usize) -> Vec<f64> {
    let mut d = Vec::with_capacity(order + 1);
    match f {
        Elementary::Exp => d.resize(order + 1, x.exp()),
        Elementary::Ln => {
            d.push(x.ln());
            let mut fact = 1.0;
            for k in 1..=order {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                d.push(sign * fact / x.powi(k as i32));
                fact *= k as f64;
            }
        }
        Elementary::Sin | Elementary::Cos => {
            let (s, c) = x.sin_cos();
            let cycle = [s, c, -s, -c];
            let offset = if matches!(f, Elementary::Sin) { 0 } else { 1 };
            for k in 0..=order {
                d.push(cycle[(k + offset) % 4]);
            }
        }
        Elementary::Pow(alpha) => {
            let mut coef = 1.0;
            for k in 0..=order {
                d.push(coef * x.powf(alpha - k as f64));
                coef *= alpha - k as f64;
            }
        }
    }
    d
}

/// Shared plumbing for number types of the form `c₀ + r` with `r` nilpotent.
trait Nilpotent: Scalar {
    fn head(&self) -> f64;
    fn tail(self) -> Self;
    fn nil_order(&self) -> usize;

    fn compose(self, f: Elementary) -> Self {
        let order = self.nil_order();
        let d = derivatives(f, self.head(), order);
        let r = self.tail();
        let mut acc = Self::from_f64(d[0]);
        let mut power = Self::one();
        let mut fact = 1.0;
        for (k, dk) in d.iter().enumerate().skip(1) {
            power *= r;
            fact *= k as f64;
            acc += power.scale(dk / fact);
        }
        acc
    }
}

pub const HYPER_GENERATORS: usize = 4;
const HYPER_LEN: usize = 1 << HYPER_GENERATORS;

/// Number with up to four nilpotent generators `η_g` (`η_g² = 0`, commuting),
/// stored as coefficients indexed by generator subsets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    c: [f64; HYPER_LEN],
}

impl Hyper {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; HYPER_LEN];
        c[0] = v;
        Self { c }
    }

    /// The pure generator `η_g`.
    pub fn generator(g: usize) -> Self {
        assert!(g < HYPER_GENERATORS, "generator index out of range");
        let mut c = [0.0; HYPER_LEN];
        c[1 << g] = 1.0;
        Self { c }
    }

    pub fn coeff(&self, mask: usize) -> f64 {
        self.c[mask]
    }

    /// Coefficient of `η_g` as a number in the remaining generators.
    pub fn d_by(&self, g: usize) -> Self {
        let bit = 1 << g;
        let mut c = [0.0; HYPER_LEN];
        for (s, v) in self.c.iter().enumerate() {
            if s & bit != 0 {
                c[s & !bit] = *v;
            }
        }
        Self { c }
    }
}

impl Add for Hyper {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        for (a, b) in self.c.iter_mut().zip(o.c.iter()) {
            *a += b;
        }
        self
    }
}

impl Sub for Hyper {
    type Output = Self;
    fn sub(mut self, o: Self) -> Self {
        for (a, b) in self.c.iter_mut().zip(o.c.iter()) {
            *a -= b;
        }
        self
    }
}

impl Mul for Hyper {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut c = [0.0; HYPER_LEN];
        for s in 0..HYPER_LEN {
            let mut sub = s;
            loop {
                c[s] += self.c[sub] * o.c[s ^ sub];
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & s;
            }
        }
        Self { c }
    }
}

impl Div for Hyper {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl Neg for Hyper {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl AddAssign for Hyper {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl SubAssign for Hyper {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl MulAssign for Hyper {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl Nilpotent for Hyper {
    fn head(&self) -> f64 {
        self.c[0]
    }
    fn tail(mut self) -> Self {
        self.c[0] = 0.0;
        self
    }
    fn nil_order(&self) -> usize {
        HYPER_GENERATORS
    }
}

impl Scalar for Hyper {
    fn from_f64(v: f64) -> Self {
        Self::constant(v)
    }
    fn re(&self) -> f64 {
        self.c[0]
    }
    fn scale(mut self, k: f64) -> Self {
        for v in self.c.iter_mut() {
            *v *= k;
        }
        self
    }
    fn recip(self) -> Self {
        self.compose(Elementary::Pow(-1.0))
    }
    fn exp(self) -> Self {
        self.compose(Elementary::Exp)
    }
    fn ln(self) -> Self {
        self.compose(Elementary::Ln)
    }
    fn sin(self) -> Self {
        self.compose(Elementary::Sin)
    }
    fn cos(self) -> Self {
        self.compose(Elementary::Cos)
    }
    fn sqrt(self) -> Self {
        self.compose(Elementary::Pow(0.5))
    }
}

pub const JET_CAPACITY: usize = 16;

/// Monomial layout of a lattice jet: all `εᵘθᵛ` with `u + v/H ≤ cutoff`,
/// where θ stands for ε^{1/H}.
#[derive(Debug)]
pub struct JetBasis {
    pub inv_h: f64,
    pub cutoff: f64,
    monos: Vec<(u32, u32)>,
    table: Vec<(u8, u8, u8)>,
    order: usize,
}

static JET_BASES: Mutex<Vec<&'static JetBasis>> = Mutex::new(Vec::new());

impl JetBasis {
    /// Interned basis for `(1/H, cutoff)`; fails when it needs more than
    /// [`JET_CAPACITY`] monomials.
    pub fn get(inv_h: f64, cutoff: f64) -> Result<&'static JetBasis> {
        if !(inv_h >= 1.0) || !(cutoff >= 0.0) || !cutoff.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "jet basis needs 1/H ≥ 1 and finite cutoff ≥ 0 (got {inv_h}, {cutoff})"
            )));
        }
        let mut reg = JET_BASES.lock().expect("jet registry poisoned");
        if let Some(b) = reg
            .iter()
            .find(|b| b.inv_h.to_bits() == inv_h.to_bits() && b.cutoff.to_bits() == cutoff.to_bits())
        {
            return Ok(b);
        }
        let tol = 1e-9;
        let value = |u: u32, v: u32| u as f64 + v as f64 * inv_h;
        let mut monos = Vec::new();
        let mut v = 0u32;
        while value(0, v) <= cutoff + tol {
            let mut u = 0u32;
            while value(u, v) <= cutoff + tol {
                monos.push((u, v));
                u += 1;
            }
            v += 1;
        }
        if monos.len() > JET_CAPACITY {
            return Err(Error::Capability(format!(
                "cutoff {cutoff} at 1/H = {inv_h} needs {} jet monomials (capacity {JET_CAPACITY})",
                monos.len()
            )));
        }
        monos.sort_by(|a, b| {
            value(a.0, a.1)
                .partial_cmp(&value(b.0, b.1))
                .expect("finite exponent values")
                .then(a.cmp(b))
        });
        let mut table = Vec::new();
        for (i, a) in monos.iter().enumerate() {
            for (j, b) in monos.iter().enumerate() {
                let prod = (a.0 + b.0, a.1 + b.1);
                if let Some(k) = monos.iter().position(|m| *m == prod) {
                    table.push((i as u8, j as u8, k as u8));
                }
            }
        }
        let order = cutoff.floor() as usize;
        let basis: &'static JetBasis = Box::leak(Box::new(JetBasis {
            inv_h,
            cutoff,
            monos,
            table,
            order,
        }));
        reg.push(basis);
        Ok(basis)
    }

    pub fn monomials(&self) -> &[(u32, u32)] {
        &self.monos
    }

    pub fn index_of(&self, u: u32, v: u32) -> Option<usize> {
        self.monos.iter().position(|m| *m == (u, v))
    }

    pub fn value_of(&self, idx: usize) -> f64 {
        let (u, v) = self.monos[idx];
        u as f64 + v as f64 * self.inv_h
    }
}

/// Truncated bivariate power series in ε and θ = ε^{1/H}.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    basis: Option<&'static JetBasis>,
    c: [f64; JET_CAPACITY],
}

impl Jet {
    pub fn constant(basis: &'static JetBasis, v: f64) -> Self {
        let mut c = [0.0; JET_CAPACITY];
        c[0] = v;
        Self {
            basis: Some(basis),
            c,
        }
    }

    /// `coeff·εᵘθᵛ`; zero when the monomial lies above the cutoff.
    pub fn monomial(basis: &'static JetBasis, u: u32, v: u32, coeff: f64) -> Self {
        let mut c = [0.0; JET_CAPACITY];
        if let Some(i) = basis.index_of(u, v) {
            c[i] = coeff;
        }
        Self {
            basis: Some(basis),
            c,
        }
    }

    pub fn basis(&self) -> Option<&'static JetBasis> {
        self.basis
    }

    pub fn coeff(&self, u: u32, v: u32) -> f64 {
        match self.basis {
            Some(b) => b.index_of(u, v).map_or(0.0, |i| self.c[i]),
            None if (u, v) == (0, 0) => self.c[0],
            None => 0.0,
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        match self.basis {
            Some(b) => &self.c[..b.monos.len()],
            None => &self.c[..1],
        }
    }

    /// Sum the series at a concrete ε.
    pub fn eval(&self, eps: f64) -> f64 {
        match self.basis {
            None => self.c[0],
            Some(b) => b
                .monos
                .iter()
                .zip(self.c.iter())
                .map(|(&(u, v), c)| c * eps.powi(u as i32) * eps.powf(v as f64 * b.inv_h))
                .sum(),
        }
    }

    fn join(a: Option<&'static JetBasis>, b: Option<&'static JetBasis>) -> Option<&'static JetBasis> {
        match (a, b) {
            (Some(x), Some(y)) => {
                debug_assert!(std::ptr::eq(x, y), "mixing jets with different bases");
                Some(x)
            }
            (x, None) => x,
            (None, y) => y,
        }
    }
}

impl PartialEq for Jet {
    fn eq(&self, o: &Self) -> bool {
        self.c == o.c
    }
}

impl Add for Jet {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self.basis = Jet::join(self.basis, o.basis);
        for (a, b) in self.c.iter_mut().zip(o.c.iter()) {
            *a += b;
        }
        self
    }
}

impl Sub for Jet {
    type Output = Self;
    fn sub(mut self, o: Self) -> Self {
        self.basis = Jet::join(self.basis, o.basis);
        for (a, b) in self.c.iter_mut().zip(o.c.iter()) {
            *a -= b;
        }
        self
    }
}

impl Mul for Jet {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        match (self.basis, o.basis) {
            (None, _) => o.scale(self.c[0]),
            (_, None) => self.scale(o.c[0]),
            (Some(b), Some(_)) => {
                let mut c = [0.0; JET_CAPACITY];
                for &(i, j, k) in &b.table {
                    c[k as usize] += self.c[i as usize] * o.c[j as usize];
                }
                Self { basis: Some(b), c }
            }
        }
    }
}

impl Div for Jet {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl Neg for Jet {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl AddAssign for Jet {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl SubAssign for Jet {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl MulAssign for Jet {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl Nilpotent for Jet {
    fn head(&self) -> f64 {
        self.c[0]
    }
    fn tail(mut self) -> Self {
        self.c[0] = 0.0;
        self
    }
    fn nil_order(&self) -> usize {
        self.basis.map_or(0, |b| b.order)
    }
}

impl Scalar for Jet {
    fn from_f64(v: f64) -> Self {
        let mut c = [0.0; JET_CAPACITY];
        c[0] = v;
        Self { basis: None, c }
    }
    fn re(&self) -> f64 {
        self.c[0]
    }
    fn scale(mut self, k: f64) -> Self {
        for v in self.c.iter_mut() {
            *v *= k;
        }
        self
    }
    fn recip(self) -> Self {
        self.compose(Elementary::Pow(-1.0))
    }
    fn exp(self) -> Self {
        self.compose(Elementary::Exp)
    }
    fn ln(self) -> Self {
        self.compose(Elementary::Ln)
    }
    fn sin(self) -> Self {
        self.compose(Elementary::Sin)
    }
    fn cos(self) -> Self {
        self.compose(Elementary::Cos)
    }
    fn sqrt(self) -> Self {
        self.compose(Elementary::Pow(0.5))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn f<T: Scalar>(x: T) -> T {
        (x.sin() * x.exp() + x.sqrt()).ln() + x.cos() * x.powi(3) / (x + T::one())
    }

    // Closed-form derivative of `f`, written out by hand.
    fn df(x: f64) -> f64 {
        let g = x.sin() * x.exp() + x.sqrt();
        let dg = x.cos() * x.exp() + x.sin() * x.exp() + 0.5 / x.sqrt();
        let h = x.cos() * x.powi(3) / (x + 1.0);
        let dh = (-x.sin() * x.powi(3) + 3.0 * x.cos() * x * x) / (x + 1.0) - h / (x + 1.0);
        dg / g + dh
    }

    #[test]
    fn dual_matches_hand_derivative() {
        for &x in &[0.3, 0.9, 1.7] {
            let d = f(Dual::variable(x));
            assert_relative_eq!(d.re, f(x), max_relative = 1e-14);
            assert_relative_eq!(d.eps, df(x), max_relative = 1e-12);
        }
    }

    #[test]
    fn nested_dual_gives_second_derivative() {
        let x = 0.7;
        let v = Dual::new(Dual::variable(x), Dual::constant(1.0));
        let d2 = f(v).eps.eps;
        let h = 1e-4;
        let fd = (df(x + h) - df(x - h)) / (2.0 * h);
        assert_relative_eq!(d2, fd, max_relative = 1e-7);
    }

    #[test]
    fn hyper_mixed_partials() {
        // g(x, y) = exp(x y) at (0.4, 1.3): ∂²g/∂x∂y = (1 + x y) e^{xy}.
        let x = Hyper::constant(0.4) + Hyper::generator(0);
        let y = Hyper::constant(1.3) + Hyper::generator(1);
        let g = (x * y).exp();
        let xy: f64 = 0.52;
        assert_relative_eq!(g.coeff(0b11), (1.0 + xy) * xy.exp(), max_relative = 1e-14);
        assert_relative_eq!(g.d_by(0).re(), 1.3 * xy.exp(), max_relative = 1e-14);
    }

    #[test]
    fn hyper_third_derivative_through_repeated_generators() {
        // x + η₀ + η₁ + η₂ evaluates f'''(x) on the η₀η₁η₂ coefficient.
        let x = 0.8;
        let v = Hyper::constant(x) + Hyper::generator(0) + Hyper::generator(1) + Hyper::generator(2);
        let got = v.ln().coeff(0b111);
        assert_relative_eq!(got, 2.0 / x.powi(3), max_relative = 1e-13);
    }

    #[test]
    fn jet_series_of_exp() {
        let b = JetBasis::get(2.0, 4.0).unwrap();
        let e = Jet::monomial(b, 1, 0, 1.0);
        let s = e.exp();
        for k in 0..=4u32 {
            let fact: f64 = (1..=k).map(|i| i as f64).product();
            assert_relative_eq!(s.coeff(k, 0), 1.0 / fact, max_relative = 1e-15);
        }
        // θ = ε² at H = 1/2 lives in its own slot.
        let t = Jet::monomial(b, 0, 1, 1.0);
        assert_relative_eq!((t * e).coeff(1, 1), 1.0);
        assert_eq!((t * t * e).coeff(1, 2), 0.0);
    }

    #[test]
    fn jet_eval_reproduces_function() {
        let b = JetBasis::get(2.5, 4.0).unwrap();
        let eps: f64 = 0.05;
        let x = Jet::constant(b, 1.2) + Jet::monomial(b, 1, 0, 0.7) + Jet::monomial(b, 0, 1, -0.4);
        let y = x.recip().sqrt();
        let xv = 1.2 + 0.7 * eps - 0.4 * eps.powf(2.5);
        assert_relative_eq!(y.eval(eps), 1.0 / xv.sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn jet_capacity_is_enforced() {
        assert!(matches!(JetBasis::get(2.0, 9.0), Err(Error::Capability(_))));
    }
}
