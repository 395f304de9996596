//! Truncated tensor algebra over ℝ^d up to level 3.
//!
//! Words are stored in lexicographic order: `level2[i*d + j]` is the iterated
//! integral ∫∫_{u<v} dx^i_u dx^j_v, and similarly for level 3.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Group-like element `1 + x¹ + x² + x³` of the truncated tensor algebra.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSignature<T = f64> {
    dim: usize,
    depth: usize,
    data: Vec<T>,
}

fn level_len(dim: usize, depth: usize) -> usize {
    (1..=depth).map(|k| dim.pow(k as u32)).sum()
}

impl<T: Scalar> TruncatedSignature<T> {
    /// Identity element. Panics when `depth ∉ {1,2,3}` or `dim = 0`.
    pub fn identity(dim: usize, depth: usize) -> Self {
        assert!(dim > 0 && (1..=3).contains(&depth), "bad signature shape");
        Self {
            dim,
            depth,
            data: vec![T::zero(); level_len(dim, depth)],
        }
    }

    /// Builds an element from its level tensors; `levels.len()` sets the depth.
    pub fn from_levels(dim: usize, levels: &[&[T]]) -> Result<Self> {
        if dim == 0 || levels.is_empty() || levels.len() > 3 {
            return invalid("need dim > 0 and between one and three levels");
        }
        let mut data = Vec::with_capacity(level_len(dim, levels.len()));
        for (k, lv) in levels.iter().enumerate() {
            if lv.len() != dim.pow(k as u32 + 1) {
                return invalid(format!("level {} has length {}", k + 1, lv.len()));
            }
            data.extend_from_slice(lv);
        }
        Ok(Self {
            dim,
            depth: levels.len(),
            data,
        })
    }

    /// Signature of the straight segment with increment `delta`.
    pub fn segment(delta: &[T], depth: usize) -> Result<Self> {
        if !(1..=3).contains(&depth) {
            return invalid(format!("signature depth must be 1, 2 or 3 (got {depth})"));
        }
        if delta.is_empty() {
            return invalid("segment increment must be non-empty");
        }
        let d = delta.len();
        let mut s = Self::identity(d, depth);
        s.data[..d].copy_from_slice(delta);
        if depth >= 2 {
            for i in 0..d {
                for j in 0..d {
                    s.data[d + i * d + j] = (delta[i] * delta[j]).scale(0.5);
                }
            }
        }
        if depth == 3 {
            let off = d + d * d;
            for i in 0..d {
                for j in 0..d {
                    let dij = delta[i] * delta[j];
                    for k in 0..d {
                        s.data[off + (i * d + j) * d + k] = (dij * delta[k]).scale(1.0 / 6.0);
                    }
                }
            }
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn level1(&self) -> &[T] {
        &self.data[..self.dim]
    }

    pub fn level2(&self) -> &[T] {
        assert!(self.depth >= 2, "level 2 not present");
        &self.data[self.dim..self.dim + self.dim * self.dim]
    }

    pub fn level3(&self) -> &[T] {
        assert!(self.depth >= 3, "level 3 not present");
        &self.data[self.dim + self.dim * self.dim..]
    }

    /// Level `k` tensor (1-based).
    pub fn level(&self, k: usize) -> &[T] {
        match k {
            1 => self.level1(),
            2 => self.level2(),
            3 => self.level3(),
            _ => panic!("level {k} out of range"),
        }
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [T] {
        assert!(k >= 1 && k <= self.depth, "level {k} out of range");
        let d = self.dim;
        let start = level_len(d, k - 1);
        let end = start + d.pow(k as u32);
        &mut self.data[start..end]
    }

    pub fn get1(&self, i: usize) -> T {
        self.data[i]
    }

    pub fn get2(&self, i: usize, j: usize) -> T {
        self.data[self.dim + i * self.dim + j]
    }

    pub fn get3(&self, i: usize, j: usize, k: usize) -> T {
        let d = self.dim;
        self.data[d + d * d + (i * d + j) * d + k]
    }

    /// All coefficients, levels concatenated.
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Chen product `self ⊗ other`.
    pub fn chen_mul(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim || self.depth != other.depth {
            return invalid(format!(
                "chen_mul shape mismatch: ({}, {}) vs ({}, {})",
                self.dim, self.depth, other.dim, other.depth
            ));
        }
        Ok(self.mul_unchecked(other))
    }

    pub(crate) fn mul_unchecked(&self, other: &Self) -> Self {
        let d = self.dim;
        let mut out = self.clone();
        for i in 0..d {
            out.data[i] += other.data[i];
        }
        if self.depth >= 2 {
            for i in 0..d {
                let a = self.data[i];
                for j in 0..d {
                    let idx = d + i * d + j;
                    out.data[idx] += other.data[idx] + a * other.data[j];
                }
            }
        }
        if self.depth == 3 {
            let off = d + d * d;
            for i in 0..d {
                let a1 = self.data[i];
                for j in 0..d {
                    let a2 = self.data[d + i * d + j];
                    let b2 = other.data[d + j * d..d + j * d + d].to_vec();
                    for k in 0..d {
                        let idx = off + (i * d + j) * d + k;
                        out.data[idx] += other.data[idx] + a2 * other.data[k] + a1 * b2[k];
                    }
                }
            }
        }
        out
    }

    /// Dilation: level i scaled by cⁱ.
    pub fn dilate(&self, c: T) -> Self {
        let mut out = self.clone();
        let mut ck = c;
        for k in 1..=self.depth {
            for v in out.level_mut(k) {
                *v *= ck;
            }
            ck *= c;
        }
        out
    }

    /// Group inverse (the signature of the time-reversed path).
    pub fn inverse(&self) -> Self {
        let neg = self.nil_scale(-1.0);
        let sq = neg.nil_mul(&neg);
        let mut out = neg.nil_add(&sq);
        if self.depth == 3 {
            out = out.nil_add(&sq.nil_mul(&neg));
        }
        out
    }

    /// Truncated logarithm; the result is a Lie element stored in the same layout.
    pub fn log(&self) -> Self {
        let x2 = self.nil_mul(self);
        let mut out = self.nil_add(&x2.nil_scale(-0.5));
        if self.depth == 3 {
            out = out.nil_add(&x2.nil_mul(self).nil_scale(1.0 / 3.0));
        }
        out
    }

    /// Truncated exponential of an element with zero scalar part.
    pub fn exp(&self) -> Self {
        let x2 = self.nil_mul(self);
        let mut out = self.nil_add(&x2.nil_scale(0.5));
        if self.depth == 3 {
            out = out.nil_add(&x2.nil_mul(self).nil_scale(1.0 / 6.0));
        }
        out
    }

    /// Sum of the non-scalar parts, used for Lie-algebra arithmetic.
    pub fn nil_add(&self, other: &Self) -> Self {
        debug_assert_eq!((self.dim, self.depth), (other.dim, other.depth));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
        out
    }

    pub fn nil_scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = v.scale(c);
        }
        out
    }

    /// Tensor product of two elements with zero scalar part.
    pub fn nil_mul(&self, other: &Self) -> Self {
        let d = self.dim;
        let mut out = Self::identity(d, self.depth);
        if self.depth >= 2 {
            for i in 0..d {
                for j in 0..d {
                    out.data[d + i * d + j] = self.data[i] * other.data[j];
                }
            }
        }
        if self.depth == 3 {
            let off = d + d * d;
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        out.data[off + (i * d + j) * d + k] = self.data[i]
                            * other.data[d + j * d + k]
                            + self.data[d + i * d + j] * other.data[k];
                    }
                }
            }
        }
        out
    }

    /// Same element viewed in ℝ^{d+extra}, new coordinates carrying zero.
    pub fn embed(&self, new_dim: usize) -> Self {
        assert!(new_dim >= self.dim);
        let d = self.dim;
        let e = new_dim;
        let mut out = Self::identity(e, self.depth);
        for i in 0..d {
            out.data[i] = self.data[i];
        }
        if self.depth >= 2 {
            for i in 0..d {
                for j in 0..d {
                    out.data[e + i * e + j] = self.get2(i, j);
                }
            }
        }
        if self.depth == 3 {
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        out.data[e + e * e + (i * e + j) * e + k] = self.get3(i, j, k);
                    }
                }
            }
        }
        out
    }

    /// Largest coefficient-wise distance in real parts.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.re() - b.re()).abs())
            .fold(0.0, f64::max)
    }

    /// Largest deviation of sym(level 2) from ½ level1⊗level1.
    pub fn level2_symmetry_defect(&self) -> f64 {
        if self.depth < 2 {
            return 0.0;
        }
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let sym = 0.5 * (self.get2(i, j).re() + self.get2(j, i).re());
                let target = 0.5 * self.get1(i).re() * self.get1(j).re();
                worst = worst.max((sym - target).abs());
            }
        }
        worst
    }

    /// Euclidean norm of level k.
    pub fn level_norm(&self, k: usize) -> f64 {
        self.level(k).iter().map(|v| v.re() * v.re()).sum::<f64>().sqrt()
    }

    /// Real parts of all coefficients.
    pub fn to_f64(&self) -> TruncatedSignature<f64> {
        TruncatedSignature {
            dim: self.dim,
            depth: self.depth,
            data: self.data.iter().map(|v| v.re()).collect(),
        }
    }
}

impl TruncatedSignature<f64> {
    /// Lifts real coefficients into another scalar type.
    pub fn cast<T: Scalar>(&self) -> TruncatedSignature<T> {
        TruncatedSignature {
            dim: self.dim,
            depth: self.depth,
            data: self.data.iter().map(|&v| T::from_f64(v)).collect(),
        }
    }
}

/// Closed-form signature of a linear segment.
pub fn segment_signature(delta: &[f64], depth: usize) -> Result<TruncatedSignature> {
    TruncatedSignature::segment(delta, depth)
}

pub fn chen_mul(s1: &TruncatedSignature, s2: &TruncatedSignature) -> Result<TruncatedSignature> {
    s1.chen_mul(s2)
}

pub fn dilate_sig(s: &TruncatedSignature, c: f64) -> TruncatedSignature {
    s.dilate(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sig(v: &[f64], depth: usize) -> TruncatedSignature {
        segment_signature(v, depth).unwrap()
    }

    #[test]
    fn segment_closed_forms() {
        let s = sig(&[2.0], 3);
        assert_eq!(s.as_slice(), &[2.0, 2.0, 4.0 / 3.0]);
        let s = sig(&[1.0, 1.0], 2);
        assert_eq!(s.level2(), &[0.5, 0.5, 0.5, 0.5]);
        let z = sig(&[0.0, 0.0, 0.0], 3);
        assert!(z.as_slice().iter().all(|v| *v == 0.0));
        assert!(segment_signature(&[1.0], 4).is_err());
        assert!(segment_signature(&[1.0], 0).is_err());
    }

    #[test]
    fn identity_is_neutral_and_collinear_segments_merge() {
        let v = [0.3, -1.2];
        let s = sig(&v, 3);
        let id = TruncatedSignature::identity(2, 3);
        assert_eq!(id.chen_mul(&s).unwrap(), s);
        let two = s.chen_mul(&s).unwrap();
        let direct = sig(&[0.6, -2.4], 3);
        assert!(two.max_abs_diff(&direct) < 1e-15);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = sig(&[1.0, 2.0], 2);
        assert!(a.chen_mul(&sig(&[1.0, 2.0], 3)).is_err());
        assert!(a.chen_mul(&sig(&[1.0, 2.0, 3.0], 2)).is_err());
    }

    #[test]
    fn dilation_examples() {
        let s = sig(&[1.0], 3);
        assert_eq!(s.dilate(1.0), s);
        assert!(s.dilate(0.0).as_slice().iter().all(|v| *v == 0.0));
        let d = s.dilate(2.0);
        assert_relative_eq!(d.get1(0), 2.0);
        assert_relative_eq!(d.get2(0, 0), 2.0);
        assert_relative_eq!(d.get3(0, 0, 0), 4.0 / 3.0);
    }

    // Iterated integrals of a polyline by brute-force quadrature: each segment is
    // split into `n` sub-steps; level 2 uses the midpoint rule and level 3
    // Simpson's rule, exact for the linear and quadratic integrands involved.
    fn brute_force_signature(segments: &[Vec<f64>], n: usize) -> Vec<f64> {
        let d = segments[0].len();
        let mut s1 = vec![0.0; d];
        let mut s2 = vec![0.0; d * d];
        let mut s3 = vec![0.0; d * d * d];
        for seg in segments {
            let dx: Vec<f64> = seg.iter().map(|v| v / n as f64).collect();
            for _ in 0..n {
                let mid1: Vec<f64> = (0..d).map(|i| s1[i] + 0.5 * dx[i]).collect();
                let mut mid2 = s2.clone();
                let mut end2 = s2.clone();
                for i in 0..d {
                    for j in 0..d {
                        mid2[i * d + j] += 0.5 * s1[i] * dx[j] + dx[i] * dx[j] / 8.0;
                        end2[i * d + j] += s1[i] * dx[j] + dx[i] * dx[j] / 2.0;
                    }
                }
                for i in 0..d {
                    for j in 0..d {
                        let ij = i * d + j;
                        let avg = (s2[ij] + 4.0 * mid2[ij] + end2[ij]) / 6.0;
                        for k in 0..d {
                            s3[ij * d + k] += avg * dx[k];
                        }
                    }
                }
                for i in 0..d {
                    for j in 0..d {
                        s2[i * d + j] += mid1[i] * dx[j];
                    }
                }
                for i in 0..d {
                    s1[i] += dx[i];
                }
            }
        }
        let mut out = s1;
        out.extend(s2);
        out.extend(s3);
        out
    }

    #[test]
    fn chen_matches_brute_force_quadrature() {
        let segs = vec![vec![0.4, -0.7], vec![1.1, 0.2], vec![-0.5, 0.9]];
        let s = segs
            .iter()
            .map(|v| sig(v, 3))
            .reduce(|a, b| a.chen_mul(&b).unwrap())
            .unwrap();
        let oracle = brute_force_signature(&segs, 10_000);
        for (a, b) in s.as_slice().iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn log_exp_round_trip() {
        let s = sig(&[0.2, -0.4, 0.9], 3)
            .chen_mul(&sig(&[1.0, 0.3, -0.2], 3))
            .unwrap();
        let back = s.log().exp();
        assert!(back.max_abs_diff(&s) < 1e-14);
        // log of a segment is the increment alone.
        let l = sig(&[0.5, 0.25], 3).log();
        assert!(l.as_slice()[2..].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn embed_keeps_coefficients() {
        let s = sig(&[0.5, -0.25], 3);
        let e = s.embed(3);
        assert_eq!(e.get3(0, 1, 0), s.get3(0, 1, 0));
        assert_eq!(e.get2(2, 0), 0.0);
    }

    fn increments(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, d)
    }

    proptest! {
        #[test]
        fn associativity(a in increments(3), b in increments(3), c in increments(3)) {
            let (x, y, z) = (sig(&a, 3), sig(&b, 3), sig(&c, 3));
            let l = x.chen_mul(&y).unwrap().chen_mul(&z).unwrap();
            let r = x.chen_mul(&y.chen_mul(&z).unwrap()).unwrap();
            prop_assert!(l.max_abs_diff(&r) < 1e-12);
        }

        #[test]
        fn inverse_cancels(a in increments(2), b in increments(2)) {
            let s = sig(&a, 3).chen_mul(&sig(&b, 3)).unwrap();
            let e = s.chen_mul(&s.inverse()).unwrap();
            prop_assert!(e.as_slice().iter().all(|v| v.abs() < 1e-12));
        }

        #[test]
        fn dilation_composes(a in increments(2), p in -3.0f64..3.0, q in -3.0f64..3.0) {
            let s = sig(&a, 3);
            let l = s.dilate(p).dilate(q);
            let r = s.dilate(p * q);
            prop_assert!(l.max_abs_diff(&r) < 1e-12);
        }

        #[test]
        fn products_stay_group_like(a in increments(3), b in increments(3)) {
            let s = sig(&a, 3).chen_mul(&sig(&b, 3)).unwrap();
            prop_assert!(s.level2_symmetry_defect() < 1e-12);
        }
    }
}
