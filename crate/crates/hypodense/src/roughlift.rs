//! Rough paths on the uniform grid: lifts, dilation, pairing with time and the
//! Young translation τ_γ by a Cameron–Martin path.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::metrics::GridPath;
use crate::scalar::Scalar;
use crate::tensor_sig::TruncatedSignature;

static CHEN_FAULT: AtomicBool = AtomicBool::new(false);

/// Test hook that corrupts the prefix Chen fold (cross terms dropped), so the
/// verification suite can demonstrate that it catches a broken lift.
pub fn set_chen_fault(on: bool) {
    CHEN_FAULT.store(on, Ordering::SeqCst);
}

pub fn chen_fault_active() -> bool {
    CHEN_FAULT.load(Ordering::SeqCst)
}

/// Cell signatures `S_{t_k,t_{k+1}}` and prefixes `S_{0,t_k}` on `t_k = k/M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoughPathGrid<T = f64> {
    dim: usize,
    depth: usize,
    cells: Vec<TruncatedSignature<T>>,
    prefix: Vec<TruncatedSignature<T>>,
}

fn fold<T: Scalar>(cells: &[TruncatedSignature<T>]) -> Vec<TruncatedSignature<T>> {
    let fault = chen_fault_active();
    let first = &cells[0];
    let mut prefix = Vec::with_capacity(cells.len() + 1);
    prefix.push(TruncatedSignature::identity(first.dim(), first.depth()));
    for c in cells {
        let last = prefix.last().expect("prefix starts non-empty");
        let next = if fault { last.nil_add(c) } else { last.mul_unchecked(c) };
        prefix.push(next);
    }
    prefix
}

impl<T: Scalar> RoughPathGrid<T> {
    pub fn from_cells(cells: Vec<TruncatedSignature<T>>) -> Result<Self> {
        let Some(first) = cells.first() else {
            return invalid("rough path needs at least one cell");
        };
        let (dim, depth) = (first.dim(), first.depth());
        if cells.iter().any(|c| c.dim() != dim || c.depth() != depth) {
            return invalid("all cells must share dimension and depth");
        }
        let prefix = fold(&cells);
        Ok(Self {
            dim,
            depth,
            cells,
            prefix,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, k: usize) -> &TruncatedSignature<T> {
        &self.cells[k]
    }

    pub fn cell_signatures(&self) -> &[TruncatedSignature<T>] {
        &self.cells
    }

    /// Prefix signature `S_{0,t_k}`.
    pub fn prefix(&self, k: usize) -> &TruncatedSignature<T> {
        &self.prefix[k]
    }

    /// `S_{t_a,t_b}` folded from the cells.
    pub fn increment(&self, a: usize, b: usize) -> TruncatedSignature<T> {
        let mut acc = TruncatedSignature::identity(self.dim, self.depth);
        for c in &self.cells[a..b] {
            acc = acc.mul_unchecked(c);
        }
        acc
    }

    /// Level i of every signature scaled by cⁱ.
    pub fn dilate(&self, c: T) -> Self {
        Self {
            dim: self.dim,
            depth: self.depth,
            cells: self.cells.iter().map(|s| s.dilate(c)).collect(),
            prefix: self.prefix.iter().map(|s| s.dilate(c)).collect(),
        }
    }

    /// Extends to ℝ^{d+1} with the extra coordinate λ_t = c·t. Inside a cell both
    /// components are linear, so the joint cell signature is exp(log S + cΔt e_λ).
    pub fn pair_with_time(&self, c: T) -> Self {
        let e = self.dim + 1;
        let dt = 1.0 / self.cells.len() as f64;
        let cells = self
            .cells
            .iter()
            .map(|s| {
                if s.depth() == 2 {
                    // exp(L + v e_t) = embed(S) + v e_t + ½(x⊗v e_t + v e_t⊗x + v² e_t⊗e_t)
                    let v = c.scale(dt);
                    let mut out = s.embed(e);
                    let x = s.level1().to_vec();
                    out.level_mut(1)[self.dim] += v;
                    let lv2 = out.level_mut(2);
                    for (i, &xi) in x.iter().enumerate() {
                        let half = (xi * v).scale(0.5);
                        lv2[i * e + self.dim] += half;
                        lv2[self.dim * e + i] += half;
                    }
                    lv2[self.dim * e + self.dim] += (v * v).scale(0.5);
                    return out;
                }
                let mut l = s.log().embed(e);
                l.level_mut(1)[self.dim] += c.scale(dt);
                l.exp()
            })
            .collect::<Vec<_>>();
        Self::from_cells(cells).expect("cells share a shape")
    }

    /// Young translation τ_γ(x) with γ given by its grid values.
    pub fn young_translate(&self, gamma: &GridPath) -> Result<Self> {
        if gamma.cells() != self.cells.len() || gamma.dim() != self.dim {
            return invalid(format!(
                "γ has {} cells in ℝ^{}, path has {} cells in ℝ^{}",
                gamma.cells(),
                gamma.dim(),
                self.cells.len(),
                self.dim
            ));
        }
        let cells = self
            .cells
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let g: Vec<T> = gamma.increment(k).into_iter().map(T::from_f64).collect();
                translate_cell(s, &g)
            })
            .collect();
        Self::from_cells(cells)
    }

    /// Merges consecutive groups of `factor` cells.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let m = self.cells.len();
        if factor == 0 || !m.is_multiple_of(factor) {
            return invalid(format!("cannot coarsen {m} cells by {factor}"));
        }
        let cells = (0..m / factor)
            .map(|k| self.increment(k * factor, (k + 1) * factor))
            .collect();
        Self::from_cells(cells)
    }

    pub fn to_f64(&self) -> RoughPathGrid<f64> {
        RoughPathGrid {
            dim: self.dim,
            depth: self.depth,
            cells: self.cells.iter().map(|s| s.to_f64()).collect(),
            prefix: self.prefix.iter().map(|s| s.to_f64()).collect(),
        }
    }

    /// Level-1 path x_{t_k} − x_0 as a grid path.
    pub fn level1_path(&self) -> GridPath {
        let mut values = Vec::with_capacity(self.dim * (self.cells.len() + 1));
        for p in &self.prefix {
            values.extend(p.level1().iter().map(|v| v.re()));
        }
        GridPath::new(self.dim, values).expect("finite prefix values")
    }
}

impl RoughPathGrid<f64> {
    pub fn cast<T: Scalar>(&self) -> RoughPathGrid<T> {
        RoughPathGrid {
            dim: self.dim,
            depth: self.depth,
            cells: self.cells.iter().map(|s| s.cast()).collect(),
            prefix: self.prefix.iter().map(|s| s.cast()).collect(),
        }
    }
}

/// Lift of the piecewise-linear interpolation of `x`.
pub fn lift_grid_path(x: &GridPath, depth: usize) -> Result<RoughPathGrid> {
    if !(1..=3).contains(&depth) {
        return invalid(format!("lift depth must be 1, 2 or 3 (got {depth})"));
    }
    let cells = (0..x.cells())
        .map(|k| TruncatedSignature::segment(&x.increment(k), depth))
        .collect::<Result<Vec<_>>>()?;
    RoughPathGrid::from_cells(cells)
}

pub fn dilate<T: Scalar>(x: &RoughPathGrid<T>, c: T) -> RoughPathGrid<T> {
    x.dilate(c)
}

pub fn pair_with_time<T: Scalar>(x: &RoughPathGrid<T>, c: T) -> RoughPathGrid<T> {
    x.pair_with_time(c)
}

pub fn young_translate<T: Scalar>(x: &RoughPathGrid<T>, gamma: &GridPath) -> Result<RoughPathGrid<T>> {
    x.young_translate(gamma)
}

/// acc[i·|b| + j] += c·a[i]·b[j]
fn add_outer<T: Scalar>(acc: &mut [T], c: f64, a: &[T], b: &[T]) {
    let nb = b.len();
    for (i, &x) in a.iter().enumerate() {
        let xc = x.scale(c);
        for (slot, &y) in acc[i * nb..(i + 1) * nb].iter_mut().zip(b) {
            *slot += xc * y;
        }
    }
}

/// Translates one cell. Inside the cell x runs along exp(θ log S) and γ is
/// linear with increment `g`. Every cross-integrand is then a polynomial of
/// degree at most two in θ, so the integrals below are exact closed forms.
fn translate_cell<T: Scalar>(s: &TruncatedSignature<T>, g: &[T]) -> TruncatedSignature<T> {
    let d = s.dim();
    let depth = s.depth();
    let mut out = s.clone();
    for (a, &b) in out.level_mut(1).iter_mut().zip(g) {
        *a += b;
    }
    if depth == 1 {
        return out;
    }
    let log = s.log();
    let l1 = log.level1();
    {
        let lv2 = out.level_mut(2);
        add_outer(lv2, 0.5, l1, g);
        add_outer(lv2, 0.5, g, l1);
        add_outer(lv2, 0.5, g, g);
    }
    if depth == 2 {
        return out;
    }

    let l2 = log.level2();
    let mut l1l1 = vec![T::zero(); d * d];
    add_outer(&mut l1l1, 1.0, l1, l1);
    let mut gg = vec![T::zero(); d * d];
    add_outer(&mut gg, 1.0, g, g);
    let mut g_l1 = vec![T::zero(); d * d];
    add_outer(&mut g_l1, 1.0, g, l1);
    let mut l1_g = vec![T::zero(); d * d];
    add_outer(&mut l1_g, 1.0, l1, g);

    // Pure-x words are already in s; these are the mixed words plus γ³.
    let lv3 = out.level_mut(3);
    add_outer(lv3, 0.5, l2, g);
    add_outer(lv3, 1.0 / 6.0, &l1l1, g);
    add_outer(lv3, 1.0 / 6.0, &l1_g, l1);
    add_outer(lv3, 0.5, g, l2);
    add_outer(lv3, 1.0 / 6.0, g, &l1l1);
    add_outer(lv3, 1.0 / 6.0, l1, &gg);
    add_outer(lv3, 1.0 / 6.0, &g_l1, g);
    add_outer(lv3, 1.0 / 6.0, &gg, l1);
    add_outer(lv3, 1.0 / 6.0, &gg, g);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_path(rng: &mut ChaCha8Rng, d: usize, m: usize, scale: f64) -> GridPath {
        let mut v = vec![0.0; d];
        for k in 0..m * d {
            let prev = v[k];
            v.push(prev + scale * (rng.gen::<f64>() - 0.5));
        }
        GridPath::new(d, v).unwrap()
    }

    #[test]
    fn straight_line_and_zero_path() {
        let x = GridPath::from_fn(2, 8, |t| vec![t, -2.0 * t]);
        let r = lift_grid_path(&x, 3).unwrap();
        let direct = TruncatedSignature::segment(&[1.0, -2.0], 3).unwrap();
        assert!(r.prefix(8).max_abs_diff(&direct) < 1e-14);
        let z = lift_grid_path(&GridPath::zeros(3, 4), 3).unwrap();
        assert!(z.prefix(4).as_slice().iter().all(|v| *v == 0.0));
        assert!(lift_grid_path(&x, 4).is_err());
    }

    #[test]
    fn unit_square_area() {
        let x = GridPath::new(2, vec![0., 0., 1., 0., 1., 1., 0., 1., 0., 0.]).unwrap();
        let r = lift_grid_path(&x, 2).unwrap();
        let s = r.prefix(4);
        assert!(s.get1(0).abs() < 1e-15 && s.get1(1).abs() < 1e-15);
        assert!((0.5 * (s.get2(0, 1) - s.get2(1, 0)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dilation_and_time_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = lift_grid_path(&random_path(&mut rng, 2, 8, 1.0), 3).unwrap();
        assert_eq!(x.dilate(1.0), x);
        assert!(x.dilate(0.0).prefix(8).as_slice().iter().all(|v| *v == 0.0));

        let p = x.pair_with_time(0.0);
        let s = p.prefix(8);
        for i in 0..3 {
            assert!(s.get2(i, 2).abs() < 1e-15 && s.get2(2, i).abs() < 1e-15);
        }
        let c = 1.7;
        let p = x.pair_with_time(c);
        assert!((p.prefix(8).get2(2, 2) - c * c / 2.0).abs() < 1e-13);

        // ∫₀¹ λ dx for x with slope v and λ = t: the word (λ, x) gives v/2.
        let line = lift_grid_path(&GridPath::from_fn(1, 16, |t| vec![3.0 * t]), 3).unwrap();
        let s = line.pair_with_time(1.0).prefix(16).clone();
        assert!((s.get2(1, 0) - 1.5).abs() < 1e-13);
        assert!((s.get2(0, 1) - 1.5).abs() < 1e-13);
    }

    #[test]
    fn depth_two_pairing_agrees_with_log_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_path(&mut rng, 2, 8, 1.0);
        let (p2, p3) = (
            lift_grid_path(&w, 2).unwrap().pair_with_time(0.8),
            lift_grid_path(&w, 3).unwrap().pair_with_time(0.8),
        );
        for k in 0..8 {
            let (a, b) = (p2.cell(k), p3.cell(k));
            for (x, y) in a.level1().iter().chain(a.level2()).zip(b.level1().iter().chain(b.level2())) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn translation_of_zero_and_by_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gamma = random_path(&mut rng, 2, 16, 1.0);
        let zero = lift_grid_path(&GridPath::zeros(2, 16), 3).unwrap();
        let t = zero.young_translate(&gamma).unwrap();
        let direct = lift_grid_path(&gamma, 3).unwrap();
        assert!(t.prefix(16).max_abs_diff(direct.prefix(16)) < 1e-13);

        let x = lift_grid_path(&random_path(&mut rng, 2, 16, 1.0), 3).unwrap();
        let same = x.young_translate(&GridPath::zeros(2, 16)).unwrap();
        assert!(same.prefix(16).max_abs_diff(x.prefix(16)) < 1e-15);
        assert!(x.young_translate(&GridPath::zeros(2, 8)).is_err());
    }

    #[test]
    fn translation_matches_lift_of_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let xp = random_path(&mut rng, 3, 32, 0.8);
            let gp = random_path(&mut rng, 3, 32, 0.8);
            let t = lift_grid_path(&xp, 3).unwrap().young_translate(&gp).unwrap();
            let direct = lift_grid_path(&xp.add(&gp).unwrap(), 3).unwrap();
            for k in 0..=32 {
                assert!(t.prefix(k).max_abs_diff(direct.prefix(k)) < 1e-12);
            }
        }
    }

    #[test]
    fn translation_level1_is_bitwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xp = random_path(&mut rng, 2, 8, 1.0);
        let gp = random_path(&mut rng, 2, 8, 1.0);
        let x = lift_grid_path(&xp, 3).unwrap();
        let t = x.young_translate(&gp).unwrap();
        for k in 0..8 {
            let g = gp.increment(k);
            for i in 0..2 {
                assert_eq!(t.cell(k).get1(i), x.cell(k).get1(i) + g[i]);
            }
        }
    }

    #[test]
    fn fold_keeps_cross_terms() {
        let cells = vec![
            TruncatedSignature::segment(&[1.0, 0.0], 2).unwrap(),
            TruncatedSignature::segment(&[0.0, 1.0], 2).unwrap(),
        ];
        let good = fold(&cells);
        assert!((good[2].get2(0, 1) - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn translation_group_law(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = lift_grid_path(&random_path(&mut rng, 2, 16, 1.0), 3).unwrap();
            let g1 = random_path(&mut rng, 2, 16, 1.0);
            let g2 = random_path(&mut rng, 2, 16, 1.0);
            let two = x.young_translate(&g1).unwrap().young_translate(&g2).unwrap();
            let one = x.young_translate(&g1.add(&g2).unwrap()).unwrap();
            for k in 0..=16 {
                prop_assert!(two.prefix(k).max_abs_diff(one.prefix(k)) < 1e-6);
            }
            prop_assert!(two.prefix(16).level2_symmetry_defect() < 1e-10);
        }

        #[test]
        fn translation_is_locally_lipschitz(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = lift_grid_path(&random_path(&mut rng, 2, 16, 0.5), 3).unwrap();
            let g = random_path(&mut rng, 2, 16, 0.5);
            let h = random_path(&mut rng, 2, 16, 0.01);
            let base = x.young_translate(&g).unwrap();
            let d1 = x.young_translate(&g.add(&h).unwrap()).unwrap().prefix(16).max_abs_diff(base.prefix(16));
            let d2 = x.young_translate(&g.add(&h.scale(2.0)).unwrap()).unwrap().prefix(16).max_abs_diff(base.prefix(16));
            prop_assert!(d2 <= 2.0 * 1.2 * d1 + 1e-14);
        }
    }
}
