//! Step-2 rough paths over a uniform grid.
//!
//! A step-2 rough path stores, for every grid cell, the increment pair
//!
//! ```text
//! X^1_{t_i, t_{i+1}}  in  R^d
//! X^2_{t_i, t_{i+1}}  in  R^{d x d},   entry (a,b) = int (x^a_u - x^a_s) dx^b_u
//! ```
//!
//! and extends to arbitrary node pairs through Chen's identity
//!
//! ```text
//! X^1_{s,t} = X^1_{s,u} + X^1_{u,t}
//! X^2_{s,t} = X^2_{s,u} + X^2_{u,t} + X^1_{s,u} (x) X^1_{u,t}
//! ```
//!
//! Construction precomputes the prefix signature `X_{0,t_i}` for every node,
//! so a general interval is a single group operation:
//! `X_{s,t} = (X_{0,s})^{-1} (x) X_{0,t}`, O(d^2) per query after O(n d^2)
//! setup.
//!
//! Increment pairs are points of the step-2 group `G^2(R^d)`: the symmetric
//! part of `X^2` is determined by `X^1` (the shuffle relation
//! `X^2 + (X^2)^T = X^1 (x) X^1`), the inverse is
//! `(-a_1, a_1 (x) a_1 - a_2)`, and the dilation `delta_lambda` scales the
//! levels by `lambda` and `lambda^2`. The homogeneous size of an element is
//! measured by the proxy `|a_1| + |a_2|_F^(1/2)`, which is equivalent to the
//! Carnot–Carathéodory norm up to constants that never enter any contract.
//!
//! The lift of a polygonal path is exact: on each cell the path is a line
//! segment, so `X^2 = X^1 (x) X^1 / 2` cell-by-cell, and Chen assembles every
//! coarser interval without discretization error.

use crate::grid::{CameronMartinPath, GridError, SampledPath, TimeGrid};

/// A point of `G^2(R^d)`: the increment pair of a step-2 rough path over one
/// interval. `a2` is stored row-major, entry `(i, j)` at `a2[i * dim + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    dim: usize,
    a1: Vec<f64>,
    a2: Vec<f64>,
}

impl GroupElement {
    pub fn new(dim: usize, a1: Vec<f64>, a2: Vec<f64>) -> Result<Self, GridError> {
        if dim == 0 {
            return Err(GridError::ZeroDimension);
        }
        if a1.len() != dim {
            return Err(GridError::BadLength { got: a1.len(), want: dim });
        }
        if a2.len() != dim * dim {
            return Err(GridError::BadLength { got: a2.len(), want: dim * dim });
        }
        Ok(GroupElement { dim, a1, a2 })
    }

    /// Neutral element `(0, 0)`.
    pub fn identity(dim: usize) -> Self {
        GroupElement { dim, a1: vec![0.0; dim], a2: vec![0.0; dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level1(&self) -> &[f64] {
        &self.a1
    }

    pub fn level2(&self) -> &[f64] {
        &self.a2
    }

    /// Chen product: concatenation of increments over adjacent intervals.
    pub fn compose(&self, right: &GroupElement) -> GroupElement {
        assert_eq!(self.dim, right.dim, "group elements of different dimension");
        let d = self.dim;
        let mut a1 = vec![0.0; d];
        let mut a2 = vec![0.0; d * d];
        for i in 0..d {
            a1[i] = self.a1[i] + right.a1[i];
        }
        for i in 0..d {
            for j in 0..d {
                a2[i * d + j] = self.a2[i * d + j] + right.a2[i * d + j] + self.a1[i] * right.a1[j];
            }
        }
        GroupElement { dim: d, a1, a2 }
    }

    /// Group inverse `(-a_1, a_1 (x) a_1 - a_2)`.
    pub fn inverse(&self) -> GroupElement {
        let d = self.dim;
        let mut a1 = vec![0.0; d];
        let mut a2 = vec![0.0; d * d];
        for i in 0..d {
            a1[i] = -self.a1[i];
        }
        for i in 0..d {
            for j in 0..d {
                a2[i * d + j] = self.a1[i] * self.a1[j] - self.a2[i * d + j];
            }
        }
        GroupElement { dim: d, a1, a2 }
    }

    /// Dilation `delta_lambda`: `(lambda a_1, lambda^2 a_2)`.
    pub fn dilate(&self, lambda: f64) -> GroupElement {
        GroupElement {
            dim: self.dim,
            a1: self.a1.iter().map(|v| lambda * v).collect(),
            a2: self.a2.iter().map(|v| lambda * lambda * v).collect(),
        }
    }

    /// Largest entry of `a_2 + a_2^T - a_1 (x) a_1` in absolute value: zero
    /// exactly on the group, where the symmetric part of the second level is
    /// the square of the first.
    pub fn geometric_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let v = self.a2[i * d + j] + self.a2[j * d + i] - self.a1[i] * self.a1[j];
                worst = worst.max(v.abs());
            }
        }
        worst
    }

    /// Homogeneous size proxy `|a_1| + |a_2|_F^(1/2)`, compatible with the
    /// dilation: the value scales by `|lambda|` under `delta_lambda`.
    pub fn homogeneous_norm(&self) -> f64 {
        let l1 = self.a1.iter().map(|v| v * v).sum::<f64>().sqrt();
        let l2 = self.a2.iter().map(|v| v * v).sum::<f64>().sqrt();
        l1 + l2.sqrt()
    }

    /// Largest entrywise deviation from `other`, across both levels.
    pub fn max_entry_distance(&self, other: &GroupElement) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.a1.iter().zip(&other.a1) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in self.a2.iter().zip(&other.a2) {
            worst = worst.max((a - b).abs());
        }
        worst
    }
}

/// A step-2 rough path over a uniform grid: per-cell increment pairs plus
/// the precomputed prefix signatures `X_{0, t_i}`.
#[derive(Clone, Debug)]
pub struct Level2RoughPath {
    grid: TimeGrid,
    dim: usize,
    /// Cell increments, `n_steps x dim`.
    first: Vec<f64>,
    /// Cell second levels, `n_steps x dim^2`, row-major per cell.
    second: Vec<f64>,
    /// Prefix first levels `X^1_{0, t_i}`, `(n_steps + 1) x dim`.
    p1: Vec<f64>,
    /// Prefix second levels `X^2_{0, t_i}`, `(n_steps + 1) x dim^2`.
    p2: Vec<f64>,
}

impl Level2RoughPath {
    /// Assemble from per-cell data, building the prefix signatures by Chen.
    pub fn from_cells(
        grid: TimeGrid,
        dim: usize,
        first: Vec<f64>,
        second: Vec<f64>,
    ) -> Result<Self, GridError> {
        if dim == 0 {
            return Err(GridError::ZeroDimension);
        }
        let n = grid.n_steps();
        if first.len() != n * dim {
            return Err(GridError::BadLength { got: first.len(), want: n * dim });
        }
        if second.len() != n * dim * dim {
            return Err(GridError::BadLength { got: second.len(), want: n * dim * dim });
        }
        let dd = dim * dim;
        let mut p1 = vec![0.0; (n + 1) * dim];
        let mut p2 = vec![0.0; (n + 1) * dd];
        for i in 0..n {
            let (lo1, hi1) = (i * dim, (i + 1) * dim);
            for k in 0..dim {
                p1[hi1 + k] = p1[lo1 + k] + first[i * dim + k];
            }
            let (lo2, hi2) = (i * dd, (i + 1) * dd);
            for a in 0..dim {
                for b in 0..dim {
                    p2[hi2 + a * dim + b] = p2[lo2 + a * dim + b]
                        + second[i * dd + a * dim + b]
                        + p1[lo1 + a] * first[i * dim + b];
                }
            }
        }
        Ok(Level2RoughPath { grid, dim, first, second, p1, p2 })
    }

    /// Exact lift of a polygonal path: per cell `X^1 = dx`,
    /// `X^2 = dx (x) dx / 2`.
    pub fn lift(path: &SampledPath) -> Level2RoughPath {
        let grid = path.grid();
        let dim = path.dim();
        let n = grid.n_steps();
        let dd = dim * dim;
        let mut first = vec![0.0; n * dim];
        let mut second = vec![0.0; n * dd];
        for i in 0..n {
            path.increment_into(i, &mut first[i * dim..(i + 1) * dim]);
            let dx = &first[i * dim..(i + 1) * dim];
            for a in 0..dim {
                for b in 0..dim {
                    second[i * dd + a * dim + b] = 0.5 * dx[a] * dx[b];
                }
            }
        }
        Level2RoughPath::from_cells(grid, dim, first, second)
            .expect("lift buffers are sized by construction")
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// First-level increment of cell `i`.
    pub fn first_cell(&self, i: usize) -> &[f64] {
        &self.first[i * self.dim..(i + 1) * self.dim]
    }

    /// Second level of cell `i`, row-major `dim x dim`.
    pub fn second_cell(&self, i: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.second[i * dd..(i + 1) * dd]
    }

    /// Prefix first levels, node-major: `X^1_{0, t_i}` at `i * dim`.
    pub fn prefix_first(&self) -> &[f64] {
        &self.p1
    }

    /// Prefix second levels, node-major: `X^2_{0, t_i}` at `i * dim^2`.
    pub fn prefix_second(&self) -> &[f64] {
        &self.p2
    }

    /// Write `X_{t_i, t_j}` into the provided level buffers (`i <= j`).
    pub fn segment_into(&self, i: usize, j: usize, out1: &mut [f64], out2: &mut [f64]) {
        debug_assert!(i <= j && j <= self.grid.n_steps());
        let d = self.dim;
        let dd = d * d;
        let (pi1, pj1) = (&self.p1[i * d..(i + 1) * d], &self.p1[j * d..(j + 1) * d]);
        for k in 0..d {
            out1[k] = pj1[k] - pi1[k];
        }
        let (pi2, pj2) = (&self.p2[i * dd..(i + 1) * dd], &self.p2[j * dd..(j + 1) * dd]);
        for a in 0..d {
            for b in 0..d {
                out2[a * d + b] = pj2[a * d + b] - pi2[a * d + b] - pi1[a] * out1[b];
            }
        }
    }

    /// Increment pair over `[t_i, t_j]` as a group element.
    pub fn segment(&self, i: usize, j: usize) -> GroupElement {
        let d = self.dim;
        let mut a1 = vec![0.0; d];
        let mut a2 = vec![0.0; d * d];
        self.segment_into(i, j, &mut a1, &mut a2);
        GroupElement { dim: d, a1, a2 }
    }

    /// Endpoint signature `X_{0,1}`.
    pub fn total(&self) -> GroupElement {
        self.segment(0, self.grid.n_steps())
    }

    /// Deviation of `X_{s,t}` from `X_{s,u} (x) X_{u,t}` in max-entry norm.
    ///
    /// The three times must be grid nodes with `s <= u <= t`; off-grid times
    /// are rejected. For data assembled through `from_cells` the defect is
    /// zero up to rounding, so this is a consistency probe, not a quantity
    /// with discretization content.
    pub fn chen_defect(&self, s: f64, u: f64, t: f64) -> Result<f64, GridError> {
        let i = self.grid.index_of(s)?;
        let k = self.grid.index_of(u)?;
        let j = self.grid.index_of(t)?;
        if !(i <= k && k <= j) {
            return Err(GridError::OffGridTime { t: u, n_steps: self.grid.n_steps() });
        }
        let whole = self.segment(i, j);
        let glued = self.segment(i, k).compose(&self.segment(k, j));
        Ok(whole.max_entry_distance(&glued))
    }

    /// Worst geometric (shuffle) defect over all node pairs: how far the
    /// symmetric part of `X^2_{s,t}` strays from `X^1_{s,t} (x) X^1_{s,t}`.
    /// Zero, up to rounding, exactly for weakly geometric data such as lifts.
    pub fn geometric_defect(&self) -> f64 {
        let n = self.grid.n_steps();
        let d = self.dim;
        let mut a1 = vec![0.0; d];
        let mut a2 = vec![0.0; d * d];
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..=n {
                self.segment_into(i, j, &mut a1, &mut a2);
                for a in 0..d {
                    for b in 0..d {
                        let v = a2[a * d + b] + a2[b * d + a] - a1[a] * a1[b];
                        worst = worst.max(v.abs());
                    }
                }
            }
        }
        worst
    }

    /// Dilation `delta_lambda` applied to the whole path.
    pub fn dilate(&self, lambda: f64) -> Level2RoughPath {
        let l2 = lambda * lambda;
        Level2RoughPath {
            grid: self.grid,
            dim: self.dim,
            first: self.first.iter().map(|v| lambda * v).collect(),
            second: self.second.iter().map(|v| l2 * v).collect(),
            p1: self.p1.iter().map(|v| lambda * v).collect(),
            p2: self.p2.iter().map(|v| l2 * v).collect(),
        }
    }

    /// Exact refinement by an integer factor.
    ///
    /// The first level splits evenly (the underlying path is linear on each
    /// cell); the cell's excess area `E = X^2 - X^1 (x) X^1 / 2` is spread
    /// evenly over the subcells, which is the unique even split for which
    /// Chen over the subcells reproduces the original cell exactly.
    pub fn refine(&self, factor: usize) -> Result<Level2RoughPath, GridError> {
        if factor == 0 {
            return Err(GridError::EmptyGrid);
        }
        let n = self.grid.n_steps();
        let d = self.dim;
        let dd = d * d;
        let fine = TimeGrid::new(n * factor)?;
        let f = factor as f64;
        let mut first = vec![0.0; n * factor * d];
        let mut second = vec![0.0; n * factor * dd];
        for i in 0..n {
            let x1 = self.first_cell(i);
            let x2 = self.second_cell(i);
            for s in 0..factor {
                let c = i * factor + s;
                for k in 0..d {
                    first[c * d + k] = x1[k] / f;
                }
                for a in 0..d {
                    for b in 0..d {
                        let line = 0.5 * x1[a] * x1[b] / (f * f);
                        let excess = (x2[a * d + b] - 0.5 * x1[a] * x1[b]) / f;
                        second[c * dd + a * d + b] = line + excess;
                    }
                }
            }
        }
        Level2RoughPath::from_cells(fine, d, first, second)
    }

    /// Translation by a finite-energy control `h`:
    ///
    /// ```text
    /// (T_h X)^1 = X^1 + H^1
    /// (T_h X)^2 = X^2 + H^2 + int (x - x_s) (x) dh + int (h - h_s) (x) dx
    /// ```
    ///
    /// Both cross integrals are evaluated exactly for the polygonal reading
    /// of the data: on one cell each contributes half a tensor product of the
    /// cell increments. When the operands live on different (nested) grids,
    /// both are refined to the finer one first; the result lives there.
    pub fn young_translate(
        &self,
        h: &CameronMartinPath,
    ) -> Result<Level2RoughPath, GridError> {
        if self.dim != h.dim() {
            return Err(GridError::DimensionMismatch { a: self.dim, b: h.dim() });
        }
        let (nx, nh) = (self.grid.n_steps(), h.grid().n_steps());
        if nx != nh {
            return if nx % nh == 0 {
                self.young_translate(&h.refine(nx / nh)?)
            } else if nh % nx == 0 {
                self.refine(nh / nx)?.young_translate(h)
            } else {
                Err(GridError::NotNested { coarse: nx.min(nh), fine: nx.max(nh) })
            };
        }
        let n = nx;
        let d = self.dim;
        let dd = d * d;
        let dt = self.grid.dt();
        let mut first = vec![0.0; n * d];
        let mut second = vec![0.0; n * dd];
        let mut dh = vec![0.0; d];
        for i in 0..n {
            let x1 = self.first_cell(i);
            let x2 = self.second_cell(i);
            for k in 0..d {
                dh[k] = h.derivative(i)[k] * dt;
                first[i * d + k] = x1[k] + dh[k];
            }
            for a in 0..d {
                for b in 0..d {
                    second[i * dd + a * d + b] = x2[a * d + b]
                        + 0.5 * dh[a] * dh[b]
                        + 0.5 * x1[a] * dh[b]
                        + 0.5 * dh[a] * x1[b];
                }
            }
        }
        Level2RoughPath::from_cells(self.grid, d, first, second)
    }

    /// Append the running time as an extra (last) component.
    ///
    /// The output has dimension `d + 1`. Mixed second-level blocks are the
    /// exact Young integrals against `t`: over one cell,
    /// `int (x - x_s) dt = X^1 dt / 2`, `int (t - s) dx = dt X^1 / 2`, and
    /// the time-time entry is `dt^2 / 2`.
    pub fn young_pair(&self) -> Level2RoughPath {
        let n = self.grid.n_steps();
        let d = self.dim;
        let e = d + 1;
        let ee = e * e;
        let dt = self.grid.dt();
        let mut first = vec![0.0; n * e];
        let mut second = vec![0.0; n * ee];
        for i in 0..n {
            let x1 = self.first_cell(i);
            let x2 = self.second_cell(i);
            for k in 0..d {
                first[i * e + k] = x1[k];
            }
            first[i * e + d] = dt;
            for a in 0..d {
                for b in 0..d {
                    second[i * ee + a * e + b] = x2[a * d + b];
                }
                // int (x^a - x^a_s) dt over the cell
                second[i * ee + a * e + d] = 0.5 * x1[a] * dt;
                // int (t - s) dx^a over the cell
                second[i * ee + d * e + a] = 0.5 * dt * x1[a];
            }
            second[i * ee + d * e + d] = 0.5 * dt * dt;
        }
        Level2RoughPath::from_cells(TimeGrid::new(n).unwrap(), e, first, second)
            .expect("pairing buffers are sized by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: second level of a polygonal path over [0,1] by
    /// brute-force Riemann–Stieltjes quadrature with `sub` midpoint substeps
    /// per cell.
    fn rs_second_level(path: &SampledPath, sub: usize) -> Vec<f64> {
        let d = path.dim();
        let n = path.grid().n_steps();
        let mut acc = vec![0.0; d * d];
        let x0 = path.value(0).to_vec();
        for i in 0..n {
            let a = path.value(i);
            let b = path.value(i + 1);
            for s in 0..sub {
                let lam = (s as f64 + 0.5) / sub as f64;
                for p in 0..d {
                    let xp = a[p] + lam * (b[p] - a[p]) - x0[p];
                    for q in 0..d {
                        let dxq = (b[q] - a[q]) / sub as f64;
                        acc[p * d + q] += xp * dxq;
                    }
                }
            }
        }
        acc
    }

    fn random_path(rng: &mut ChaCha8Rng, n: usize, d: usize) -> SampledPath {
        let grid = TimeGrid::new(n).unwrap();
        let values = (0..grid.n_nodes() * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SampledPath::new(grid, d, values).unwrap()
    }

    #[test]
    fn lift_of_axis_staircase_has_half_diagonal_and_unit_area_block() {
        // (0,0) -> (1,0) -> (1,1): the closed-form signature of two unit
        // axis-aligned segments.
        let grid = TimeGrid::new(2).unwrap();
        let p = SampledPath::new(grid, 2, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let x = Level2RoughPath::lift(&p);
        let g = x.total();
        assert_eq!(g.level1(), &[1.0, 1.0]);
        let want = [0.5, 1.0, 0.0, 0.5];
        for (a, b) in g.level2().iter().zip(&want) {
            assert!((a - b).abs() < 1e-15, "second level {a} vs {b}");
        }
        // Antisymmetric part (signed area) of the staircase is 1/2.
        let area = 0.5 * (g.level2()[1] - g.level2()[2]);
        assert!((area - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lift_second_level_matches_brute_force_stieltjes_on_random_polygons() {
        let mut rng = ChaCha8Rng::seed_from_u64(07);
        for d in 1..=3 {
            let p = random_path(&mut rng, 16, d);
            let x = Level2RoughPath::lift(&p);
            let oracle = rs_second_level(&p, 128);
            let got = x.total();
            for (a, b) in got.level2().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "RS oracle mismatch: {a} vs {b}");
            }
        }
    }

    #[test]
    fn chen_defect_vanishes_on_lifts_and_rejects_off_grid_times() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_path(&mut rng, 8, 3);
        let x = Level2RoughPath::lift(&p);
        let defect = x.chen_defect(0.125, 0.5, 0.875).unwrap();
        assert!(defect < 1e-14, "chen defect {defect}");
        assert!(x.chen_defect(0.1, 0.5, 0.9).is_err());
        assert!(x.chen_defect(0.5, 0.25, 0.75).is_err(), "unordered times must be rejected");
    }

    #[test]
    fn group_axioms_hold_for_lift_increments() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = random_path(&mut rng, 12, 2);
        let x = Level2RoughPath::lift(&p);
        let g = x.segment(2, 7);
        let h = x.segment(7, 11);
        let e = GroupElement::identity(2);
        assert!(g.compose(&e).max_entry_distance(&g) < 1e-15);
        assert!(e.compose(&g).max_entry_distance(&g) < 1e-15);
        assert!(g.compose(&g.inverse()).max_entry_distance(&e) < 1e-14);
        assert!(g.inverse().compose(&g).max_entry_distance(&e) < 1e-14);
        // Associativity against a third factor.
        let k = x.segment(11, 12);
        let left = g.compose(&h).compose(&k);
        let right = g.compose(&h.compose(&k));
        assert!(left.max_entry_distance(&right) < 1e-14);
    }

    #[test]
    fn lifts_are_weakly_geometric_and_pure_area_is_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = random_path(&mut rng, 10, 2);
        let x = Level2RoughPath::lift(&p);
        assert!(x.geometric_defect() < 1e-13);
        // Identity second level with zero first level: defect 2 on the
        // diagonal of a2 + a2^T.
        let g = GroupElement::new(2, vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((g.geometric_defect() - 2.0).abs() < 1e-15);
        // A pure-area (antisymmetric) element is in the group.
        let rot = GroupElement::new(2, vec![0.0, 0.0], vec![0.0, 0.3, -0.3, 0.0]).unwrap();
        assert!(rot.geometric_defect() < 1e-15);
    }

    #[test]
    fn homogeneous_norm_is_one_homogeneous_under_dilation() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let p = random_path(&mut rng, 6, 3);
        let g = Level2RoughPath::lift(&p).total();
        for lambda in [0.25, 2.0, -3.0] {
            let scaled = g.dilate(lambda).homogeneous_norm();
            let want = lambda.abs() * g.homogeneous_norm();
            assert!(
                (scaled - want).abs() < 1e-12 * want.max(1.0),
                "dilation homogeneity: {scaled} vs {want}"
            );
        }
    }

    #[test]
    fn dilation_by_minus_one_is_the_lift_of_the_negated_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = random_path(&mut rng, 9, 2);
        let neg = p.axpy(-2.0, &p).unwrap(); // p - 2p = -p
        let a = Level2RoughPath::lift(&p).dilate(-1.0);
        let b = Level2RoughPath::lift(&neg);
        assert!(a.total().max_entry_distance(&b.total()) < 1e-14);
        for i in 0..p.grid().n_steps() {
            for (u, v) in a.second_cell(i).iter().zip(b.second_cell(i)) {
                assert!((u - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn translation_matches_lifting_the_shifted_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let grid = TimeGrid::new(16).unwrap();
        let w = random_path(&mut rng, 16, 2);
        let hd = (0..32).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let h = CameronMartinPath::new(grid, 2, hd).unwrap();
        let translated = Level2RoughPath::lift(&w).young_translate(&h).unwrap();
        let shifted = Level2RoughPath::lift(&w.axpy(1.0, &h.path()).unwrap());
        assert!(translated.total().max_entry_distance(&shifted.total()) < 1e-13);
        // Cellwise identity, not just at the endpoint.
        for i in 0..16 {
            for (u, v) in translated.second_cell(i).iter().zip(shifted.second_cell(i)) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn translation_with_coarser_control_refines_and_stays_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let w = random_path(&mut rng, 12, 1);
        let coarse = TimeGrid::new(4).unwrap();
        let h = CameronMartinPath::new(coarse, 1, vec![1.0, -0.5, 0.25, -1.0]).unwrap();
        let translated = Level2RoughPath::lift(&w).young_translate(&h).unwrap();
        assert_eq!(translated.grid().n_steps(), 12);
        let shifted = Level2RoughPath::lift(&w.axpy(1.0, &h.refine(3).unwrap().path()).unwrap());
        assert!(translated.total().max_entry_distance(&shifted.total()) < 1e-13);
        // Non-nested grids are refused.
        let bad = CameronMartinPath::zeros(TimeGrid::new(5).unwrap(), 1);
        assert!(Level2RoughPath::lift(&w).young_translate(&bad).is_err());
    }

    #[test]
    fn translations_compose_additively_in_the_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let grid = TimeGrid::new(8).unwrap();
        let w = random_path(&mut rng, 8, 2);
        let h1 = CameronMartinPath::new(grid, 2, (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let h2 = CameronMartinPath::new(grid, 2, (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let sum = CameronMartinPath::new(
            grid,
            2,
            h1.derivatives().iter().zip(h2.derivatives()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let x = Level2RoughPath::lift(&w);
        let twice = x.young_translate(&h2).unwrap().young_translate(&h1).unwrap();
        let once = x.young_translate(&sum).unwrap();
        assert!(twice.total().max_entry_distance(&once.total()) < 1e-13);
    }

    #[test]
    fn one_dimensional_translation_keeps_the_degenerate_second_level() {
        // In d = 1 every weakly geometric second level is determined by the
        // first: X^2 = (X^1)^2 / 2 on every interval.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let grid = TimeGrid::new(10).unwrap();
        let w = random_path(&mut rng, 10, 1);
        let h = CameronMartinPath::new(grid, 1, (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let y = Level2RoughPath::lift(&w).young_translate(&h).unwrap();
        for i in 0..10 {
            for j in (i + 1)..=10 {
                let g = y.segment(i, j);
                let want = 0.5 * g.level1()[0] * g.level1()[0];
                assert!((g.level2()[0] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pairing_time_blocks_are_exact() {
        // Zero path: only the time-time entry survives and equals 1/2 over
        // the whole interval.
        let grid = TimeGrid::new(64).unwrap();
        let zero = SampledPath::zeros(grid, 2);
        let paired = Level2RoughPath::lift(&zero).young_pair();
        let g = paired.total();
        assert_eq!(paired.dim(), 3);
        assert!((g.level1()[2] - 1.0).abs() < 1e-12);
        let tt = g.level2()[2 * 3 + 2];
        assert!((tt - 0.5).abs() < 1e-12, "time-time entry {tt}");
        // Linear path t -> t v: the x-time block of X^2_{0,1} is v / 2.
        let v = [0.7, -0.3];
        let mut vals = vec![0.0; grid.n_nodes() * 2];
        for i in 0..grid.n_nodes() {
            let t = grid.node(i);
            vals[2 * i] = t * v[0];
            vals[2 * i + 1] = t * v[1];
        }
        let lin = SampledPath::new(grid, 2, vals).unwrap();
        let g = Level2RoughPath::lift(&lin).young_pair().total();
        for a in 0..2 {
            let xt = g.level2()[a * 3 + 2];
            let tx = g.level2()[2 * 3 + a];
            assert!((xt - 0.5 * v[a]).abs() < 1e-12, "x-time block {xt} vs {}", 0.5 * v[a]);
            assert!((tx - 0.5 * v[a]).abs() < 1e-12, "time-x block {tx} vs {}", 0.5 * v[a]);
        }
    }

    #[test]
    fn refinement_preserves_every_coarse_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let p = random_path(&mut rng, 6, 2);
        // Give the path genuine cell areas by translating a lift first.
        let x = Level2RoughPath::lift(&p);
        let r = x.refine(4).unwrap();
        for i in 0..6 {
            for j in i..=6 {
                let a = x.segment(i, j);
                let b = r.segment(4 * i, 4 * j);
                assert!(a.max_entry_distance(&b) < 1e-14);
            }
        }
    }
}
