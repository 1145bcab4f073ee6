//! Uniform time grids on `[0, 1]` and the two path classes that live on them:
//! sampled polygonal paths (values at the nodes, linear in between) and
//! Cameron–Martin controls (piecewise-constant derivative on the cells).
//!
//! Everything downstream — lifts, norms, dyadic families, flows — is
//! grid-restricted, so the conventions here are load-bearing:
//!
//! * a grid with `n_steps` cells has nodes `t_i = i / n_steps`,
//!   `i = 0, ..., n_steps`, and constant cell width `dt = 1 / n_steps`;
//! * refinement is only defined between nested grids (the finer step count
//!   is an integer multiple of the coarser one), and is exact for both path
//!   classes: linear interpolation for sampled paths, cell replication for
//!   control derivatives;
//! * query times must be grid nodes; anything else is rejected rather than
//!   silently rounded.

use thiserror::Error;

/// Errors produced by grid and path constructors and queries.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("time grid needs at least one step")]
    EmptyGrid,
    #[error("time {t} is not a node of the {n_steps}-step grid")]
    OffGridTime { t: f64, n_steps: usize },
    #[error("grids with {coarse} and {fine} steps are not nested")]
    NotNested { coarse: usize, fine: usize },
    #[error("value buffer holds {got} entries, grid and dimension require {want}")]
    BadLength { got: usize, want: usize },
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("operands live on different grids ({a} vs {b} steps)")]
    GridMismatch { a: usize, b: usize },
    #[error("operands have different dimensions ({a} vs {b})")]
    DimensionMismatch { a: usize, b: usize },
}

/// Uniform grid `0 = t_0 < t_1 < ... < t_{n_steps} = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeGrid {
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(n_steps: usize) -> Result<Self, GridError> {
        if n_steps == 0 {
            return Err(GridError::EmptyGrid);
        }
        Ok(TimeGrid { n_steps })
    }

    /// Number of cells.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    /// Constant cell width `1 / n_steps`.
    pub fn dt(&self) -> f64 {
        1.0 / self.n_steps as f64
    }

    /// Node `t_i = i / n_steps`; panics if `i` is out of range.
    pub fn node(&self, i: usize) -> f64 {
        assert!(i <= self.n_steps, "node index {i} out of range");
        i as f64 / self.n_steps as f64
    }

    /// Map a time to its node index, rejecting off-grid times.
    ///
    /// The tolerance is a fixed `1e-9` in units of the cell width, so a time
    /// produced by `node()` round-trips while a genuine interior point does
    /// not sneak through.
    pub fn index_of(&self, t: f64) -> Result<usize, GridError> {
        let scaled = t * self.n_steps as f64;
        let rounded = scaled.round();
        if (scaled - rounded).abs() > 1e-9 || !(0.0..=self.n_steps as f64).contains(&rounded) {
            return Err(GridError::OffGridTime { t, n_steps: self.n_steps });
        }
        Ok(rounded as usize)
    }

    /// Integer factor by which `finer` refines `self`; errors if not nested.
    pub fn refinement_factor(&self, finer: &TimeGrid) -> Result<usize, GridError> {
        if finer.n_steps % self.n_steps != 0 {
            return Err(GridError::NotNested { coarse: self.n_steps, fine: finer.n_steps });
        }
        Ok(finer.n_steps / self.n_steps)
    }
}

/// A path observed at the grid nodes and understood as linear in between.
///
/// Values are stored row-major: node `i` occupies
/// `values[i * dim .. (i + 1) * dim]`.
#[derive(Clone, Debug)]
pub struct SampledPath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl SampledPath {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self, GridError> {
        if dim == 0 {
            return Err(GridError::ZeroDimension);
        }
        let want = grid.n_nodes() * dim;
        if values.len() != want {
            return Err(GridError::BadLength { got: values.len(), want });
        }
        Ok(SampledPath { grid, dim, values })
    }

    /// The constant-zero path.
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        SampledPath { grid, dim, values: vec![0.0; grid.n_nodes() * dim] }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Value at node `i`.
    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Flat node-major view of all values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Whether the path starts at the origin.
    pub fn is_based(&self) -> bool {
        self.value(0).iter().all(|&v| v == 0.0)
    }

    /// Increment over cell `i`, written into `out`.
    pub fn increment_into(&self, i: usize, out: &mut [f64]) {
        let a = self.value(i);
        let b = &self.values[(i + 1) * self.dim..(i + 2) * self.dim];
        for k in 0..self.dim {
            out[k] = b[k] - a[k];
        }
    }

    /// Exact refinement by an integer factor: new nodes are filled by linear
    /// interpolation, which reproduces the same polygonal path.
    pub fn refine(&self, factor: usize) -> Result<SampledPath, GridError> {
        if factor == 0 {
            return Err(GridError::EmptyGrid);
        }
        let fine = TimeGrid::new(self.grid.n_steps * factor)?;
        let mut values = vec![0.0; fine.n_nodes() * self.dim];
        for i in 0..self.grid.n_steps {
            let a = self.value(i);
            let b = self.value(i + 1);
            for s in 0..factor {
                let lambda = s as f64 / factor as f64;
                let row = (i * factor + s) * self.dim;
                for k in 0..self.dim {
                    values[row + k] = a[k] + lambda * (b[k] - a[k]);
                }
            }
        }
        let last = fine.n_steps * self.dim;
        values[last..last + self.dim].copy_from_slice(self.value(self.grid.n_steps));
        SampledPath::new(fine, self.dim, values)
    }

    /// Pointwise linear combination `self + scale * other` on a common grid.
    pub fn axpy(&self, scale: f64, other: &SampledPath) -> Result<SampledPath, GridError> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch { a: self.grid.n_steps, b: other.grid.n_steps });
        }
        if self.dim != other.dim {
            return Err(GridError::DimensionMismatch { a: self.dim, b: other.dim });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x + scale * y)
            .collect();
        SampledPath::new(self.grid, self.dim, values)
    }
}

/// A finite-energy control: based, piecewise-linear, represented by its
/// constant derivative on each cell.
///
/// The squared norm is the discrete energy `sum_i |h'_i|^2 dt`, which is the
/// exact Cameron–Martin norm of the polygonal path the derivative generates.
#[derive(Clone, Debug)]
pub struct CameronMartinPath {
    grid: TimeGrid,
    dim: usize,
    derivative: Vec<f64>,
}

impl CameronMartinPath {
    pub fn new(grid: TimeGrid, dim: usize, derivative: Vec<f64>) -> Result<Self, GridError> {
        if dim == 0 {
            return Err(GridError::ZeroDimension);
        }
        let want = grid.n_steps() * dim;
        if derivative.len() != want {
            return Err(GridError::BadLength { got: derivative.len(), want });
        }
        Ok(CameronMartinPath { grid, dim, derivative })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        CameronMartinPath { grid, dim, derivative: vec![0.0; grid.n_steps() * dim] }
    }

    /// Recover the control whose polygonal path interpolates `path - path(0)`.
    pub fn from_sampled(path: &SampledPath) -> Self {
        let grid = path.grid();
        let dim = path.dim();
        let inv_dt = grid.n_steps() as f64;
        let mut derivative = vec![0.0; grid.n_steps() * dim];
        for i in 0..grid.n_steps() {
            let a = path.value(i);
            let b = path.value(i + 1);
            for k in 0..dim {
                derivative[i * dim + k] = (b[k] - a[k]) * inv_dt;
            }
        }
        CameronMartinPath { grid, dim, derivative }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Derivative on cell `i`.
    pub fn derivative(&self, i: usize) -> &[f64] {
        &self.derivative[i * self.dim..(i + 1) * self.dim]
    }

    /// Flat cell-major view of the derivative.
    pub fn derivatives(&self) -> &[f64] {
        &self.derivative
    }

    /// Squared Cameron–Martin norm `sum_i |h'_i|^2 dt`.
    pub fn squared_norm(&self) -> f64 {
        let dt = self.grid.dt();
        self.derivative.iter().map(|v| v * v).sum::<f64>() * dt
    }

    /// Energy `||h||^2 / 2`.
    pub fn energy(&self) -> f64 {
        0.5 * self.squared_norm()
    }

    /// The polygonal path generated by the derivative, based at the origin.
    pub fn path(&self) -> SampledPath {
        let dt = self.grid.dt();
        let mut values = vec![0.0; self.grid.n_nodes() * self.dim];
        for i in 0..self.grid.n_steps() {
            let d = self.derivative(i);
            for k in 0..self.dim {
                values[(i + 1) * self.dim + k] = values[i * self.dim + k] + d[k] * dt;
            }
        }
        SampledPath { grid: self.grid, dim: self.dim, values }
    }

    /// Exact refinement: each cell's derivative is replicated `factor` times.
    pub fn refine(&self, factor: usize) -> Result<CameronMartinPath, GridError> {
        if factor == 0 {
            return Err(GridError::EmptyGrid);
        }
        let fine = TimeGrid::new(self.grid.n_steps() * factor)?;
        let mut derivative = vec![0.0; fine.n_steps() * self.dim];
        for i in 0..self.grid.n_steps() {
            for s in 0..factor {
                let row = (i * factor + s) * self.dim;
                derivative[row..row + self.dim].copy_from_slice(self.derivative(i));
            }
        }
        CameronMartinPath::new(fine, self.dim, derivative)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_and_dt_are_consistent() {
        let g = TimeGrid::new(8).unwrap();
        assert_eq!(g.n_nodes(), 9);
        assert!((g.node(8) - 1.0).abs() < 1e-15);
        assert!((g.dt() * 8.0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn index_of_round_trips_nodes_and_rejects_interior_points() {
        let g = TimeGrid::new(12).unwrap();
        for i in 0..=12 {
            assert_eq!(g.index_of(g.node(i)).unwrap(), i);
        }
        assert!(g.index_of(0.3).is_err());
        assert!(g.index_of(1.2).is_err());
    }

    #[test]
    fn refinement_factor_requires_nesting() {
        let coarse = TimeGrid::new(4).unwrap();
        let fine = TimeGrid::new(12).unwrap();
        assert_eq!(coarse.refinement_factor(&fine).unwrap(), 3);
        assert!(fine.refinement_factor(&coarse).is_err());
    }

    #[test]
    fn refined_path_reproduces_the_same_polygon() {
        let g = TimeGrid::new(2).unwrap();
        let p = SampledPath::new(g, 2, vec![0.0, 0.0, 1.0, -1.0, 0.5, 2.0]).unwrap();
        let r = p.refine(4).unwrap();
        // Midpoint of the first cell of the original polygon.
        assert!((r.value(2)[0] - 0.5).abs() < 1e-15);
        assert!((r.value(2)[1] + 0.5).abs() < 1e-15);
        // Original nodes are preserved exactly.
        assert_eq!(r.value(8), p.value(2));
    }

    #[test]
    fn control_energy_matches_hand_sum_and_path_is_based() {
        let g = TimeGrid::new(4).unwrap();
        let h = CameronMartinPath::new(g, 1, vec![1.0, -2.0, 0.0, 3.0]).unwrap();
        // sum h'^2 dt = (1 + 4 + 0 + 9) / 4 = 3.5
        assert!((h.squared_norm() - 3.5).abs() < 1e-15);
        assert!((h.energy() - 1.75).abs() < 1e-15);
        let p = h.path();
        assert!(p.is_based());
        // endpoint = (1 - 2 + 0 + 3) / 4 = 0.5
        assert!((p.value(4)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn control_round_trips_through_its_polygonal_path() {
        let g = TimeGrid::new(5).unwrap();
        let h = CameronMartinPath::new(g, 2, (0..10).map(|i| i as f64 - 4.5).collect()).unwrap();
        let back = CameronMartinPath::from_sampled(&h.path());
        for (a, b) in h.derivatives().iter().zip(back.derivatives()) {
            assert!((a - b).abs() < 1e-12, "derivative mismatch: {a} vs {b}");
        }
    }

    #[test]
    fn refined_control_keeps_norm_and_endpoint() {
        let g = TimeGrid::new(3).unwrap();
        let h = CameronMartinPath::new(g, 1, vec![1.0, 0.5, -1.5]).unwrap();
        let r = h.refine(8).unwrap();
        assert!((h.squared_norm() - r.squared_norm()).abs() < 1e-14);
        let (pe, re) = (h.path(), r.path());
        assert!((pe.value(3)[0] - re.value(24)[0]).abs() < 1e-14);
    }
}
