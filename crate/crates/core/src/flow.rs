//! Vector-field systems and the deterministic flows attached to them.
//!
//! A system is the data of the diffusion field `sigma = [V_1 ... V_d]`
//! (columns acting on driver components) and a drift `b(eps, xi)`, with
//! analytic derivative callbacks. The flows:
//!
//! * the **skeleton** `phi0` driven by a finite-energy control,
//!   `d phi0 = sigma(phi0) dh + b(0, phi0) dt`, integrated cell-by-cell with
//!   classical RK4 (the control derivative is constant on a cell, so each
//!   cell is a smooth ODE step and the method keeps its full order);
//! * the **Jacobian flow** `M_t` of the skeleton,
//!   `dM = [grad sigma(phi0) <., dh> + grad_xi b(0, phi0)] M`, `M_0 = Id`,
//!   with the inverse `N = M^-1` integrated as its own ODE
//!   `dN = -N [.]` rather than by matrix inversion;
//! * the **level-2 driven scheme** for a step-2 rough driver paired with
//!   time: per cell
//!
//!   ```text
//!   y_next = y + sigma(y) X^1 + sum_{j,k} (grad_{V_j} V_k)(y) X^{2;j,k}
//!              + b(eps, y) dt
//!   ```
//!
//!   which degrades gracefully: for additive fields the second-order term
//!   vanishes and the update is exact; for lifts of smooth controls it is a
//!   second-order one-step method.
//!
//! From the skeleton solution, three linear functionals of the driver are
//! assembled with one shared quadrature weight, the cell average of
//! `f_s = M_1 M_s^-1 sigma(phi0_s)`:
//!
//! * `first_variation`: `phi1_1 = M_1 int M_s^-1 [sigma(phi0) dw + d_eps b ds]`,
//!   the Gaussian fluctuation of the endpoint around the skeleton;
//! * `endpoint_gradient`: `D_k F = M_1 int M_s^-1 sigma(phi0_s) k'_s ds`,
//!   the derivative of the endpoint map along a control direction;
//! * `det_malliavin_cov`: `C(h) = M_1 int M_s^-1 sigma sigma^T M_s^-T ds M_1^T`,
//!   assembled from the same cell averages so that the Monte Carlo
//!   covariance of the first variation reproduces it exactly rather than to
//!   quadrature order.
//!
//! Derivative callbacks are validated against central finite differences at
//! construction; a mismatch is a hard error naming the offending callback.
//! Ellipticity (`sigma sigma^T` positive definite) is probed pointwise where
//! a contract needs it, not assumed.

use crate::grid::{CameronMartinPath, GridError, SampledPath, TimeGrid};
use crate::rng::{stream, Domain};
use crate::rough::Level2RoughPath;
use nalgebra::DMatrix;
use rand::Rng;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

/// Shared function type for state-only callbacks (`sigma`, `grad sigma`,
/// `d_eps b at 0`): write the result into the output slice.
pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Drift-style callbacks carry the noise parameter: `(eps, xi, out)`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Fixed probe configuration for the construction-time derivative checks.
const PROBE_COUNT: usize = 8;
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-5;
const PROBE_SEED: u64 = 0x5eed_f1e1;

/// States beyond this radius count as blow-up; integration aborts with a
/// diagnostic instead of feeding infinities onward.
pub const BLOWUP_RADIUS: f64 = 1e8;

/// Floor below which `sigma sigma^T` counts as degenerate.
pub const ELLIPTICITY_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("dimensions must be positive (state {state_dim}, driver {driver_dim})")]
    BadDimensions { state_dim: usize, driver_dim: usize },
    #[error(
        "callback `{which}` disagrees with finite differences at a probe point \
         (worst deviation {worst:.3e}, tolerance {tol:.1e})"
    )]
    DerivativeMismatch { which: &'static str, worst: f64, tol: f64 },
    #[error("sigma sigma^T is degenerate at the probe point (min eigenvalue {min_eig:.3e})")]
    NotElliptic { min_eig: f64 },
    #[error("state blew up at step {step} (|y| = {norm:.3e}); integration aborted")]
    BlowUp { step: usize, norm: f64 },
    #[error("driver has {got} components, system expects {want}")]
    DriverMismatch { got: usize, want: usize },
    #[error("initial state has {got} components, system expects {want}")]
    StateMismatch { got: usize, want: usize },
    #[error("driver must be paired with time: expected dimension {want}, got {got}")]
    NotPaired { got: usize, want: usize },
    #[error("unknown catalog system `{name}`")]
    UnknownSystem { name: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// A diffusion/drift pair with analytic derivatives.
///
/// Layouts (all row-major):
/// * `sigma`: `state_dim x driver_dim`, entry `(i, j)` is component `i` of
///   the field `V_j`;
/// * `grad_sigma`: `state_dim x driver_dim x state_dim`, entry
///   `((i, j), l)` is `d sigma^i_j / d xi^l`;
/// * `drift`, `deps_drift`: `state_dim`;
/// * `grad_drift`: `state_dim x state_dim`, entry `(i, l)` is
///   `d b^i / d xi^l` at the given `eps`.
#[derive(Clone)]
pub struct VectorFieldSystem {
    state_dim: usize,
    driver_dim: usize,
    sigma: FieldFn,
    grad_sigma: FieldFn,
    drift: DriftFn,
    grad_drift: DriftFn,
    deps_drift: FieldFn,
}

impl std::fmt::Debug for VectorFieldSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorFieldSystem")
            .field("state_dim", &self.state_dim)
            .field("driver_dim", &self.driver_dim)
            .finish_non_exhaustive()
    }
}

impl VectorFieldSystem {
    /// Build a system and validate every derivative callback against central
    /// finite differences at a fixed set of pseudo-random probe points.
    pub fn new(
        state_dim: usize,
        driver_dim: usize,
        sigma: FieldFn,
        grad_sigma: FieldFn,
        drift: DriftFn,
        grad_drift: DriftFn,
        deps_drift: FieldFn,
    ) -> Result<Self, FlowError> {
        if state_dim == 0 || driver_dim == 0 {
            return Err(FlowError::BadDimensions { state_dim, driver_dim });
        }
        let sys = VectorFieldSystem {
            state_dim,
            driver_dim,
            sigma,
            grad_sigma,
            drift,
            grad_drift,
            deps_drift,
        };
        sys.validate_derivatives()?;
        Ok(sys)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn driver_dim(&self) -> usize {
        self.driver_dim
    }

    pub fn sigma_into(&self, xi: &[f64], out: &mut [f64]) {
        (self.sigma)(xi, out);
    }

    pub fn grad_sigma_into(&self, xi: &[f64], out: &mut [f64]) {
        (self.grad_sigma)(xi, out);
    }

    pub fn drift_into(&self, eps: f64, xi: &[f64], out: &mut [f64]) {
        (self.drift)(eps, xi, out);
    }

    pub fn grad_drift_into(&self, eps: f64, xi: &[f64], out: &mut [f64]) {
        (self.grad_drift)(eps, xi, out);
    }

    pub fn deps_drift_into(&self, xi: &[f64], out: &mut [f64]) {
        (self.deps_drift)(xi, out);
    }

    fn validate_derivatives(&self) -> Result<(), FlowError> {
        let (n, d) = (self.state_dim, self.driver_dim);
        let mut rng = stream(PROBE_SEED, Domain::Probe, (n * 31 + d) as u64);
        let mut worst_sigma = 0.0f64;
        let mut worst_drift = 0.0f64;
        let mut worst_eps = 0.0f64;
        for _ in 0..PROBE_COUNT {
            let xi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
            // grad_sigma against central differences of sigma.
            let mut gs = vec![0.0; n * d * n];
            (self.grad_sigma)(&xi, &mut gs);
            let mut plus = vec![0.0; n * d];
            let mut minus = vec![0.0; n * d];
            let mut probe = xi.clone();
            for l in 0..n {
                probe[l] = xi[l] + FD_STEP;
                (self.sigma)(&probe, &mut plus);
                probe[l] = xi[l] - FD_STEP;
                (self.sigma)(&probe, &mut minus);
                probe[l] = xi[l];
                for i in 0..n {
                    for j in 0..d {
                        let fd = (plus[i * d + j] - minus[i * d + j]) / (2.0 * FD_STEP);
                        let an = gs[(i * d + j) * n + l];
                        let rel = (an - fd).abs() / (1.0 + an.abs().max(fd.abs()));
                        worst_sigma = worst_sigma.max(rel);
                    }
                }
            }
            // grad_drift against central differences of the drift, at two
            // noise levels.
            for eps in [0.0, 0.3] {
                let mut gb = vec![0.0; n * n];
                (self.grad_drift)(eps, &xi, &mut gb);
                let mut bp = vec![0.0; n];
                let mut bm = vec![0.0; n];
                for l in 0..n {
                    probe[l] = xi[l] + FD_STEP;
                    (self.drift)(eps, &probe, &mut bp);
                    probe[l] = xi[l] - FD_STEP;
                    (self.drift)(eps, &probe, &mut bm);
                    probe[l] = xi[l];
                    for i in 0..n {
                        let fd = (bp[i] - bm[i]) / (2.0 * FD_STEP);
                        let an = gb[i * n + l];
                        let rel = (an - fd).abs() / (1.0 + an.abs().max(fd.abs()));
                        worst_drift = worst_drift.max(rel);
                    }
                }
            }
            // deps_drift against a second-order one-sided difference in eps
            // (the drift need not extend to negative noise levels).
            let mut de = vec![0.0; n];
            (self.deps_drift)(&xi, &mut de);
            let mut b0 = vec![0.0; n];
            let mut b1 = vec![0.0; n];
            let mut b2 = vec![0.0; n];
            (self.drift)(0.0, &xi, &mut b0);
            (self.drift)(FD_STEP, &xi, &mut b1);
            (self.drift)(2.0 * FD_STEP, &xi, &mut b2);
            for i in 0..n {
                let fd = (-3.0 * b0[i] + 4.0 * b1[i] - b2[i]) / (2.0 * FD_STEP);
                let rel = (de[i] - fd).abs() / (1.0 + de[i].abs().max(fd.abs()));
                worst_eps = worst_eps.max(rel);
            }
        }
        if worst_sigma > FD_TOL {
            return Err(FlowError::DerivativeMismatch {
                which: "grad_sigma",
                worst: worst_sigma,
                tol: FD_TOL,
            });
        }
        if worst_drift > FD_TOL {
            return Err(FlowError::DerivativeMismatch {
                which: "grad_drift",
                worst: worst_drift,
                tol: FD_TOL,
            });
        }
        if worst_eps > FD_TOL {
            return Err(FlowError::DerivativeMismatch {
                which: "deps_drift",
                worst: worst_eps,
                tol: FD_TOL,
            });
        }
        Ok(())
    }

    /// Smallest eigenvalue of `sigma sigma^T` at a point.
    pub fn min_ellipticity(&self, xi: &[f64]) -> f64 {
        let (n, d) = (self.state_dim, self.driver_dim);
        let mut sig = vec![0.0; n * d];
        (self.sigma)(xi, &mut sig);
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for l in 0..n {
                let mut s = 0.0;
                for j in 0..d {
                    s += sig[i * d + j] * sig[l * d + j];
                }
                gram[(i, l)] = s;
            }
        }
        gram.symmetric_eigen().eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    }

    /// Hard form of the ellipticity probe.
    pub fn require_elliptic(&self, xi: &[f64]) -> Result<(), FlowError> {
        let min_eig = self.min_ellipticity(xi);
        if min_eig <= ELLIPTICITY_FLOOR {
            return Err(FlowError::NotElliptic { min_eig });
        }
        Ok(())
    }
}

/// The skeleton flow, its Jacobian data, and the quadrature weights shared
/// by the linear endpoint functionals.
#[derive(Clone, Debug)]
pub struct SkeletonSolution {
    grid: TimeGrid,
    state_dim: usize,
    driver_dim: usize,
    /// States at nodes, `n_nodes x state_dim`.
    phi0: Vec<f64>,
    /// Jacobian at nodes, `n_nodes x state_dim^2`.
    m: Vec<f64>,
    /// Inverse Jacobian at nodes (integrated, not inverted).
    minv: Vec<f64>,
    /// `f_s = M_1 M_s^-1 sigma(phi0_s)` at nodes, `n_nodes x (state x driver)`.
    weight: Vec<f64>,
    /// `g_s = M_1 M_s^-1 d_eps b(0, phi0_s)` at nodes, `n_nodes x state`.
    weight_eps: Vec<f64>,
    /// Deterministic Malliavin covariance `C(h)`, `state x state`.
    cov: Vec<f64>,
    /// Worst entry of `M_s M_s^-1 - Id` across nodes.
    inverse_defect: f64,
}

impl SkeletonSolution {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn driver_dim(&self) -> usize {
        self.driver_dim
    }

    /// Skeleton state at node `i`.
    pub fn state(&self, i: usize) -> &[f64] {
        &self.phi0[i * self.state_dim..(i + 1) * self.state_dim]
    }

    /// Endpoint `phi0_1`.
    pub fn endpoint(&self) -> &[f64] {
        self.state(self.grid.n_steps())
    }

    /// Jacobian `M_{t_i}` (row-major `state x state`).
    pub fn jacobian(&self, i: usize) -> &[f64] {
        let nn = self.state_dim * self.state_dim;
        &self.m[i * nn..(i + 1) * nn]
    }

    /// Inverse Jacobian `M_{t_i}^-1`.
    pub fn jacobian_inv(&self, i: usize) -> &[f64] {
        let nn = self.state_dim * self.state_dim;
        &self.minv[i * nn..(i + 1) * nn]
    }

    /// Endpoint weight `f_{t_i} = M_1 M_{t_i}^-1 sigma(phi0_{t_i})`.
    pub fn endpoint_weight(&self, i: usize) -> &[f64] {
        let nd = self.state_dim * self.driver_dim;
        &self.weight[i * nd..(i + 1) * nd]
    }

    /// Average of the endpoint weight over cell `i` (trapezoid), written to
    /// `out` (`state x driver`).
    pub fn cell_weight_into(&self, i: usize, out: &mut [f64]) {
        let nd = self.state_dim * self.driver_dim;
        let (a, b) = (self.endpoint_weight(i), &self.weight[(i + 1) * nd..(i + 2) * nd]);
        for k in 0..nd {
            out[k] = 0.5 * (a[k] + b[k]);
        }
    }

    /// Worst entry of `M M^-1 - Id` over the grid.
    pub fn inverse_defect(&self) -> f64 {
        self.inverse_defect
    }

    /// Deterministic Malliavin covariance `C(h)` (row-major).
    pub fn cov(&self) -> &[f64] {
        &self.cov
    }
}

/// Multiply `state_dim x state_dim` row-major matrices: `out = a b`.
fn mat_mul(n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

/// Joint right-hand side for the (phi, M, N) system at fixed cell slope.
struct SkeletonRhs<'a> {
    sys: &'a VectorFieldSystem,
    hprime: &'a [f64],
    // scratch
    sig: Vec<f64>,
    gs: Vec<f64>,
    b0: Vec<f64>,
    gb: Vec<f64>,
    a_mat: Vec<f64>,
}

impl<'a> SkeletonRhs<'a> {
    fn new(sys: &'a VectorFieldSystem, hprime: &'a [f64]) -> Self {
        let (n, d) = (sys.state_dim, sys.driver_dim);
        SkeletonRhs {
            sys,
            hprime,
            sig: vec![0.0; n * d],
            gs: vec![0.0; n * d * n],
            b0: vec![0.0; n],
            gb: vec![0.0; n * n],
            a_mat: vec![0.0; n * n],
        }
    }

    /// `state = [phi | M | N]`, `deriv` likewise.
    fn eval(&mut self, state: &[f64], deriv: &mut [f64]) {
        let (n, d) = (self.sys.state_dim, self.sys.driver_dim);
        let nn = n * n;
        let (phi, rest) = state.split_at(n);
        let (m, nmat) = rest.split_at(nn);
        self.sys.sigma_into(phi, &mut self.sig);
        self.sys.grad_sigma_into(phi, &mut self.gs);
        self.sys.drift_into(0.0, phi, &mut self.b0);
        self.sys.grad_drift_into(0.0, phi, &mut self.gb);
        // A = grad sigma <., h'> + grad b
        for i in 0..n {
            for l in 0..n {
                let mut s = self.gb[i * n + l];
                for j in 0..d {
                    s += self.gs[(i * d + j) * n + l] * self.hprime[j];
                }
                self.a_mat[i * n + l] = s;
            }
        }
        {
            let (dphi, drest) = deriv.split_at_mut(n);
            let (dm, dn) = drest.split_at_mut(nn);
            for i in 0..n {
                let mut s = self.b0[i];
                for j in 0..d {
                    s += self.sig[i * d + j] * self.hprime[j];
                }
                dphi[i] = s;
            }
            mat_mul(n, &self.a_mat, m, dm);
            mat_mul(n, nmat, &self.a_mat, dn);
            for v in dn.iter_mut() {
                *v = -*v;
            }
        }
    }
}

/// Integrate the skeleton ODE, its Jacobian flow and the inverse flow with
/// classical RK4, one step per control cell, and assemble the shared
/// endpoint quadrature weights and the deterministic Malliavin covariance.
pub fn solve_skeleton(
    sys: &VectorFieldSystem,
    h: &CameronMartinPath,
    a: &[f64],
) -> Result<SkeletonSolution, FlowError> {
    let (n, d) = (sys.state_dim, sys.driver_dim);
    if h.dim() != d {
        return Err(FlowError::DriverMismatch { got: h.dim(), want: d });
    }
    if a.len() != n {
        return Err(FlowError::StateMismatch { got: a.len(), want: n });
    }
    let grid = h.grid();
    let steps = grid.n_steps();
    let dt = grid.dt();
    let nn = n * n;
    let dim = n + 2 * nn;

    let mut state = vec![0.0; dim];
    state[..n].copy_from_slice(a);
    for i in 0..n {
        state[n + i * n + i] = 1.0;
        state[n + nn + i * n + i] = 1.0;
    }

    let mut phi0 = vec![0.0; (steps + 1) * n];
    let mut m = vec![0.0; (steps + 1) * nn];
    let mut minv = vec![0.0; (steps + 1) * nn];
    phi0[..n].copy_from_slice(&state[..n]);
    m[..nn].copy_from_slice(&state[n..n + nn]);
    minv[..nn].copy_from_slice(&state[n + nn..]);

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut stage = vec![0.0; dim];

    for i in 0..steps {
        let mut rhs = SkeletonRhs::new(sys, h.derivative(i));
        rhs.eval(&state, &mut k1);
        for j in 0..dim {
            stage[j] = state[j] + 0.5 * dt * k1[j];
        }
        rhs.eval(&stage, &mut k2);
        for j in 0..dim {
            stage[j] = state[j] + 0.5 * dt * k2[j];
        }
        rhs.eval(&stage, &mut k3);
        for j in 0..dim {
            stage[j] = state[j] + dt * k3[j];
        }
        rhs.eval(&stage, &mut k4);
        for j in 0..dim {
            state[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let norm = state[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > BLOWUP_RADIUS {
            return Err(FlowError::BlowUp { step: i + 1, norm });
        }
        phi0[(i + 1) * n..(i + 2) * n].copy_from_slice(&state[..n]);
        m[(i + 1) * nn..(i + 2) * nn].copy_from_slice(&state[n..n + nn]);
        minv[(i + 1) * nn..(i + 2) * nn].copy_from_slice(&state[n + nn..]);
    }

    // Inverse consistency across the grid.
    let mut prod = vec![0.0; nn];
    let mut inverse_defect = 0.0f64;
    for i in 0..=steps {
        mat_mul(n, &m[i * nn..(i + 1) * nn], &minv[i * nn..(i + 1) * nn], &mut prod);
        for r in 0..n {
            for c in 0..n {
                let want = if r == c { 1.0 } else { 0.0 };
                inverse_defect = inverse_defect.max((prod[r * n + c] - want).abs());
            }
        }
    }

    // Endpoint weights f_s = M_1 M_s^-1 sigma(phi0_s) and
    // g_s = M_1 M_s^-1 d_eps b(0, phi0_s).
    let m1 = &m[steps * nn..(steps + 1) * nn];
    let nd = n * d;
    let mut weight = vec![0.0; (steps + 1) * nd];
    let mut weight_eps = vec![0.0; (steps + 1) * n];
    let mut m1minv = vec![0.0; nn];
    let mut sig = vec![0.0; nd];
    let mut de = vec![0.0; n];
    for i in 0..=steps {
        mat_mul(n, m1, &minv[i * nn..(i + 1) * nn], &mut m1minv);
        sys.sigma_into(&phi0[i * n..(i + 1) * n], &mut sig);
        sys.deps_drift_into(&phi0[i * n..(i + 1) * n], &mut de);
        for r in 0..n {
            for j in 0..d {
                let mut s = 0.0;
                for l in 0..n {
                    s += m1minv[r * n + l] * sig[l * d + j];
                }
                weight[i * nd + r * d + j] = s;
            }
            let mut s = 0.0;
            for l in 0..n {
                s += m1minv[r * n + l] * de[l];
            }
            weight_eps[i * n + r] = s;
        }
    }

    // Covariance from the same cell averages as the first variation:
    // C = sum_i fbar_i fbar_i^T dt.
    let mut cov = vec![0.0; nn];
    let mut fbar = vec![0.0; nd];
    for i in 0..steps {
        for k in 0..nd {
            fbar[k] = 0.5 * (weight[i * nd + k] + weight[(i + 1) * nd + k]);
        }
        for r in 0..n {
            for c in 0..n {
                let mut s = 0.0;
                for j in 0..d {
                    s += fbar[r * d + j] * fbar[c * d + j];
                }
                cov[r * n + c] += s * dt;
            }
        }
    }

    Ok(SkeletonSolution {
        grid,
        state_dim: n,
        driver_dim: d,
        phi0,
        m,
        minv,
        weight,
        weight_eps,
        cov,
        inverse_defect,
    })
}

/// Deterministic Malliavin covariance `C(h)` of a skeleton solution
/// (row-major `state x state`).
pub fn det_malliavin_cov(sol: &SkeletonSolution) -> Vec<f64> {
    sol.cov.clone()
}

/// Endpoint first variation along a sampled driver path:
/// `phi1_1 = sum_i fbar_i dw_i + sum_i gbar_i dt`.
pub fn first_variation(sol: &SkeletonSolution, w: &SampledPath) -> Result<Vec<f64>, FlowError> {
    let (n, d) = (sol.state_dim, sol.driver_dim);
    if w.dim() != d {
        return Err(FlowError::DriverMismatch { got: w.dim(), want: d });
    }
    if w.grid() != sol.grid {
        return Err(GridError::GridMismatch {
            a: w.grid().n_steps(),
            b: sol.grid.n_steps(),
        }
        .into());
    }
    let steps = sol.grid.n_steps();
    let dt = sol.grid.dt();
    let nd = n * d;
    let mut out = vec![0.0; n];
    let mut dw = vec![0.0; d];
    for i in 0..steps {
        w.increment_into(i, &mut dw);
        let (fa, fb) = (&sol.weight[i * nd..(i + 1) * nd], &sol.weight[(i + 1) * nd..(i + 2) * nd]);
        let (ga, gb) = (&sol.weight_eps[i * n..(i + 1) * n], &sol.weight_eps[(i + 1) * n..(i + 2) * n]);
        for r in 0..n {
            let mut s = 0.0;
            for j in 0..d {
                s += 0.5 * (fa[r * d + j] + fb[r * d + j]) * dw[j];
            }
            out[r] += s + 0.5 * (ga[r] + gb[r]) * dt;
        }
    }
    Ok(out)
}

/// Gradient of the endpoint map along a control direction `k`:
/// `D_k F = sum_i fbar_i k'_i dt`. The direction may live on the solution
/// grid or any coarser nested grid.
pub fn endpoint_gradient(
    sol: &SkeletonSolution,
    k: &CameronMartinPath,
) -> Result<Vec<f64>, FlowError> {
    let (n, d) = (sol.state_dim, sol.driver_dim);
    if k.dim() != d {
        return Err(FlowError::DriverMismatch { got: k.dim(), want: d });
    }
    let k = if k.grid() == sol.grid {
        k.clone()
    } else {
        let factor = k.grid().refinement_factor(&sol.grid)?;
        k.refine(factor)?
    };
    let steps = sol.grid.n_steps();
    let dt = sol.grid.dt();
    let nd = n * d;
    let mut out = vec![0.0; n];
    for i in 0..steps {
        let (fa, fb) = (&sol.weight[i * nd..(i + 1) * nd], &sol.weight[(i + 1) * nd..(i + 2) * nd]);
        let kp = k.derivative(i);
        for r in 0..n {
            let mut s = 0.0;
            for j in 0..d {
                s += 0.5 * (fa[r * d + j] + fb[r * d + j]) * kp[j];
            }
            out[r] += s * dt;
        }
    }
    Ok(out)
}

/// Reusable buffers for the level-2 driven step.
pub struct RdeScratch {
    sig: Vec<f64>,
    gs: Vec<f64>,
    b: Vec<f64>,
}

impl RdeScratch {
    pub fn new(sys: &VectorFieldSystem) -> Self {
        let (n, d) = (sys.state_dim, sys.driver_dim);
        RdeScratch { sig: vec![0.0; n * d], gs: vec![0.0; n * d * n], b: vec![0.0; n] }
    }
}

/// One cell of the level-2 scheme with explicit driver data:
/// `x1` holds the `d` driver increments, `x2` the `d x d` second-level
/// block, `dt` the cell width.
pub fn rde_step(
    sys: &VectorFieldSystem,
    eps: f64,
    y: &mut [f64],
    x1: &[f64],
    x2: &[f64],
    dt: f64,
    scratch: &mut RdeScratch,
) {
    let (n, d) = (sys.state_dim, sys.driver_dim);
    sys.sigma_into(y, &mut scratch.sig);
    sys.grad_sigma_into(y, &mut scratch.gs);
    sys.drift_into(eps, y, &mut scratch.b);
    for i in 0..n {
        let mut s = scratch.b[i] * dt;
        for j in 0..d {
            s += scratch.sig[i * d + j] * x1[j];
        }
        // sum_{j,k} (grad_{V_j} V_k)^i X^{2;j,k}
        //   = sum_{j,k,l} dsigma^i_k/dxi^l sigma^l_j X^{2;j,k}
        for k in 0..d {
            let mut inner = 0.0;
            for l in 0..n {
                let mut sl = 0.0;
                for j in 0..d {
                    sl += scratch.sig[l * d + j] * x2[j * d + k];
                }
                inner += scratch.gs[(i * d + k) * n + l] * sl;
            }
            s += inner;
        }
        y[i] += s;
    }
}

/// The cell step specialised to exact lifts of polygonal drivers, where the
/// second level is `dx (x) dx / 2`; avoids materializing the block.
pub fn rde_step_lifted(
    sys: &VectorFieldSystem,
    eps: f64,
    y: &mut [f64],
    dx: &[f64],
    dt: f64,
    scratch: &mut RdeScratch,
) {
    let (n, d) = (sys.state_dim, sys.driver_dim);
    sys.sigma_into(y, &mut scratch.sig);
    sys.grad_sigma_into(y, &mut scratch.gs);
    sys.drift_into(eps, y, &mut scratch.b);
    for i in 0..n {
        let mut s = scratch.b[i] * dt;
        for j in 0..d {
            s += scratch.sig[i * d + j] * dx[j];
        }
        for k in 0..d {
            let mut inner = 0.0;
            for l in 0..n {
                let mut sl = 0.0;
                for j in 0..d {
                    sl += scratch.sig[l * d + j] * dx[j];
                }
                sl *= 0.5 * dx[k];
                inner += scratch.gs[(i * d + k) * n + l] * sl;
            }
            s += inner;
        }
        y[i] += s;
    }
}

/// Integrate the level-2 scheme along a rough driver paired with time
/// (dimension `driver_dim + 1`, time last). Returns the state path on the
/// driver's grid.
pub fn solve_rde_level2(
    sys: &VectorFieldSystem,
    x: &Level2RoughPath,
    eps: f64,
    a: &[f64],
) -> Result<SampledPath, FlowError> {
    let (n, d) = (sys.state_dim, sys.driver_dim);
    if x.dim() != d + 1 {
        return Err(FlowError::NotPaired { got: x.dim(), want: d + 1 });
    }
    if a.len() != n {
        return Err(FlowError::StateMismatch { got: a.len(), want: n });
    }
    let grid = x.grid();
    let steps = grid.n_steps();
    let e = d + 1;
    let mut scratch = RdeScratch::new(sys);
    let mut y = a.to_vec();
    let mut values = vec![0.0; (steps + 1) * n];
    values[..n].copy_from_slice(a);
    let mut x1 = vec![0.0; d];
    let mut x2 = vec![0.0; d * d];
    for i in 0..steps {
        let c1 = x.first_cell(i);
        let c2 = x.second_cell(i);
        x1.copy_from_slice(&c1[..d]);
        let dt = c1[d];
        for aa in 0..d {
            for bb in 0..d {
                x2[aa * d + bb] = c2[aa * e + bb];
            }
        }
        rde_step(sys, eps, &mut y, &x1, &x2, dt, &mut scratch);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > BLOWUP_RADIUS {
            return Err(FlowError::BlowUp { step: i + 1, norm });
        }
        values[(i + 1) * n..(i + 2) * n].copy_from_slice(&y);
    }
    Ok(SampledPath::new(grid, n, values)?)
}

/// A catalog system: the fields plus the base point experiments start from.
#[derive(Clone, Debug)]
pub struct CatalogSystem {
    pub name: String,
    pub system: VectorFieldSystem,
    pub base_point: Vec<f64>,
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

/// Built-in systems, keyed by name.
///
/// * `"additive"` — `n = d = 1`, `sigma = 1`, no drift; base point
///   `a` (default 0). The endpoint map is `a + h_1` and every flow
///   quantity is exact.
/// * `"linear1d"` — `n = d = 1`, `sigma(xi) = xi`, no drift; base point `a`
///   (default 1). Closed forms: `phi0 = a exp(h_t)`, `M = exp(h_t)`.
/// * `"rotating2d"` — `n = d = 2`, `sigma(xi)` the rotation by angle
///   `kappa xi_2` (orthogonal columns, uniformly elliptic), drift
///   `b(eps, xi) = (beta + gamma eps) (-sin xi_2, sin xi_1)`; base point
///   `(a1, a2)` (default origin). Parameters `kappa` (default 1),
///   `beta` (default 0.2), `gamma` (default 0.5).
///
/// The `(H1)` ellipticity surrogate is verified at the base point for every
/// entry before it is returned.
pub fn catalog_system(
    name: &str,
    params: &BTreeMap<String, f64>,
) -> Result<CatalogSystem, FlowError> {
    let built = match name {
        "additive" => {
            let base = vec![param(params, "a", 0.0)];
            let system = VectorFieldSystem::new(
                1,
                1,
                Arc::new(|_xi: &[f64], out: &mut [f64]| out[0] = 1.0),
                Arc::new(|_xi: &[f64], out: &mut [f64]| out[0] = 0.0),
                Arc::new(|_eps, _xi: &[f64], out: &mut [f64]| out[0] = 0.0),
                Arc::new(|_eps, _xi: &[f64], out: &mut [f64]| out[0] = 0.0),
                Arc::new(|_xi: &[f64], out: &mut [f64]| out[0] = 0.0),
            )?;
            CatalogSystem { name: name.to_string(), system, base_point: base }
        }
        "linear1d" => {
            let base = vec![param(params, "a", 1.0)];
            let system = VectorFieldSystem::new(
                1,
                1,
                Arc::new(|xi: &[f64], out: &mut [f64]| out[0] = xi[0]),
                Arc::new(|_xi: &[f64], out: &mut [f64]| out[0] = 1.0),
                Arc::new(|_eps, _xi: &[f64], out: &mut [f64]| out[0] = 0.0),
                Arc::new(|_eps, _xi: &[f64], out: &mut [f64]| out[0] = 0.0),
                Arc::new(|_xi: &[f64], out: &mut [f64]| out[0] = 0.0),
            )?;
            CatalogSystem { name: name.to_string(), system, base_point: base }
        }
        "rotating2d" => {
            let kappa = param(params, "kappa", 1.0);
            let beta = param(params, "beta", 0.2);
            let gamma = param(params, "gamma", 0.5);
            let base = vec![param(params, "a1", 0.0), param(params, "a2", 0.0)];
            let system = VectorFieldSystem::new(
                2,
                2,
                Arc::new(move |xi: &[f64], out: &mut [f64]| {
                    let (c, s) = ((kappa * xi[1]).cos(), (kappa * xi[1]).sin());
                    out[0] = c;
                    out[1] = -s;
                    out[2] = s;
                    out[3] = c;
                }),
                Arc::new(move |xi: &[f64], out: &mut [f64]| {
                    let (c, s) = ((kappa * xi[1]).cos(), (kappa * xi[1]).sin());
                    out.fill(0.0);
                    // d sigma^i_j / d xi^2 only; layout ((i, j), l).
                    out[(0 * 2 + 0) * 2 + 1] = -kappa * s;
                    out[(0 * 2 + 1) * 2 + 1] = -kappa * c;
                    out[(1 * 2 + 0) * 2 + 1] = kappa * c;
                    out[(1 * 2 + 1) * 2 + 1] = -kappa * s;
                }),
                Arc::new(move |eps, xi: &[f64], out: &mut [f64]| {
                    let amp = beta + gamma * eps;
                    out[0] = -amp * xi[1].sin();
                    out[1] = amp * xi[0].sin();
                }),
                Arc::new(move |eps, xi: &[f64], out: &mut [f64]| {
                    let amp = beta + gamma * eps;
                    out[0] = 0.0;
                    out[1] = -amp * xi[1].cos();
                    out[2] = amp * xi[0].cos();
                    out[3] = 0.0;
                }),
                Arc::new(move |xi: &[f64], out: &mut [f64]| {
                    out[0] = -gamma * xi[1].sin();
                    out[1] = gamma * xi[0].sin();
                }),
            )?;
            CatalogSystem { name: name.to_string(), system, base_point: base }
        }
        other => return Err(FlowError::UnknownSystem { name: other.to_string() }),
    };
    built.system.require_elliptic(&built.base_point)?;
    Ok(built)
}

/// A random uniformly elliptic system with bounded trigonometric fields and
/// analytic derivatives: identity-dominant `sigma` plus small sinusoidal
/// perturbations, drift `b0(xi) + eps b1(xi)` of the same type. Used by the
/// validation experiments that need families of well-behaved systems.
pub fn random_trig_system(state_dim: usize, driver_dim: usize, seed: u64) -> VectorFieldSystem {
    let (n, d) = (state_dim, driver_dim);
    let mut rng = stream(seed, Domain::Probe, 7);
    let amp = 0.3 / (n as f64).sqrt();
    let mut coeff = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        let a: f64 = rng.gen_range(-amp..amp);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        coeff.push((a, u, phase));
    }
    let mut drift_coeff = Vec::with_capacity(2 * n);
    for _ in 0..2 * n {
        let a: f64 = rng.gen_range(-0.5..0.5);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        drift_coeff.push((a, u, phase));
    }
    let dot = |u: &[f64], xi: &[f64]| u.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();

    let c_sigma = coeff.clone();
    let sigma: FieldFn = Arc::new(move |xi: &[f64], out: &mut [f64]| {
        for i in 0..n {
            for j in 0..d {
                let (a, u, p) = &c_sigma[i * d + j];
                let base = if i == j { 1.0 } else { 0.0 };
                out[i * d + j] = base + a * (dot(u, xi) + p).sin();
            }
        }
    });
    let c_grad = coeff.clone();
    let grad_sigma: FieldFn = Arc::new(move |xi: &[f64], out: &mut [f64]| {
        for i in 0..n {
            for j in 0..d {
                let (a, u, p) = &c_grad[i * d + j];
                let c = a * (dot(u, xi) + p).cos();
                for l in 0..n {
                    out[(i * d + j) * n + l] = c * u[l];
                }
            }
        }
    });
    let c_drift = drift_coeff.clone();
    let drift: DriftFn = Arc::new(move |eps, xi: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let (a0, u0, p0) = &c_drift[i];
            let (a1, u1, p1) = &c_drift[n + i];
            out[i] = a0 * (dot(u0, xi) + p0).sin() + eps * a1 * (dot(u1, xi) + p1).sin();
        }
    });
    let c_gd = drift_coeff.clone();
    let grad_drift: DriftFn = Arc::new(move |eps, xi: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let (a0, u0, p0) = &c_gd[i];
            let (a1, u1, p1) = &c_gd[n + i];
            let c0 = a0 * (dot(u0, xi) + p0).cos();
            let c1 = eps * a1 * (dot(u1, xi) + p1).cos();
            for l in 0..n {
                out[i * n + l] = c0 * u0[l] + c1 * u1[l];
            }
        }
    });
    let c_de = drift_coeff;
    let deps_drift: FieldFn = Arc::new(move |xi: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let (a1, u1, p1) = &c_de[n + i];
            out[i] = a1 * (dot(u1, xi) + p1).sin();
        }
    });
    VectorFieldSystem::new(n, d, sigma, grad_sigma, drift, grad_drift, deps_drift)
        .expect("trigonometric fields carry their own analytic derivatives")
}
