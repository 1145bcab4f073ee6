//! Step-2 rough path laboratory.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] — uniform time grids, sampled polygonal paths, Cameron–Martin
//!   controls with piecewise-constant derivatives.
//! * [`rough`] — step-2 rough paths over a grid: group elements of
//!   `G^2(R^d)`, Chen composition, dilation, translation by a control,
//!   and the time-augmented (Young) pairing.
//! * [`norms`] — grid-restricted Hölder and Besov scales and the two-level
//!   rough-path distance built from them.
//! * [`dyadic`] — dyadic polygonal approximations of Brownian motion,
//!   midpoint increments, cross integrals, and the level decay experiment.
//! * [`flow`] — vector-field systems, the skeleton ODE with its Jacobian
//!   flow, the level-2 driven (rough) difference scheme, first variation
//!   and the deterministic Malliavin covariance.
//! * [`action`] — energy minimization under endpoint or path constraints
//!   and the finite/infinite rate evaluation on lifted paths.
//! * [`montecarlo`] — mollified endpoint estimators, importance-sampled
//!   small-noise sweeps, pathwise Malliavin covariance, ball-decay probes.
//!
//! Everything is deterministic given a master seed: parallel Monte Carlo
//! derives one RNG stream per sample by counter, so results do not depend
//! on the worker count.

pub mod grid;
pub mod rough;
pub mod norms;
pub mod rng;
pub mod stats;
pub mod dyadic;
pub mod flow;
pub mod action;
pub mod montecarlo;
