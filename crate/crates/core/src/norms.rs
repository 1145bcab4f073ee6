//! Grid-restricted Hölder and Besov scales for two-parameter increment data.
//!
//! For a function `Y_{s,t}` of node pairs (a rough-path level, a difference
//! of levels, a cross integral):
//!
//! ```text
//! Hölder:  ||Y||_(a-H)    = sup_(s<t) |Y_{s,t}| / (t-s)^a
//! Besov:   ||Y||_(a,m-B)  = ( int int_(0<=s<t<=1) |Y_{s,t}|^m / (t-s)^(1+ma) ds dt )^(1/m)
//! ```
//!
//! Both are evaluated on grid node pairs only. The Besov double integral is
//! approximated by the midpoint rule on the pair lattice: each pair `(i, j)`
//! with `i < j` represents a `dt x dt` cell of the `(s, t)` triangle and the
//! integrand is evaluated at its node, so the diagonal strip `t - s < dt`
//! never enters and the singular factor stays finite. For separations of a
//! couple of cells and more this converges at first order in `dt`, which is
//! all the contracts here ask of it.
//!
//! The two-level rough-path distance combines fixed exponent pairs,
//!
//! ```text
//! d(X, Y) = ||X^1 - Y^1||_(a, 4m-B) + ||X^2 - Y^2||_(2a, 2m-B)
//! ```
//!
//! and the admissible `(a, m)` window is the one under which that distance
//! controls the rough-path topology:
//!
//! ```text
//! m a positive integer,  1/3 < a < 1/2,
//! a - 1/(4m) > 1/3,      4m - 8ma > 2.
//! ```
//!
//! The first spare inequality is the Besov-to-Hölder embedding margin (the
//! embedded Hölder exponent is `a - 1/(4m)`); the second is the integrability
//! margin that the dyadic level-decay analysis spends.

use crate::rough::Level2RoughPath;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NormError {
    #[error("integrability order must be a positive integer, got {m}")]
    BadOrder { m: u32 },
    #[error("regularity {alpha} outside (1/3, 1/2)")]
    AlphaOutOfWindow { alpha: f64 },
    #[error("embedding margin violated: alpha - 1/(4m) = {margin} <= 1/3")]
    EmbeddingMargin { margin: f64 },
    #[error("integrability margin violated: 4m - 8m alpha = {margin} <= 2")]
    IntegrabilityMargin { margin: f64 },
    #[error("Hölder exponent {exponent} outside (0, 2]")]
    BadExponent { exponent: f64 },
    #[error("Besov order {m} must be >= 1")]
    BadBesovOrder { m: f64 },
    #[error("operands live on different grids ({a} vs {b} steps)")]
    GridMismatch { a: usize, b: usize },
    #[error("operands have different dimensions ({a} vs {b})")]
    DimensionMismatch { a: usize, b: usize },
}

/// Which tensor level of a rough path a norm refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    One,
    Two,
}

/// An admissible `(alpha, m)` pair for the two-level Besov scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesovParams {
    alpha: f64,
    m: u32,
}

impl BesovParams {
    pub fn new(alpha: f64, m: u32) -> Result<Self, NormError> {
        if m == 0 {
            return Err(NormError::BadOrder { m });
        }
        if !(alpha > 1.0 / 3.0 && alpha < 0.5) {
            return Err(NormError::AlphaOutOfWindow { alpha });
        }
        let mf = m as f64;
        let embedding = alpha - 1.0 / (4.0 * mf);
        if embedding <= 1.0 / 3.0 {
            return Err(NormError::EmbeddingMargin { margin: embedding });
        }
        let integrability = 4.0 * mf - 8.0 * mf * alpha;
        if integrability <= 2.0 {
            return Err(NormError::IntegrabilityMargin { margin: integrability });
        }
        Ok(BesovParams { alpha, m })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    /// `(exponent, order)` for first-level norms: `(alpha, 4m)`.
    pub fn level1(&self) -> (f64, f64) {
        (self.alpha, 4.0 * self.m as f64)
    }

    /// `(exponent, order)` for second-level norms: `(2 alpha, 2m)`.
    pub fn level2(&self) -> (f64, f64) {
        (2.0 * self.alpha, 2.0 * self.m as f64)
    }

    /// Hölder exponent reached from the `(alpha, 4m)` Besov scale.
    pub fn embedding_exponent(&self) -> f64 {
        self.alpha - 1.0 / (4.0 * self.m as f64)
    }

    /// Per-level decay exponent `(4m - 8m alpha - 1) / 2` of the dyadic
    /// increment statistic; positive on the admissible window.
    pub fn level_decay_exponent(&self) -> f64 {
        let mf = self.m as f64;
        (4.0 * mf - 8.0 * mf * self.alpha - 1.0) / 2.0
    }
}

/// `sup |Y_{i,j}| / (t_j - t_i)^exponent` over node pairs of an `n_steps`
/// grid. `eval(i, j)` must return `|Y_{t_i, t_j}|`.
pub fn holder_scan(n_steps: usize, exponent: f64, mut eval: impl FnMut(usize, usize) -> f64) -> f64 {
    let dt = 1.0 / n_steps as f64;
    let mut sup = 0.0f64;
    for i in 0..n_steps {
        for j in (i + 1)..=n_steps {
            let sep = (j - i) as f64 * dt;
            sup = sup.max(eval(i, j) / sep.powf(exponent));
        }
    }
    sup
}

/// Midpoint-rule Besov seminorm over node pairs:
/// `( sum_(i<j) |Y_{i,j}|^m / (t_j - t_i)^(1+m*exponent) * dt^2 )^(1/m)`.
pub fn besov_scan(
    n_steps: usize,
    exponent: f64,
    m: f64,
    mut eval: impl FnMut(usize, usize) -> f64,
) -> f64 {
    let dt = 1.0 / n_steps as f64;
    // One weight per separation; hoisted out of the pair loop.
    let weights: Vec<f64> = (0..=n_steps)
        .map(|k| if k == 0 { 0.0 } else { (k as f64 * dt).powf(-(1.0 + m * exponent)) })
        .collect();
    let mut acc = 0.0f64;
    for i in 0..n_steps {
        let mut row = 0.0f64;
        for j in (i + 1)..=n_steps {
            row += eval(i, j).powf(m) * weights[j - i];
        }
        acc += row;
    }
    (acc * dt * dt).powf(1.0 / m)
}

/// Early-exit variant: does the Besov seminorm reach `threshold`?
///
/// The summands are nonnegative, so the partial sums are monotone and the
/// scan can stop as soon as the threshold is crossed.
pub fn besov_scan_exceeds(
    n_steps: usize,
    exponent: f64,
    m: f64,
    threshold: f64,
    mut eval: impl FnMut(usize, usize) -> f64,
) -> bool {
    if threshold <= 0.0 {
        return true;
    }
    let dt = 1.0 / n_steps as f64;
    let weights: Vec<f64> = (0..=n_steps)
        .map(|k| if k == 0 { 0.0 } else { (k as f64 * dt).powf(-(1.0 + m * exponent)) })
        .collect();
    let bound = threshold.powf(m) / (dt * dt);
    let mut acc = 0.0f64;
    for i in 0..n_steps {
        for j in (i + 1)..=n_steps {
            acc += eval(i, j).powf(m) * weights[j - i];
        }
        if acc >= bound {
            return true;
        }
    }
    acc >= bound
}

fn level1_eval(x: &Level2RoughPath) -> impl Fn(usize, usize) -> f64 + '_ {
    let d = x.dim();
    let p1 = x.prefix_first();
    move |i: usize, j: usize| {
        let mut s = 0.0;
        for k in 0..d {
            let v = p1[j * d + k] - p1[i * d + k];
            s += v * v;
        }
        s.sqrt()
    }
}

fn level2_eval(x: &Level2RoughPath) -> impl Fn(usize, usize) -> f64 + '_ {
    let d = x.dim();
    let dd = d * d;
    let p1 = x.prefix_first();
    let p2 = x.prefix_second();
    move |i: usize, j: usize| {
        let mut s = 0.0;
        for a in 0..d {
            for b in 0..d {
                let inc_b = p1[j * d + b] - p1[i * d + b];
                let v = p2[j * dd + a * d + b] - p2[i * dd + a * d + b] - p1[i * d + a] * inc_b;
                s += v * v;
            }
        }
        s.sqrt()
    }
}

/// Grid-restricted Hölder norm of one level of a rough path. The caller
/// passes the exponent explicitly (`2 alpha` for the second level), so the
/// admitted range is `(0, 2]`. Level-2 magnitudes are Frobenius norms.
pub fn holder_norm(x: &Level2RoughPath, level: Level, exponent: f64) -> Result<f64, NormError> {
    if !(exponent > 0.0 && exponent <= 2.0) {
        return Err(NormError::BadExponent { exponent });
    }
    let n = x.grid().n_steps();
    Ok(match level {
        Level::One => holder_scan(n, exponent, level1_eval(x)),
        Level::Two => holder_scan(n, exponent, level2_eval(x)),
    })
}

/// Grid-restricted Besov seminorm of one level of a rough path.
pub fn besov_norm(x: &Level2RoughPath, level: Level, exponent: f64, m: f64) -> Result<f64, NormError> {
    if !(exponent > 0.0 && exponent <= 2.0) {
        return Err(NormError::BadExponent { exponent });
    }
    if m < 1.0 {
        return Err(NormError::BadBesovOrder { m });
    }
    let n = x.grid().n_steps();
    Ok(match level {
        Level::One => besov_scan(n, exponent, m, level1_eval(x)),
        Level::Two => besov_scan(n, exponent, m, level2_eval(x)),
    })
}

/// Two-level rough-path distance
/// `||X^1 - Y^1||_(a,4m-B) + ||X^2 - Y^2||_(2a,2m-B)`.
///
/// The exponent-order pairs per level are fixed by `params`; callers cannot
/// mix scales by accident.
pub fn besov_distance(
    x: &Level2RoughPath,
    y: &Level2RoughPath,
    params: &BesovParams,
) -> Result<f64, NormError> {
    if x.grid() != y.grid() {
        return Err(NormError::GridMismatch { a: x.grid().n_steps(), b: y.grid().n_steps() });
    }
    if x.dim() != y.dim() {
        return Err(NormError::DimensionMismatch { a: x.dim(), b: y.dim() });
    }
    let n = x.grid().n_steps();
    let d = x.dim();
    let dd = d * d;
    let (e1, m1) = params.level1();
    let (e2, m2) = params.level2();
    let (xp1, yp1) = (x.prefix_first(), y.prefix_first());
    let (xp2, yp2) = (x.prefix_second(), y.prefix_second());
    let lvl1 = besov_scan(n, e1, m1, |i, j| {
        let mut s = 0.0;
        for k in 0..d {
            let v = (xp1[j * d + k] - xp1[i * d + k]) - (yp1[j * d + k] - yp1[i * d + k]);
            s += v * v;
        }
        s.sqrt()
    });
    let lvl2 = besov_scan(n, e2, m2, |i, j| {
        let mut s = 0.0;
        for a in 0..d {
            for b in 0..d {
                let xv = xp2[j * dd + a * d + b] - xp2[i * dd + a * d + b]
                    - xp1[i * d + a] * (xp1[j * d + b] - xp1[i * d + b]);
                let yv = yp2[j * dd + a * d + b] - yp2[i * dd + a * d + b]
                    - yp1[i * d + a] * (yp1[j * d + b] - yp1[i * d + b]);
                let v = xv - yv;
                s += v * v;
            }
        }
        s.sqrt()
    });
    Ok(lvl1 + lvl2)
}

/// First-level embedding probe: Hölder norm at the embedded exponent
/// `alpha - 1/(4m)` against the Besov norm at `(alpha, 4m)`.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingReport {
    pub holder: f64,
    pub besov: f64,
    /// `holder / besov`; `None` when the Besov norm vanishes (zero path),
    /// where the embedding ratio is meaningless.
    pub ratio: Option<f64>,
}

pub fn embedding_check(x: &Level2RoughPath, params: &BesovParams) -> EmbeddingReport {
    let n = x.grid().n_steps();
    let (e1, m1) = params.level1();
    let holder = holder_scan(n, params.embedding_exponent(), level1_eval(x));
    let besov = besov_scan(n, e1, m1, level1_eval(x));
    let ratio = if besov > 0.0 { Some(holder / besov) } else { None };
    EmbeddingReport { holder, besov, ratio }
}

/// Closed-form Besov seminorm of the unit-slope line `Y_{s,t} = t - s`:
/// `[ 1 / ( m(1-a) * (m(1-a)+1) ) ]^(1/m)`.
///
/// Used as the oracle for the quadrature; exported so experiment configs and
/// tests agree on one formula.
pub fn line_besov_exact(exponent: f64, m: f64) -> f64 {
    let g = m * (1.0 - exponent);
    (1.0 / (g * (g + 1.0))).powf(1.0 / m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{SampledPath, TimeGrid};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn line_path(n: usize) -> SampledPath {
        let grid = TimeGrid::new(n).unwrap();
        let values = (0..=n).map(|i| i as f64 / n as f64).collect();
        SampledPath::new(grid, 1, values).unwrap()
    }

    fn random_lift(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Level2RoughPath {
        let grid = TimeGrid::new(n).unwrap();
        let values = (0..(n + 1) * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Level2RoughPath::lift(&SampledPath::new(grid, d, values).unwrap())
    }

    #[test]
    fn admissibility_window_accepts_and_rejects_the_reference_pairs() {
        assert!(BesovParams::new(0.42, 4).is_ok());
        assert!(BesovParams::new(0.45, 16).is_ok());
        // Integrability margin fails: 12 - 24 * 0.45 = 1.2 <= 2.
        assert!(matches!(
            BesovParams::new(0.45, 3),
            Err(NormError::IntegrabilityMargin { .. })
        ));
        // Embedding margin fails for small m.
        assert!(matches!(BesovParams::new(0.40, 1), Err(NormError::EmbeddingMargin { .. })));
        assert!(BesovParams::new(1.0 / 3.0, 4).is_err());
        assert!(BesovParams::new(0.5, 4).is_err());
        assert!(BesovParams::new(0.42, 0).is_err());
    }

    #[test]
    fn line_besov_norm_approaches_the_closed_form() {
        // Unit-slope line, (exponent, m) = (1/2, 2): closed form is
        // sqrt(1/2) because m(1-a) = 1.
        let x = Level2RoughPath::lift(&line_path(512));
        let exact = line_besov_exact(0.5, 2.0);
        assert!((exact - (0.5f64).sqrt()).abs() < 1e-15);
        let got = besov_norm(&x, Level::One, 0.5, 2.0).unwrap();
        assert!(
            (got - exact).abs() / exact < 5e-3,
            "line Besov quadrature {got} vs closed form {exact}"
        );
    }

    #[test]
    fn line_holder_norm_is_attained_at_the_full_interval() {
        let x = Level2RoughPath::lift(&line_path(64));
        for alpha in [0.3, 0.42, 0.99] {
            let got = holder_norm(&x, Level::One, alpha).unwrap();
            assert!((got - 1.0).abs() < 1e-12, "line Hölder at {alpha}: {got}");
        }
    }

    #[test]
    fn tent_holder_norm_at_exponent_one_recovers_the_slope() {
        // Tent 0 -> 1 -> 0 over [0, 1]: steepest grid ratio is the slope 2.
        let grid = TimeGrid::new(2).unwrap();
        let tent = SampledPath::new(grid, 1, vec![0.0, 1.0, 0.0]).unwrap();
        let x = Level2RoughPath::lift(&tent);
        let got = holder_norm(&x, Level::One, 1.0).unwrap();
        assert!((got - 2.0).abs() < 1e-12, "tent slope {got}");
    }

    #[test]
    fn besov_norms_are_dilation_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_lift(&mut rng, 32, 2);
        let y = x.dilate(2.0);
        let b1x = besov_norm(&x, Level::One, 0.42, 16.0).unwrap();
        let b1y = besov_norm(&y, Level::One, 0.42, 16.0).unwrap();
        assert!((b1y - 2.0 * b1x).abs() < 1e-12 * b1x.max(1.0));
        let b2x = besov_norm(&x, Level::Two, 0.84, 8.0).unwrap();
        let b2y = besov_norm(&y, Level::Two, 0.84, 8.0).unwrap();
        assert!((b2y - 4.0 * b2x).abs() < 1e-11 * b2x.max(1.0));
    }

    #[test]
    fn distance_is_a_metric_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = BesovParams::new(0.42, 4).unwrap();
        for _ in 0..25 {
            let x = random_lift(&mut rng, 16, 2);
            let y = random_lift(&mut rng, 16, 2);
            let z = random_lift(&mut rng, 16, 2);
            let dxy = besov_distance(&x, &y, &p).unwrap();
            let dyx = besov_distance(&y, &x, &p).unwrap();
            assert!((dxy - dyx).abs() < 1e-10 * dxy.max(1.0), "symmetry");
            let dxz = besov_distance(&x, &z, &p).unwrap();
            let dzy = besov_distance(&z, &y, &p).unwrap();
            assert!(dxy <= dxz + dzy + 1e-10, "triangle: {dxy} vs {} ", dxz + dzy);
            assert!(besov_distance(&x, &x, &p).unwrap() < 1e-12, "identity");
        }
    }

    #[test]
    fn distance_rejects_mismatched_operands() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = BesovParams::new(0.42, 4).unwrap();
        let x = random_lift(&mut rng, 16, 2);
        let y = random_lift(&mut rng, 8, 2);
        assert!(matches!(besov_distance(&x, &y, &p), Err(NormError::GridMismatch { .. })));
        let z = random_lift(&mut rng, 16, 1);
        assert!(matches!(besov_distance(&x, &z, &p), Err(NormError::DimensionMismatch { .. })));
    }

    #[test]
    fn embedding_report_flags_the_zero_path_as_degenerate() {
        let p = BesovParams::new(0.42, 4).unwrap();
        let zero = Level2RoughPath::lift(&SampledPath::zeros(TimeGrid::new(16).unwrap(), 2));
        let rep = embedding_check(&zero, &p);
        assert_eq!(rep.ratio, None);
        assert_eq!(rep.holder, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_lift(&mut rng, 32, 2);
        let rep = embedding_check(&x, &p);
        assert!(rep.ratio.unwrap() > 0.0);
    }

    #[test]
    fn early_exit_scan_agrees_with_the_full_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_lift(&mut rng, 24, 1);
        let norm = besov_norm(&x, Level::One, 0.42, 16.0).unwrap();
        let d = x.dim();
        let p1 = x.prefix_first();
        let eval = |i: usize, j: usize| (p1[j * d] - p1[i * d]).abs();
        assert!(besov_scan_exceeds(24, 0.42, 16.0, norm * 0.99, eval));
        assert!(!besov_scan_exceeds(24, 0.42, 16.0, norm * 1.01, eval));
    }
}
