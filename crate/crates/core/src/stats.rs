//! Small statistical helpers shared by the experiment modules: pairwise
//! summation (so reductions do not depend on accumulation order), moment
//! summaries with standard errors, and ordinary least squares for the
//! log-log slope fits.

/// Pairwise (cascade) sum: O(log n) rounding depth, independent of how the
/// caller chunked the work beforehand.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const CUTOFF: usize = 32;
    if values.len() <= CUTOFF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean via pairwise summation.
pub fn mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    pairwise_sum(values) / values.len() as f64
}

/// Mean and standard error of the mean (unbiased variance, pairwise sums).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n >= 2, "standard error needs at least two samples");
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (m, (var / n as f64).sqrt())
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    assert!(n >= 2);
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&sq) / (n as f64 - 1.0)
}

/// Ordinary least squares line `y ~ intercept + slope * x`.
#[derive(Clone, Copy, Debug)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2, "line fit needs at least two points");
    let n = x.len() as f64;
    let mx = pairwise_sum(x) / n;
    let my = pairwise_sum(y) / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    assert!(sxx > 0.0, "degenerate abscissae in line fit");
    let slope = sxy / sxx;
    LineFit { slope, intercept: my - slope * mx }
}

/// Least squares for `y ~ sum_k coeff_k basis_k(x)` with a small number of
/// basis columns; solved by normal equations with partial-pivot elimination.
/// Adequate for the 3-column designs used in the sweep regressions.
pub fn fit_basis(columns: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = columns.len();
    assert!(k >= 1 && columns.iter().all(|c| c.len() == y.len()));
    let mut ata = vec![0.0; k * k];
    let mut aty = vec![0.0; k];
    for a in 0..k {
        for b in 0..k {
            ata[a * k + b] = columns[a].iter().zip(&columns[b]).map(|(u, v)| u * v).sum();
        }
        aty[a] = columns[a].iter().zip(y).map(|(u, v)| u * v).sum();
    }
    solve_dense(&mut ata, &mut aty, k);
    aty
}

/// In-place Gaussian elimination with partial pivoting on a k x k system.
fn solve_dense(a: &mut [f64], b: &mut [f64], k: usize) {
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&r, &s| a[r * k + col].abs().partial_cmp(&a[s * k + col].abs()).unwrap())
            .unwrap();
        if pivot != col {
            for j in 0..k {
                a.swap(col * k + j, pivot * k + j);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * k + col];
        assert!(diag.abs() > 1e-300, "singular normal equations");
        for row in (col + 1)..k {
            let f = a[row * k + col] / diag;
            for j in col..k {
                a[row * k + j] -= f * a[col * k + j];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..k).rev() {
        let mut v = b[col];
        for j in (col + 1)..k {
            v -= a[col * k + j] * b[j];
        }
        b[col] = v / a[col * k + col];
    }
}
