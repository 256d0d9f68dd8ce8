//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Pivot threshold used to call a dense system singular.
pub const PIVOT_TOL: f64 = 1e-14;

/// Solves `a x = b` by LU with partial pivoting.
///
/// Returns `None` when a pivot falls below `PIVOT_TOL` times the largest row
/// norm of `a`, or when the solution is not finite.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    if n != a.ncols() || n != b.len() {
        return None;
    }
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let scale = (0..n)
        .map(|i| a.row(i).norm())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let lu = a.clone().lu();
    let u = lu.u();
    if (0..n).any(|i| u[(i, i)].abs() < PIVOT_TOL * scale) {
        return None;
    }
    let x = lu.solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// 2-norm condition number from singular values; infinite when singular.
pub fn cond(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
/// Eigenvectors are the columns of the returned matrix.
pub fn sym_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = a.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(a);
    vals[0]
}

/// Decides whether `{u >= 0, sum(u) = 1, m u >= 0}` is nonempty and returns
/// a point when it is. Dense phase-one simplex with Bland's rule.
pub fn simplex_s0_point(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    let k = m.nrows();
    if k == 0 || m.ncols() != k {
        return None;
    }
    // Columns: u (k), s (k), artificial (k + 1). Rows: m u - s = 0, e'u = 1.
    let rows = k + 1;
    let cols = 3 * k + 1;
    let mut t = DMatrix::<f64>::zeros(rows, cols + 1);
    for i in 0..k {
        for j in 0..k {
            t[(i, j)] = m[(i, j)];
        }
        t[(i, k + i)] = -1.0;
        t[(i, 2 * k + i)] = 1.0;
    }
    for j in 0..k {
        t[(k, j)] = 1.0;
    }
    t[(k, 3 * k)] = 1.0;
    t[(k, cols)] = 1.0;
    let mut basis: Vec<usize> = (0..rows).map(|i| 2 * k + i).collect();
    // Reduced costs for minimizing the sum of artificials.
    let mut cost = DVector::<f64>::zeros(cols + 1);
    for i in 0..rows {
        for j in 0..=cols {
            cost[j] -= t[(i, j)];
        }
    }
    for a in 0..rows {
        cost[2 * k + a] = 0.0;
    }
    let eps = 1e-12;
    for _ in 0..10_000 {
        let Some(enter) = (0..cols).find(|&j| cost[j] < -eps) else {
            break;
        };
        let mut leave = None;
        let mut best = f64::INFINITY;
        for i in 0..rows {
            let a = t[(i, enter)];
            if a > eps {
                let ratio = t[(i, cols)] / a;
                let better = ratio < best - eps
                    || (ratio <= best + eps && leave.is_some_and(|l: usize| basis[i] < basis[l]));
                if better {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let r = leave?;
        let piv = t[(r, enter)];
        for j in 0..=cols {
            t[(r, j)] /= piv;
        }
        for i in 0..rows {
            if i != r {
                let f = t[(i, enter)];
                if f != 0.0 {
                    for j in 0..=cols {
                        t[(i, j)] -= f * t[(r, j)];
                    }
                }
            }
        }
        let f = cost[enter];
        for j in 0..=cols {
            cost[j] -= f * t[(r, j)];
        }
        basis[r] = enter;
    }
    let infeas: f64 = (0..rows)
        .filter(|&i| basis[i] >= 2 * k)
        .map(|i| t[(i, cols)])
        .sum();
    if infeas > 1e-9 {
        return None;
    }
    let mut u = DVector::zeros(k);
    for (i, &b) in basis.iter().enumerate() {
        if b < k {
            u[b] = t[(i, cols)].max(0.0);
        }
    }
    let s = u.sum();
    (s > 0.0).then(|| u / s)
}
