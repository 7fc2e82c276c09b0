//! Dense solver for the small (M+1)×(M+1) weight systems.
//!
//! LU with partial pivoting plus an explicit ∞-norm condition estimate; the
//! systems here have a handful of rows, so computing the inverse for the
//! estimate costs next to nothing.

use crate::error::{Error, Result};

/// Solution of a linear system together with its condition estimate.
#[derive(Debug, Clone)]
pub struct Solved {
    pub x: Vec<f64>,
    /// κ_∞(A) = ‖A‖_∞ ‖A⁻¹‖_∞; `f64::INFINITY` when A is numerically singular.
    pub condition: f64,
}

/// Row-major dense matrix view used by [`solve`].
fn lu_decompose(a: &mut [f64], n: usize, perm: &mut [usize]) -> Result<()> {
    for (i, p) in perm.iter_mut().enumerate() {
        *p = i;
    }
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a[perm[col] * n + col].abs();
        for row in col + 1..n {
            let v = a[perm[row] * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if !pivot_val.is_finite() {
            return Err(Error::NonFinite {
                what: "linear system entry",
                tau: f64::NAN,
            });
        }
        if pivot_val == 0.0 {
            return Err(Error::DegenerateWeights("singular linear system"));
        }
        perm.swap(col, pivot_row);
        let prow = perm[col];
        for row in col + 1..n {
            let r = perm[row];
            let factor = a[r * n + col] / a[prow * n + col];
            a[r * n + col] = factor;
            for k in col + 1..n {
                a[r * n + k] -= factor * a[prow * n + k];
            }
        }
    }
    Ok(())
}

fn lu_solve(lu: &[f64], n: usize, perm: &[usize], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[perm[i]];
        for (k, yk) in y.iter().enumerate().take(i) {
            s -= lu[perm[i] * n + k] * yk;
        }
        y[i] = s;
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= lu[perm[i] * n + k] * x[k];
        }
        x[i] = s / lu[perm[i] * n + i];
    }
    x
}

fn inf_norm(a: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solve `A x = b` for a row-major square `a`, returning the solution and an
/// ∞-norm condition estimate. Exactly singular systems give
/// `Err(DegenerateWeights)`; callers decide what condition number is too much.
pub fn solve(a: &[f64], b: &[f64]) -> Result<Solved> {
    let n = b.len();
    assert_eq!(a.len(), n * n, "matrix/vector size mismatch");
    let norm_a = inf_norm(a, n);
    let mut lu = a.to_vec();
    let mut perm = vec![0usize; n];
    lu_decompose(&mut lu, n, &mut perm)?;
    let x = lu_solve(&lu, n, &perm, b);

    // ‖A⁻¹‖_∞ from the explicit inverse, one unit vector at a time.
    let mut inv_norm = 0.0f64;
    let mut e = vec![0.0; n];
    let mut row_sums = vec![0.0f64; n];
    for col in 0..n {
        e[col] = 1.0;
        let inv_col = lu_solve(&lu, n, &perm, &e);
        e[col] = 0.0;
        for (rs, v) in row_sums.iter_mut().zip(inv_col.iter()) {
            *rs += v.abs();
        }
    }
    for rs in row_sums {
        inv_norm = inv_norm.max(rs);
    }
    let condition = norm_a * inv_norm;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateWeights("non-finite solution"));
    }
    Ok(Solved { x, condition })
}
