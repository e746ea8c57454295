//! Dense symmetric linear algebra used by the prior samplers and the
//! gradient-based posterior evaluators.
//!
//! Everything here is deterministic and single-threaded; the blocked kernels
//! lean on `ndarray`'s GEMM so the n^3 work runs at matrix-multiply speed
//! rather than scalar-loop speed.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

const BLOCK: usize = 64;

/// Lower-Cholesky factorization in place. On success the lower triangle of
/// `a` holds `L` (with `a = L L^T`) and the strict upper triangle is zeroed.
/// On failure returns the column index at which the pivot was non-positive.
pub fn cholesky_in_place(a: &mut Array2<f64>) -> std::result::Result<(), usize> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky requires a square matrix");

    let mut k = 0;
    while k < n {
        let kend = (k + BLOCK).min(n);

        // Factor the diagonal block (columns of the panel left of it have
        // already been folded in by earlier trailing updates).
        for c in k..kend {
            let mut d = a[(c, c)];
            for j in k..c {
                d -= a[(c, j)] * a[(c, j)];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(c);
            }
            let lcc = d.sqrt();
            a[(c, c)] = lcc;
            for r in (c + 1)..kend {
                let mut v = a[(r, c)];
                for j in k..c {
                    v -= a[(r, j)] * a[(c, j)];
                }
                a[(r, c)] = v / lcc;
            }
        }

        // Panel solve: rows below the diagonal block against L_kk^T.
        for r in kend..n {
            for c in k..kend {
                let mut v = a[(r, c)];
                for j in k..c {
                    v -= a[(r, j)] * a[(c, j)];
                }
                a[(r, c)] = v / a[(c, c)];
            }
        }

        // Trailing update: A22 -= P P^T with P the panel just solved.
        if kend < n {
            let panel = a.slice(s![kend..n, k..kend]).to_owned();
            let mut trailing = a.slice_mut(s![kend..n, kend..n]);
            general_mat_mul(-1.0, &panel, &panel.t(), 1.0, &mut trailing);
        }

        k = kend;
    }

    // Zero the strict upper triangle so the result is exactly L.
    for r in 0..n {
        for c in (r + 1)..n {
            a[(r, c)] = 0.0;
        }
    }
    Ok(())
}

/// Lower-Cholesky factor of `a`.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let mut l = a.clone();
    cholesky_in_place(&mut l).map_err(|_| Error::Cholesky { jitter: 0.0 })?;
    Ok(l)
}

/// Cholesky with the escalating-jitter policy: try `cov + j I` with
/// `j = initial_jitter`, multiplying by 10 up to `escalations` times.
/// Returns the factor and the jitter that succeeded; the error carries the
/// final jitter tried.
pub fn cholesky_with_jitter(
    cov: &Array2<f64>,
    initial_jitter: f64,
    escalations: usize,
) -> Result<(Array2<f64>, f64)> {
    let mut jitter = initial_jitter;
    for attempt in 0..=escalations {
        let mut m = cov.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if cholesky_in_place(&mut m).is_ok() {
            return Ok((m, jitter));
        }
        if attempt < escalations {
            jitter *= 10.0;
        }
    }
    Err(Error::Cholesky { jitter })
}

/// Default starting jitter: 1e-8 times the mean diagonal entry.
pub fn default_initial_jitter(cov: &Array2<f64>) -> f64 {
    let n = cov.nrows();
    if n == 0 {
        return 1e-8;
    }
    let mean_diag = (0..n).map(|i| cov[(i, i)]).sum::<f64>() / n as f64;
    1e-8 * mean_diag
}

/// Number of x10 escalations matching the 1e-8 -> 1e-4 relative policy.
pub const JITTER_ESCALATIONS: usize = 4;

/// Solve `L x = b` in place (forward substitution), `L` lower triangular.
pub fn solve_lower_vec(l: &Array2<f64>, b: &mut [f64]) {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    for r in 0..n {
        let mut v = b[r];
        for j in 0..r {
            v -= l[(r, j)] * b[j];
        }
        b[r] = v / l[(r, r)];
    }
}

/// Solve `L^T x = b` in place (back substitution).
pub fn solve_lower_transpose_vec(l: &Array2<f64>, b: &mut [f64]) {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    for r in (0..n).rev() {
        let mut v = b[r];
        for j in (r + 1)..n {
            v -= l[(j, r)] * b[j];
        }
        b[r] = v / l[(r, r)];
    }
}

/// Solve `L X = B` in place for a matrix right-hand side, blocked so the
/// bulk of the work is GEMM.
pub fn solve_lower_in_place(l: &Array2<f64>, b: &mut Array2<f64>) {
    let n = l.nrows();
    assert_eq!(b.nrows(), n, "rhs row count must match L");

    let mut k = 0;
    while k < n {
        let kend = (k + BLOCK).min(n);

        if k > 0 {
            let lpanel = l.slice(s![k..kend, 0..k]).to_owned();
            let solved = b.slice(s![0..k, ..]).to_owned();
            let mut block = b.slice_mut(s![k..kend, ..]);
            general_mat_mul(-1.0, &lpanel, &solved, 1.0, &mut block);
        }

        for r in k..kend {
            let (done, mut rest) = b.view_mut().split_at(ndarray::Axis(0), r);
            let mut row_r = rest.row_mut(0);
            for j in k..r {
                let coef = l[(r, j)];
                if coef != 0.0 {
                    row_r.scaled_add(-coef, &done.row(j));
                }
            }
            let inv = 1.0 / l[(r, r)];
            row_r.mapv_inplace(|v| v * inv);
        }

        k = kend;
    }
}

/// Directional derivative of the Cholesky factor applied to a vector:
/// given `sigma = L L^T` and a symmetric perturbation `dsigma`, returns
/// `dL . v` where `dL = L Phi(L^-1 dsigma L^-T)` and `Phi` keeps the lower
/// triangle with the diagonal halved.
pub fn chol_directional_times_vec(
    l: &Array2<f64>,
    dsigma: &Array2<f64>,
    v: ArrayView1<f64>,
) -> Array1<f64> {
    let n = l.nrows();
    debug_assert_eq!(dsigma.nrows(), n);
    debug_assert_eq!(v.len(), n);

    // A = L^-1 dsigma, then F = L^-1 A^T = (L^-1 dsigma L^-T)^T, which is
    // symmetric, so F itself is the matrix Phi acts on.
    let mut a = dsigma.clone();
    solve_lower_in_place(l, &mut a);
    let mut f = a.t().to_owned();
    solve_lower_in_place(l, &mut f);

    // w = Phi(F) v
    let mut w = Array1::<f64>::zeros(n);
    for r in 0..n {
        let mut acc = 0.5 * f[(r, r)] * v[r];
        for c in 0..r {
            acc += f[(r, c)] * v[c];
        }
        w[r] = acc;
    }
    l.dot(&w)
}
