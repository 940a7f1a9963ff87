//! Small dense linear-algebra helpers for the normal-equation paths.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Jitter added to the diagonal when a Gram matrix is numerically singular.
pub const SINGULAR_JITTER: f64 = 1e-10;

/// Solution of a symmetric positive (semi-)definite system.
pub struct SpdSolution {
    pub x: Array1<f64>,
    /// True when the factorization only succeeded after adding diagonal jitter.
    pub jittered: bool,
}

/// Solve `a x = b` for symmetric positive definite `a` by Cholesky.
///
/// Falls back to `a + jitter I` when the factorization fails (rank-deficient
/// Gram matrix) and flags the fallback so callers can warn. One step of
/// iterative refinement keeps the residual near machine precision.
pub fn solve_spd(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Result<SpdSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "solve_spd: matrix {}x{}, rhs {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solve_spd: non-finite system".into()));
    }

    let na = nalgebra::DMatrix::from_fn(n, n, |i, j| a[(i, j)]);
    let nb = nalgebra::DVector::from_fn(n, |i, _| b[i]);

    let (chol, jittered) = match nalgebra::Cholesky::new(na.clone()) {
        Some(c) => (c, false),
        None => {
            let scale = (0..n).map(|i| a[(i, i)].abs()).fold(1.0, f64::max);
            let mut aj = na.clone();
            for i in 0..n {
                aj[(i, i)] += SINGULAR_JITTER * scale;
            }
            let c = nalgebra::Cholesky::new(aj).ok_or_else(|| {
                Error::Degenerate("solve_spd: matrix not positive definite even with jitter".into())
            })?;
            log::warn!("solve_spd: singular system, added {SINGULAR_JITTER:e} diagonal jitter");
            (c, true)
        }
    };

    let mut x = chol.solve(&nb);
    // One refinement pass against the unjittered matrix.
    let r = &nb - &na * &x;
    x += chol.solve(&r);

    Ok(SpdSolution {
        x: Array1::from_iter(x.iter().copied()),
        jittered,
    })
}

/// Gram matrix `(1/n) sum_i phi_i phi_i^T` accumulated from row features.
pub fn gram_from_rows<'a, I>(p: usize, rows: I) -> Array2<f64>
where
    I: Iterator<Item = (ArrayView1<'a, f64>, f64)>,
{
    let mut g = Array2::<f64>::zeros((p, p));
    let mut total = 0.0;
    for (phi, w) in rows {
        total += w;
        for i in 0..p {
            let wi = w * phi[i];
            if wi == 0.0 {
                continue;
            }
            for j in i..p {
                g[(i, j)] += wi * phi[j];
            }
        }
    }
    if total > 0.0 {
        g /= total;
    }
    for i in 0..p {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}
