//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold on the diagonal of R below which a design is declared
/// rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Least-squares solution computed from a Householder QR factorization.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    /// (X'X)^{-1}, formed as R^{-1} R^{-T}.
    pub xtx_inv: DMatrix<f64>,
    pub rss: f64,
}

/// Upper-triangular factor of X together with the rank check.
fn checked_r(
    x: &DMatrix<f64>,
) -> Result<(
    nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    DMatrix<f64>,
)> {
    let (n, p) = x.shape();
    if p == 0 {
        return Err(Error::invalid("design matrix has no columns"));
    }
    if n < p {
        return Err(Error::RankDeficient {
            condition: f64::INFINITY,
        });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..p).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min < RANK_TOL * max {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(Error::RankDeficient { condition });
    }
    Ok((qr, r))
}

pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LeastSquares> {
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    let (qr, r) = checked_r(x)?;
    let qty = qr.q().transpose() * y;
    let coefficients = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient {
        condition: f64::INFINITY,
    })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(r.nrows(), r.nrows()))
        .ok_or(Error::RankDeficient {
            condition: f64::INFINITY,
        })?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let fitted = x * &coefficients;
    let residuals = y - &fitted;
    let rss = residuals.norm_squared();
    Ok(LeastSquares {
        coefficients,
        fitted,
        residuals,
        xtx_inv,
        rss,
    })
}

/// Residuals of every column of `b` after projection onto the column space of `a`.
pub fn residualize(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (qr, r) = checked_r(a)?;
    let q = qr.q();
    let coef = r
        .solve_upper_triangular(&(q.transpose() * b))
        .ok_or(Error::RankDeficient {
            condition: f64::INFINITY,
        })?;
    Ok(b - a * coef)
}

/// Horizontal concatenation of blocks with equal row counts.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.iter().map(|b| b.nrows()).max().unwrap_or(0);
    let p: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, p);
    let mut col = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), n);
        out.view_mut((0, col), (n, b.ncols())).copy_from(*b);
        col += b.ncols();
    }
    out
}

pub fn column_matrix(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::RankDeficient {
        condition: f64::INFINITY,
    })?;
    Ok(chol.inverse())
}

pub fn columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_columns(idx)
}

pub fn intercept(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, 1, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_exact_system() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0]);
        let ls = least_squares(&x, &y).unwrap();
        assert!((ls.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((ls.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(ls.rss < 1e-20);
    }

    #[test]
    fn detects_collinear_columns() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            least_squares(&x, &y),
            Err(Error::RankDeficient { .. })
        ));
    }
}
