//! Small dense solvers built on orthogonal factorizations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value floor below which a design counts as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Condition-number ceiling for identification denominators.
pub const WEAK_ID_CONDITION: f64 = 1e10;

/// Ratio of extreme singular values; infinite for a singular matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Least-squares solution of `design * b ~ response` by Householder QR.
pub(crate) struct QrSolve {
    pub coefficients: DVector<f64>,
    pub r_inverse: DMatrix<f64>,
    pub condition: f64,
}

pub(crate) fn qr_least_squares(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<QrSolve> {
    let (n, p) = design.shape();
    if p == 0 {
        return Err(Error::InvalidInput("design has no columns".into()));
    }
    if n < p {
        return Err(Error::SingularDesign {
            condition: f64::INFINITY,
        });
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let sv = r.singular_values();
    let (max, min) = (sv.max(), sv.min());
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(min > RANK_TOLERANCE * max) {
        return Err(Error::SingularDesign { condition });
    }
    let mut qty = response.clone();
    qr.q_tr_mul(&mut qty);
    let qty = qty.rows(0, p).into_owned();
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::SingularDesign { condition })?;
    let r_inverse = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::SingularDesign { condition })?;
    Ok(QrSolve {
        coefficients,
        r_inverse,
        condition,
    })
}

/// Solves a square system after checking its conditioning.
pub(crate) fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>, max_condition: f64) -> Result<(DVector<f64>, f64)> {
    let condition = condition_number(a);
    if !(condition <= max_condition) {
        return Err(Error::SingularDesign { condition });
    }
    let x = a.clone().lu().solve(b).ok_or(Error::SingularDesign { condition })?;
    Ok((x, condition))
}

/// Indices of columns that add a direction beyond the preceding kept columns.
///
/// Gram-Schmidt with re-orthogonalization on unit-scaled columns; a column is
/// dropped when its residual norm falls below `tolerance` relative to its own norm.
pub fn independent_columns(m: &DMatrix<f64>, tolerance: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for j in 0..m.ncols() {
        let col = m.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = col / norm;
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v -= b * proj;
            }
        }
        let resid = v.norm();
        if resid > tolerance {
            basis.push(v / resid);
            kept.push(j);
        }
    }
    kept
}

pub(crate) fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let p: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, p);
    let mut offset = 0;
    for b in blocks {
        out.columns_mut(offset, b.ncols()).copy_from(b);
        offset += b.ncols();
    }
    out
}

pub(crate) fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Multiplies each column of `m` elementwise by `v`.
pub(crate) fn scale_rows(m: &DMatrix<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * v[i])
}

pub(crate) fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_collinear_columns() {
        let m = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 2.0, 1.0, 2.0, 3.0, 1.0, 3.0, 4.0, 1.0, 4.0, 5.0]);
        assert_eq!(independent_columns(&m, 1e-8), vec![0, 1]);
    }

    #[test]
    fn rank_deficient_least_squares_fails() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(qr_least_squares(&m, &y), Err(Error::SingularDesign { .. })));
    }
}
