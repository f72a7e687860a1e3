//! Small dense linear-algebra helpers shared by the estimation modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    let scale = m.amax().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return false;
            }
        }
    }
    true
}

/// Symmetric, square, finite and smallest eigenvalue above `floor`.
pub(crate) fn check_pd(m: &DMatrix<f64>, floor: f64, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(format!("{what} must be square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} has non-finite entries")));
    }
    if !is_symmetric(m) {
        return Err(Error::invalid(format!("{what} must be symmetric")));
    }
    let min_eig = min_eigenvalue(m);
    if min_eig <= floor {
        return Err(Error::NotPositiveDefinite {
            what: what.to_string(),
            min_eigenvalue: min_eig,
        });
    }
    Ok(())
}

pub(crate) fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::Singular(what))
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(m, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

pub(crate) fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid(format!("{what} has ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pd_check_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            check_pd(&m, 1e-10, "m"),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(check_pd(&m, 1e-10, "m").is_err());
        assert!(check_pd(&DMatrix::identity(3, 3), 1e-10, "m").is_ok());
    }

    #[test]
    fn spd_inverse_is_symmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&m, "m").unwrap();
        assert!(is_symmetric(&inv));
        let id = &m * &inv;
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-14);
    }
}
