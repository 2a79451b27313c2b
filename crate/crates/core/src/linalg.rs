//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest singular value. Empty matrices have norm zero.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn vector_norm(v: &DVector<f64>) -> f64 {
    v.norm()
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let sym = symmetrize(m);
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    DVector::from_vec(ev)
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m)[0]
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    let ev = symmetric_eigenvalues(m);
    ev[ev.len() - 1]
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Max absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.complex_eigenvalues().iter().copied().collect()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solves `a x = b` by LU; reports singular systems instead of returning garbage.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::dim(context, "square matrix", format!("{}x{}", a.nrows(), a.ncols())));
    }
    if a.nrows() != b.nrows() {
        return Err(Error::dim(context, a.nrows(), b.nrows()));
    }
    let lu = a.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::Singular(context));
    }
    let x = lu.solve(b).ok_or(Error::Singular(context))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Singular(context))
    }
}

pub fn solve_vec(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve(a, &bm, context)?;
    Ok(DVector::from_column_slice(x.as_slice()))
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_of_simple_matrices() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert!((spectral_norm(&m) - 4.0).abs() < 1e-14);
        assert!((spectral_radius(&m) - 4.0).abs() < 1e-14);
        assert_eq!(spectral_norm(&DMatrix::<f64>::zeros(0, 3)), 0.0);
    }

    #[test]
    fn singular_solve_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(solve_vec(&a, &b, "test"), Err(Error::Singular(_))));
    }

    #[test]
    fn rotation_has_unit_radius() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_radius(&m) - 1.0).abs() < 1e-14);
    }
}
