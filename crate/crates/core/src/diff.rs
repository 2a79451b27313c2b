//! Central finite differences used as derivative fallbacks.

use nalgebra::{DMatrix, DVector};

/// Step for first derivatives.
pub const FIRST_ORDER_STEP: f64 = 1e-6;
/// Step for second derivatives taken from function values.
pub const SECOND_ORDER_STEP: f64 = 1e-4;

pub fn gradient<F: Fn(&DVector<f64>) -> f64>(f: F, y: &DVector<f64>) -> DVector<f64> {
    let h = FIRST_ORDER_STEP;
    let mut probe = y.clone();
    DVector::from_iterator(
        y.len(),
        (0..y.len()).map(|i| {
            let yi = y[i];
            probe[i] = yi + h;
            let fp = f(&probe);
            probe[i] = yi - h;
            let fm = f(&probe);
            probe[i] = yi;
            (fp - fm) / (2.0 * h)
        }),
    )
}

/// Jacobian `dF/dy` with one row per output.
pub fn jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, y: &DVector<f64>, n_out: usize) -> DMatrix<f64> {
    let h = FIRST_ORDER_STEP;
    let mut jac = DMatrix::zeros(n_out, y.len());
    let mut probe = y.clone();
    for i in 0..y.len() {
        let yi = y[i];
        probe[i] = yi + h;
        let fp = f(&probe);
        probe[i] = yi - h;
        let fm = f(&probe);
        probe[i] = yi;
        jac.set_column(i, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// Hessian of a scalar function from function values only.
pub fn hessian<F: Fn(&DVector<f64>) -> f64>(f: F, y: &DVector<f64>) -> DMatrix<f64> {
    let h = SECOND_ORDER_STEP;
    let n = y.len();
    let f0 = f(y);
    let mut hess = DMatrix::zeros(n, n);
    let mut probe = y.clone();
    for i in 0..n {
        let yi = y[i];
        probe[i] = yi + h;
        let fp = f(&probe);
        probe[i] = yi - h;
        let fm = f(&probe);
        probe[i] = yi;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in (i + 1)..n {
            let yj = y[j];
            let mut eval = |si: f64, sj: f64| {
                probe[i] = yi + si * h;
                probe[j] = yj + sj * h;
                let v = f(&probe);
                probe[i] = yi;
                probe[j] = yj;
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}
