#![allow(dead_code)]

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rtnmpc::certify::{certify_lq, LqCertification, LqSetup};
use rtnmpc::coupled::CoupledState;
use rtnmpc::sampling::Sampler;

/// Double-integrator certification with default settings, computed once.
pub fn canonical() -> &'static LqCertification {
    static CERT: OnceLock<LqCertification> = OnceLock::new();
    CERT.get_or_init(|| certify_lq(&LqSetup::double_integrator()).expect("double integrator certifies"))
}

pub fn random_matrix(rng: &mut Sampler, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.uniform(-scale, scale))
}

/// Truncated power series, 80 terms.
pub fn series_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..80 {
        term = &term * m / k as f64;
        sum += &term;
    }
    sum
}

/// Fixed-step RK4 on `X' = M X`, `X(0) = I`, over `[0, 1]`.
pub fn rk4_exp(m: &DMatrix<f64>, steps: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let h = 1.0 / steps as f64;
    let mut x = DMatrix::<f64>::identity(n, n);
    for _ in 0..steps {
        let k1 = m * &x;
        let k2 = m * (&x + &k1 * (h / 2.0));
        let k3 = m * (&x + &k2 * (h / 2.0));
        let k4 = m * (&x + &k3 * h);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// State in the ball of radius `x_radius`, input within `u_radius` of the exact one.
pub fn perturbed_state(cert: &LqCertification, rng: &mut Sampler, x_radius: f64, u_radius: f64) -> CoupledState {
    let x = rng.in_ball(cert.setup.model.state_dim(), x_radius);
    let u: DVector<f64> = cert.lq.condensed.solve(&x).unwrap() + rng.in_ball(cert.setup.model.input_dim(), u_radius);
    CoupledState {
        z: cert.lq.complete(&u, &x).unwrap(),
        x,
    }
}
