//! Linear-model tooling: exact zero-order-hold discretization, the discrete
//! algebraic Riccati equation and the associated LQR gain.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

const SYMMETRY_TOL: f64 = 1e-10;

/// Continuous-time LTI plant `x' = A_c x + B_c u` with quadratic stage cost
/// `x' Q_c x + u' R_c u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLti {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl ContinuousLti {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let nx = a.nrows();
        if !a.is_square() {
            return Err(Error::dim("A_c", "square", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != nx {
            return Err(Error::dim("B_c rows", nx, b.nrows()));
        }
        let nu = b.ncols();
        if q.shape() != (nx, nx) {
            return Err(Error::dim("Q_c", format!("{nx}x{nx}"), format!("{}x{}", q.nrows(), q.ncols())));
        }
        if r.shape() != (nu, nu) {
            return Err(Error::dim("R_c", format!("{nu}x{nu}"), format!("{}x{}", r.nrows(), r.ncols())));
        }
        for (name, m) in [("A_c", &a), ("B_c", &b), ("Q_c", &q), ("R_c", &r)] {
            if !linalg::is_finite(m) {
                return Err(Error::Domain(format!("{name} has non-finite entries")));
            }
        }
        if linalg::asymmetry(&q) > SYMMETRY_TOL {
            return Err(Error::Domain("Q_c is not symmetric".into()));
        }
        if linalg::asymmetry(&r) > SYMMETRY_TOL {
            return Err(Error::Domain("R_c is not symmetric".into()));
        }
        if nx > 0 && linalg::lambda_min(&q) < -SYMMETRY_TOL {
            return Err(Error::Domain("Q_c is not positive semidefinite".into()));
        }
        if nu > 0 && linalg::lambda_min(&r) <= 0.0 {
            return Err(Error::Domain("R_c is not positive definite".into()));
        }
        Ok(Self { a, b, q, r })
    }

    /// The double integrator `p'' = u` with `Q_c = I`, `R_c = 1`.
    pub fn double_integrator() -> Self {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
        )
        .expect("builtin model is valid")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Sampled LTI dynamics `x+ = A_T x + B_T u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLti {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub t: f64,
}

/// Solution of the DARE together with its Riccati defect.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMatrix {
    p: DMatrix<f64>,
    residual: f64,
    iterations: usize,
}

impl ValueMatrix {
    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
    /// Spectral norm of `riccati(P) - P`.
    pub fn residual(&self) -> f64 {
        self.residual
    }
    pub fn iterations(&self) -> usize {
        self.iterations
    }
    pub fn lambda_min(&self) -> f64 {
        linalg::lambda_min(&self.p)
    }
    pub fn lambda_max(&self) -> f64 {
        linalg::lambda_max(&self.p)
    }
    /// `x' P x`.
    pub fn quadratic(&self, x: &nalgebra::DVector<f64>) -> f64 {
        x.dot(&(&self.p * x))
    }
}

/// Matrix exponential by scaling and squaring with a Taylor approximant.
///
/// The argument is scaled by `2^-s` until its 1-norm is below 1/2, the
/// series is summed until the next term no longer changes the sum in double
/// precision, and the result is squared `s` times.
pub fn matrix_exponential(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dim("matrix_exponential", "square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    if !linalg::is_finite(m) {
        return Err(Error::Domain("matrix_exponential: non-finite entries".into()));
    }
    let n = m.nrows();
    let norm1 = m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut squarings = 0u32;
    if norm1 > 0.5 {
        squarings = (norm1 / 0.5).log2().ceil() as u32;
    }
    let scaled = m / 2f64.powi(squarings as i32);

    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=40 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if term.amax() <= f64::EPSILON * sum.amax() * 1e-3 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    Ok(sum)
}

/// Exact zero-order-hold discretization of `(A_c, B_c)` with sampling time `t`.
pub fn discretize_exact(model: &ContinuousLti, t: f64) -> Result<DiscreteLti> {
    discretize_pair(model.a(), model.b(), t)
}

/// Same as [`discretize_exact`] for a bare `(A_c, B_c)` pair.
///
/// Uses the block identity `exp([[A, B], [0, 0]] t) = [[A_T, B_T], [0, I]]`.
pub fn discretize_pair(a: &DMatrix<f64>, b: &DMatrix<f64>, t: f64) -> Result<DiscreteLti> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("sampling time must be positive, got {t}")));
    }
    let nx = a.nrows();
    let nu = b.ncols();
    if b.nrows() != nx {
        return Err(Error::dim("discretize B rows", nx, b.nrows()));
    }
    let mut aug = DMatrix::<f64>::zeros(nx + nu, nx + nu);
    aug.view_mut((0, 0), (nx, nx)).copy_from(&(a * t));
    aug.view_mut((0, nx), (nx, nu)).copy_from(&(b * t));
    let e = matrix_exponential(&aug)?;
    Ok(DiscreteLti {
        a: e.view((0, 0), (nx, nx)).into_owned(),
        b: e.view((0, nx), (nx, nu)).into_owned(),
        t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DareOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    /// Iteration is declared divergent once `||P||` exceeds this value.
    pub divergence_norm: f64,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iter: 100_000,
            divergence_norm: 1e12,
        }
    }
}

fn riccati_map(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let at = a.transpose();
    let pb = p * b;
    let s = r + b.transpose() * &pb;
    let bpa = pb.transpose() * a;
    let gain = linalg::solve(&s, &bpa, "DARE (R + B'PB)")?;
    let next = &at * p * a - bpa.transpose() * gain + q;
    Ok(linalg::symmetrize(&next))
}

/// Solves `P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q` by value iteration from `P0 = Q`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    opts: &DareOptions,
) -> Result<ValueMatrix> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(Error::dim("DARE A", "square", format!("{}x{}", a.nrows(), a.ncols())));
    }
    if b.nrows() != n {
        return Err(Error::dim("DARE B rows", n, b.nrows()));
    }
    if q.shape() != (n, n) {
        return Err(Error::dim("DARE Q", format!("{n}x{n}"), format!("{}x{}", q.nrows(), q.ncols())));
    }
    if r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::dim("DARE R", b.ncols(), r.nrows()));
    }
    let mut p = linalg::symmetrize(q);
    for it in 1..=opts.max_iter {
        let next = riccati_map(a, b, q, r, &p)?;
        let delta = linalg::spectral_norm(&(&next - &p));
        p = next;
        if !linalg::is_finite(&p) || p.amax() > opts.divergence_norm {
            return Err(Error::NoConvergence {
                what: "DARE value iteration (diverged)",
                iterations: it,
            });
        }
        if delta <= opts.tolerance {
            let residual = linalg::spectral_norm(&(riccati_map(a, b, q, r, &p)? - &p));
            if residual <= opts.tolerance {
                return Ok(ValueMatrix {
                    p,
                    residual,
                    iterations: it,
                });
            }
        }
    }
    Err(Error::NoConvergence {
        what: "DARE value iteration",
        iterations: opts.max_iter,
    })
}

/// `K = -(R + B'PB)^-1 B'PA`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &ValueMatrix, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pb = p.p() * b;
    let s = r + b.transpose() * &pb;
    let bpa = pb.transpose() * a;
    Ok(-linalg::solve(&s, &bpa, "LQR gain (R + B'PB)")?)
}
