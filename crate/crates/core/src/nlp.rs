//! Parametric equality-constrained NLP
//!
//! ```text
//! P(x):  min_y f(y)   s.t.  g(y) + B x = 0
//! ```
//!
//! with KKT residual `F(z) + C x`, `z = (y, lambda)`, `C = [0; B]`, an
//! exact-solution oracle `z_bar(x)` (full-step Newton) and the value function
//! `V(x) = f(y_bar(x))`. The linear-quadratic instance obtained from a sampled
//! LTI model lives in [`build_lq_nlp`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::diff;
use crate::error::{Error, Result};
use crate::linalg;
use crate::linmodel::{self, ContinuousLti, DareOptions, DiscreteLti, ValueMatrix};

/// Objective and constraint callbacks of `P(x)`.
///
/// Only function values are required; every derivative has a central
/// finite-difference default. Implementations must be pure.
pub trait NlpFunctions: Send + Sync {
    fn num_primal(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn objective(&self, y: &DVector<f64>) -> f64;
    fn constraints(&self, y: &DVector<f64>) -> DVector<f64>;

    fn objective_gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        diff::gradient(|v| self.objective(v), y)
    }

    fn objective_hessian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        diff::hessian(|v| self.objective(v), y)
    }

    /// Constraint Jacobian, `n_g x n`.
    fn constraint_jacobian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        diff::jacobian(|v| self.constraints(v), y, self.num_constraints())
    }

    /// `sum_i lambda_i * Hess g_i(y)`.
    fn constraint_curvature(&self, y: &DVector<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
        diff::hessian(|v| self.constraints(v).dot(lambda), y)
    }
}

/// Primal-dual point `z = (y, lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktPoint {
    pub y: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl KktPoint {
    pub fn new(y: DVector<f64>, lambda: DVector<f64>) -> Self {
        Self { y, lambda }
    }

    pub fn zeros(n: usize, n_g: usize) -> Self {
        Self::new(DVector::zeros(n), DVector::zeros(n_g))
    }

    pub fn len(&self) -> usize {
        self.y.len() + self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.len());
        v.rows_mut(0, self.y.len()).copy_from(&self.y);
        v.rows_mut(self.y.len(), self.lambda.len()).copy_from(&self.lambda);
        v
    }

    pub fn from_vector(n: usize, v: &DVector<f64>) -> Self {
        Self::new(v.rows(0, n).into_owned(), v.rows(n, v.len() - n).into_owned())
    }

    pub fn is_finite(&self) -> bool {
        self.y.iter().chain(self.lambda.iter()).all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &KktPoint) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }
}

/// Coordinate selector `M_{u,z}` extracting the applied input from `z`.
///
/// It picks a contiguous block of the primal vector, so its spectral norm
/// is one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputSelector {
    pub offset: usize,
    pub len: usize,
}

impl InputSelector {
    pub fn apply(&self, z: &KktPoint) -> DVector<f64> {
        z.y.rows(self.offset, self.len).into_owned()
    }

    /// Dense matrix form acting on the stacked `z` vector.
    pub fn matrix(&self, n_z: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.len, n_z);
        for i in 0..self.len {
            m[(i, self.offset + i)] = 1.0;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iter: 100,
        }
    }
}

/// Exact solution `z_bar(x)` with its value `V(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub z_bar: KktPoint,
    pub x: DVector<f64>,
    pub kkt_norm: f64,
    pub value: f64,
    pub iterations: usize,
}

#[derive(Clone)]
pub struct NlpProblem {
    functions: Arc<dyn NlpFunctions>,
    b: DMatrix<f64>,
}

impl fmt::Debug for NlpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NlpProblem")
            .field("n", &self.num_primal())
            .field("n_g", &self.num_constraints())
            .field("n_x", &self.num_params())
            .finish()
    }
}

impl NlpProblem {
    pub fn new(functions: Arc<dyn NlpFunctions>, b: DMatrix<f64>) -> Result<Self> {
        if b.nrows() != functions.num_constraints() {
            return Err(Error::dim("parameter map B rows", functions.num_constraints(), b.nrows()));
        }
        Ok(Self { functions, b })
    }

    pub fn functions(&self) -> &dyn NlpFunctions {
        self.functions.as_ref()
    }
    pub fn num_primal(&self) -> usize {
        self.functions.num_primal()
    }
    pub fn num_constraints(&self) -> usize {
        self.functions.num_constraints()
    }
    pub fn num_params(&self) -> usize {
        self.b.ncols()
    }
    pub fn num_kkt(&self) -> usize {
        self.num_primal() + self.num_constraints()
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `C = [0; B]`, `(n + n_g) x n_x`.
    pub fn c_matrix(&self) -> DMatrix<f64> {
        let n = self.num_primal();
        let mut c = DMatrix::zeros(self.num_kkt(), self.num_params());
        c.view_mut((n, 0), (self.num_constraints(), self.num_params())).copy_from(&self.b);
        c
    }

    fn check_dims(&self, z: &KktPoint, x: &DVector<f64>) -> Result<()> {
        if z.y.len() != self.num_primal() {
            return Err(Error::dim("KKT point y", self.num_primal(), z.y.len()));
        }
        if z.lambda.len() != self.num_constraints() {
            return Err(Error::dim("KKT point lambda", self.num_constraints(), z.lambda.len()));
        }
        if x.len() != self.num_params() {
            return Err(Error::dim("parameter x", self.num_params(), x.len()));
        }
        Ok(())
    }

    /// `F(z) + C x = (grad f(y) + J(y)' lambda, g(y) + B x)`.
    pub fn kkt_residual(&self, z: &KktPoint, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dims(z, x)?;
        let f = self.functions();
        let n = self.num_primal();
        let jac = f.constraint_jacobian(&z.y);
        let stationarity = f.objective_gradient(&z.y) + jac.transpose() * &z.lambda;
        let feasibility = f.constraints(&z.y) + &self.b * x;
        let mut r = DVector::zeros(self.num_kkt());
        r.rows_mut(0, n).copy_from(&stationarity);
        r.rows_mut(n, self.num_constraints()).copy_from(&feasibility);
        Ok(r)
    }

    /// Jacobian of `F` at `z`: `[[Hess L, J'], [J, 0]]`.
    pub fn kkt_matrix(&self, z: &KktPoint) -> DMatrix<f64> {
        let f = self.functions();
        let n = self.num_primal();
        let ng = self.num_constraints();
        let jac = f.constraint_jacobian(&z.y);
        let hess = f.objective_hessian(&z.y) + f.constraint_curvature(&z.y, &z.lambda);
        let mut k = DMatrix::zeros(n + ng, n + ng);
        k.view_mut((0, 0), (n, n)).copy_from(&hess);
        k.view_mut((0, n), (n, ng)).copy_from(&jac.transpose());
        k.view_mut((n, 0), (ng, n)).copy_from(&jac);
        k
    }

    /// One full Newton step on `F(z) + C x = 0`.
    pub fn newton_step(&self, z: &KktPoint, x: &DVector<f64>) -> Result<KktPoint> {
        let r = self.kkt_residual(z, x)?;
        let k = self.kkt_matrix(z);
        let dz = linalg::solve_vec(&k, &r, "KKT").map_err(|_| Error::RegularityViolation)?;
        Ok(KktPoint::from_vector(self.num_primal(), &(z.to_vector() - dz)))
    }

    /// Exact solution oracle: full-step Newton until
    /// `||F(z) + C x|| <= tol * max(1, ||C x||)`.
    ///
    /// The threshold is absolute near the working region and relative for
    /// large parameters, where rounding alone exceeds `tol`.
    pub fn solve_exact(&self, x: &DVector<f64>, z0: &KktPoint, opts: &SolveOptions) -> Result<Solution> {
        self.check_dims(z0, x)?;
        let threshold = opts.tolerance * (self.b() * x).norm().max(1.0);
        let mut z = z0.clone();
        for it in 0..=opts.max_iter {
            let norm = self.kkt_residual(&z, x)?.norm();
            if !norm.is_finite() {
                break;
            }
            if norm <= threshold {
                let value = self.functions().objective(&z.y);
                return Ok(Solution {
                    z_bar: z,
                    x: x.clone(),
                    kkt_norm: norm,
                    value,
                    iterations: it,
                });
            }
            if it == opts.max_iter {
                break;
            }
            z = self.newton_step(&z, x)?;
        }
        Err(Error::NoConvergence {
            what: "exact NLP solve",
            iterations: opts.max_iter,
        })
    }

    /// `z_bar(x)` from a zero initial guess.
    pub fn solve(&self, x: &DVector<f64>) -> Result<Solution> {
        let z0 = KktPoint::zeros(self.num_primal(), self.num_constraints());
        self.solve_exact(x, &z0, &SolveOptions::default())
    }

    /// `V(x) = f(y_bar(x))`.
    pub fn value_function(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.solve(x)?.value)
    }

    /// Multipliers minimizing `||grad f(y) + J(y)' lambda||`.
    pub fn least_squares_multipliers(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.functions();
        let jt = f.constraint_jacobian(y).transpose();
        let rhs = -f.objective_gradient(y);
        jt.svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|_| Error::Singular("least-squares multipliers"))
    }
}

/// `f(y) = y' W y`, `g(y) = E y`.
#[derive(Debug, Clone)]
pub struct QuadraticFunctions {
    pub weight: DMatrix<f64>,
    pub constraint_matrix: DMatrix<f64>,
}

impl NlpFunctions for QuadraticFunctions {
    fn num_primal(&self) -> usize {
        self.weight.nrows()
    }
    fn num_constraints(&self) -> usize {
        self.constraint_matrix.nrows()
    }
    fn objective(&self, y: &DVector<f64>) -> f64 {
        y.dot(&(&self.weight * y))
    }
    fn constraints(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.constraint_matrix * y
    }
    fn objective_gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        (&self.weight + self.weight.transpose()) * y
    }
    fn objective_hessian(&self, _y: &DVector<f64>) -> DMatrix<f64> {
        &self.weight + self.weight.transpose()
    }
    fn constraint_jacobian(&self, _y: &DVector<f64>) -> DMatrix<f64> {
        self.constraint_matrix.clone()
    }
    fn constraint_curvature(&self, y: &DVector<f64>, _lambda: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(y.len(), y.len())
    }
}

/// How the condensed Hessian `H` is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HConvention {
    /// `H = T_d R_c + B'PB`, the true optimality condition of the one-node OCP.
    #[default]
    OcpConsistent,
    /// `H = T_d R + B'PB` with `R = T_d R_c`; kept for comparison only, it is
    /// not the optimality condition of the multiple-shooting NLP.
    Literal,
}

/// Condensed optimality system `H u0 + G x = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Condensed {
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

impl Condensed {
    /// `u0_bar(x) = -H^-1 G x`.
    pub fn solve(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-linalg::solve_vec(&self.h, &(&self.g * x), "condensed H")?)
    }

    pub fn residual(&self, u0: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        &self.h * u0 + &self.g * x
    }

    /// Feedback gain `K = -H^-1 G`.
    pub fn gain(&self) -> Result<DMatrix<f64>> {
        Ok(-linalg::solve(&self.h, &self.g, "condensed H")?)
    }
}

/// One-node multiple-shooting LQ problem together with its condensed form.
///
/// Primal layout is `y = (s0, s1, u0)`; constraints are `s0 - x = 0` and
/// `s1 - A s0 - B u0 = 0`.
#[derive(Debug, Clone)]
pub struct LqNlp {
    pub problem: NlpProblem,
    pub condensed: Condensed,
    pub discrete: DiscreteLti,
    pub value: ValueMatrix,
    pub model: ContinuousLti,
    pub t_d: f64,
    pub convention: HConvention,
}

impl LqNlp {
    pub fn selector(&self) -> InputSelector {
        let nx = self.model.state_dim();
        InputSelector {
            offset: 2 * nx,
            len: self.model.input_dim(),
        }
    }

    /// Full primal-dual point consistent with input `u0` at parameter `x`:
    /// `s0 = x`, `s1 = A x + B u0`, least-squares multipliers.
    pub fn complete(&self, u0: &DVector<f64>, x: &DVector<f64>) -> Result<KktPoint> {
        let nx = self.model.state_dim();
        let nu = self.model.input_dim();
        let mut y = DVector::zeros(2 * nx + nu);
        y.rows_mut(0, nx).copy_from(x);
        y.rows_mut(nx, nx).copy_from(&(&self.discrete.a * x + &self.discrete.b * u0));
        y.rows_mut(2 * nx, nu).copy_from(u0);
        let lambda = self.problem.least_squares_multipliers(&y)?;
        Ok(KktPoint::new(y, lambda))
    }
}

/// Builds the sampled LQ NLP for `model` at discretization time `t_d`.
///
/// The terminal weight solves the DARE with `Q = t_d Q_c`, `R = t_d R_c`.
pub fn build_lq_nlp(model: &ContinuousLti, t_d: f64, convention: HConvention, dare: &DareOptions) -> Result<LqNlp> {
    let discrete = linmodel::discretize_exact(model, t_d)?;
    let q = model.q() * t_d;
    let r = model.r() * t_d;
    let value = linmodel::solve_dare(&discrete.a, &discrete.b, &q, &r, dare)?;
    let p = value.p();

    let nx = model.state_dim();
    let nu = model.input_dim();
    let n = 2 * nx + nu;
    let ng = 2 * nx;

    let mut weight = DMatrix::zeros(n, n);
    weight.view_mut((0, 0), (nx, nx)).copy_from(&q);
    weight.view_mut((nx, nx), (nx, nx)).copy_from(p);
    weight.view_mut((2 * nx, 2 * nx), (nu, nu)).copy_from(&r);

    let mut e = DMatrix::zeros(ng, n);
    e.view_mut((0, 0), (nx, nx)).copy_from(&DMatrix::identity(nx, nx));
    e.view_mut((nx, 0), (nx, nx)).copy_from(&(-&discrete.a));
    e.view_mut((nx, nx), (nx, nx)).copy_from(&DMatrix::identity(nx, nx));
    e.view_mut((nx, 2 * nx), (nx, nu)).copy_from(&(-&discrete.b));

    let mut b = DMatrix::zeros(ng, nx);
    b.view_mut((0, 0), (nx, nx)).copy_from(&(-DMatrix::identity(nx, nx)));

    let functions = QuadraticFunctions {
        weight,
        constraint_matrix: e,
    };
    let problem = NlpProblem::new(Arc::new(functions), b)?;

    let btp = discrete.b.transpose() * p;
    let h_cost = match convention {
        HConvention::OcpConsistent => model.r() * t_d,
        HConvention::Literal => &r * t_d,
    };
    let condensed = Condensed {
        h: linalg::symmetrize(&(h_cost + &btp * &discrete.b)),
        g: &btp * &discrete.a,
    };

    Ok(LqNlp {
        problem,
        condensed,
        discrete,
        value,
        model: model.clone(),
        t_d,
        convention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lq() -> LqNlp {
        build_lq_nlp(&ContinuousLti::double_integrator(), 0.1, HConvention::default(), &DareOptions::default()).unwrap()
    }

    #[test]
    fn lq_dimensions() {
        let lq = lq();
        assert_eq!(lq.problem.num_primal(), 5);
        assert_eq!(lq.problem.num_constraints(), 4);
        assert_eq!(lq.problem.c_matrix().shape(), (9, 2));
        let sel = lq.selector();
        assert_eq!(linalg::spectral_norm(&sel.matrix(9)), 1.0);
    }

    #[test]
    fn origin_is_a_kkt_point() {
        let lq = lq();
        let r = lq.problem.kkt_residual(&KktPoint::zeros(5, 4), &DVector::zeros(2)).unwrap();
        assert_eq!(r.norm(), 0.0);
        let sol = lq.problem.solve(&DVector::zeros(2)).unwrap();
        assert_eq!(sol.value, 0.0);
        assert_eq!(sol.z_bar.to_vector().norm(), 0.0);
        assert_eq!(lq.condensed.solve(&DVector::zeros(2)).unwrap()[0], 0.0);
    }

    #[test]
    fn newton_is_exact_in_one_step() {
        let lq = lq();
        let x = DVector::from_vec(vec![0.7, -1.3]);
        let z0 = KktPoint::new(DVector::from_element(5, 3.0), DVector::from_element(4, -2.0));
        let sol = lq.problem.solve_exact(&x, &z0, &SolveOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.kkt_norm <= 1e-10);
    }

    #[test]
    fn condensed_matches_full_kkt_and_value_matches_riccati() {
        let lq = lq();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let sol = lq.problem.solve(&x).unwrap();
        let u_full = lq.selector().apply(&sol.z_bar);
        let u_cond = lq.condensed.solve(&x).unwrap();
        assert!((u_full[0] - u_cond[0]).abs() < 1e-8);
        assert_relative_eq!(sol.value, lq.value.quadratic(&x), max_relative = 1e-8);
        let twice = lq.problem.value_function(&(&x * 2.0)).unwrap();
        assert_relative_eq!(twice, 4.0 * sol.value, max_relative = 1e-10);
    }

    #[test]
    fn condensed_residual_is_stationarity_of_u0() {
        // d/du0 of the objective restricted to the constraints is 2 (H u0 + G x)
        let lq = lq();
        let x = DVector::from_vec(vec![0.3, -0.4]);
        let u0 = DVector::from_vec(vec![0.25]);
        let z = lq.complete(&u0, &x).unwrap();
        let f = lq.problem.functions();
        let g = f.objective_gradient(&z.y);
        let reduced = g[4] + (lq.discrete.b.transpose() * g.rows(2, 2))[0];
        let r = lq.condensed.residual(&u0, &x);
        assert_relative_eq!(reduced, 2.0 * r[0], max_relative = 1e-12);
    }

    #[test]
    fn scalar_condensed_pair() {
        // A_c = 0, B_c = 1, Q_c = R_c = 1, T_d = 1: A = 1, B = 1, P golden ratio.
        let one = DMatrix::from_element(1, 1, 1.0);
        let model = ContinuousLti::new(DMatrix::zeros(1, 1), one.clone(), one.clone(), one).unwrap();
        let lq = build_lq_nlp(&model, 1.0, HConvention::OcpConsistent, &DareOptions::default()).unwrap();
        let p = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((lq.condensed.h[(0, 0)] - (1.0 + p)).abs() < 1e-10);
        assert!((lq.condensed.g[(0, 0)] - p).abs() < 1e-10);
        let lit = build_lq_nlp(&lq.model, 1.0, HConvention::Literal, &DareOptions::default()).unwrap();
        assert!((lit.condensed.h[(0, 0)] - (1.0 + p)).abs() < 1e-10);
    }

    #[test]
    fn dimension_errors() {
        let lq = lq();
        let err = lq.problem.kkt_residual(&KktPoint::zeros(4, 4), &DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
        let err = lq.problem.kkt_residual(&KktPoint::zeros(5, 4), &DVector::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    struct Degenerate;
    impl NlpFunctions for Degenerate {
        fn num_primal(&self) -> usize {
            1
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn objective(&self, _y: &DVector<f64>) -> f64 {
            0.0
        }
        fn constraints(&self, _y: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(1)
        }
    }

    #[test]
    fn singular_kkt_is_a_regularity_violation() {
        let p = NlpProblem::new(Arc::new(Degenerate), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let err = p.solve(&DVector::from_element(1, 1.0)).unwrap_err();
        assert!(matches!(err, Error::RegularityViolation));
    }
}
