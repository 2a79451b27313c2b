mod common;

use common::canonical;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rtnmpc::certify::{estimate_sensitivity_sampled, sensitivity_lq};
use rtnmpc::diff;
use rtnmpc::linalg::spectral_norm;
use rtnmpc::nlp::{Condensed, KktPoint, NlpFunctions, NlpProblem};
use rtnmpc::rtopt::{ErrorSpace, RealTimeOptimizer, Variant};
use rtnmpc::sampling::{Sampler, SamplingRegion};
use rtnmpc::Execution;
use std::sync::Arc;

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, rel: f64) -> bool {
    (a - b).amax() <= rel * (1.0 + a.amax())
}

/// Nonlinear test problem using only the finite-difference derivative defaults.
struct Bowl;

impl NlpFunctions for Bowl {
    fn num_primal(&self) -> usize {
        3
    }
    fn num_constraints(&self) -> usize {
        1
    }
    fn objective(&self, y: &DVector<f64>) -> f64 {
        y[0].powi(2) + 2.0 * y[1].powi(2) + y[2].powi(2) + 0.1 * y[0].powi(4)
    }
    fn constraints(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, y[0] + y[1] + y[2] + 0.1 * y[2].powi(3))
    }
}

#[test]
fn lq_derivatives_match_finite_differences() {
    let cert = canonical();
    let f = cert.lq.problem.functions();
    let mut rng = Sampler::new(11);
    for _ in 0..50 {
        let y = rng.in_ball(f.num_primal(), 2.0);
        let lambda = rng.in_ball(f.num_constraints(), 2.0);
        let g = f.objective_gradient(&y);
        let g_fd = diff::gradient(|v| f.objective(v), &y);
        assert!((&g - &g_fd).amax() <= 1e-5 * (1.0 + g.amax()));
        let j_fd = diff::jacobian(|v| f.constraints(v), &y, f.num_constraints());
        assert!(close(&f.constraint_jacobian(&y), &j_fd, 1e-5));
        let h_fd = diff::hessian(|v| f.objective(v), &y);
        assert!(close(&f.objective_hessian(&y), &h_fd, 1e-5));
        assert!(f.constraint_curvature(&y, &lambda).amax() <= 1e-12);
    }
}

#[test]
fn finite_difference_defaults_solve_a_nonlinear_problem() {
    let b = DMatrix::from_element(1, 1, -1.0);
    let problem = NlpProblem::new(Arc::new(Bowl), b).unwrap();
    let x = DVector::from_element(1, 0.7);
    let sol = problem.solve(&x).unwrap();
    assert!(sol.kkt_norm <= 1e-10);
    let y = &sol.z_bar.y;
    assert!((y[0] + y[1] + y[2] + 0.1 * y[2].powi(3) - 0.7).abs() <= 1e-10);
    assert!(sol.value > 0.0);
}

#[test]
fn sensitivity_matches_finite_difference_probe() {
    let cert = canonical();
    let x = DVector::from_vec(vec![0.3, -0.2]);
    let jac = diff::jacobian(|v| cert.lq.condensed.solve(v).unwrap(), &x, 1);
    let sigma = sensitivity_lq(&cert.lq.condensed).unwrap();
    assert!((spectral_norm(&jac) - sigma).abs() <= 1e-6);
}

#[test]
fn sensitivity_scalar_cases() {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let c = Condensed { h: one(2.0), g: one(1.0) };
    assert!((sensitivity_lq(&c).unwrap() - 0.5).abs() < 1e-15);
    let c = Condensed { h: one(2.0), g: one(0.0) };
    assert_eq!(sensitivity_lq(&c).unwrap(), 0.0);
}

#[test]
fn solution_map_is_lipschitz_with_sigma() {
    let cert = canonical();
    let sigma = sensitivity_lq(&cert.lq.condensed).unwrap();
    let mut rng = Sampler::new(12);
    for _ in 0..100 {
        let (x1, x2) = (rng.in_ball(2, 1.0), rng.in_ball(2, 1.0));
        let du = cert.lq.condensed.solve(&x2).unwrap() - cert.lq.condensed.solve(&x1).unwrap();
        assert!(du.norm() <= sigma * (&x2 - &x1).norm() * (1.0 + 1e-12) + 1e-15);
    }
}

#[test]
fn sampled_sensitivity_bounds_full_space_quotients() {
    let cert = canonical();
    let opt = RealTimeOptimizer::for_lq(&cert.lq, Variant::ExactNewton, ErrorSpace::Full).unwrap();
    let region = SamplingRegion::default();
    let sigma = estimate_sensitivity_sampled(&opt, &region, Execution::default()).unwrap();
    let mut rng = Sampler::new(13);
    for _ in 0..100 {
        let (x1, x2) = (rng.in_ball(2, 1.0), rng.in_ball(2, 1.0));
        let d = opt.exact(&x2).unwrap().z_bar.distance(&opt.exact(&x1).unwrap().z_bar);
        assert!(d <= sigma * (&x2 - &x1).norm());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn condensed_and_full_agree(x0 in -3.0f64..3.0, x1 in -3.0f64..3.0) {
        let cert = canonical();
        let x = DVector::from_vec(vec![x0, x1]);
        let full = cert.lq.problem.solve(&x).unwrap();
        let u_full = cert.lq.selector().apply(&full.z_bar);
        let u = cert.lq.condensed.solve(&x).unwrap();
        prop_assert!((u - u_full).amax() <= 1e-8);
        prop_assert!((full.value - cert.lq.value.quadratic(&x)).abs() <= 1e-8);
    }

    #[test]
    fn value_function_is_quadratic(x0 in -2.0f64..2.0, x1 in -2.0f64..2.0) {
        let problem = &canonical().lq.problem;
        let x = DVector::from_vec(vec![x0, x1]);
        let v = problem.value_function(&x).unwrap();
        let v2 = problem.value_function(&(&x * 2.0)).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!((v2 - 4.0 * v).abs() <= 1e-9 * (1.0 + v2));
    }

    #[test]
    fn newton_converges_in_one_step_from_anywhere(seed in any::<u64>()) {
        let problem = &canonical().lq.problem;
        let mut rng = Sampler::new(seed);
        let x = rng.in_ball(2, 1.0);
        let z0 = KktPoint::from_vector(problem.num_primal(), &rng.in_ball(problem.num_kkt(), 10.0));
        let z1 = problem.newton_step(&z0, &x).unwrap();
        prop_assert!(problem.kkt_residual(&z1, &x).unwrap().norm() <= 1e-10);
    }
}
