mod common;

use common::canonical;
use nalgebra::DVector;
use proptest::prelude::*;
use rtnmpc::auxsim::{aux_rollout, aux_step, domination_check, domination_check_from, AuxState};
use rtnmpc::certify::{aux_matrix, ChainConstants, Primaries, RegionRadii};

fn hand_chain(a_bar: f64, mu: f64, gamma_hat: f64, kappa_hat: f64, sigma_theta: f64) -> ChainConstants {
    ChainConstants {
        primaries: Primaries {
            a1: 1.0,
            a2: 1.0,
            a3: a_bar,
            mu,
            sigma: 1.0,
            kappa_hat,
            l_psi_x: 0.0,
            l_psi_u: sigma_theta,
        },
        region: RegionRadii {
            r_z: 1.0,
            r_x: 1.0,
            r_q: 1.0,
            v_bar: 1.0,
            v_bar_q: 1.0,
            t0: 1.0,
        },
        a_bar,
        eta: sigma_theta,
        theta: sigma_theta,
        gamma: gamma_hat,
        gamma_hat,
        r_v_bar: 1.0,
        r_q_tilde: 1.0,
    }
}

#[test]
fn hand_arithmetic_step() {
    let c = hand_chain(0.5, 1.0, 1.0, 0.5, 1.0);
    let next = aux_step(&c, 0.5, AuxState { nu: 1.0, epsilon: 1.0 }).unwrap();
    assert!((next.nu - (0.75f64.sqrt() + 0.5f64.sqrt())).abs() < 1e-15);
    assert!((next.epsilon - 1.25).abs() < 1e-15);
}

#[test]
fn decoupled_step_only_contracts_the_error() {
    let c = hand_chain(0.0, 0.0, 0.0, 0.5, 1.0);
    let next = aux_step(&c, 0.2, AuxState { nu: 0.7, epsilon: 2.0 }).unwrap();
    assert_eq!(next.nu, 0.7);
    assert!((next.epsilon - c.kappa(0.2) * 2.0).abs() < 1e-15);
}

#[test]
fn step_beyond_the_rate_limit_is_a_domain_error() {
    let c = hand_chain(0.5, 1.0, 1.0, 0.5, 1.0);
    assert!(aux_step(&c, 2.0, AuxState { nu: 1.0, epsilon: 0.0 }).is_err());
}

#[test]
fn norm_decays_at_the_spectral_radius() {
    let c = canonical().chain();
    let t = 0.5 * canonical().constants.stable.t_star;
    let radius = aux_matrix(c, t).unwrap().spectral_radius();
    assert!(radius < 1.0);
    let traj = aux_rollout(c, t, AuxState { nu: 1.0, epsilon: 1.0 }, 200).unwrap();
    // least-squares slope of log ||chi_k|| over k = 20..200
    let pts: Vec<(f64, f64)> = (20..=200).map(|k| (k as f64, traj[k].norm().ln())).collect();
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    let rate = (num / den).exp();
    assert!(rate <= radius + 1e-6, "fitted {rate} vs radius {radius}");
}

#[test]
fn certified_rollout_is_dominated() {
    let cert = canonical();
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let traj = cert
        .system
        .rollout(&cert.cold_start(&x0).unwrap(), cert.constants.certified_t(), 300)
        .unwrap();
    let report = domination_check(&traj, cert.chain()).unwrap();
    assert!(report.passed(), "first violation at {:?}", report.first_violation);
    assert!(report.norm_bound_margin >= -1e-9);
    assert_eq!(report.rows.len(), 301);
}

#[test]
fn equilibrium_is_trivially_dominated() {
    let cert = canonical();
    let x0 = DVector::zeros(2);
    let traj = cert.system.rollout(&cert.cold_start(&x0).unwrap(), 0.01, 20).unwrap();
    let report = domination_check(&traj, cert.chain()).unwrap();
    assert!(report.passed());
    assert!(report.rows.iter().all(|r| r.margin_nu == 0.0 && r.margin_epsilon == 0.0));
}

#[test]
fn corrupted_initialisation_fails_at_the_first_sample() {
    let cert = canonical();
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let traj = cert.system.rollout(&cert.cold_start(&x0).unwrap(), 0.001, 10).unwrap();
    let first = &traj.samples[0];
    let bad = AuxState {
        nu: 0.9 * first.sqrt_value(),
        epsilon: first.error,
    };
    let report = domination_check_from(&traj, cert.chain(), bad).unwrap();
    assert_eq!(report.first_violation, Some(0));
    assert!(!report.passed());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ordering_is_preserved(
        nu in 0.0f64..10.0, eps in 0.0f64..10.0,
        dnu in 0.0f64..5.0, deps in 0.0f64..5.0,
        frac in 0.01f64..0.99,
    ) {
        let c = canonical().chain();
        let t = frac * canonical().constants.stable.t_star;
        let low = aux_rollout(c, t, AuxState { nu, epsilon: eps }, 100).unwrap();
        let high = aux_rollout(c, t, AuxState { nu: nu + dnu, epsilon: eps + deps }, 100).unwrap();
        for (l, h) in low.iter().zip(&high) {
            prop_assert!(l.nu >= 0.0 && l.epsilon >= 0.0);
            prop_assert!(h.nu >= l.nu && h.epsilon >= l.epsilon);
        }
    }
}
