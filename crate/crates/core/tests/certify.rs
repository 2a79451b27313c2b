mod common;

use common::canonical;
use nalgebra::{Complex, DMatrix};
use proptest::prelude::*;
use rtnmpc::certify::{
    aux_eigenvalues, aux_matrix, derive_chain, estimate_lyapunov_constants, estimate_state_bounds, growth_twice_hessian,
    max_stable_t, sampling_bounds, AuxMatrix, ChainConstants, Primaries, RegionRadii, TimeGrid, T_STAR_TOLERANCE,
};
use rtnmpc::linmodel::{solve_dare, ContinuousLti, DareOptions};
use rtnmpc::{Assumption, Error, Execution};

fn scalar_model(a: f64) -> ContinuousLti {
    let one = DMatrix::from_element(1, 1, 1.0);
    ContinuousLti::new(DMatrix::from_element(1, 1, a), one.clone(), one.clone(), one).unwrap()
}

fn unit_region() -> RegionRadii {
    RegionRadii {
        r_z: 1.0,
        r_x: 1.0,
        r_q: 1.0,
        v_bar: 1.0,
        v_bar_q: 1.0,
        t0: 1.0,
    }
}

fn primaries() -> impl Strategy<Value = Primaries> {
    (
        0.1f64..2.0,
        1.0f64..5.0,
        0.05f64..2.0,
        0.0f64..5.0,
        0.0f64..3.0,
        0.0f64..0.999,
        0.0f64..3.0,
        0.01f64..3.0,
    )
        .prop_map(|(a1, spread, a3, mu, sigma, kappa_hat, l_psi_x, l_psi_u)| Primaries {
            a1,
            a2: a1 * spread,
            a3,
            mu,
            sigma,
            kappa_hat,
            l_psi_x,
            l_psi_u,
        })
}

/// Independent root-finder for `lambda^2 - tr lambda + det`.
fn char_poly_roots(e: [[f64; 2]; 2]) -> [Complex<f64>; 2] {
    let tr = e[0][0] + e[1][1];
    let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
    let disc = Complex::new(tr * tr - 4.0 * det, 0.0).sqrt();
    let mut r = [(Complex::new(tr, 0.0) + disc) / 2.0, (Complex::new(tr, 0.0) - disc) / 2.0];
    r.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    r
}

#[test]
fn a3_hand_example() {
    // P = I from the DARE with A = 0, closed loop exp(ln 0.5) = 0.5 at T = 1
    let one = DMatrix::from_element(1, 1, 1.0);
    let p = solve_dare(&DMatrix::zeros(1, 1), &one, &one, &one, &DareOptions::default()).unwrap();
    assert_eq!(p.p()[(0, 0)], 1.0);
    let model = scalar_model(0.5f64.ln());
    let grid = TimeGrid::new(vec![1.0]).unwrap();
    let est = estimate_lyapunov_constants(&model, &p, &DMatrix::zeros(1, 1), &grid, Execution::Sequential).unwrap();
    assert!((est.a3 - 0.75).abs() < 1e-12);
    assert_eq!((est.a1, est.a2), (1.0, 1.0));
}

#[test]
fn state_bounds_scalar_decay() {
    let grid = TimeGrid::new(vec![1.0]).unwrap();
    let b = estimate_state_bounds(&scalar_model(-1.0), &grid, Execution::Sequential).unwrap();
    let want = 1.0 - (-1.0f64).exp();
    assert!((b.l_psi_x - want).abs() < 1e-12);
    assert!((b.l_psi_u - want).abs() < 1e-12);
}

#[test]
fn double_integrator_state_bounds_peak_at_largest_t() {
    let grid = TimeGrid::log_spaced(0.001, 0.1, 40).unwrap();
    let model = ContinuousLti::double_integrator();
    let all = estimate_state_bounds(&model, &grid, Execution::Sequential).unwrap();
    let last = estimate_state_bounds(&model, &TimeGrid::new(vec![0.1]).unwrap(), Execution::Sequential).unwrap();
    assert_eq!(all, last);
}

#[test]
fn twice_hessian_growth_on_scalars() {
    assert_eq!(growth_twice_hessian(&DMatrix::from_element(1, 1, 3.0)), 6.0);
}

#[test]
fn canonical_certificate_orderings() {
    let cert = canonical();
    let c = &cert.constants;
    assert!(c.chain.is_consistent());
    assert!(c.bounds.t2 <= c.bounds.t1 && c.bounds.t1 <= c.chain.region.t0);
    assert!(c.stable.t_star > 0.0 && !c.stable.unbounded);
    assert!(c.certified_t() <= c.stable.t_star);
    assert_eq!(c.chain.primaries.a1, cert.lq.value.lambda_min());
    assert_eq!(c.chain.primaries.a2, cert.lq.value.lambda_max());
}

#[test]
fn eigenvalues_approach_diagonal_at_rate_three_halves() {
    let c = canonical().chain();
    let t0 = c.region.t0;
    let defects: Vec<(f64, f64)> = (1..=10)
        .map(|k| {
            let t = t0 / 2f64.powi(k);
            let [l1, l2] = aux_matrix(c, t).unwrap().eigenvalues();
            ((l1.norm() - (1.0 - t * c.a_bar).sqrt()).abs(), (l2.norm() - c.kappa(t)).abs())
        })
        .collect();
    for w in defects.windows(2).skip(4) {
        let r = w[0].0 / w[1].0;
        assert!((2.0f64.powf(1.5) * 0.8..=2.0f64.powf(1.5) * 1.2).contains(&r), "ratio {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn eigenvalues_agree_with_characteristic_polynomial(e in prop::array::uniform4(-3.0f64..3.0)) {
        let m = AuxMatrix { t: 1.0, entries: [[e[0], e[1]], [e[2], e[3]]] };
        let got = aux_eigenvalues(&m);
        let want = char_poly_roots(m.entries);
        prop_assert!(got[0].norm() >= got[1].norm());
        let tr = e[0] + e[3];
        let det = e[0] * e[3] - e[1] * e[2];
        // moduli are well conditioned away from a double root
        if (tr * tr - 4.0 * det).abs() > 1e-4 {
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g.norm() - w.norm()).abs() <= 1e-12 * (1.0 + w.norm()));
            }
        }
        for l in got {
            let p = l * l - l * tr + det;
            prop_assert!(p.norm() <= 1e-12 * (1.0 + l.norm_sqr() + tr.abs() * l.norm() + det.abs()));
        }
    }

    #[test]
    fn derived_chain_is_pure(p in primaries()) {
        let a = derive_chain(&p, &unit_region()).unwrap();
        let b = derive_chain(&p, &unit_region()).unwrap();
        prop_assert!(a.is_consistent());
        prop_assert_eq!(a, b);
        prop_assert_eq!(a.eta, p.l_psi_u + p.l_psi_x * p.sigma);
        prop_assert_eq!(a.gamma, p.sigma * p.kappa_hat * a.eta);
    }

    #[test]
    fn t2_prime_matches_bisection(p in primaries()) {
        let c = derive_chain(&p, &unit_region()).unwrap();
        let b = sampling_bounds(&c).unwrap();
        prop_assert!(b.t2 <= b.t1 && b.t1 <= c.region.t0);
        if c.gamma > 0.0 {
            let scale = c.r_q_tilde * p.a1.sqrt() / (c.region.v_bar.sqrt() * c.gamma);
            // largest T with T <= scale (1 - kappa(T)); the gap is decreasing in T
            let gap = |t: f64| scale * (1.0 - c.kappa(t)) - t;
            let (mut lo, mut hi) = (0.0, scale);
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                if gap(m) >= 0.0 { lo = m } else { hi = m }
            }
            prop_assert!((b.t2_prime - lo).abs() <= 1e-9 * (1.0 + lo));
        } else {
            prop_assert!(b.t2_prime.is_infinite());
        }
    }

    #[test]
    fn decoupled_t_star(kappa_hat in 0.05f64..0.95, sigma_theta in 0.1f64..10.0, a_bar in 0.001f64..0.5) {
        let mut c = derive_chain(&Primaries {
            a1: 1.0, a2: 1.0, a3: a_bar, mu: 0.0, sigma: 1.0, kappa_hat, l_psi_x: 0.0, l_psi_u: sigma_theta,
        }, &unit_region()).unwrap();
        c.gamma_hat = 0.0;
        let want = (1.0 - kappa_hat) / (kappa_hat * sigma_theta);
        let got = max_stable_t(&c, 0.999 / a_bar, Execution::Sequential).unwrap();
        if want < 0.999 / a_bar {
            prop_assert!(!got.unbounded);
            prop_assert!((got.t_star - want).abs() <= 2.0 * T_STAR_TOLERANCE);
        } else {
            prop_assert!(got.unbounded);
        }
    }

    #[test]
    fn halving_coupling_never_shrinks_t_star(gamma_hat in 0.1f64..50.0, mu in 0.1f64..50.0) {
        let base = ChainConstants {
            gamma_hat,
            primaries: Primaries { mu, ..canonical().chain().primaries },
            ..*canonical().chain()
        };
        let base = ChainConstants { primaries: Primaries { kappa_hat: 0.99, ..base.primaries }, ..base };
        let halved = ChainConstants {
            gamma_hat: gamma_hat / 2.0,
            primaries: Primaries { mu: mu / 2.0, ..base.primaries },
            ..base
        };
        let t_hint = 0.1;
        let a = max_stable_t(&base, t_hint, Execution::Sequential).unwrap();
        let b = max_stable_t(&halved, t_hint, Execution::Sequential).unwrap();
        prop_assert!(b.t_star >= a.t_star - T_STAR_TOLERANCE, "{} < {}", b.t_star, a.t_star);
    }

    #[test]
    fn rejected_primaries_name_the_assumption(kappa_hat in 1.0f64..3.0) {
        let p = Primaries { kappa_hat, a1: 1.0, a2: 2.0, a3: 1.0, mu: 1.0, sigma: 1.0, l_psi_x: 1.0, l_psi_u: 1.0 };
        let err = derive_chain(&p, &unit_region()).unwrap_err();
        let named = matches!(err, Error::Certification { assumption: Assumption::Contraction, .. });
        prop_assert!(named);
    }
}

#[test]
fn t_star_is_a_stability_boundary() {
    let cert = canonical();
    let c = cert.chain();
    let t = cert.constants.stable.t_star;
    assert!(aux_matrix(c, t).unwrap().spectral_radius() < 1.0);
    assert!(aux_matrix(c, t + 2.0 * T_STAR_TOLERANCE).unwrap().spectral_radius() >= 1.0);
}
