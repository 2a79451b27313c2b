//! Stability chain: primary constants, derived constants, sampling-time
//! bounds and the 2x2 auxiliary system whose spectral radius decides the
//! certificate.

mod estimate;
mod pipeline;

pub use estimate::{
    delta_p, estimate_lyapunov_constants, estimate_second_order_growth_sampled, estimate_sensitivity_sampled,
    estimate_state_bounds, growth_exact_lq, growth_twice_hessian, sensitivity_lq, GrowthSampling, LyapunovEstimate,
    StateBounds, TimeGrid,
};
pub use pipeline::{
    certify_lq, eigen_sweep, lyapunov_curve, parse_certificate, write_eigen_csv, write_lyapunov_csv, GridSpec,
    LqCertification, LqSetup, MuRule, RegionSpec,
};

use nalgebra::Complex;

use crate::error::{Assumption, Error, Result};
use crate::exec::Execution;

/// Estimated constants the rest of the chain is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primaries {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub mu: f64,
    pub sigma: f64,
    pub kappa_hat: f64,
    pub l_psi_x: f64,
    pub l_psi_u: f64,
}

/// Configured radii and level sets of the working region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionRadii {
    pub r_z: f64,
    pub r_x: f64,
    pub r_q: f64,
    pub v_bar: f64,
    pub v_bar_q: f64,
    /// Upper bound on sampling times for which the nominal decrease holds.
    pub t0: f64,
}

/// Primaries plus every constant defined from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConstants {
    pub primaries: Primaries,
    pub region: RegionRadii,
    /// `a3 / a2`
    pub a_bar: f64,
    /// `L_psi_u + L_psi_x sigma`
    pub eta: f64,
    /// `L_psi_u`
    pub theta: f64,
    /// `sigma kappa_hat eta`
    pub gamma: f64,
    /// `gamma / sqrt(a1)`
    pub gamma_hat: f64,
    /// `sqrt(V_bar / a1)`
    pub r_v_bar: f64,
    /// `min(r_q, sqrt(a_bar V_bar_q / mu))`
    pub r_q_tilde: f64,
}

fn derived(p: &Primaries, region: &RegionRadii) -> ChainConstants {
    let a_bar = p.a3 / p.a2;
    let eta = p.l_psi_u + p.l_psi_x * p.sigma;
    let theta = p.l_psi_u;
    let gamma = p.sigma * p.kappa_hat * eta;
    let gamma_hat = gamma / p.a1.sqrt();
    let r_v_bar = (region.v_bar / p.a1).sqrt();
    let r_q_tilde = if p.mu > 0.0 {
        region.r_q.min((a_bar * region.v_bar_q / p.mu).sqrt())
    } else {
        region.r_q
    };
    ChainConstants {
        primaries: *p,
        region: *region,
        a_bar,
        eta,
        theta,
        gamma,
        gamma_hat,
        r_v_bar,
        r_q_tilde,
    }
}

/// Fills in every derived constant after checking the primaries.
pub fn derive_chain(p: &Primaries, region: &RegionRadii) -> Result<ChainConstants> {
    let all = [p.a1, p.a2, p.a3, p.mu, p.sigma, p.kappa_hat, p.l_psi_x, p.l_psi_u];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite primary constant".into()));
    }
    if p.mu < 0.0 || p.sigma < 0.0 || p.kappa_hat < 0.0 || p.l_psi_x < 0.0 || p.l_psi_u < 0.0 {
        return Err(Error::Domain("primary constants must be nonnegative".into()));
    }
    if !(p.a1 > 0.0) || p.a1 > p.a2 {
        return Err(Error::cert(
            Assumption::LyapunovDecrease,
            format!("need 0 < a1 <= a2, got a1 = {}, a2 = {}", p.a1, p.a2),
        ));
    }
    if !(p.a3 > 0.0) {
        return Err(Error::cert(Assumption::LyapunovDecrease, format!("a3 = {} is not positive", p.a3)));
    }
    if p.kappa_hat >= 1.0 {
        return Err(Error::cert(
            Assumption::Contraction,
            format!("kappa_hat = {} >= 1, the optimizer does not contract", p.kappa_hat),
        ));
    }
    let radii = [region.r_z, region.r_x, region.r_q, region.v_bar, region.v_bar_q, region.t0];
    if radii.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::cert(Assumption::Region, "radii, levels and T0 must be positive"));
    }
    if region.v_bar_q > region.v_bar || region.r_q > region.r_z {
        return Err(Error::cert(Assumption::Region, "need V_bar_q <= V_bar and r_q <= r_z"));
    }
    Ok(derived(p, region))
}

impl ChainConstants {
    /// `kappa(T) = kappa_hat (1 + T sigma theta)`.
    pub fn kappa(&self, t: f64) -> f64 {
        self.primaries.kappa_hat * (1.0 + t * self.primaries.sigma * self.theta)
    }

    /// Recomputes the derived constants from the stored primaries and
    /// checks that they are bit-identical.
    pub fn is_consistent(&self) -> bool {
        let again = derived(&self.primaries, &self.region);
        [
            (again.a_bar, self.a_bar),
            (again.eta, self.eta),
            (again.theta, self.theta),
            (again.gamma, self.gamma),
            (again.gamma_hat, self.gamma_hat),
            (again.r_v_bar, self.r_v_bar),
            (again.r_q_tilde, self.r_q_tilde),
        ]
        .iter()
        .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Sampling-time bounds for error contraction (`T1`) and invariance (`T2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingBounds {
    pub t1_prime: f64,
    pub t1: f64,
    /// Largest `T` with `T <= (1 - kappa(T)) r_q_tilde sqrt(a1) / (sqrt(V_bar) gamma)`.
    pub t2_prime: f64,
    pub t2: f64,
}

pub fn sampling_bounds(c: &ChainConstants) -> Result<SamplingBounds> {
    let p = &c.primaries;
    let r = &c.region;
    if p.kappa_hat >= 1.0 {
        return Err(Error::cert(Assumption::Contraction, "kappa_hat >= 1"));
    }
    if [r.r_x, r.r_z, r.r_q, r.v_bar, r.v_bar_q].iter().any(|v| !(*v > 0.0)) {
        return Err(Error::cert(Assumption::Region, "radii must be positive"));
    }
    let spread = c.eta * c.r_v_bar + c.theta * r.r_z;
    let first = if spread > 0.0 { r.r_x / spread } else { f64::INFINITY };
    let coupling = p.sigma * p.kappa_hat * spread;
    let second = if coupling > 0.0 {
        r.r_z * (1.0 - p.kappa_hat) / coupling
    } else {
        f64::INFINITY
    };
    let t1_prime = first.min(second);
    let t1 = t1_prime.min(r.t0);

    // kappa(T) is affine in T, so T = scale (1 - kappa(T)) has a closed-form root.
    let t2_prime = if c.gamma > 0.0 {
        let scale = c.r_q_tilde * p.a1.sqrt() / (r.v_bar.sqrt() * c.gamma);
        scale * (1.0 - p.kappa_hat) / (1.0 + scale * p.kappa_hat * p.sigma * c.theta)
    } else {
        f64::INFINITY
    };
    let t2 = t2_prime.min(t1);
    Ok(SamplingBounds {
        t1_prime,
        t1,
        t2_prime,
        t2,
    })
}

/// Auxiliary system matrix
///
/// ```text
/// [ (1 - T a_bar)^(1/2)   (T mu)^(1/2) ]
/// [ T gamma_hat           kappa(T)     ]
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxMatrix {
    pub t: f64,
    pub entries: [[f64; 2]; 2],
}

pub fn aux_matrix(c: &ChainConstants, t: f64) -> Result<AuxMatrix> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("sampling time must be positive, got {t}")));
    }
    if !(t * c.a_bar < 1.0) {
        return Err(Error::Domain(format!("T a_bar = {} must be below 1", t * c.a_bar)));
    }
    Ok(AuxMatrix {
        t,
        entries: [
            [(1.0 - t * c.a_bar).sqrt(), (t * c.primaries.mu).sqrt()],
            [t * c.gamma_hat, c.kappa(t)],
        ],
    })
}

impl AuxMatrix {
    pub fn eigenvalues(&self) -> [Complex<f64>; 2] {
        aux_eigenvalues(self)
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues()[0].norm()
    }
}

/// Roots of the characteristic polynomial, largest modulus first.
pub fn aux_eigenvalues(m: &AuxMatrix) -> [Complex<f64>; 2] {
    eigenvalues_2x2(m.entries)
}

pub(crate) fn eigenvalues_2x2(e: [[f64; 2]; 2]) -> [Complex<f64>; 2] {
    let [[a, b], [c, d]] = e;
    let half_trace = 0.5 * (a + d);
    let det = a * d - b * c;
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    let (l1, l2) = if disc >= 0.0 {
        let s = disc.sqrt();
        let big = if half_trace >= 0.0 { half_trace + s } else { half_trace - s };
        let small = if big != 0.0 { det / big } else { half_trace - s };
        (Complex::new(big, 0.0), Complex::new(small, 0.0))
    } else {
        let s = (-disc).sqrt();
        (Complex::new(half_trace, s), Complex::new(half_trace, -s))
    };
    if l1.norm() >= l2.norm() {
        [l1, l2]
    } else {
        [l2, l1]
    }
}

/// Largest sampling time below which the auxiliary system is Schur stable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableSamplingTime {
    pub t_star: f64,
    /// No crossing was found below the search bracket; `t_star` is the bracket end.
    pub unbounded: bool,
}

pub const T_STAR_TOLERANCE: f64 = 1e-10;
const SCAN_POINTS: usize = 512;

/// Bisection on `spectral_radius(A(T)) = 1` over `(0, min(t_hint, 1/a_bar))`.
///
/// A logarithmic scan locates the first stable-to-unstable transition, which
/// is then refined to [`T_STAR_TOLERANCE`].
pub fn max_stable_t(c: &ChainConstants, t_hint: f64, exec: Execution) -> Result<StableSamplingTime> {
    if c.primaries.kappa_hat >= 1.0 {
        return Err(Error::cert(
            Assumption::StableSamplingTime,
            "kappa_hat >= 1: no stable sampling time exists",
        ));
    }
    let limit = if c.a_bar > 0.0 { 1.0 / c.a_bar } else { f64::INFINITY };
    let hi = if t_hint < limit { t_hint } else { limit * (1.0 - 1e-12) };
    if !(hi > 0.0) || !hi.is_finite() {
        return Err(Error::Domain(format!("invalid search bracket upper end {hi}")));
    }
    let radius = |t: f64| aux_matrix(c, t).map(|m| m.spectral_radius());

    let mut lo = hi * 1e-9;
    let mut shrinks = 0;
    while radius(lo)? >= 1.0 {
        lo *= 0.25;
        shrinks += 1;
        if shrinks > 200 {
            return Err(Error::cert(
                Assumption::StableSamplingTime,
                "spectral radius is not below one for any tested sampling time",
            ));
        }
    }
    let ratio = (hi / lo).ln();
    let scan: Vec<f64> = (0..=SCAN_POINTS)
        .map(|i| {
            if i == SCAN_POINTS {
                hi
            } else {
                lo * (ratio * i as f64 / SCAN_POINTS as f64).exp()
            }
        })
        .collect();
    let radii = exec.try_map(&scan, |&t| radius(t))?;
    let Some(first_bad) = radii.iter().position(|r| *r >= 1.0) else {
        return Ok(StableSamplingTime {
            t_star: hi,
            unbounded: true,
        });
    };
    let (mut a, mut b) = (scan[first_bad - 1], scan[first_bad]);
    while b - a > T_STAR_TOLERANCE {
        let m = 0.5 * (a + b);
        if radius(m)? < 1.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(StableSamplingTime {
        t_star: a,
        unbounded: false,
    })
}

/// Everything issued for one certified configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifiedConstants {
    pub chain: ChainConstants,
    pub bounds: SamplingBounds,
    pub stable: StableSamplingTime,
}

impl CertifiedConstants {
    pub fn issue(chain: ChainConstants, t_hint: f64, exec: Execution) -> Result<Self> {
        let bounds = sampling_bounds(&chain)?;
        let stable = max_stable_t(&chain, t_hint, exec)?;
        Ok(Self { chain, bounds, stable })
    }

    /// `min(T2, T_star)`.
    pub fn certified_t(&self) -> f64 {
        self.bounds.t2.min(self.stable.t_star)
    }

    /// `(key, value)` pairs in certificate order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        let c = &self.chain;
        let p = &c.primaries;
        let r = &c.region;
        vec![
            ("a1", p.a1),
            ("a2", p.a2),
            ("a3", p.a3),
            ("a_bar", c.a_bar),
            ("mu", p.mu),
            ("sigma", p.sigma),
            ("kappa_hat", p.kappa_hat),
            ("L_psi_x", p.l_psi_x),
            ("L_psi_u", p.l_psi_u),
            ("eta", c.eta),
            ("theta", c.theta),
            ("gamma", c.gamma),
            ("gamma_hat", c.gamma_hat),
            ("r_z", r.r_z),
            ("r_x", r.r_x),
            ("r_q", r.r_q),
            ("r_q_tilde", c.r_q_tilde),
            ("V_bar", r.v_bar),
            ("V_bar_q", r.v_bar_q),
            ("r_V_bar", c.r_v_bar),
            ("T0", r.t0),
            ("T1_prime", self.bounds.t1_prime),
            ("T1", self.bounds.t1),
            ("T2_prime", self.bounds.t2_prime),
            ("T2", self.bounds.t2),
            ("T_star", self.stable.t_star),
        ]
    }
}
