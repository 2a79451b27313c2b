//! Auxiliary 2-D comparison system and the domination check against a
//! coupled rollout.

use std::io::Write;

use crate::certify::{aux_matrix, ChainConstants};
use crate::coupled::{fmt_f64, Trajectory};
use crate::error::{Error, Result};

/// Comparison state `chi = (nu, epsilon)`, dominating `(sqrt(V), E)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxState {
    pub nu: f64,
    pub epsilon: f64,
}

impl AuxState {
    pub fn norm(&self) -> f64 {
        self.nu.hypot(self.epsilon)
    }
}

/// `chi_{k+1} = A(T) chi_k`.
pub fn aux_step(chain: &ChainConstants, t: f64, state: AuxState) -> Result<AuxState> {
    let [[a, b], [c, d]] = aux_matrix(chain, t)?.entries;
    Ok(AuxState {
        nu: a * state.nu + b * state.epsilon,
        epsilon: c * state.nu + d * state.epsilon,
    })
}

/// `steps + 1` states starting at `initial`.
pub fn aux_rollout(chain: &ChainConstants, t: f64, initial: AuxState, steps: usize) -> Result<Vec<AuxState>> {
    let [[a, b], [c, d]] = aux_matrix(chain, t)?.entries;
    let mut out = Vec::with_capacity(steps + 1);
    let mut s = initial;
    out.push(s);
    for _ in 0..steps {
        s = AuxState {
            nu: a * s.nu + b * s.epsilon,
            epsilon: c * s.nu + d * s.epsilon,
        };
        out.push(s);
    }
    Ok(out)
}

/// Relative slack allowed in the domination margins.
pub const DOMINATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominationRow {
    pub k: usize,
    pub nu: f64,
    pub epsilon: f64,
    pub sqrt_value: f64,
    pub error: f64,
    /// `nu_k - sqrt(V_k)`
    pub margin_nu: f64,
    /// `epsilon_k - E_k`
    pub margin_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominationReport {
    pub sampling_time: f64,
    pub rows: Vec<DominationRow>,
    pub first_violation: Option<usize>,
    /// Smallest `min(a1, 1)^(-1/2) ||chi_k|| - ||(x_k, E_k)||` over the rollout.
    pub norm_bound_margin: f64,
}

impl DominationReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }

    pub fn min_margin(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.margin_nu.min(r.margin_epsilon))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,nu,epsilon,sqrtV,E,margin_nu,margin_eps")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.k,
                fmt_f64(r.nu),
                fmt_f64(r.epsilon),
                fmt_f64(r.sqrt_value),
                fmt_f64(r.error),
                fmt_f64(r.margin_nu),
                fmt_f64(r.margin_epsilon)
            )?;
        }
        Ok(())
    }
}

/// Domination check started from `nu_0 = sqrt(V_0)`, `epsilon_0 = E_0`.
pub fn domination_check(trajectory: &Trajectory, chain: &ChainConstants) -> Result<DominationReport> {
    let first = trajectory
        .samples
        .first()
        .ok_or_else(|| Error::Input("empty trajectory".into()))?;
    domination_check_from(
        trajectory,
        chain,
        AuxState {
            nu: first.sqrt_value(),
            epsilon: first.error,
        },
    )
}

/// Runs the auxiliary system alongside `trajectory` and records the margins.
pub fn domination_check_from(trajectory: &Trajectory, chain: &ChainConstants, initial: AuxState) -> Result<DominationReport> {
    if trajectory.samples.is_empty() {
        return Err(Error::Input("empty trajectory".into()));
    }
    let t = trajectory.sampling_time;
    let aux = aux_rollout(chain, t, initial, trajectory.samples.len() - 1)?;
    let scale = chain.primaries.a1.min(1.0).sqrt().recip();
    let mut rows = Vec::with_capacity(aux.len());
    let mut first_violation = None;
    let mut norm_bound_margin = f64::INFINITY;
    for (s, chi) in trajectory.samples.iter().zip(&aux) {
        let sqrt_value = s.sqrt_value();
        let row = DominationRow {
            k: s.k,
            nu: chi.nu,
            epsilon: chi.epsilon,
            sqrt_value,
            error: s.error,
            margin_nu: chi.nu - sqrt_value,
            margin_epsilon: chi.epsilon - s.error,
        };
        let slack_nu = DOMINATION_TOLERANCE * (1.0 + sqrt_value);
        let slack_eps = DOMINATION_TOLERANCE * (1.0 + s.error);
        if first_violation.is_none() && (row.margin_nu < -slack_nu || row.margin_epsilon < -slack_eps) {
            first_violation = Some(s.k);
        }
        let xi = s.x.norm().hypot(s.error);
        norm_bound_margin = norm_bound_margin.min(scale * chi.norm() - xi);
        rows.push(row);
    }
    Ok(DominationReport {
        sampling_time: t,
        rows,
        first_violation,
        norm_bound_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::{derive_chain, Primaries, RegionRadii};

    fn chain() -> ChainConstants {
        let p = Primaries {
            a1: 1.0,
            a2: 2.0,
            a3: 1.0,
            mu: 1.0,
            sigma: 1.0,
            kappa_hat: 0.5,
            l_psi_x: 0.0,
            l_psi_u: 1.0,
        };
        let r = RegionRadii {
            r_z: 1.0,
            r_x: 1.0,
            r_q: 1.0,
            v_bar: 1.0,
            v_bar_q: 1.0,
            t0: 1.0,
        };
        derive_chain(&p, &r).unwrap()
    }

    #[test]
    fn step_matches_matrix_product() {
        let c = chain();
        let m = aux_matrix(&c, 0.1).unwrap().entries;
        let s = aux_step(&c, 0.1, AuxState { nu: 2.0, epsilon: 3.0 }).unwrap();
        assert_eq!(s.nu, m[0][0] * 2.0 + m[0][1] * 3.0);
        assert_eq!(s.epsilon, m[1][0] * 2.0 + m[1][1] * 3.0);
        let roll = aux_rollout(&c, 0.1, AuxState { nu: 2.0, epsilon: 3.0 }, 1).unwrap();
        assert_eq!(roll[1], s);
    }

    #[test]
    fn zero_state_stays_zero() {
        let roll = aux_rollout(&chain(), 0.1, AuxState { nu: 0.0, epsilon: 0.0 }, 5).unwrap();
        assert!(roll.iter().all(|s| s.nu == 0.0 && s.epsilon == 0.0));
    }

    #[test]
    fn empty_trajectory_is_rejected() {
        let t = Trajectory {
            sampling_time: 0.1,
            samples: vec![],
            diverged_at: None,
        };
        assert!(domination_check(&t, &chain()).is_err());
    }
}
