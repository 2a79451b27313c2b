//! End-to-end certification of the LQ setting and its text outputs.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use super::estimate::{
    estimate_lyapunov_constants, estimate_sensitivity_sampled, estimate_state_bounds, growth_exact_lq,
    growth_twice_hessian, sensitivity_lq, LyapunovEstimate, TimeGrid,
};
use super::{aux_matrix, derive_chain, CertifiedConstants, ChainConstants, Primaries, RegionRadii};
use crate::coupled::{fmt_f64, CoupledState, CoupledSystem, Plant};
use crate::error::{Assumption, Error, Result};
use crate::exec::Execution;
use crate::linalg;
use crate::linmodel::{ContinuousLti, DareOptions, ValueMatrix};
use crate::nlp::{build_lq_nlp, HConvention, LqNlp};
use crate::rtopt::{ContractionEstimate, ErrorSpace, RealTimeOptimizer, Variant};
use crate::sampling::{SamplingRegion, DEFAULT_SEED};

/// Source of the second-order growth constant `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MuRule {
    /// Smallest valid `mu` from the Schur complement of the perturbed decrease.
    #[default]
    ExactLq,
    /// `2 lambda_max(H)`.
    TwiceHessian,
}

impl MuRule {
    pub fn name(&self) -> &'static str {
        match self {
            MuRule::ExactLq => "exact-lq",
            MuRule::TwiceHessian => "twice-hessian",
        }
    }
}

/// Region radii; `None` levels default to `1.5 V(reference)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub r_z: f64,
    pub r_x: f64,
    pub r_q: f64,
    pub v_bar: Option<f64>,
    pub v_bar_q: Option<f64>,
    /// Defaults to the discretization time.
    pub t0: Option<f64>,
    pub reference_state: DVector<f64>,
}

impl Default for RegionSpec {
    fn default() -> Self {
        Self {
            r_z: 1.0,
            r_x: 1.0,
            r_q: 1.0,
            v_bar: None,
            v_bar_q: None,
            t0: None,
            reference_state: DVector::from_vec(vec![1.0, 0.0]),
        }
    }
}

/// Grid for the Lyapunov and growth estimates; bounds default to `(T_d / 100, T_d]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub points: usize,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 40,
            t_min: None,
            t_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqSetup {
    pub model: ContinuousLti,
    pub t_d: f64,
    pub convention: HConvention,
    /// `None` picks `1.5 lambda_max(H)`.
    pub rho: Option<f64>,
    pub exact_newton: bool,
    pub error_space: ErrorSpace,
    pub mu_rule: MuRule,
    pub region: RegionSpec,
    pub grid: GridSpec,
    /// Upper end of the `T_star` search; defaults to `T0`.
    pub t_hint: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub dare: DareOptions,
    pub exec: Execution,
}

impl LqSetup {
    /// Double integrator with `T_d = 0.1`.
    pub fn double_integrator() -> Self {
        Self {
            model: ContinuousLti::double_integrator(),
            t_d: 0.1,
            convention: HConvention::default(),
            rho: None,
            exact_newton: false,
            error_space: ErrorSpace::default(),
            mu_rule: MuRule::default(),
            region: RegionSpec::default(),
            grid: GridSpec::default(),
            t_hint: None,
            samples: 200,
            seed: DEFAULT_SEED,
            dare: DareOptions::default(),
            exec: Execution::default(),
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        let t_max = self.grid.t_max.unwrap_or(self.t_d);
        let t_min = self.grid.t_min.unwrap_or(t_max / 100.0);
        TimeGrid::log_spaced(t_min, t_max, self.grid.points)
    }
}

/// Result of [`certify_lq`].
#[derive(Debug, Clone)]
pub struct LqCertification {
    pub lq: LqNlp,
    pub system: CoupledSystem,
    pub gain: DMatrix<f64>,
    pub grid: TimeGrid,
    pub lyapunov: LyapunovEstimate,
    pub contraction: ContractionEstimate,
    pub sigma_estimated: bool,
    pub constants: CertifiedConstants,
    pub setup: LqSetup,
}

/// Runs every estimator, the constant chain and the `T_star` search.
pub fn certify_lq(setup: &LqSetup) -> Result<LqCertification> {
    let exec = setup.exec;
    let model = &setup.model;
    if setup.region.reference_state.len() != model.state_dim() {
        return Err(Error::dim(
            "reference state",
            model.state_dim(),
            setup.region.reference_state.len(),
        ));
    }
    let lq = build_lq_nlp(model, setup.t_d, setup.convention, &setup.dare)?;
    let variant = if setup.exact_newton {
        Variant::ExactNewton
    } else {
        Variant::FixedHessianGradient {
            rho: setup.rho.unwrap_or_else(|| RealTimeOptimizer::default_rho(&lq)),
        }
    };
    let optimizer = RealTimeOptimizer::for_lq(&lq, variant, setup.error_space)?;
    let grid = setup.time_grid()?;
    let gain = lq.condensed.gain()?;

    let lyapunov = estimate_lyapunov_constants(model, &lq.value, &gain, &grid, exec)?;
    let a_bar = lyapunov.a3 / lyapunov.a2;
    let mu = match setup.mu_rule {
        MuRule::ExactLq => growth_exact_lq(model, &lq.value, &gain, a_bar, &grid, exec)?,
        MuRule::TwiceHessian => growth_twice_hessian(&lq.condensed.h),
    };

    let reference_value = lq.value.quadratic(&setup.region.reference_state);
    let v_bar = setup.region.v_bar.unwrap_or(1.5 * reference_value);
    let v_bar_q = setup.region.v_bar_q.unwrap_or(v_bar);
    if !(v_bar > 0.0) {
        return Err(Error::cert(Assumption::Region, "V_bar must be positive (zero reference state?)"));
    }

    let region = SamplingRegion {
        x_radius: (v_bar / lyapunov.a1).sqrt(),
        z_radius: setup.region.r_z,
        samples: setup.samples,
        seed: setup.seed,
    };
    let contraction = optimizer.contraction_factor(Some(&region), exec)?;
    let (sigma, sigma_estimated) = match setup.error_space {
        ErrorSpace::Input => (sensitivity_lq(&lq.condensed)?, false),
        ErrorSpace::Full => (estimate_sensitivity_sampled(&optimizer, &region, exec)?, true),
    };
    let bounds = estimate_state_bounds(model, &grid, exec)?;

    let primaries = Primaries {
        a1: lyapunov.a1,
        a2: lyapunov.a2,
        a3: lyapunov.a3,
        mu,
        sigma,
        kappa_hat: contraction.kappa_hat,
        l_psi_x: bounds.l_psi_x,
        l_psi_u: bounds.l_psi_u,
    };
    let t0 = setup.region.t0.unwrap_or(setup.t_d);
    let radii = RegionRadii {
        r_z: setup.region.r_z,
        r_x: setup.region.r_x,
        r_q: setup.region.r_q,
        v_bar,
        v_bar_q,
        t0,
    };
    let chain = derive_chain(&primaries, &radii)?;
    let constants = CertifiedConstants::issue(chain, setup.t_hint.unwrap_or(t0), exec)?;
    let system = CoupledSystem::new(Plant::Linear(model.clone()), optimizer)?;
    Ok(LqCertification {
        lq,
        system,
        gain,
        grid,
        lyapunov,
        contraction,
        sigma_estimated,
        constants,
        setup: setup.clone(),
    })
}

impl LqCertification {
    pub fn chain(&self) -> &ChainConstants {
        &self.constants.chain
    }

    pub fn optimizer(&self) -> &RealTimeOptimizer {
        &self.system.optimizer
    }

    /// State `x0` with the optimizer started from the zero input.
    pub fn cold_start(&self, x0: &DVector<f64>) -> Result<CoupledState> {
        let u0 = DVector::zeros(self.setup.model.input_dim());
        Ok(CoupledState {
            x: x0.clone(),
            z: self.lq.complete(&u0, x0)?,
        })
    }

    /// Writes the certificate as `key = value` lines.
    pub fn write_certificate<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let rho = match self.optimizer().variant() {
            Variant::FixedHessianGradient { rho } => fmt_f64(rho),
            Variant::ExactNewton => "none".into(),
        };
        let meta: Vec<(&str, String)> = vec![
            ("variant", self.optimizer().variant().name().into()),
            ("rho", rho),
            ("error_space", self.setup.error_space.name().into()),
            ("h_convention", convention_name(self.setup.convention).into()),
            ("mu_rule", self.setup.mu_rule.name().into()),
            ("T_d", fmt_f64(self.setup.t_d)),
            ("grid_points", self.grid.len().to_string()),
            ("grid_t_min", fmt_f64(self.grid.min())),
            ("grid_t_max", fmt_f64(self.grid.max())),
            ("seed", self.setup.seed.to_string()),
            ("dare_residual", fmt_f64(self.lq.value.residual())),
            ("kappa_estimated", self.contraction.estimated.to_string()),
            ("sigma_estimated", self.sigma_estimated.to_string()),
        ];
        for (k, v) in meta {
            writeln!(w, "{k} = {v}")?;
        }
        for (k, v) in self.constants.entries() {
            writeln!(w, "{k} = {}", fmt_f64(v))?;
        }
        writeln!(w, "T_star_unbounded = {}", self.constants.stable.unbounded)?;
        writeln!(w, "T_certified = {}", fmt_f64(self.constants.certified_t()))
    }
}

fn convention_name(c: HConvention) -> &'static str {
    match c {
        HConvention::OcpConsistent => "ocp-consistent",
        HConvention::Literal => "literal",
    }
}

/// Reads `key = value` lines, skipping blanks and `#` comments.
pub fn parse_certificate(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("certificate line {} has no '='", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// `(T, -lambda_max(Delta P(T)))` for each requested `T`.
pub fn lyapunov_curve(
    model: &ContinuousLti,
    value: &ValueMatrix,
    gain: &DMatrix<f64>,
    times: &[f64],
    exec: Execution,
) -> Result<Vec<(f64, f64)>> {
    exec.try_map(times, |&t| -> Result<(f64, f64)> {
        Ok((t, -linalg::lambda_max(&super::delta_p(model, value.p(), gain, t)?)))
    })
}

/// `(T, |lambda_1|, |lambda_2|)` of the auxiliary matrix, largest modulus first.
pub fn eigen_sweep(chain: &ChainConstants, times: &[f64], exec: Execution) -> Result<Vec<(f64, f64, f64)>> {
    exec.try_map(times, |&t| -> Result<(f64, f64, f64)> {
        let [l1, l2] = aux_matrix(chain, t)?.eigenvalues();
        Ok((t, l1.norm(), l2.norm()))
    })
}

pub fn write_lyapunov_csv<W: Write>(rows: &[(f64, f64)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "T,neg_lambda_max_dP")?;
    for (t, v) in rows {
        writeln!(w, "{},{}", fmt_f64(*t), fmt_f64(*v))?;
    }
    Ok(())
}

pub fn write_eigen_csv<W: Write>(rows: &[(f64, f64, f64)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "T,abs_lambda1,abs_lambda2")?;
    for (t, a, b) in rows {
        writeln!(w, "{},{},{}", fmt_f64(*t), fmt_f64(*a), fmt_f64(*b))?;
    }
    Ok(())
}
