//! TOML problem description.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! builtin = "double_integrator"   # or a, b, q, r as nested arrays
//!
//! [discretization]
//! t_d = 0.1
//! h_convention = "ocp-consistent"
//!
//! [optimizer]
//! variant = "fixed_hessian_gradient"
//! rho = 3.0
//! error_space = "input"
//!
//! [region]
//! r_z = 1.0
//! reference_state = [1.0, 0.0]
//!
//! [grid]
//! points = 40
//!
//! [sweep]
//! t_min = 1e-5
//! t_max = 0.1
//! points = 200
//!
//! [simulation]
//! x0 = [1.0, 0.0]
//! steps = 200
//!
//! [output]
//! dir = "out"
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rtnmpc::certify::{GridSpec, LqSetup, MuRule, RegionSpec};
use rtnmpc::linmodel::{ContinuousLti, DareOptions};
use rtnmpc::nlp::HConvention;
use rtnmpc::rtopt::ErrorSpace;
use rtnmpc::sampling::DEFAULT_SEED;
use rtnmpc::Execution;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub region: RegionConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HConventionName {
    #[default]
    OcpConsistent,
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub t_d: f64,
    #[serde(default)]
    pub h_convention: HConventionName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    #[default]
    FixedHessianGradient,
    ExactNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSpaceName {
    #[default]
    Input,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuRuleName {
    #[default]
    ExactLq,
    TwiceHessian,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub variant: VariantName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default)]
    pub error_space: ErrorSpaceName,
    #[serde(default)]
    pub mu_rule: MuRuleName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_bar_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    /// Upper end of the `T_star` search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_hint: Option<f64>,
    /// Largest intended initial state; sets the default `V_bar`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Initial input block; the rest of the iterate is completed from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
    /// Full primal-dual initial iterate `(y, lambda)`; overrides `u0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Sampling time; defaults to `min(T2, T_star)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

pub const DEFAULT_SWEEP_POINTS: usize = 200;
pub const DEFAULT_STEPS: usize = 200;

impl ProblemConfig {
    /// Built-in double integrator with `T_d = 0.1` and every default.
    pub fn double_integrator() -> Self {
        Self {
            seed: None,
            model: ModelConfig {
                builtin: Some("double_integrator".into()),
                ..ModelConfig::default()
            },
            discretization: DiscretizationConfig {
                t_d: 0.1,
                h_convention: HConventionName::default(),
            },
            optimizer: OptimizerConfig::default(),
            region: RegionConfig::default(),
            grid: GridConfig::default(),
            sweep: SweepConfig::default(),
            simulation: SimulationConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(self.discretization.t_d > 0.0) || !self.discretization.t_d.is_finite() {
            return bad(format!("discretization.t_d must be positive, got {}", self.discretization.t_d));
        }
        let model = self.build_model()?;
        let positive = [
            ("optimizer.rho", self.optimizer.rho),
            ("region.r_z", self.region.r_z),
            ("region.r_x", self.region.r_x),
            ("region.r_q", self.region.r_q),
            ("region.v_bar", self.region.v_bar),
            ("region.v_bar_q", self.region.v_bar_q),
            ("region.t0", self.region.t0),
            ("region.t_hint", self.region.t_hint),
            ("grid.t_min", self.grid.t_min),
            ("grid.t_max", self.grid.t_max),
            ("sweep.t_min", self.sweep.t_min),
            ("sweep.t_max", self.sweep.t_max),
            ("simulation.t", self.simulation.t),
        ];
        for (name, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return bad(format!("{name} must be positive and finite, got {v}"));
                }
            }
        }
        for (name, lo, hi) in [
            ("grid", self.grid.t_min, self.grid.t_max),
            ("sweep", self.sweep.t_min, self.sweep.t_max),
        ] {
            if let (Some(lo), Some(hi)) = (lo, hi) {
                if lo >= hi {
                    return bad(format!("{name}.t_min must be below {name}.t_max"));
                }
            }
        }
        if self.grid.points == Some(0) || self.sweep.points == Some(0) || self.optimizer.samples == Some(0) {
            return bad("grid.points, sweep.points and optimizer.samples must be positive".into());
        }
        if self.simulation.steps == Some(0) {
            return bad("simulation.steps must be positive".into());
        }
        let nx = model.state_dim();
        let nu = model.input_dim();
        for (name, v, len) in [
            ("region.reference_state", &self.region.reference_state, nx),
            ("simulation.x0", &self.simulation.x0, nx),
            ("simulation.u0", &self.simulation.u0, nu),
            ("simulation.z0", &self.simulation.z0, 4 * nx + nu),
        ] {
            if let Some(v) = v {
                if v.len() != len {
                    return bad(format!("{name} has length {}, expected {len}", v.len()));
                }
                if v.iter().any(|e| !e.is_finite()) {
                    return bad(format!("{name} has non-finite entries"));
                }
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ContinuousLti, CliError> {
        let m = &self.model;
        let explicit = [&m.a, &m.b, &m.q, &m.r];
        match (&m.builtin, explicit.iter().all(|v| v.is_none())) {
            (Some(name), true) => match name.as_str() {
                "double_integrator" => Ok(ContinuousLti::double_integrator()),
                other => Err(CliError::Config(format!("unknown builtin model '{other}'"))),
            },
            (Some(_), false) => Err(CliError::Config("model: give either builtin or matrices, not both".into())),
            (None, _) => {
                let get = |name: &str, v: &Option<Vec<Vec<f64>>>| -> Result<DMatrix<f64>, CliError> {
                    let rows = v
                        .as_ref()
                        .ok_or_else(|| CliError::Config(format!("model.{name} is missing")))?;
                    matrix(name, rows)
                };
                ContinuousLti::new(get("a", &m.a)?, get("b", &m.b)?, get("q", &m.q)?, get("r", &m.r)?)
                    .map_err(|e| CliError::Config(format!("model: {e}")))
            }
        }
    }

    /// Certification setup with `seed` and `rho` overrides applied.
    pub fn setup(&self, seed: Option<u64>, rho: Option<f64>, exec: Execution) -> Result<LqSetup, CliError> {
        let model = self.build_model()?;
        let defaults = RegionSpec::default();
        let reference_state = match &self.region.reference_state {
            Some(v) => DVector::from_vec(v.clone()),
            None if model.state_dim() == defaults.reference_state.len() => defaults.reference_state.clone(),
            None => {
                let mut v = DVector::zeros(model.state_dim());
                v[0] = 1.0;
                v
            }
        };
        if let Some(rho) = rho {
            if !(rho > 0.0) || !rho.is_finite() {
                return Err(CliError::Config(format!("--rho must be positive, got {rho}")));
            }
        }
        Ok(LqSetup {
            model,
            t_d: self.discretization.t_d,
            convention: match self.discretization.h_convention {
                HConventionName::OcpConsistent => HConvention::OcpConsistent,
                HConventionName::Literal => HConvention::Literal,
            },
            rho: rho.or(self.optimizer.rho),
            exact_newton: self.optimizer.variant == VariantName::ExactNewton,
            error_space: match self.optimizer.error_space {
                ErrorSpaceName::Input => ErrorSpace::Input,
                ErrorSpaceName::Full => ErrorSpace::Full,
            },
            mu_rule: match self.optimizer.mu_rule {
                MuRuleName::ExactLq => MuRule::ExactLq,
                MuRuleName::TwiceHessian => MuRule::TwiceHessian,
            },
            region: RegionSpec {
                r_z: self.region.r_z.unwrap_or(defaults.r_z),
                r_x: self.region.r_x.unwrap_or(defaults.r_x),
                r_q: self.region.r_q.unwrap_or(defaults.r_q),
                v_bar: self.region.v_bar,
                v_bar_q: self.region.v_bar_q,
                t0: self.region.t0,
                reference_state,
            },
            grid: GridSpec {
                points: self.grid.points.unwrap_or(GridSpec::default().points),
                t_min: self.grid.t_min,
                t_max: self.grid.t_max,
            },
            t_hint: self.region.t_hint,
            samples: self.optimizer.samples.unwrap_or(200),
            seed: seed.or(self.seed).unwrap_or(DEFAULT_SEED),
            dare: DareOptions::default(),
            exec,
        })
    }

    /// `(t_min, t_max, points)` of the sweep; defaults to `T_d 1e-4 .. T_d`.
    pub fn sweep_range(&self) -> (f64, f64, usize) {
        let t_max = self.sweep.t_max.unwrap_or(self.discretization.t_d);
        let t_min = self.sweep.t_min.unwrap_or(t_max * 1e-4);
        (t_min, t_max, self.sweep.points.unwrap_or(DEFAULT_SWEEP_POINTS))
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!("model.{name} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
