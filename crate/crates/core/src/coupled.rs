//! System-optimizer interconnection.
//!
//! Each sampling period first advances the plant under the current
//! approximate input `u = M_{u,z} z` and then performs one optimizer
//! iteration at the new state:
//!
//! ```text
//! x+ = psi(T; x, M_{u,z} z)
//! z+ = phi(x+, z)
//! ```

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linmodel::{self, ContinuousLti, DiscreteLti};
use crate::nlp::KktPoint;
use crate::rtopt::RealTimeOptimizer;

/// Right-hand side `x' = f(x, u)` of a nonlinear plant.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
}

/// Plant model used by [`system_step`].
#[derive(Clone)]
pub enum Plant {
    Linear(ContinuousLti),
    /// Integrated with classical RK4; the substep never exceeds `max_substep`.
    Nonlinear { dynamics: Arc<dyn Dynamics>, max_substep: f64 },
}

impl std::fmt::Debug for Plant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Plant::Linear(m) => f.debug_tuple("Linear").field(m).finish(),
            Plant::Nonlinear { max_substep, .. } => f.debug_struct("Nonlinear").field("max_substep", max_substep).finish(),
        }
    }
}

pub const DEFAULT_MAX_SUBSTEP: f64 = 1e-3;

impl Plant {
    pub fn nonlinear(dynamics: Arc<dyn Dynamics>) -> Self {
        Plant::Nonlinear {
            dynamics,
            max_substep: DEFAULT_MAX_SUBSTEP,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Plant::Linear(m) => m.state_dim(),
            Plant::Nonlinear { dynamics, .. } => dynamics.state_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Plant::Linear(m) => m.input_dim(),
            Plant::Nonlinear { dynamics, .. } => dynamics.input_dim(),
        }
    }

    /// Fixes the sampling time; LTI plants are discretized once here.
    pub fn sampled(&self, t: f64) -> Result<SampledPlant<'_>> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("sampling time must be positive, got {t}")));
        }
        Ok(match self {
            Plant::Linear(m) => SampledPlant::Linear(linmodel::discretize_exact(m, t)?),
            Plant::Nonlinear { dynamics, max_substep } => {
                let steps = (t / max_substep).ceil().max(1.0) as usize;
                SampledPlant::Nonlinear {
                    dynamics: dynamics.as_ref(),
                    h: t / steps as f64,
                    steps,
                }
            }
        })
    }
}

/// Plant map `x -> psi(T; x, u)` for a fixed `T`.
pub enum SampledPlant<'a> {
    Linear(DiscreteLti),
    Nonlinear { dynamics: &'a dyn Dynamics, h: f64, steps: usize },
}

impl SampledPlant<'_> {
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            SampledPlant::Linear(d) => {
                if x.len() != d.a.nrows() {
                    return Err(Error::dim("state", d.a.nrows(), x.len()));
                }
                if u.len() != d.b.ncols() {
                    return Err(Error::dim("input", d.b.ncols(), u.len()));
                }
                let next = &d.a * x + &d.b * u;
                if next.iter().all(|v| v.is_finite()) {
                    Ok(next)
                } else {
                    Err(Error::BlowUp { step: 1 })
                }
            }
            SampledPlant::Nonlinear { dynamics, h, steps } => {
                if x.len() != dynamics.state_dim() {
                    return Err(Error::dim("state", dynamics.state_dim(), x.len()));
                }
                if u.len() != dynamics.input_dim() {
                    return Err(Error::dim("input", dynamics.input_dim(), u.len()));
                }
                let mut x = x.clone();
                for step in 1..=*steps {
                    let k1 = dynamics.rhs(&x, u);
                    let k2 = dynamics.rhs(&(&x + &k1 * (h / 2.0)), u);
                    let k3 = dynamics.rhs(&(&x + &k2 * (h / 2.0)), u);
                    let k4 = dynamics.rhs(&(&x + &k3 * *h), u);
                    x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                    if !x.iter().all(|v| v.is_finite()) {
                        return Err(Error::BlowUp { step });
                    }
                }
                Ok(x)
            }
        }
    }
}

/// `x+ = psi(T; x, u)` with `u` held constant over `[0, T]`.
pub fn system_step(plant: &Plant, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    plant.sampled(t)?.step(x, u)
}

/// Plant state and optimizer iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub x: DVector<f64>,
    pub z: KktPoint,
}

/// One recorded sampling instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub k: usize,
    pub t: f64,
    pub x: DVector<f64>,
    pub z: KktPoint,
    pub u: DVector<f64>,
    /// `V(x_k)`.
    pub value: f64,
    /// `E_k = ||z_k - z_bar(x_k)||`.
    pub error: f64,
}

impl Sample {
    pub fn sqrt_value(&self) -> f64 {
        self.value.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sampling_time: f64,
    pub samples: Vec<Sample>,
    /// Index of the step at which the rollout blew up, if it did.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn is_diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// Writes `k,t,x1..,u1..,V,E,sqrtV` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let (nx, nu) = self.samples.first().map(|s| (s.x.len(), s.u.len())).unwrap_or((0, 0));
        let mut header = vec!["k".to_string(), "t".to_string()];
        header.extend((1..=nx).map(|i| format!("x{i}")));
        header.extend((1..=nu).map(|i| format!("u{i}")));
        header.extend(["V", "E", "sqrtV"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row = vec![s.k.to_string(), fmt_f64(s.t)];
            row.extend(s.x.iter().map(|v| fmt_f64(*v)));
            row.extend(s.u.iter().map(|v| fmt_f64(*v)));
            row.extend([fmt_f64(s.value), fmt_f64(s.error), fmt_f64(s.sqrt_value())]);
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Rollouts stop once `||x||`, `||u||` or `E` exceeds this magnitude.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Plant plus real-time optimizer.
#[derive(Debug, Clone)]
pub struct CoupledSystem {
    pub plant: Plant,
    pub optimizer: RealTimeOptimizer,
}

impl CoupledSystem {
    pub fn new(plant: Plant, optimizer: RealTimeOptimizer) -> Result<Self> {
        let p = optimizer.problem();
        if p.num_params() != plant.state_dim() {
            return Err(Error::dim("NLP parameter vs plant state", plant.state_dim(), p.num_params()));
        }
        if optimizer.selector().len != plant.input_dim() {
            return Err(Error::dim("input selector vs plant input", plant.input_dim(), optimizer.selector().len));
        }
        Ok(Self { plant, optimizer })
    }

    /// Error coordinate `xi = (x, z - z_bar(x))`, stacked.
    pub fn error_coordinates(&self, state: &CoupledState) -> Result<DVector<f64>> {
        let sol = self.optimizer.exact(&state.x)?;
        let dz = state.z.to_vector() - sol.z_bar.to_vector();
        let mut xi = DVector::zeros(state.x.len() + dz.len());
        xi.rows_mut(0, state.x.len()).copy_from(&state.x);
        xi.rows_mut(state.x.len(), dz.len()).copy_from(&dz);
        Ok(xi)
    }

    /// One step of the coupled dynamics at sampling time `t`.
    pub fn coupled_step(&self, state: &CoupledState, t: f64) -> Result<CoupledState> {
        let sampled = self.plant.sampled(t)?;
        self.step_with(&sampled, state)
    }

    fn step_with(&self, sampled: &SampledPlant<'_>, state: &CoupledState) -> Result<CoupledState> {
        let u = self.optimizer.input(&state.z);
        let x = sampled.step(&state.x, &u)?;
        let z = self.optimizer.step(&state.z, &x)?;
        Ok(CoupledState { x, z })
    }

    fn record(&self, k: usize, t: f64, state: &CoupledState) -> Result<Sample> {
        let sol = self.optimizer.exact(&state.x)?;
        Ok(Sample {
            k,
            t,
            x: state.x.clone(),
            u: self.optimizer.input(&state.z),
            z: state.z.clone(),
            value: sol.value,
            error: self.optimizer.error_to(&state.z, &sol),
        })
    }

    /// `steps` applications of the coupled map; returns `steps + 1` samples
    /// unless the rollout diverges, in which case it is truncated and marked.
    pub fn rollout(&self, initial: &CoupledState, t: f64, steps: usize) -> Result<Trajectory> {
        if steps == 0 {
            return Err(Error::Domain("rollout needs at least one step".into()));
        }
        let sampled = self.plant.sampled(t)?;
        let mut samples = Vec::with_capacity(steps + 1);
        let mut state = initial.clone();
        samples.push(self.record(0, 0.0, &state)?);
        for k in 1..=steps {
            let next = match self.step_with(&sampled, &state) {
                Ok(s) => s,
                Err(Error::BlowUp { .. }) => {
                    return Ok(Trajectory {
                        sampling_time: t,
                        samples,
                        diverged_at: Some(k),
                    })
                }
                Err(e) => return Err(e),
            };
            let u_norm = self.optimizer.input(&next.z).norm();
            if !(next.x.norm() <= DIVERGENCE_THRESHOLD && u_norm <= DIVERGENCE_THRESHOLD) {
                return Ok(Trajectory {
                    sampling_time: t,
                    samples,
                    diverged_at: Some(k),
                });
            }
            let sample = self.record(k, k as f64 * t, &next)?;
            let blown = !(sample.error <= DIVERGENCE_THRESHOLD);
            samples.push(sample);
            if blown {
                return Ok(Trajectory {
                    sampling_time: t,
                    samples,
                    diverged_at: Some(k),
                });
            }
            state = next;
        }
        Ok(Trajectory {
            sampling_time: t,
            samples,
            diverged_at: None,
        })
    }
}
