//! Estimators for the primary constants.

use nalgebra::{DMatrix, DVector};

use crate::coupled::CoupledSystem;
use crate::error::{Assumption, Error, Result};
use crate::exec::Execution;
use crate::linalg;
use crate::linmodel::{self, ContinuousLti, ValueMatrix};
use crate::nlp::{Condensed, Solution};
use crate::rtopt::{ErrorSpace, RealTimeOptimizer};
use crate::sampling::{Sampler, SamplingRegion};

/// Safety factor applied to sampled lower bounds on Lipschitz-type constants.
pub const SAMPLED_INFLATION: f64 = 1.1;

/// Strictly increasing list of positive sampling times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("time grid is empty".into()));
        }
        if points.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::Domain("time grid entries must be positive and finite".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("time grid must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    /// `n` points `t_i = t_min (t_max / t_min)^((i + 1) / n)`, all in `(t_min, t_max]`.
    pub fn log_spaced(t_min: f64, t_max: f64, n: usize) -> Result<Self> {
        if !(t_min > 0.0 && t_max > t_min) || n == 0 {
            return Err(Error::Domain(format!(
                "log grid needs 0 < t_min < t_max and n > 0, got ({t_min}, {t_max}, {n})"
            )));
        }
        let ratio = t_max / t_min;
        let mut points: Vec<f64> = (0..n).map(|i| t_min * ratio.powf((i + 1) as f64 / n as f64)).collect();
        points[n - 1] = t_max;
        Self::new(points)
    }

    /// `n` log-spaced points from `t_min` to `t_max`, both included.
    pub fn log_inclusive(t_min: f64, t_max: f64, n: usize) -> Result<Self> {
        if n == 1 {
            return Self::new(vec![t_max]);
        }
        if !(t_min > 0.0 && t_max > t_min) || n == 0 {
            return Err(Error::Domain(format!(
                "log grid needs 0 < t_min < t_max and n > 0, got ({t_min}, {t_max}, {n})"
            )));
        }
        let step = (t_max / t_min).ln() / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| t_min * (step * i as f64).exp()).collect();
        points[0] = t_min;
        points[n - 1] = t_max;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.points[0]
    }

    pub fn max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }
}

/// Lyapunov bounds `a1 |x|^2 <= V(x) <= a2 |x|^2` and the decrease rate `a3`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovEstimate {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    /// `(T, -lambda_max(Delta P(T)))` over the grid.
    pub curve: Vec<(f64, f64)>,
    /// Grid point attaining `a3`.
    pub worst_t: f64,
}

/// `Delta P(T) = (M'PM - P) / T` with `M = A_T + B_T K`.
pub fn delta_p(model: &ContinuousLti, p: &DMatrix<f64>, gain: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let d = linmodel::discretize_exact(model, t)?;
    let m = &d.a + &d.b * gain;
    Ok(linalg::symmetrize(&((m.transpose() * p * &m - p) / t)))
}

fn check_gain(model: &ContinuousLti, gain: &DMatrix<f64>) -> Result<()> {
    if gain.shape() != (model.input_dim(), model.state_dim()) {
        return Err(Error::dim(
            "feedback gain",
            format!("{}x{}", model.input_dim(), model.state_dim()),
            format!("{}x{}", gain.nrows(), gain.ncols()),
        ));
    }
    Ok(())
}

/// `a1, a2` from the spectrum of `P`; `a3` as the smallest `-lambda_max(Delta P(T))` on the grid.
pub fn estimate_lyapunov_constants(
    model: &ContinuousLti,
    value: &ValueMatrix,
    gain: &DMatrix<f64>,
    grid: &TimeGrid,
    exec: Execution,
) -> Result<LyapunovEstimate> {
    check_gain(model, gain)?;
    let p = value.p();
    let decrease = exec.try_map(grid.points(), |&t| -> Result<f64> {
        Ok(-linalg::lambda_max(&delta_p(model, p, gain, t)?))
    })?;
    let curve: Vec<(f64, f64)> = grid.points().iter().copied().zip(decrease).collect();
    let (worst_t, a3) = curve
        .iter()
        .copied()
        .fold((f64::NAN, f64::INFINITY), |acc, (t, v)| if v < acc.1 { (t, v) } else { acc });
    if !(a3 > 0.0) {
        return Err(Error::cert(
            Assumption::LyapunovDecrease,
            format!("Delta P(T) is not negative definite at T = {worst_t} (-lambda_max = {a3})"),
        ));
    }
    Ok(LyapunovEstimate {
        a1: value.lambda_min(),
        a2: value.lambda_max(),
        a3,
        curve,
        worst_t,
    })
}

/// `mu = 2 lambda_max(H)`.
pub fn growth_twice_hessian(h: &DMatrix<f64>) -> f64 {
    2.0 * linalg::lambda_max(h)
}

/// Smallest `mu` with `V(A_T x + B_T (K x + d)) <= (1 - T a_bar) V(x) + T mu |d|^2`
/// for every `x, d` and every grid `T`.
///
/// Per `T` this is `lambda_max(B'PB + B'PM X^-1 M'PB) / T` with
/// `X = (1 - T a_bar) P - M'PM`, which must be positive definite.
pub fn growth_exact_lq(
    model: &ContinuousLti,
    value: &ValueMatrix,
    gain: &DMatrix<f64>,
    a_bar: f64,
    grid: &TimeGrid,
    exec: Execution,
) -> Result<f64> {
    check_gain(model, gain)?;
    let p = value.p();
    let per_t = exec.try_map(grid.points(), |&t| -> Result<f64> {
        let d = linmodel::discretize_exact(model, t)?;
        let m = &d.a + &d.b * gain;
        let x = linalg::symmetrize(&(p * (1.0 - t * a_bar) - m.transpose() * p * &m));
        if !(linalg::lambda_min(&x) > 0.0) {
            return Err(Error::cert(
                Assumption::SecondOrderGrowth,
                format!("nominal decrease at rate a_bar = {a_bar} fails at T = {t}"),
            ));
        }
        let bpm = d.b.transpose() * p * &m;
        let coupling = &bpm * linalg::solve(&x, &bpm.transpose(), "growth Schur complement")?;
        let total = linalg::symmetrize(&(d.b.transpose() * p * &d.b + coupling));
        Ok(linalg::lambda_max(&total) / t)
    })?;
    Ok(per_t.into_iter().fold(0.0, f64::max))
}

/// Sampling setup for the general growth estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthSampling {
    pub samples: usize,
    pub x_radius: f64,
    /// Radius of the input perturbation `u - u_bar(x)`.
    pub u_radius: f64,
    pub seed: u64,
}

/// Sampled `mu` for a general plant and NLP, inflated by [`SAMPLED_INFLATION`].
///
/// Each sample draws `x`, a grid time `T` and a perturbation `d`, and records
/// `(V(psi_T(x, u_bar + d)) - (1 - T a_bar) V(x)) / (T |d|^2)`.
pub fn estimate_second_order_growth_sampled(
    system: &CoupledSystem,
    a_bar: f64,
    grid: &TimeGrid,
    sampling: &GrowthSampling,
    exec: Execution,
) -> Result<f64> {
    if sampling.samples == 0 || !(sampling.x_radius > 0.0) || !(sampling.u_radius >= 0.0) {
        return Err(Error::Config("growth sampling needs samples > 0 and valid radii".into()));
    }
    let nx = system.plant.state_dim();
    let nu = system.plant.input_dim();
    let mut sampler = Sampler::new(sampling.seed);
    let draws: Vec<(f64, DVector<f64>, DVector<f64>)> = (0..sampling.samples)
        .map(|i| {
            let t = grid.points()[i % grid.len()];
            let x = sampler.in_ball(nx, sampling.x_radius);
            let d = if sampling.u_radius > 0.0 {
                sampler.direction(nu) * sampler.uniform(0.05, 1.0) * sampling.u_radius
            } else {
                DVector::zeros(nu)
            };
            (t, x, d)
        })
        .collect();
    let problem = system.optimizer.problem();
    let required = exec.try_map(&draws, |(t, x, d)| -> Result<Option<f64>> {
        let sol = system.optimizer.exact(x)?;
        let u = system.optimizer.input(&sol.z_bar) + d;
        let next = system.plant.sampled(*t)?.step(x, &u)?;
        let excess = problem.value_function(&next)? - (1.0 - t * a_bar) * sol.value;
        let dd = d.norm_squared();
        if dd == 0.0 {
            if excess > 1e-12 * (1.0 + sol.value) {
                return Err(Error::cert(
                    Assumption::SecondOrderGrowth,
                    format!("nominal decrease fails at T = {t} without any input perturbation"),
                ));
            }
            return Ok(None);
        }
        let mu = excess / (t * dd);
        if !mu.is_finite() {
            return Err(Error::Estimation("non-finite growth ratio".into()));
        }
        Ok(Some(mu))
    })?;
    Ok(required.into_iter().flatten().fold(0.0, f64::max) * SAMPLED_INFLATION)
}

/// `sigma = ||H^-1 G||`, the Lipschitz constant of `u0_bar(x)`.
pub fn sensitivity_lq(condensed: &Condensed) -> Result<f64> {
    Ok(linalg::spectral_norm(&condensed.gain()?))
}

fn solution_distance(opt: &RealTimeOptimizer, a: &Solution, b: &Solution) -> f64 {
    match opt.error_space() {
        ErrorSpace::Input => (opt.input(&a.z_bar) - opt.input(&b.z_bar)).norm(),
        ErrorSpace::Full => a.z_bar.distance(&b.z_bar),
    }
}

/// Largest sampled `||z_bar(x'') - z_bar(x')|| / ||x'' - x'||` in the
/// optimizer's error space, inflated by [`SAMPLED_INFLATION`].
pub fn estimate_sensitivity_sampled(opt: &RealTimeOptimizer, region: &SamplingRegion, exec: Execution) -> Result<f64> {
    if region.samples == 0 || !(region.x_radius > 0.0) {
        return Err(Error::Config("sensitivity estimate needs a non-empty sampling region".into()));
    }
    let nx = opt.problem().num_params();
    let mut sampler = Sampler::new(region.seed);
    let pairs: Vec<(DVector<f64>, DVector<f64>)> = (0..region.samples)
        .map(|_| (sampler.in_ball(nx, region.x_radius), sampler.in_ball(nx, region.x_radius)))
        .collect();
    let quotients = exec.try_map(&pairs, |(x1, x2)| -> Result<Option<f64>> {
        let dx = (x2 - x1).norm();
        if dx < 1e-12 {
            return Ok(None);
        }
        Ok(Some(solution_distance(opt, &opt.exact(x1)?, &opt.exact(x2)?) / dx))
    })?;
    Ok(quotients.into_iter().flatten().fold(0.0, f64::max) * SAMPLED_INFLATION)
}

/// Bounds `||psi_T(x, u) - x|| <= T (L_psi_x ||x|| + L_psi_u ||u||)` for a linear plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateBounds {
    pub l_psi_x: f64,
    pub l_psi_u: f64,
}

/// Maxima over the grid of `||A_T - I|| / T` and `||B_T|| / T`.
pub fn estimate_state_bounds(model: &ContinuousLti, grid: &TimeGrid, exec: Execution) -> Result<StateBounds> {
    let n = model.state_dim();
    let per_t = exec.try_map(grid.points(), |&t| -> Result<(f64, f64)> {
        let d = linmodel::discretize_exact(model, t)?;
        let drift = &d.a - DMatrix::<f64>::identity(n, n);
        Ok((linalg::spectral_norm(&drift) / t, linalg::spectral_norm(&d.b) / t))
    })?;
    let (l_psi_x, l_psi_u) = per_t
        .into_iter()
        .fold((0.0f64, 0.0f64), |(a, b), (x, u)| (a.max(x), b.max(u)));
    Ok(StateBounds { l_psi_x, l_psi_u })
}
