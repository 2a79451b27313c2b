//! Real-time optimizer dynamics: one iteration per sampling instant, warm
//! started from the previous iterate and evaluated at the freshly measured
//! state.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg;
use crate::nlp::{InputSelector, KktPoint, LqNlp, NlpProblem, Solution, SolveOptions};
use crate::sampling::{Sampler, SamplingRegion};

/// Iteration scheme applied once per sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// Newton-type step with the Hessian replaced by `rho * I`. On an LQ
    /// instance this is the condensed gradient iteration
    /// `u0+ = -(1/rho) ((H - rho I) u0 + G x+)`.
    FixedHessianGradient { rho: f64 },
    /// Full Newton step on the KKT system.
    ExactNewton,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::FixedHessianGradient { .. } => "fixed_hessian_gradient",
            Variant::ExactNewton => "exact_newton",
        }
    }
}

/// Norm in which the numerical error `E = ||z - z_bar(x)||` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorSpace {
    /// Only the applied input block `M_{u,z} z`.
    #[default]
    Input,
    /// The full primal-dual vector.
    Full,
}

impl ErrorSpace {
    pub fn name(&self) -> &'static str {
        match self {
            ErrorSpace::Input => "input",
            ErrorSpace::Full => "full",
        }
    }
}

/// Contraction estimate; `estimated` marks sampled (not exact) values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionEstimate {
    pub kappa_hat: f64,
    pub estimated: bool,
}

#[derive(Debug, Clone)]
pub struct RealTimeOptimizer {
    variant: Variant,
    problem: NlpProblem,
    selector: InputSelector,
    lq: Option<LqNlp>,
    error_space: ErrorSpace,
    solve_opts: SolveOptions,
}

impl RealTimeOptimizer {
    /// `rho = 1.5 * lambda_max(H)`, so that `kappa_hat = 1 - lambda_min(H)/rho < 1`.
    pub fn default_rho(lq: &LqNlp) -> f64 {
        1.5 * linalg::lambda_max(&lq.condensed.h)
    }

    pub fn for_lq(lq: &LqNlp, variant: Variant, error_space: ErrorSpace) -> Result<Self> {
        validate(&variant)?;
        Ok(Self {
            variant,
            problem: lq.problem.clone(),
            selector: lq.selector(),
            lq: Some(lq.clone()),
            error_space,
            solve_opts: SolveOptions::default(),
        })
    }

    pub fn general(problem: NlpProblem, selector: InputSelector, variant: Variant, error_space: ErrorSpace) -> Result<Self> {
        validate(&variant)?;
        if selector.offset + selector.len > problem.num_primal() {
            return Err(Error::dim("input selector", problem.num_primal(), selector.offset + selector.len));
        }
        Ok(Self {
            variant,
            problem,
            selector,
            lq: None,
            error_space,
            solve_opts: SolveOptions::default(),
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }
    pub fn problem(&self) -> &NlpProblem {
        &self.problem
    }
    pub fn selector(&self) -> InputSelector {
        self.selector
    }
    pub fn error_space(&self) -> ErrorSpace {
        self.error_space
    }
    pub fn lq(&self) -> Option<&LqNlp> {
        self.lq.as_ref()
    }

    /// Exact solution `z_bar(x)`.
    pub fn exact(&self, x: &DVector<f64>) -> Result<Solution> {
        let z0 = KktPoint::zeros(self.problem.num_primal(), self.problem.num_constraints());
        self.problem.solve_exact(x, &z0, &self.solve_opts)
    }

    /// `M_{u,z} z`.
    pub fn input(&self, z: &KktPoint) -> DVector<f64> {
        self.selector.apply(z)
    }

    /// Distance of `z` to a known exact solution in the configured error space.
    pub fn error_to(&self, z: &KktPoint, solution: &Solution) -> f64 {
        match self.error_space {
            ErrorSpace::Input => (self.selector.apply(z) - self.selector.apply(&solution.z_bar)).norm(),
            ErrorSpace::Full => z.distance(&solution.z_bar),
        }
    }

    /// `E = ||z - z_bar(x)||`.
    pub fn error(&self, z: &KktPoint, x: &DVector<f64>) -> Result<f64> {
        Ok(self.error_to(z, &self.exact(x)?))
    }

    /// One optimizer iteration `phi(x_next, z)`.
    pub fn step(&self, z: &KktPoint, x_next: &DVector<f64>) -> Result<KktPoint> {
        if !z.is_finite() {
            return Err(Error::Domain("optimizer iterate has non-finite entries".into()));
        }
        match (self.variant, &self.lq) {
            (Variant::ExactNewton, _) => self.problem.newton_step(z, x_next),
            (Variant::FixedHessianGradient { rho }, Some(lq)) => {
                let u0 = self.selector.apply(z);
                let h = &lq.condensed.h;
                let rhs = (h * &u0) - &u0 * rho + &lq.condensed.g * x_next;
                let u_next = -rhs / rho;
                lq.complete(&u_next, x_next)
            }
            (Variant::FixedHessianGradient { rho }, None) => self.regularized_newton_step(z, x_next, rho),
        }
    }

    fn regularized_newton_step(&self, z: &KktPoint, x: &DVector<f64>, rho: f64) -> Result<KktPoint> {
        let n = self.problem.num_primal();
        let r = self.problem.kkt_residual(z, x)?;
        let mut k = self.problem.kkt_matrix(z);
        k.view_mut((0, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) * rho));
        let dz = linalg::solve_vec(&k, &r, "fixed-Hessian KKT")?;
        Ok(KktPoint::from_vector(n, &(z.to_vector() - dz)))
    }

    /// `kappa_hat`.
    ///
    /// The condensed gradient iteration has the exact value
    /// `||(rho I)^-1 (H - rho I)||`. Every other combination is estimated as
    /// the largest sampled ratio `||phi(x, z) - z_bar(x)|| / ||z - z_bar(x)||`
    /// over `region`.
    pub fn contraction_factor(&self, region: Option<&SamplingRegion>, exec: Execution) -> Result<ContractionEstimate> {
        if let (Variant::FixedHessianGradient { rho }, Some(lq), ErrorSpace::Input) = (self.variant, &self.lq, self.error_space) {
            let h = &lq.condensed.h;
            let m = (h - DMatrix::identity(h.nrows(), h.ncols()) * rho) / rho;
            return Ok(ContractionEstimate {
                kappa_hat: linalg::spectral_norm(&m),
                estimated: false,
            });
        }
        let region = match region {
            Some(r) if !r.is_empty() => r,
            _ => return Err(Error::Config("contraction estimate needs a non-empty sampling region".into())),
        };
        let nx = self.problem.num_params();
        let nz = self.problem.num_kkt();
        let mut sampler = Sampler::new(region.seed);
        let samples: Vec<(DVector<f64>, DVector<f64>)> = (0..region.samples)
            .map(|_| {
                let x = sampler.in_ball(nx, region.x_radius);
                let dz = sampler.direction(nz) * sampler.uniform(0.05, 1.0) * region.z_radius;
                (x, dz)
            })
            .collect();
        let ratios = exec.try_map(&samples, |(x, dz)| -> Result<Option<f64>> {
            let sol = self.exact(x)?;
            let z = KktPoint::from_vector(self.problem.num_primal(), &(sol.z_bar.to_vector() + dz));
            let before = self.error_to(&z, &sol);
            if before < 1e-12 {
                return Ok(None);
            }
            let after = self.error_to(&self.step(&z, x)?, &sol);
            Ok(Some(after / before))
        })?;
        let kappa_hat = ratios.into_iter().flatten().fold(0.0, f64::max);
        Ok(ContractionEstimate {
            kappa_hat,
            estimated: true,
        })
    }
}

fn validate(variant: &Variant) -> Result<()> {
    if let Variant::FixedHessianGradient { rho } = variant {
        if !(*rho > 0.0) || !rho.is_finite() {
            return Err(Error::Domain(format!("rho must be positive, got {rho}")));
        }
    }
    Ok(())
}
