//! Seeded sampling of working-region points.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const DEFAULT_SEED: u64 = 0x5eed_2019;

/// Region used by sampled estimators: states within `x_radius` of the origin
/// and iterates within `z_radius` of the exact solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingRegion {
    pub x_radius: f64,
    pub z_radius: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SamplingRegion {
    fn default() -> Self {
        Self {
            x_radius: 1.0,
            z_radius: 1.0,
            samples: 200,
            seed: DEFAULT_SEED,
        }
    }
}

impl SamplingRegion {
    pub fn is_empty(&self) -> bool {
        self.samples == 0 || !(self.x_radius > 0.0) || !(self.z_radius > 0.0)
    }
}

/// Deterministic generator; the same seed always yields the same stream.
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    /// Uniform direction on the unit sphere.
    pub fn direction(&mut self, dim: usize) -> DVector<f64> {
        loop {
            let v = DVector::from_iterator(dim, (0..dim).map(|_| self.rng.sample::<f64, _>(StandardNormal)));
            let n = v.norm();
            if n > 1e-12 {
                return v / n;
            }
        }
    }

    /// Uniform point in the closed ball of the given radius.
    pub fn in_ball(&mut self, dim: usize, radius: f64) -> DVector<f64> {
        if dim == 0 {
            return DVector::zeros(0);
        }
        let d = self.direction(dim);
        let r = radius * self.rng.random::<f64>().powf(1.0 / dim as f64);
        d * r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_streams_repeat() {
        let mut a = Sampler::new(7);
        let mut b = Sampler::new(7);
        for _ in 0..10 {
            assert_eq!(a.in_ball(3, 2.0), b.in_ball(3, 2.0));
        }
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut s = Sampler::new(1);
        for _ in 0..500 {
            assert!(s.in_ball(4, 0.5).norm() <= 0.5 + 1e-15);
        }
    }
}
