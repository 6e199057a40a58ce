//! Complex Ornstein-Uhlenbeck noise with correlation
//! `alpha(tau) = (Gamma*gamma / 2) exp(-gamma |tau|)`, and the shifted noise
//! `z~*_t = z*_t + y_t` used by the normalized trajectory equation.
//!
//! Real and imaginary parts are independent stationary OU processes with
//! variance `alpha(0) / 2` each, so that `M[z_t z*_s] = alpha(t - s)` and
//! `M[z_t z_s] = 0`. Paths are generated with the exact AR(1) update, not an
//! Euler-Maruyama step, so their statistics do not depend on `dt`.

use alloc::vec::Vec;

use num_complex::Complex64;
// Unused when another crate in the build links std.
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Stream tag for paths obtained by refinement; the low bits keep the
/// trajectory index and bits 56..62 the refinement level.
const REFINE_TAG: u64 = 1 << 63;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("gamma must be positive when the coupling is nonzero (got {0})")]
    Gamma(f64),
    #[error("coupling product Gamma*gamma must be non-negative (got {0})")]
    Coupling(f64),
    #[error("time step must be positive (got {0})")]
    TimeStep(f64),
    #[error("at least one step is required")]
    NoSteps,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Memory rate `gamma`; `1/gamma` is the bath correlation time.
    pub gamma: f64,
    /// Coupling product `Gamma*gamma`, so that `alpha(0) = coupling / 2`.
    pub coupling: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.coupling >= 0.0) || !self.coupling.is_finite() {
            return Err(NoiseError::Coupling(self.coupling));
        }
        let gamma_ok = self.gamma.is_finite()
            && (self.gamma > 0.0 || (self.coupling == 0.0 && self.gamma >= 0.0));
        if !gamma_ok {
            return Err(NoiseError::Gamma(self.gamma));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(NoiseError::TimeStep(self.dt));
        }
        if self.n_steps == 0 {
            return Err(NoiseError::NoSteps);
        }
        Ok(())
    }

    #[inline]
    pub fn alpha0(&self) -> f64 {
        0.5 * self.coupling
    }

    /// Bath correlation function at lag `tau`.
    pub fn correlation(&self, tau: f64) -> Complex64 {
        if self.coupling == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::new(self.alpha0() * (-self.gamma * tau.abs()).exp(), 0.0)
    }

    /// Path for stream 0 of `seed`.
    pub fn sample_path(&self) -> NoisePath {
        self.sample_stream(0)
    }

    /// Path for one trajectory index. Each index owns an independent ChaCha
    /// stream of the master seed, so paths do not depend on execution order.
    pub fn sample_stream(&self, stream: u64) -> NoisePath {
        let mut rng = stream_rng(self.seed, stream);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> NoisePath {
        let n = self.n_steps + 1;
        let mut z = Vec::with_capacity(n);
        if self.coupling == 0.0 {
            z.resize(n, Complex64::new(0.0, 0.0));
            return NoisePath::from_z_star(self.dt, z);
        }
        let sd = (0.5 * self.alpha0()).sqrt();
        let decay = (-self.gamma * self.dt).exp();
        let kick = sd * (1.0 - decay * decay).sqrt();
        let mut cur = Complex64::new(sd * normal(rng), sd * normal(rng));
        z.push(cur);
        for _ in 1..n {
            cur = cur * decay + Complex64::new(kick * normal(rng), kick * normal(rng));
            z.push(cur);
        }
        NoisePath::from_z_star(self.dt, z)
    }

    /// Shift update over one step of this path's `dt`.
    pub fn advance_shift(&self, y: Complex64, expect_l_dagger: Complex64) -> Complex64 {
        advance_shift(y, expect_l_dagger, self)
    }
}

/// One explicit Euler step of `dy/dt = -gamma y + alpha*(0) <L^dagger>`.
pub fn advance_shift(y: Complex64, expect_l_dagger: Complex64, params: &NoiseParams) -> Complex64 {
    let alpha0_conj = params.correlation(0.0).conj();
    y + (y * (-params.gamma) + alpha0_conj * expect_l_dagger) * params.dt
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream used to refine the path of trajectory `index` to level `level`
/// (level 1 halves the step once).
pub fn refinement_stream(index: u64, level: u8) -> u64 {
    assert!(
        index < (1 << 56),
        "trajectory index too large for refinement stream"
    );
    REFINE_TAG | (u64::from(level & 0x7f) << 56) | index
}

#[inline]
fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Sampled noise `z*_t` on a uniform grid together with the shift `y_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    dt: f64,
    z_star: Vec<Complex64>,
    y: Vec<Complex64>,
    z_tilde_star: Vec<Complex64>,
}

impl NoisePath {
    pub fn from_z_star(dt: f64, z_star: Vec<Complex64>) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        let y = alloc::vec![zero; z_star.len()];
        let z_tilde_star = z_star.clone();
        Self {
            dt,
            z_star,
            y,
            z_tilde_star,
        }
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of grid points (steps + 1).
    #[inline]
    pub fn len(&self) -> usize {
        self.z_star.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.z_star.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn z_star(&self) -> &[Complex64] {
        &self.z_star
    }

    pub fn y(&self) -> &[Complex64] {
        &self.y
    }

    pub fn z_tilde_star(&self) -> &[Complex64] {
        &self.z_tilde_star
    }

    /// Records the shift at grid point `i` and updates `z~*` there.
    pub fn set_shift(&mut self, i: usize, y: Complex64) {
        self.y[i] = y;
        self.z_tilde_star[i] = self.z_star[i] + y;
    }

    /// Clears the shift so the path can be reused by another trajectory.
    pub fn reset_shift(&mut self) {
        let zero = Complex64::new(0.0, 0.0);
        self.y.iter_mut().for_each(|v| *v = zero);
        self.z_tilde_star.copy_from_slice(&self.z_star);
    }

    /// Path on a grid with half the step that agrees with `self` at every
    /// coarse grid point. Midpoints are drawn from the OU bridge between
    /// the neighbouring coarse values, so the refined path has exactly the
    /// stationary OU law at the finer step.
    pub fn refine<R: Rng + ?Sized>(&self, params: &NoiseParams, rng: &mut R) -> NoisePath {
        let half = 0.5 * self.dt;
        let mut z = Vec::with_capacity(2 * self.len() - 1);
        if params.coupling == 0.0 {
            z.resize(2 * self.len() - 1, Complex64::new(0.0, 0.0));
            return NoisePath::from_z_star(half, z);
        }
        let var = 0.5 * params.alpha0();
        let rho = (-params.gamma * half).exp();
        let step_var = var * (1.0 - rho * rho);
        let bridge_mean = rho / (1.0 + rho * rho);
        let bridge_sd = (step_var / (1.0 + rho * rho)).sqrt();
        for w in self.z_star.windows(2) {
            z.push(w[0]);
            let mean = (w[0] + w[1]) * bridge_mean;
            z.push(mean + Complex64::new(bridge_sd * normal(rng), bridge_sd * normal(rng)));
        }
        if let Some(last) = self.z_star.last() {
            z.push(*last);
        }
        NoisePath::from_z_star(half, z)
    }

    /// Mean of `|z~*_t|` over the first `points` grid points.
    pub fn mean_abs_shifted(&self, points: usize) -> f64 {
        let n = points.min(self.len());
        if n == 0 {
            return 0.0;
        }
        self.z_tilde_star[..n].iter().map(|z| z.norm()).sum::<f64>() / n as f64
    }
}
