//! Reduction of trajectory results into ensemble statistics.
//!
//! The accumulator is fed in trajectory-index order by whoever runs the
//! trajectories, which keeps floating-point sums independent of how the
//! work was scheduled. Rejected trajectories are counted and otherwise
//! ignored.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
// Unused when another crate in the build links std.
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::operator::Operator;
use crate::trajectory::TrajectoryResult;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("all {total} trajectories were rejected")]
    AllRejected { total: u64 },
    #[error("no trajectories were accumulated")]
    Empty,
    #[error("trajectory has {got} output points, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("accumulators have different shapes")]
    Shape,
}

/// Running sums over accepted trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAccumulator {
    dim: usize,
    n_report: usize,
    n_max: usize,
    times: Vec<f64>,
    sum_w: Vec<f64>,
    sum_ww: Vec<f64>,
    sum_x: Vec<f64>,
    sum_xx: Vec<f64>,
    sum_xw: Vec<f64>,
    rho: Vec<Complex64>,
    q_norms: Vec<f64>,
    nq_counts: Vec<u64>,
    accepted: u64,
    rejected: u64,
    noise_accepted: f64,
    noise_rejected: f64,
}

impl EnsembleAccumulator {
    /// `times` is the output grid shared by all trajectories.
    pub fn new(times: Vec<f64>, dim: usize, n_report: usize, n_max: usize) -> Self {
        let n = times.len();
        Self {
            dim,
            n_report,
            n_max,
            times,
            sum_w: vec![0.0; n],
            sum_ww: vec![0.0; n],
            sum_x: vec![0.0; n],
            sum_xx: vec![0.0; n],
            sum_xw: vec![0.0; n],
            rho: vec![Complex64::new(0.0, 0.0); n * dim * dim],
            q_norms: vec![0.0; n * (n_report + 1)],
            nq_counts: vec![0; n_max + 1],
            accepted: 0,
            rejected: 0,
            noise_accepted: 0.0,
            noise_rejected: 0.0,
        }
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn total(&self) -> u64 {
        self.accepted + self.rejected
    }

    pub fn push(&mut self, traj: &TrajectoryResult) -> Result<(), EnsembleError> {
        if traj.rejected {
            self.rejected += 1;
            self.noise_rejected += traj.mean_abs_noise;
            return Ok(());
        }
        let n = self.times.len();
        if traj.sigma_z.len() != n || traj.states.len() != n {
            return Err(EnsembleError::Length {
                expected: n,
                got: traj.sigma_z.len(),
            });
        }
        let d = self.dim;
        let dd = d * d;
        let nr = self.n_report + 1;
        for i in 0..n {
            let w = traj.weights[i];
            let x = traj.sigma_z[i] * w;
            self.sum_w[i] += w;
            self.sum_ww[i] += w * w;
            self.sum_x[i] += x;
            self.sum_xx[i] += x * x;
            self.sum_xw[i] += x * w;
            let amps = traj.states[i].amplitudes();
            let rho = &mut self.rho[i * dd..(i + 1) * dd];
            for r in 0..d {
                for c in 0..d {
                    rho[r * d + c] += amps[r] * amps[c].conj();
                }
            }
            let norms = &traj.q_trace_norms[i];
            for (acc, v) in self.q_norms[i * nr..(i + 1) * nr].iter_mut().zip(norms) {
                *acc += v;
            }
        }
        let slot = traj.final_n_q.min(self.n_max);
        self.nq_counts[slot] += 1;
        self.accepted += 1;
        self.noise_accepted += traj.mean_abs_noise;
        Ok(())
    }

    /// Appends the sums of `other`, which must cover later trajectory indices.
    pub fn merge(&mut self, other: &EnsembleAccumulator) -> Result<(), EnsembleError> {
        if self.dim != other.dim
            || self.n_report != other.n_report
            || self.n_max != other.n_max
            || self.times != other.times
        {
            return Err(EnsembleError::Shape);
        }
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.sum_w, &other.sum_w);
        add(&mut self.sum_ww, &other.sum_ww);
        add(&mut self.sum_x, &other.sum_x);
        add(&mut self.sum_xx, &other.sum_xx);
        add(&mut self.sum_xw, &other.sum_xw);
        add(&mut self.q_norms, &other.q_norms);
        for (x, y) in self.rho.iter_mut().zip(&other.rho) {
            *x += y;
        }
        for (x, y) in self.nq_counts.iter_mut().zip(&other.nq_counts) {
            *x += y;
        }
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.noise_accepted += other.noise_accepted;
        self.noise_rejected += other.noise_rejected;
        Ok(())
    }

    pub fn finish(&self) -> Result<EnsembleResult, EnsembleError> {
        let total = self.total();
        if total == 0 {
            return Err(EnsembleError::Empty);
        }
        if self.accepted == 0 {
            return Err(EnsembleError::AllRejected { total });
        }
        let n = self.times.len();
        let d = self.dim;
        let dd = d * d;
        let nr = self.n_report + 1;
        let count = self.accepted as f64;
        let mut mean = Vec::with_capacity(n);
        let mut stderr = Vec::with_capacity(n);
        let mut rho = Vec::with_capacity(n);
        let mut qn = Vec::with_capacity(n);
        for i in 0..n {
            let sw = self.sum_w[i];
            let r = self.sum_x[i] / sw;
            mean.push(r);
            // Ratio-estimator variance; reduces to s / sqrt(N) for unit weights.
            let resid = self.sum_xx[i] - 2.0 * r * self.sum_xw[i] + r * r * self.sum_ww[i];
            let se = if self.accepted > 1 {
                (count / (count - 1.0) * resid.max(0.0)).sqrt() / sw
            } else {
                0.0
            };
            stderr.push(se);
            let entries = self.rho[i * dd..(i + 1) * dd]
                .iter()
                .map(|z| z / sw)
                .collect();
            rho.push(Operator::from_row_major(d, entries).expect("dim^2 entries"));
            qn.push(
                self.q_norms[i * nr..(i + 1) * nr]
                    .iter()
                    .map(|v| v / count)
                    .collect(),
            );
        }
        let mean_final_n_q = self
            .nq_counts
            .iter()
            .enumerate()
            .map(|(k, &c)| k as f64 * c as f64)
            .sum::<f64>()
            / count;
        Ok(EnsembleResult {
            times: self.times.clone(),
            mean_sigma_z: mean,
            stderr,
            rho,
            mean_q_trace_norms: qn,
            nq_histogram: self.nq_counts.clone(),
            n_max: self.n_max,
            mean_final_n_q,
            accepted: self.accepted,
            rejected: self.rejected,
            rejection_rate: self.rejected as f64 / total as f64,
            mean_abs_noise_accepted: self.noise_accepted / count,
            mean_abs_noise_rejected: if self.rejected > 0 {
                Some(self.noise_rejected / self.rejected as f64)
            } else {
                None
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub mean_sigma_z: Vec<f64>,
    /// Standard error of `mean_sigma_z` over accepted trajectories.
    pub stderr: Vec<f64>,
    /// Reduced density matrix at each output time.
    pub rho: Vec<Operator>,
    /// `<||Q_0^(n)||>` indexed `[time][n]`.
    pub mean_q_trace_norms: Vec<Vec<f64>>,
    /// Final `N_Q` counts of accepted trajectories, indexed by `N_Q`.
    pub nq_histogram: Vec<u64>,
    pub n_max: usize,
    pub mean_final_n_q: f64,
    pub accepted: u64,
    pub rejected: u64,
    pub rejection_rate: f64,
    pub mean_abs_noise_accepted: f64,
    pub mean_abs_noise_rejected: Option<f64>,
}

impl EnsembleResult {
    pub fn total(&self) -> u64 {
        self.accepted + self.rejected
    }

    /// Standard error averaged over the output times.
    pub fn time_averaged_stderr(&self) -> f64 {
        self.stderr.iter().sum::<f64>() / self.stderr.len() as f64
    }

    /// Mean of `mean_sigma_z` over output times in `[t0, t1]`, with the
    /// standard error averaged over the same window.
    pub fn window_mean(&self, t0: f64, t1: f64) -> (f64, f64) {
        let tol = 1e-9;
        let mut sum = 0.0;
        let mut se = 0.0;
        let mut n = 0usize;
        for (i, &t) in self.times.iter().enumerate() {
            if t >= t0 - tol && t <= t1 + tol {
                sum += self.mean_sigma_z[i];
                se += self.stderr[i];
                n += 1;
            }
        }
        if n == 0 {
            return (f64::NAN, f64::NAN);
        }
        (sum / n as f64, se / n as f64)
    }

    /// Histogram of final `N_Q` with an exponential fit to its upper tail.
    pub fn nq_distribution(&self, include_saturated: bool) -> NqDistribution {
        nq_distribution(self, include_saturated)
    }
}

/// Least-squares fit `ln P(N_Q) = intercept - rate * N_Q` over the tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// First `N_Q` included (the mode).
    pub from: usize,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitSkipped {
    /// Fewer than 100 trajectories in the histogram domain.
    TooFewSamples,
    /// Only one occupied bin.
    SingleBin,
    /// Fewer than three occupied bins from the mode upward.
    ShortTail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NqDistribution {
    /// Counts indexed by `N_Q`, restricted to the histogram domain.
    pub counts: Vec<u64>,
    /// `counts / domain_total` (unit bin width).
    pub density: Vec<f64>,
    pub domain_total: u64,
    pub fit: Result<TailFit, FitSkipped>,
}

/// Minimum number of samples for a tail fit.
pub const MIN_FIT_SAMPLES: u64 = 100;

/// Histogram of final `N_Q`. Saturated trajectories (`N_Q = n_max`) are left
/// out unless `include_saturated` is set.
pub fn nq_distribution(result: &EnsembleResult, include_saturated: bool) -> NqDistribution {
    let mut counts = result.nq_histogram.clone();
    if !include_saturated && result.n_max > 0 {
        if let Some(last) = counts.get_mut(result.n_max) {
            *last = 0;
        }
    }
    let domain_total: u64 = counts.iter().sum();
    let density = counts
        .iter()
        .map(|&c| {
            if domain_total > 0 {
                c as f64 / domain_total as f64
            } else {
                0.0
            }
        })
        .collect::<Vec<_>>();
    let occupied = counts.iter().filter(|&&c| c > 0).count();
    let fit = if occupied <= 1 {
        Err(FitSkipped::SingleBin)
    } else if domain_total < MIN_FIT_SAMPLES {
        Err(FitSkipped::TooFewSamples)
    } else {
        fit_tail(&density)
    };
    NqDistribution {
        counts,
        density,
        domain_total,
        fit,
    }
}

fn fit_tail(density: &[f64]) -> Result<TailFit, FitSkipped> {
    let mode = density
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |best, (k, &p)| {
            if p > best.1 {
                (k, p)
            } else {
                best
            }
        })
        .0;
    let pts: Vec<(f64, f64)> = density
        .iter()
        .enumerate()
        .skip(mode)
        .filter(|(_, &p)| p > 0.0)
        .map(|(k, &p)| (k as f64, p.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(FitSkipped::ShortTail);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    Ok(TailFit {
        rate: -slope,
        intercept,
        r_squared,
        from: mode,
        points: pts.len(),
    })
}
