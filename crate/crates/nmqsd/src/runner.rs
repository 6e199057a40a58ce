//! Parallel ensemble execution.
//!
//! Trajectories are computed in fixed blocks of consecutive indices. Within
//! a block the work is spread over the thread pool, and the results are fed
//! to the accumulator in index order, so the ensemble sums do not depend on
//! the number of threads.

use std::ops::Range;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nmqsd_core::noise::{refinement_stream, stream_rng};
use nmqsd_core::{
    EnsembleAccumulator, EnsembleError, EnsembleResult, HierarchyMode, NoiseParams,
    TrajectoryError, TrajectoryResult, TrajectorySolver,
};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

const BLOCK: u64 = 64;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// A finished ensemble together with what produced it.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub config: RunConfig,
    pub result: EnsembleResult,
    pub wall_time: Duration,
    pub errors: Option<ErrorEstimate>,
}

/// Error budget of an ensemble mean, each part time-averaged over the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    /// Sampling error, the mean standard error.
    pub e_nz: f64,
    /// Mean deviation from the same ensemble at half the step.
    pub e_dt: f64,
    /// Mean deviation from the same ensemble at a reduced cap.
    pub e_n: f64,
    /// Cap used for `e_n`.
    pub reduced_n_max: usize,
}

impl ErrorEstimate {
    pub fn total(&self) -> f64 {
        self.e_nz + self.e_dt + self.e_n
    }
}

/// Builds the solver for `cfg`.
pub fn solver_for(cfg: &RunConfig) -> Result<TrajectorySolver, RunError> {
    cfg.validate()?;
    Ok(TrajectorySolver::new(
        cfg.model(),
        cfg.noise(),
        cfg.hierarchy(),
        cfg.step(),
    )?)
}

/// Output grid of `solver` for paths of `n_steps` steps of size `dt`.
pub fn output_times(solver: &TrajectorySolver, n_steps: usize, dt: f64) -> Vec<f64> {
    let stride = solver.step_config().output_stride;
    (0..solver.output_len(n_steps))
        .map(|k| (k * stride) as f64 * dt)
        .collect()
}

pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool, RunError> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()?)
}

/// Accumulates `traj(i)` for every `i` in `indices`, in index order.
pub fn accumulate<F>(
    pool: &rayon::ThreadPool,
    mut acc: EnsembleAccumulator,
    indices: Range<u64>,
    traj: F,
) -> Result<EnsembleAccumulator, RunError>
where
    F: Fn(u64) -> TrajectoryResult + Sync,
{
    let mut start = indices.start;
    while start < indices.end {
        let end = (start + BLOCK).min(indices.end);
        let block: Vec<TrajectoryResult> =
            pool.install(|| (start..end).into_par_iter().map(&traj).collect());
        for r in &block {
            acc.push(r)?;
        }
        start = end;
    }
    Ok(acc)
}

fn empty_accumulator(solver: &TrajectorySolver, n_steps: usize, dt: f64) -> EnsembleAccumulator {
    EnsembleAccumulator::new(
        output_times(solver, n_steps, dt),
        solver.model().dim(),
        solver.step_config().n_report,
        solver.hierarchy().n_max,
    )
}

/// Sums over trajectories `indices` of the ensemble described by `cfg`.
/// Accumulators of consecutive ranges can be merged, which lets a run be
/// split up or extended without changing its result.
pub fn accumulate_range(
    cfg: &RunConfig,
    indices: Range<u64>,
    pool: &rayon::ThreadPool,
) -> Result<EnsembleAccumulator, RunError> {
    let solver = solver_for(cfg)?;
    let acc = empty_accumulator(&solver, cfg.n_steps(), cfg.dt);
    accumulate(pool, acc, indices, |i| solver.run(i))
}

/// Sums over the same trajectories as [`accumulate_range`], integrated at
/// half the step. The coarse noise path is kept and refined with bridge
/// samples, and the output grid is unchanged.
pub fn accumulate_range_refined(
    cfg: &RunConfig,
    indices: Range<u64>,
    pool: &rayon::ThreadPool,
) -> Result<EnsembleAccumulator, RunError> {
    let coarse = solver_for(cfg)?;
    let noise = *coarse.noise();
    let fine_noise = NoiseParams {
        dt: 0.5 * noise.dt,
        n_steps: 2 * noise.n_steps,
        ..noise
    };
    let mut step = *coarse.step_config();
    step.output_stride *= 2;
    let fine = TrajectorySolver::with_table(
        coarse.model().clone(),
        fine_noise,
        *coarse.hierarchy(),
        step,
        Arc::clone(coarse.table()),
    )?;
    let acc = empty_accumulator(&coarse, cfg.n_steps(), cfg.dt);
    accumulate(pool, acc, indices, |i| {
        let path = noise.sample_stream(i);
        let mut rng = stream_rng(noise.seed, refinement_stream(i, 1));
        let mut refined = path.refine(&noise, &mut rng);
        fine.run_with_path(&mut refined)
    })
}

/// Runs the full ensemble of `cfg` on `cfg.threads` threads.
pub fn run_ensemble(cfg: &RunConfig) -> Result<EnsembleRun, RunError> {
    let pool = thread_pool(cfg.threads)?;
    let start = Instant::now();
    let acc = accumulate_range(cfg, 0..cfg.n_traj, &pool)?;
    let result = acc.finish()?;
    let errors = if cfg.estimate_errors {
        Some(estimate_errors(cfg, &result, &pool)?)
    } else {
        None
    };
    Ok(EnsembleRun {
        config: cfg.clone(),
        result,
        wall_time: start.elapsed(),
        errors,
    })
}

/// Cap used for the truncation error estimate.
pub fn reduced_cap(n_max: usize) -> usize {
    (n_max * 7).div_ceil(10)
}

/// Time-averaged absolute difference of two ensemble means on one grid.
pub fn mean_abs_difference(a: &EnsembleResult, b: &EnsembleResult) -> f64 {
    let n = a.mean_sigma_z.len().min(b.mean_sigma_z.len());
    if n == 0 {
        return 0.0;
    }
    a.mean_sigma_z
        .iter()
        .zip(&b.mean_sigma_z)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n as f64
}

/// Sampling, time-step and truncation errors of `result`, the ensemble of
/// `cfg`. The latter two rerun the same noise realizations at half the step
/// and at a reduced cap.
pub fn estimate_errors(
    cfg: &RunConfig,
    result: &EnsembleResult,
    pool: &rayon::ThreadPool,
) -> Result<ErrorEstimate, RunError> {
    let e_nz = result.time_averaged_stderr();
    let refined = accumulate_range_refined(cfg, 0..cfg.n_traj, pool)?.finish()?;
    let e_dt = mean_abs_difference(result, &refined);
    let reduced_n_max = reduced_cap(cfg.n_max);
    let e_n = if cfg.hierarchy().mode == HierarchyMode::BarOZero || reduced_n_max == cfg.n_max {
        0.0
    } else {
        let reduced = RunConfig {
            n_max: reduced_n_max,
            ..cfg.clone()
        };
        let other = accumulate_range(&reduced, 0..cfg.n_traj, pool)?.finish()?;
        mean_abs_difference(result, &other)
    };
    Ok(ErrorEstimate {
        e_nz,
        e_dt,
        e_n,
        reduced_n_max,
    })
}
