//! Self-checks run by `nmqsd validate`: each compares the solver with a
//! reference from [`crate::oracle`] and reports a single outcome.

use std::fmt;
use std::sync::Arc;

use nmqsd_core::hierarchy::hierarchy_rhs;
use nmqsd_core::noise::{refinement_stream, stream_rng};
use nmqsd_core::{
    Complex64, CouplingTable, HierarchyKernel, HierarchyMode, HierarchyParams, HierarchyState,
    ModelSpec, NoiseParams, NoisePath, Operator, StepConfig, TrajectorySolver, Unraveling,
};
use rand::Rng;

use crate::oracle::{low_order_rhs, noise_moments, rwa_reference, LowOrderInputs, LOW_ORDER_CASES};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn random_c<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_op<R: Rng>(rng: &mut R, scale: f64) -> Operator {
    let data = (0..4).map(|_| random_c(rng) * scale).collect();
    Operator::from_row_major(2, data).expect("four entries")
}

fn random_hermitian<R: Rng>(rng: &mut R) -> Operator {
    let a = random_op(rng, 1.0);
    let ad = a.adjoint();
    (&a + &ad).scale(Complex64::new(0.5, 0.0))
}

/// Generic hierarchy right-hand side against the written-out low-order
/// equations, on `inputs` random states. Half of the inputs use the
/// spin-boson operators, the other half random `H` and non-Hermitian `L`.
/// The active order varies so that the feed-up cut at the top is exercised.
pub fn low_order_equations(inputs: usize, seed: u64) -> CheckOutcome {
    let mut rng = stream_rng(seed, 0);
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for i in 0..inputs {
        let (h, l) = if i % 2 == 0 {
            (
                Operator::sigma_z().scale(Complex64::new(rng.random_range(0.2..2.0), 0.0)),
                Operator::sigma_x(),
            )
        } else {
            (random_hermitian(&mut rng), random_op(&mut rng, 1.0))
        };
        let alpha0 = rng.random_range(0.01..1.0);
        let gamma = rng.random_range(0.05..2.0);
        let z = random_c(&mut rng);
        let n_q = [3, 5, 6, 7, 8][i % 5];
        let mut state = HierarchyState::new(2, 8, n_q);
        for s in 0..=n_q {
            for m in 0..=s / 2 {
                state
                    .set(s - m, m, &random_op(&mut rng, 0.5))
                    .expect("inside triangle");
            }
        }
        let generic = hierarchy_rhs(&state, z, &h, &l, alpha0, gamma).expect("matching dimensions");
        let inputs = LowOrderInputs {
            h: &h,
            l: &l,
            alpha0,
            gamma,
            z,
        };
        let get = |n: usize, m: usize| state.get(n, m);
        for &(n, m) in &LOW_ORDER_CASES {
            if !state.contains(n, m) {
                continue;
            }
            let expect = low_order_rhs(n, m, &get, &inputs).expect("covered case");
            let got = &generic
                .iter()
                .find(|(key, _)| *key == (n, m))
                .expect("every active entry has a rate")
                .1;
            let diff = (got - &expect).max_abs_entry();
            let rel = diff / expect.max_abs_entry().max(1.0);
            worst = worst.max(rel);
            compared += 1;
        }
    }
    CheckOutcome {
        name: "low-order hierarchy equations",
        passed: worst <= 1e-12 && compared > 0,
        detail: format!("{compared} comparisons on {inputs} inputs, max relative error {worst:.2e} (limit 1e-12)"),
    }
}

/// Without coupling the excited state is stationary.
pub fn decoupled_limit() -> CheckOutcome {
    let noise = NoiseParams {
        gamma: 0.2,
        coupling: 0.0,
        dt: 0.02,
        n_steps: 600,
        seed: 7,
    };
    let solver = TrajectorySolver::new(
        ModelSpec::spin_boson(1.0),
        noise,
        HierarchyParams::default(),
        StepConfig::default(),
    )
    .expect("valid parameters");
    let mut worst = 0.0f64;
    for i in 0..4 {
        let r = solver.run(i);
        if r.rejected {
            worst = f64::INFINITY;
        }
        for s in &r.sigma_z {
            worst = worst.max((s - 1.0).abs());
        }
    }
    CheckOutcome {
        name: "decoupled limit",
        passed: worst <= 1e-9,
        detail: format!("max |<sigma_z> - 1| = {worst:.2e} over t <= 12 (limit 1e-9)"),
    }
}

/// Outcome of the rotating-wave comparison, kept separate so tests can
/// inspect the numbers.
#[derive(Debug, Clone, Copy)]
pub struct RwaComparison {
    /// Largest `|F_hier - F_ref|` after step extrapolation.
    pub f_error: f64,
    /// Largest `<sigma_z>` error of the linear trajectory after extrapolation.
    pub sigma_z_error: f64,
    /// Largest trace norm of any operator with `n >= 1`.
    pub higher_order_norm: f64,
}

/// Evolves the rotating-wave hierarchy and one linear trajectory at `dt`,
/// `dt/2` and `dt/4` on one noise path (refined by bridge sampling) and
/// removes the first- and second-order step errors by extrapolation.
pub fn rwa_comparison(dt: f64, t_final: f64, seed: u64) -> RwaComparison {
    let omega = 1.0;
    let gamma = 0.2;
    let coupling = 0.2;
    let n_steps = (t_final / dt).round() as usize;
    let noise = NoiseParams {
        gamma,
        coupling,
        dt,
        n_steps,
        seed,
    };
    let reference = rwa_reference(omega, noise.alpha0(), gamma, dt, n_steps, 8);
    let mut paths = vec![noise.sample_stream(0)];
    for level in 1..=2u8 {
        let prev = paths.last().expect("coarse path");
        let params = NoiseParams {
            dt: prev.dt(),
            n_steps: prev.n_steps(),
            ..noise
        };
        let next = prev.refine(&params, &mut stream_rng(seed, refinement_stream(0, level)));
        paths.push(next);
    }

    let model = ModelSpec::spin_boson_rwa(omega);
    let mut f = Vec::new();
    let mut p = Vec::new();
    let mut higher_order_norm = 0.0f64;
    for (level, path) in paths.iter().enumerate() {
        let stride = 1 << level;
        let (fl, norm) = evolve_rwa_hierarchy(&model, &noise, path);
        f.push(fl.into_iter().step_by(stride).collect::<Vec<_>>());
        p.push(linear_excited_population(&model, &noise, path, stride));
        higher_order_norm = higher_order_norm.max(norm);
    }
    // Richardson weights cancelling the dt and dt^2 terms of a first-order method.
    let w = [1.0 / 3.0, -2.0, 8.0 / 3.0];
    let mut f_error = 0.0f64;
    let mut sigma_z_error = 0.0f64;
    for k in 0..=n_steps {
        let fx: Complex64 = (0..3).map(|j| f[j][k] * w[j]).sum();
        f_error = f_error.max((fx - reference.f[k]).norm());
        let px: f64 = (0..3).map(|j| p[j][k] * w[j]).sum();
        sigma_z_error = sigma_z_error.max((2.0 * px - 1.0 - reference.sigma_z[k]).abs());
    }
    RwaComparison {
        f_error,
        sigma_z_error,
        higher_order_norm,
    }
}

/// Euler evolution of a fixed-order hierarchy along `path`; returns the
/// coefficient of `sigma_minus` in `Q_0^(0)` at every grid point and the
/// largest trace norm seen at orders `n >= 1`.
fn evolve_rwa_hierarchy(
    model: &ModelSpec,
    noise: &NoiseParams,
    path: &NoisePath,
) -> (Vec<Complex64>, f64) {
    let n_q = 4;
    let table = Arc::new(CouplingTable::new(n_q));
    let mut kernel = HierarchyKernel::new(
        &model.h_sys,
        &model.lindblad,
        noise.alpha0(),
        noise.gamma,
        table,
    )
    .expect("matching dimensions");
    let mut state = HierarchyState::new(2, n_q, n_q);
    let dt = path.dt();
    let mut f = Vec::with_capacity(path.len());
    let mut worst = 0.0f64;
    f.push(state.get(0, 0).get(1, 0));
    for i in 0..path.n_steps() {
        let rates = kernel.rhs(&state, path.z_star()[i]).to_vec();
        state.add_scaled(dt, &rates);
        f.push(state.get(0, 0).get(1, 0));
        worst = worst.max(state.max_trace_norm_from(1));
    }
    (f, worst)
}

/// Excited-state population of the linear trajectory along `path`,
/// sampled every `stride` steps.
fn linear_excited_population(
    model: &ModelSpec,
    noise: &NoiseParams,
    path: &NoisePath,
    stride: usize,
) -> Vec<f64> {
    let hier = HierarchyParams {
        n_max: 4,
        mode: HierarchyMode::Truncated,
        ..HierarchyParams::default()
    };
    let step = StepConfig {
        output_stride: stride,
        n_report: 1,
        unraveling: Unraveling::Linear,
    };
    let params = NoiseParams {
        dt: path.dt(),
        n_steps: path.n_steps(),
        ..*noise
    };
    let solver =
        TrajectorySolver::new(model.clone(), params, hier, step).expect("valid parameters");
    let mut p = path.clone();
    let r = solver.run_with_path(&mut p);
    r.states
        .iter()
        .map(|s| s.amplitudes()[0].norm_sqr())
        .collect()
}

pub fn rwa_closed_form() -> CheckOutcome {
    let c = rwa_comparison(0.02, 12.0, 11);
    let passed = c.f_error <= 1e-4 && c.sigma_z_error <= 1e-4 && c.higher_order_norm < 1e-8;
    CheckOutcome {
        name: "rotating-wave closed form",
        passed,
        detail: format!(
            "max |F - F_ref| = {:.2e}, max |<sigma_z> - ref| = {:.2e} (limit 1e-4), max norm n >= 1: {:.2e} (limit 1e-8)",
            c.f_error, c.sigma_z_error, c.higher_order_norm
        ),
    }
}

/// Sample correlations of `paths` noise paths at lags up to one time unit.
pub fn noise_statistics(paths: usize, seed: u64) -> CheckOutcome {
    let params = NoiseParams {
        gamma: 0.2,
        coupling: 0.2,
        dt: 0.02,
        n_steps: 600,
        seed,
    };
    let max_lag = (1.0 / params.dt).round() as usize;
    let m = noise_moments(&params, paths, max_lag);
    let mut worst_corr = 0.0f64;
    let mut worst_pseudo = 0.0f64;
    for (k, (_, mean, se, exact)) in m.lags.iter().enumerate() {
        let dev = (mean.re - exact)
            .abs()
            .max(if k == 0 { 0.0 } else { mean.im.abs() });
        worst_corr = worst_corr.max(dev / se);
        let (pm, pse) = m.pseudo[k];
        worst_pseudo = worst_pseudo.max(pm.re.abs().max(pm.im.abs()) / pse);
    }
    CheckOutcome {
        name: "noise statistics",
        passed: worst_corr < 3.0 && worst_pseudo < 3.0,
        detail: format!(
            "{paths} paths, lags 0..={max_lag}: worst autocorrelation deviation {worst_corr:.2} SE, worst |M[z z]| {worst_pseudo:.2} SE (limit 3)"
        ),
    }
}

/// The checks run by `nmqsd validate`.
pub fn validation_suite(noise_paths: usize) -> Vec<CheckOutcome> {
    vec![
        low_order_equations(100, 2024),
        decoupled_limit(),
        rwa_closed_form(),
        noise_statistics(noise_paths, 99),
    ]
}
