use std::sync::Arc;

use nmqsd_core::hierarchy::{CouplingTable, HierarchyKernel, HierarchyState};
use nmqsd_core::noise::NoisePath;
use nmqsd_core::{
    Complex64, EnsembleAccumulator, EnsembleResult, HierarchyMode, HierarchyParams, ModelSpec,
    NoiseParams, StepConfig, TrajectorySolver, Unraveling,
};
use proptest::prelude::*;

fn noise(gamma: f64, coupling: f64, t_final: f64, seed: u64) -> NoiseParams {
    let dt = 0.02;
    NoiseParams {
        gamma,
        coupling,
        dt,
        n_steps: (t_final / dt).round() as usize,
        seed,
    }
}

fn solver(
    model: ModelSpec,
    noise: NoiseParams,
    n_max: usize,
    mode: HierarchyMode,
) -> TrajectorySolver {
    let hier = HierarchyParams {
        n_max,
        mode,
        ..HierarchyParams::default()
    };
    TrajectorySolver::new(model, noise, hier, StepConfig::default()).unwrap()
}

fn ensemble(s: &TrajectorySolver, n: u64) -> EnsembleResult {
    let first = s.run(0);
    let mut acc = EnsembleAccumulator::new(
        first.times.clone(),
        2,
        s.step_config().n_report,
        s.hierarchy().n_max,
    );
    acc.push(&first).unwrap();
    for i in 1..n {
        acc.push(&s.run(i)).unwrap();
    }
    acc.finish().unwrap()
}

#[test]
fn term_groups_scale_with_the_state() {
    let model = ModelSpec::spin_boson(1.0);
    let table = Arc::new(CouplingTable::new(6));
    let mut kernel = HierarchyKernel::new(&model.h_sys, &model.lindblad, 0.1, 0.3, table).unwrap();
    let mut state = HierarchyState::new(2, 6, 6);
    for (i, v) in state.as_mut_slice().iter_mut().enumerate() {
        let x = i as f64;
        *v = Complex64::new((1.3 * x).sin(), (0.7 * x + 0.2).cos());
    }
    let z = Complex64::new(0.4, -0.25);
    let once = kernel.rhs_groups(&state, z);
    for v in state.as_mut_slice() {
        *v *= 2.0;
    }
    let twice = kernel.rhs_groups(&state, z);
    let close = |a: &[Complex64], b: &[Complex64], s: f64| {
        a.iter()
            .zip(b)
            .all(|(x, y)| (x * s - y).norm() <= 1e-12 * (1.0 + y.norm()))
    };
    assert!(close(&once.source, &twice.source, 1.0));
    assert!(once.source.iter().any(|v| v.norm() > 0.0));
    assert!(close(&once.feed_down, &twice.feed_down, 2.0));
    assert!(close(&once.damping, &twice.damping, 2.0));
    assert!(close(&once.coherent, &twice.coherent, 2.0));
    assert!(close(&once.feed_up, &twice.feed_up, 2.0));
    assert!(close(&once.quadratic, &twice.quadratic, 4.0));
    assert!(once.quadratic.iter().any(|v| v.norm() > 1e-6));
}

#[test]
fn rotating_wave_hierarchy_stays_at_first_order() {
    let s = solver(
        ModelSpec::spin_boson_rwa(1.0),
        noise(0.2, 0.2, 12.0, 5),
        20,
        HierarchyMode::Full,
    );
    for i in 0..4 {
        let r = s.run(i);
        assert!(!r.rejected);
        assert_eq!(r.final_n_q, 1);
        for norms in &r.q_trace_norms {
            assert!(norms[1..].iter().all(|&q| q < 1e-8), "{norms:?}");
        }
    }
}

#[test]
fn higher_orders_are_smaller_at_short_times_under_steady_noise() {
    let params = noise(0.2, 0.2, 0.4, 1);
    let s = solver(
        ModelSpec::spin_boson(1.0),
        params,
        12,
        HierarchyMode::Truncated,
    );
    let mut path = NoisePath::from_z_star(
        params.dt,
        vec![Complex64::new(0.3, -0.2); params.n_steps + 1],
    );
    let r = s.run_with_path(&mut path);
    let last = r.q_trace_norms.last().unwrap();
    let populated: Vec<f64> = last.iter().copied().take_while(|&q| q > 0.0).collect();
    assert!(populated.len() >= 3, "{last:?}");
    for pair in populated.windows(2) {
        assert!(pair[1] < pair[0], "{last:?}");
    }
}

#[test]
fn trajectories_depend_only_on_seed_and_index() {
    let s = solver(
        ModelSpec::spin_boson(1.0),
        noise(0.4, 0.2, 4.0, 77),
        30,
        HierarchyMode::Full,
    );
    assert_eq!(s.run(3), s.run(3));
    assert_ne!(s.run(3).sigma_z, s.run(4).sigma_z);
}

#[test]
fn linear_and_nonlinear_ensembles_agree_at_weak_coupling() {
    let params = noise(0.8, 0.02, 6.0, 19);
    let nonlinear = solver(
        ModelSpec::spin_boson(1.0),
        params,
        20,
        HierarchyMode::Truncated,
    );
    let linear = TrajectorySolver::new(
        ModelSpec::spin_boson(1.0),
        params,
        HierarchyParams {
            n_max: 20,
            mode: HierarchyMode::Truncated,
            ..HierarchyParams::default()
        },
        StepConfig {
            unraveling: Unraveling::Linear,
            ..StepConfig::default()
        },
    )
    .unwrap();
    let a = ensemble(&nonlinear, 300);
    let b = ensemble(&linear, 300);
    for i in (0..a.times.len()).step_by(25) {
        let se = (a.stderr[i].powi(2) + b.stderr[i].powi(2)).sqrt();
        let d = (a.mean_sigma_z[i] - b.mean_sigma_z[i]).abs();
        assert!(d <= 3.0 * se + 1e-3, "t={}: {d} vs se {se}", a.times[i]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn nonlinear_trajectories_stay_normalized(seed in 0u64..10_000, gamma in 0.3f64..1.0) {
        let s = solver(ModelSpec::spin_boson(1.0), noise(gamma, 0.2, 3.0, seed), 30, HierarchyMode::Full);
        let r = s.run(0);
        for (psi, (&w, &sz)) in r.states.iter().zip(r.weights.iter().zip(&r.sigma_z)) {
            prop_assert!((psi.norm_sqr() - 1.0).abs() < 1e-9);
            prop_assert!((w - 1.0).abs() < 1e-12);
            prop_assert!(sz.abs() <= 1.0 + 1e-9);
        }
    }
}
