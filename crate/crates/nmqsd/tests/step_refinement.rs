use nmqsd::runner::{estimate_errors, run_ensemble, thread_pool};
use nmqsd::RunConfig;

fn step_error(dt: f64) -> f64 {
    let cfg = RunConfig {
        gamma: 0.8,
        dt,
        t_final: 6.0,
        n_max: 20,
        n_traj: 200,
        master_seed: 31,
        ..RunConfig::default()
    };
    let run = run_ensemble(&cfg).unwrap();
    let pool = thread_pool(0).unwrap();
    estimate_errors(&cfg, &run.result, &pool).unwrap().e_dt
}

#[test]
fn step_error_is_first_order() {
    let dts = [0.04, 0.02, 0.01];
    let errs: Vec<f64> = dts.iter().map(|&dt| step_error(dt)).collect();
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    println!("E_dt {errs:?} slope {slope}");
    assert!(
        (0.7..=1.3).contains(&slope),
        "errors {errs:?}, slope {slope}"
    );
}
