//! The ensemble against an exact reference. A bath with correlation
//! `alpha0 exp(-gamma |t|)` acts on the spin like a single damped mode `a`
//! at zero frequency, coupled through `g (L a^dag + L^dag a)` with
//! `g^2 = alpha0` and decay rate `2 gamma`. The joint density matrix of spin
//! and mode obeys an ordinary master equation, integrated here with RK4 in a
//! truncated Fock space.

use nmqsd::runner::run_ensemble;
use nmqsd::RunConfig;
use nmqsd_core::Complex64;

type Mat = Vec<Complex64>;

fn zeros(n: usize) -> Mat {
    vec![Complex64::new(0.0, 0.0); n * n]
}

fn mul(a: &Mat, b: &Mat, n: usize) -> Mat {
    let mut c = zeros(n);
    for i in 0..n {
        for k in 0..n {
            let x = a[i * n + k];
            if x == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += x * b[k * n + j];
            }
        }
    }
    c
}

fn dagger(a: &Mat, n: usize) -> Mat {
    let mut c = zeros(n);
    for i in 0..n {
        for j in 0..n {
            c[j * n + i] = a[i * n + j].conj();
        }
    }
    c
}

/// `<sigma_z>` at integer times `1..=t_final` for the spin-boson model with
/// `L = sigma_x`, starting in the excited state and the mode vacuum.
fn pseudomode_sigma_z(
    omega: f64,
    alpha0: f64,
    gamma: f64,
    t_final: usize,
    fock: usize,
) -> Vec<f64> {
    let n = 2 * fock;
    let idx = |s: usize, k: usize| s * fock + k;
    let one = Complex64::new(1.0, 0.0);
    let mut a = zeros(n);
    let mut sx = zeros(n);
    let mut h = zeros(n);
    for s in 0..2 {
        for k in 0..fock {
            if k + 1 < fock {
                a[idx(s, k) * n + idx(s, k + 1)] = one * ((k + 1) as f64).sqrt();
            }
            sx[idx(s, k) * n + idx(1 - s, k)] = one;
            let sign = if s == 0 { 1.0 } else { -1.0 };
            h[idx(s, k) * n + idx(s, k)] = one * (0.5 * omega * sign);
        }
    }
    let ad = dagger(&a, n);
    let field: Mat = a.iter().zip(&ad).map(|(x, y)| x + y).collect();
    let coupling = mul(&sx, &field, n);
    for (hv, c) in h.iter_mut().zip(&coupling) {
        *hv += c * alpha0.sqrt();
    }
    let kappa = 2.0 * gamma;
    let num = mul(&ad, &a, n);
    let i = Complex64::new(0.0, 1.0);
    let rhs = |rho: &Mat| -> Mat {
        let hr = mul(&h, rho, n);
        let rh = mul(rho, &h, n);
        let jump = mul(&mul(&a, rho, n), &ad, n);
        let nr = mul(&num, rho, n);
        let rn = mul(rho, &num, n);
        (0..n * n)
            .map(|e| -i * (hr[e] - rh[e]) + kappa * (jump[e] - 0.5 * (nr[e] + rn[e])))
            .collect()
    };
    let mut rho = zeros(n);
    rho[idx(0, 0) * n + idx(0, 0)] = one;
    let dt: f64 = 0.005;
    let per_unit = (1.0 / dt).round() as usize;
    let axpy =
        |x: &Mat, k: &Mat, s: f64| -> Mat { x.iter().zip(k).map(|(a, b)| a + b * s).collect() };
    let mut out = Vec::new();
    for _ in 0..t_final {
        for _ in 0..per_unit {
            let k1 = rhs(&rho);
            let k2 = rhs(&axpy(&rho, &k1, 0.5 * dt));
            let k3 = rhs(&axpy(&rho, &k2, 0.5 * dt));
            let k4 = rhs(&axpy(&rho, &k3, dt));
            for e in 0..n * n {
                rho[e] += (k1[e] + 2.0 * k2[e] + 2.0 * k3[e] + k4[e]) * (dt / 6.0);
            }
        }
        let sz: f64 = (0..fock)
            .map(|k| rho[idx(0, k) * n + idx(0, k)].re - rho[idx(1, k) * n + idx(1, k)].re)
            .sum();
        out.push(sz);
    }
    out
}

#[test]
fn fock_cutoff_is_converged() {
    let a = pseudomode_sigma_z(1.0, 0.1, 0.8, 12, 10);
    let b = pseudomode_sigma_z(1.0, 0.1, 0.8, 12, 14);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
    assert!((b[11] - 0.1474).abs() < 1e-3, "{}", b[11]);
}

#[test]
fn ensemble_matches_exact_dynamics() {
    let cfg = RunConfig {
        gamma: 0.8,
        n_max: 30,
        n_traj: 800,
        master_seed: 8,
        ..RunConfig::default()
    };
    let run = run_ensemble(&cfg).unwrap();
    let r = &run.result;
    let exact = pseudomode_sigma_z(cfg.omega, cfg.noise().alpha0(), cfg.gamma, 12, 14);
    for (t, want) in (1..=12).zip(&exact) {
        let k = r
            .times
            .iter()
            .position(|&x| (x - t as f64).abs() < 1e-9)
            .unwrap();
        let d = (r.mean_sigma_z[k] - want).abs();
        assert!(
            d <= 3.0 * r.stderr[k] + 2e-3,
            "t={t}: ensemble {} vs exact {want}, se {}",
            r.mean_sigma_z[k],
            r.stderr[k]
        );
    }
}
