//! Reference solutions used to validate the solver.
//!
//! Nothing here calls the hierarchy kernel: the low-order equations are
//! written out term by term, the rotating-wave problem is reduced to a
//! scalar ODE, and the noise check works from sample moments.

use nmqsd_core::noise::stream_rng;
use nmqsd_core::operator::commutator;
use nmqsd_core::{Complex64, NoiseParams, Operator};

/// Inputs of one right-hand-side evaluation.
pub struct LowOrderInputs<'a> {
    pub h: &'a Operator,
    pub l: &'a Operator,
    pub alpha0: f64,
    pub gamma: f64,
    pub z: Complex64,
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Time derivative of `Q_m^(n)` for `n <= 3`, transcribed equation by
/// equation. `q(n, m)` must return zero for operators outside the
/// truncated hierarchy. Returns `None` for `(n, m)` not covered.
pub fn low_order_rhs(
    n: usize,
    m: usize,
    q: &dyn Fn(usize, usize) -> Operator,
    p: &LowOrderInputs<'_>,
) -> Option<Operator> {
    let ld = p.l.adjoint();
    let comm = |a: &Operator, b: &Operator| commutator(a, b).expect("same dimension");
    let ll = |a: &Operator| comm(p.l, a);
    // [L^dagger A, B]
    let qq = |a: &Operator, b: &Operator| comm(&(&ld * a), b);
    let h = |a: &Operator| comm(p.h, a).scale(Complex64::new(0.0, -1.0));
    let a0 = c(p.alpha0);
    let g = p.gamma;
    let z = p.z;

    let q00 = q(0, 0);
    let sum = |terms: &[(f64, Operator)]| {
        let mut acc = Operator::zeros(p.h.dim());
        for (w, t) in terms {
            acc = &acc + &t.scale(c(*w));
        }
        acc
    };
    let out = match (n, m) {
        (0, 0) => sum(&[
            (1.0, p.l.scale(a0)),
            (-g, q00.clone()),
            (1.0, h(&q00)),
            (-1.0, qq(&q00, &q00)),
            (-1.0, &ld * &q(1, 1)),
        ]),
        (1, 0) => {
            let q10 = q(1, 0);
            sum(&[
                (1.0, ll(&q00).scale(z)),
                (-g, q10.clone()),
                (1.0, h(&q10)),
                (-1.0, qq(&q00, &q10)),
                (-1.0, qq(&q10, &q00)),
                (-2.0, &ld * &q(2, 1)),
            ])
        }
        (1, 1) => {
            let q11 = q(1, 1);
            sum(&[
                (1.0, ll(&q00).scale(a0)),
                (-2.0 * g, q11.clone()),
                (1.0, h(&q11)),
                (-1.0, qq(&q00, &q11)),
                (-1.0, qq(&q11, &q00)),
                (-2.0, &ld * &q(2, 2)),
            ])
        }
        (2, 0) => {
            let q20 = q(2, 0);
            let q10 = q(1, 0);
            sum(&[
                (1.0, ll(&q10).scale(z)),
                (-g, q20.clone()),
                (1.0, h(&q20)),
                (-1.0, qq(&q00, &q20)),
                (-1.0, qq(&q10, &q10)),
                (-1.0, qq(&q20, &q00)),
                (-3.0, &ld * &q(3, 1)),
            ])
        }
        (2, 1) => {
            let q21 = q(2, 1);
            let (q10, q11) = (q(1, 0), q(1, 1));
            sum(&[
                (0.5, ll(&q10).scale(a0)),
                (0.5, ll(&q11).scale(z)),
                (-2.0 * g, q21.clone()),
                (1.0, h(&q21)),
                (-3.0, &ld * &q(3, 2)),
                (-1.0, qq(&q00, &q21)),
                (-0.5, qq(&q11, &q10)),
                (-0.5, qq(&q10, &q11)),
                (-1.0, qq(&q21, &q00)),
            ])
        }
        (2, 2) => {
            let q22 = q(2, 2);
            let q11 = q(1, 1);
            sum(&[
                (1.0, ll(&q11).scale(a0)),
                (-3.0 * g, q22.clone()),
                (1.0, h(&q22)),
                (-1.0, qq(&q00, &q22)),
                (-1.0, qq(&q11, &q11)),
                (-1.0, qq(&q22, &q00)),
                (-3.0, &ld * &q(3, 3)),
            ])
        }
        (3, 0) => {
            let q30 = q(3, 0);
            let (q10, q20) = (q(1, 0), q(2, 0));
            sum(&[
                (1.0, ll(&q20).scale(z)),
                (-g, q30.clone()),
                (1.0, h(&q30)),
                (-1.0, qq(&q00, &q30)),
                (-1.0, qq(&q10, &q20)),
                (-1.0, qq(&q20, &q10)),
                (-1.0, qq(&q30, &q00)),
                (-4.0, &ld * &q(4, 1)),
            ])
        }
        (3, 1) => {
            let q31 = q(3, 1);
            let (q10, q11, q20, q21) = (q(1, 0), q(1, 1), q(2, 0), q(2, 1));
            sum(&[
                (1.0 / 3.0, ll(&q20).scale(a0)),
                (2.0 / 3.0, ll(&q21).scale(z)),
                (-2.0 * g, q31.clone()),
                (1.0, h(&q31)),
                (-1.0, qq(&q00, &q31)),
                (-1.0 / 3.0, qq(&q11, &q20)),
                (-2.0 / 3.0, qq(&q10, &q21)),
                (-2.0 / 3.0, qq(&q21, &q10)),
                (-1.0 / 3.0, qq(&q20, &q11)),
                (-1.0, qq(&q31, &q00)),
                (-4.0, &ld * &q(4, 2)),
            ])
        }
        (3, 2) => {
            let q32 = q(3, 2);
            let (q10, q11, q21, q22) = (q(1, 0), q(1, 1), q(2, 1), q(2, 2));
            sum(&[
                (2.0 / 3.0, ll(&q21).scale(a0)),
                (1.0 / 3.0, ll(&q22).scale(z)),
                (-3.0 * g, q32.clone()),
                (1.0, h(&q32)),
                (-1.0, qq(&q00, &q32)),
                (-2.0 / 3.0, qq(&q11, &q21)),
                (-1.0 / 3.0, qq(&q10, &q22)),
                (-1.0 / 3.0, qq(&q22, &q10)),
                (-2.0 / 3.0, qq(&q21, &q11)),
                (-1.0, qq(&q32, &q00)),
                (-4.0, &ld * &q(4, 3)),
            ])
        }
        (3, 3) => {
            let q33 = q(3, 3);
            let (q11, q22) = (q(1, 1), q(2, 2));
            sum(&[
                (1.0, ll(&q22).scale(a0)),
                (-4.0 * g, q33.clone()),
                (1.0, h(&q33)),
                (-1.0, qq(&q00, &q33)),
                (-1.0, qq(&q11, &q22)),
                (-1.0, qq(&q22, &q11)),
                (-1.0, qq(&q33, &q00)),
                (-4.0, &ld * &q(4, 4)),
            ])
        }
        _ => return None,
    };
    Some(out)
}

/// Every `(n, m)` covered by [`low_order_rhs`].
pub const LOW_ORDER_CASES: [(usize, usize); 10] = [
    (0, 0),
    (1, 0),
    (1, 1),
    (2, 0),
    (2, 1),
    (2, 2),
    (3, 0),
    (3, 1),
    (3, 2),
    (3, 3),
];

/// Rotating-wave coupling `L = sigma_minus`, `H = (omega/2) sigma_z`.
/// The hierarchy then closes with `O = F(t) sigma_minus`, where
/// `dF/dt = alpha(0) + (i omega - gamma) F + F^2`, and the excited amplitude
/// obeys `dc/dt = -(i omega / 2 + F) c` for every noise path. Hence the
/// population is deterministic: `<sigma_z> = 2 exp(-2 int Re F) - 1`.
#[derive(Debug, Clone)]
pub struct RwaReference {
    pub times: Vec<f64>,
    pub f: Vec<Complex64>,
    pub sigma_z: Vec<f64>,
}

/// Classical RK4 on `(F, int Re F)` with `substeps` per output interval `dt`.
pub fn rwa_reference(
    omega: f64,
    alpha0: f64,
    gamma: f64,
    dt: f64,
    n_steps: usize,
    substeps: usize,
) -> RwaReference {
    let deriv = |f: Complex64| -> (Complex64, f64) {
        let df = c(alpha0) + Complex64::new(-gamma, omega) * f + f * f;
        (df, f.re)
    };
    let h = dt / substeps as f64;
    let mut f = Complex64::new(0.0, 0.0);
    let mut phi = 0.0;
    let mut out = RwaReference {
        times: vec![0.0],
        f: vec![f],
        sigma_z: vec![1.0],
    };
    for k in 1..=n_steps {
        for _ in 0..substeps {
            let (k1, p1) = deriv(f);
            let (k2, p2) = deriv(f + k1 * (0.5 * h));
            let (k3, p3) = deriv(f + k2 * (0.5 * h));
            let (k4, p4) = deriv(f + k3 * h);
            f += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            phi += (p1 + 2.0 * p2 + 2.0 * p3 + p4) * (h / 6.0);
        }
        out.times.push(k as f64 * dt);
        out.f.push(f);
        out.sigma_z.push(2.0 * (-2.0 * phi).exp() - 1.0);
    }
    out
}

/// Sample moments of noise paths against the bath correlation.
#[derive(Debug, Clone)]
pub struct NoiseMoments {
    /// Lag in steps, sample mean of `z_{t0+k} z*_{t0}`, its standard error
    /// (real part), and the exact correlation.
    pub lags: Vec<(usize, Complex64, f64, f64)>,
    /// Sample mean of `z_{t0+k} z_{t0}` and its standard error, per lag.
    pub pseudo: Vec<(Complex64, f64)>,
    pub paths: usize,
}

/// Moments of `paths` independent paths of `max_lag` steps, taken between
/// the first grid point and each later one.
pub fn noise_moments(params: &NoiseParams, paths: usize, max_lag: usize) -> NoiseMoments {
    let short = NoiseParams {
        n_steps: max_lag,
        ..*params
    };
    let n = max_lag + 1;
    let mut s = vec![Complex64::new(0.0, 0.0); n];
    let mut ss = vec![(0.0, 0.0); n];
    let mut p = vec![Complex64::new(0.0, 0.0); n];
    let mut pp = vec![(0.0, 0.0); n];
    for i in 0..paths as u64 {
        let mut rng = stream_rng(params.seed, i);
        let path = short.sample_with(&mut rng);
        // The path stores z*; conjugating gives z.
        let z: Vec<Complex64> = path.z_star().iter().map(|v| v.conj()).collect();
        for k in 0..n {
            let a = z[k] * z[0].conj();
            let b = z[k] * z[0];
            s[k] += a;
            ss[k].0 += a.re * a.re;
            ss[k].1 += a.im * a.im;
            p[k] += b;
            pp[k].0 += b.re * b.re;
            pp[k].1 += b.im * b.im;
        }
    }
    let nf = paths as f64;
    let se = |sum: f64, sq: f64| ((sq / nf - (sum / nf).powi(2)).max(0.0) / (nf - 1.0)).sqrt();
    let mut out = NoiseMoments {
        lags: Vec::with_capacity(n),
        pseudo: Vec::with_capacity(n),
        paths,
    };
    for k in 0..n {
        let mean = s[k] / nf;
        let err = se(s[k].re, ss[k].0).max(se(s[k].im, ss[k].1));
        let exact = params.correlation(k as f64 * params.dt).re;
        out.lags.push((k, mean, err, exact));
        let pm = p[k] / nf;
        let perr = se(p[k].re, pp[k].0).max(se(p[k].im, pp[k].1));
        out.pseudo.push((pm, perr));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rwa_reference_starts_excited_and_decays() {
        let r = rwa_reference(1.0, 0.1, 0.2, 0.02, 600, 4);
        assert_eq!(r.sigma_z[0], 1.0);
        assert!((r.f[1] - c(0.1 * 0.02)).norm() < 1e-4);
        assert!(r.sigma_z[600] < r.sigma_z[1]);
        assert!(r.sigma_z.iter().all(|s| (-1.0..=1.0).contains(s)));
    }

    #[test]
    fn rwa_reference_is_converged_in_the_substep() {
        let a = rwa_reference(1.0, 0.1, 0.2, 0.02, 600, 2);
        let b = rwa_reference(1.0, 0.1, 0.2, 0.02, 600, 8);
        let gap = a
            .sigma_z
            .iter()
            .zip(&b.sigma_z)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-9, "gap {gap}");
    }

    #[test]
    fn markov_limit_of_rwa_reference() {
        // Large gamma at fixed alpha(0)/gamma: F -> alpha(0)/gamma, pure decay.
        let gamma = 200.0;
        let alpha0 = 0.05 * gamma;
        let r = rwa_reference(1.0, alpha0, gamma, 0.01, 200, 200);
        let rate = 2.0 * alpha0 / gamma;
        let expect = 2.0 * (-rate * 2.0f64).exp() - 1.0;
        assert!(
            (r.sigma_z[200] - expect).abs() < 1e-3,
            "{} vs {expect}",
            r.sigma_z[200]
        );
    }

    #[test]
    fn zero_state_source_only() {
        let h = Operator::sigma_z().scale(c(0.5));
        let l = Operator::sigma_x();
        let p = LowOrderInputs {
            h: &h,
            l: &l,
            alpha0: 0.1,
            gamma: 0.2,
            z: Complex64::new(0.3, -0.1),
        };
        let zero = |_: usize, _: usize| Operator::zeros(2);
        assert_eq!(low_order_rhs(0, 0, &zero, &p).unwrap(), l.scale(c(0.1)));
        for &(n, m) in &LOW_ORDER_CASES[1..] {
            assert!(low_order_rhs(n, m, &zero, &p).unwrap().is_zero());
        }
        assert!(low_order_rhs(4, 0, &zero, &p).is_none());
    }

    #[test]
    fn noise_moments_at_zero_lag() {
        let params = NoiseParams {
            gamma: 0.2,
            coupling: 0.2,
            dt: 0.02,
            n_steps: 10,
            seed: 3,
        };
        let m = noise_moments(&params, 4000, 5);
        let (_, mean, se, exact) = m.lags[0];
        assert!((mean.re - exact).abs() < 4.0 * se);
        assert!(mean.im.abs() < 1e-15);
    }
}
