//! One quantum trajectory: the state, the noise shift and the hierarchy
//! integrated together by explicit Euler steps on the noise grid.
//!
//! The default (nonlinear) unraveling evolves the normalized state
//!
//! ```text
//! d psi/dt = -i H psi + (L - <L>) z~* psi
//!            - [ (L^dag - <L^dag>) O-bar - <(L^dag - <L^dag>) O-bar> ] psi
//! ```
//!
//! driven by the shifted noise `z~* = z* + y`. The linear unraveling
//! `d psi/dt = -i H psi + L z* psi - L^dag O-bar psi` uses the raw noise
//! and keeps the norm, which then acts as an ensemble weight.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Float;
use thiserror::Error;

use crate::hierarchy::{
    adapt_order, CouplingTable, HierarchyError, HierarchyKernel, HierarchyMode, HierarchyParams,
    HierarchyState, OrderDecision,
};
use crate::noise::{NoiseError, NoiseParams, NoisePath};
use crate::operator::{self, Operator, StateVector};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("system Hamiltonian is not Hermitian (deviation {0:e})")]
    NonHermitian(f64),
    #[error("initial state is not normalized (|psi|^2 = {0})")]
    NotNormalized(f64),
    #[error("{what} has dimension {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("output stride must be at least 1")]
    Stride,
    #[error("time step and final time must be positive (dt={dt}, t_final={t_final})")]
    Grid { dt: f64, t_final: f64 },
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// System Hamiltonian, coupling operator and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub omega: f64,
    pub h_sys: Operator,
    pub lindblad: Operator,
    pub psi0: StateVector,
    /// Observable recorded along the trajectory (`sigma_z` for the spin-boson model).
    pub observable: Operator,
}

impl ModelSpec {
    /// `H = (omega/2) sigma_z`, `L = sigma_x`, starting in the excited state.
    pub fn spin_boson(omega: f64) -> Self {
        Self {
            omega,
            h_sys: Operator::sigma_z().scale(Complex64::new(0.5 * omega, 0.0)),
            lindblad: Operator::sigma_x(),
            psi0: StateVector::basis(2, 0),
            observable: Operator::sigma_z(),
        }
    }

    /// Rotating-wave variant with `L = sigma_minus`.
    pub fn spin_boson_rwa(omega: f64) -> Self {
        Self {
            lindblad: Operator::sigma_minus(),
            ..Self::spin_boson(omega)
        }
    }

    pub fn dim(&self) -> usize {
        self.h_sys.dim()
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let d = self.dim();
        for (what, got) in [
            ("coupling operator", self.lindblad.dim()),
            ("initial state", self.psi0.dim()),
            ("observable", self.observable.dim()),
        ] {
            if got != d {
                return Err(TrajectoryError::Dimension {
                    what,
                    expected: d,
                    got,
                });
            }
        }
        let herm = self.h_sys.hermiticity_error();
        if herm > 1e-12 {
            return Err(TrajectoryError::NonHermitian(herm));
        }
        let norm = self.psi0.norm_sqr();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(TrajectoryError::NotNormalized(norm));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Unraveling {
    /// Norm-conserving equation with shifted noise (the production mode).
    Nonlinear,
    /// Linear equation with raw noise; validation only.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    /// Record every `output_stride`-th grid point (t = 0 is always recorded).
    pub output_stride: usize,
    /// Highest order `n` for which `||Q_0^(n)||` is recorded.
    pub n_report: usize,
    pub unraveling: Unraveling,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            output_stride: 1,
            n_report: 12,
            unraveling: Unraveling::Nonlinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryResult {
    pub times: Vec<f64>,
    /// `<observable>` in the normalized state.
    pub sigma_z: Vec<f64>,
    /// `<psi|psi>` at each output time; 1 to rounding for the nonlinear unraveling.
    pub weights: Vec<f64>,
    pub states: Vec<StateVector>,
    pub n_q_series: Vec<usize>,
    /// `||Q_0^(n)||` for `n = 0..=n_report` at each output time.
    pub q_trace_norms: Vec<Vec<f64>>,
    pub rejected: bool,
    pub final_n_q: usize,
    /// Grid steps actually integrated (fewer than requested when rejected).
    pub steps_completed: usize,
    /// Mean `|z~*_t|` over the integrated part of the path.
    pub mean_abs_noise: f64,
}

/// Time derivative of the normalized state.
pub fn nonlinear_rhs(
    psi: &StateVector,
    bar_o: &Operator,
    z_tilde_star: Complex64,
    model: &ModelSpec,
) -> StateVector {
    debug_assert!((psi.norm_sqr() - 1.0).abs() < 1e-9);
    let d = psi.dim();
    let amps = psi.amplitudes();
    let mut h_psi = vec![ZERO; d];
    let mut l_psi = vec![ZERO; d];
    let mut o_psi = vec![ZERO; d];
    let mut ldag_o_psi = vec![ZERO; d];
    operator::apply_into(&mut h_psi, model.h_sys.as_slice(), amps, d);
    operator::apply_into(&mut l_psi, model.lindblad.as_slice(), amps, d);
    operator::apply_into(&mut o_psi, bar_o.as_slice(), amps, d);
    let l_dag = model.lindblad.adjoint();
    operator::apply_into(&mut ldag_o_psi, l_dag.as_slice(), &o_psi, d);

    let inner =
        |v: &[Complex64]| -> Complex64 { amps.iter().zip(v).map(|(a, b)| a.conj() * b).sum() };
    let exp_l = inner(&l_psi);
    let exp_l_dag = exp_l.conj();
    let exp_o = inner(&o_psi);
    let exp_ldag_o = inner(&ldag_o_psi);
    let centered = exp_ldag_o - exp_l_dag * exp_o;

    let out = (0..d)
        .map(|i| {
            Complex64::new(0.0, -1.0) * h_psi[i] + z_tilde_star * (l_psi[i] - exp_l * amps[i])
                - (ldag_o_psi[i] - exp_l_dag * o_psi[i] - centered * amps[i])
        })
        .collect();
    StateVector::new(out).expect("non-empty state")
}

/// Time derivative of the unnormalized state.
pub fn linear_rhs(
    psi: &StateVector,
    bar_o: &Operator,
    z_star_t: Complex64,
    model: &ModelSpec,
) -> StateVector {
    let d = psi.dim();
    let amps = psi.amplitudes();
    let mut h_psi = vec![ZERO; d];
    let mut l_psi = vec![ZERO; d];
    let mut o_psi = vec![ZERO; d];
    let mut ldag_o_psi = vec![ZERO; d];
    operator::apply_into(&mut h_psi, model.h_sys.as_slice(), amps, d);
    operator::apply_into(&mut l_psi, model.lindblad.as_slice(), amps, d);
    operator::apply_into(&mut o_psi, bar_o.as_slice(), amps, d);
    let l_dag = model.lindblad.adjoint();
    operator::apply_into(&mut ldag_o_psi, l_dag.as_slice(), &o_psi, d);
    let out = (0..d)
        .map(|i| Complex64::new(0.0, -1.0) * h_psi[i] + z_star_t * l_psi[i] - ldag_o_psi[i])
        .collect();
    StateVector::new(out).expect("non-empty state")
}

/// Integrates trajectories for a fixed model and parameter set. Cheap to
/// clone; clones share the coupling table.
#[derive(Debug, Clone)]
pub struct TrajectorySolver {
    model: ModelSpec,
    noise: NoiseParams,
    hier: HierarchyParams,
    step: StepConfig,
    table: Arc<CouplingTable>,
}

impl TrajectorySolver {
    pub fn new(
        model: ModelSpec,
        noise: NoiseParams,
        hier: HierarchyParams,
        step: StepConfig,
    ) -> Result<Self, TrajectoryError> {
        let table = match hier.mode {
            HierarchyMode::BarOZero => Arc::new(CouplingTable::new(0)),
            _ => Arc::new(CouplingTable::new(hier.n_max)),
        };
        Self::with_table(model, noise, hier, step, table)
    }

    /// Reuses a coupling table built for at least `hier.n_max`.
    pub fn with_table(
        model: ModelSpec,
        noise: NoiseParams,
        hier: HierarchyParams,
        step: StepConfig,
        table: Arc<CouplingTable>,
    ) -> Result<Self, TrajectoryError> {
        model.validate()?;
        noise.validate()?;
        hier.validate()?;
        if step.output_stride == 0 {
            return Err(TrajectoryError::Stride);
        }
        if hier.mode != HierarchyMode::BarOZero && table.n_max() < hier.n_max {
            return Err(TrajectoryError::Hierarchy(
                HierarchyError::OutsideTriangle {
                    n: hier.n_max,
                    m: 0,
                    n_q: table.n_max(),
                },
            ));
        }
        Ok(Self {
            model,
            noise,
            hier,
            step,
            table,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn noise(&self) -> &NoiseParams {
        &self.noise
    }

    pub fn hierarchy(&self) -> &HierarchyParams {
        &self.hier
    }

    pub fn step_config(&self) -> &StepConfig {
        &self.step
    }

    pub fn table(&self) -> &Arc<CouplingTable> {
        &self.table
    }

    /// Number of recorded points for a path with `n_steps` steps.
    pub fn output_len(&self, n_steps: usize) -> usize {
        n_steps / self.step.output_stride + 1
    }

    /// Trajectory `index` with noise drawn from that index's stream.
    pub fn run(&self, index: u64) -> TrajectoryResult {
        let mut path = self.noise.sample_stream(index);
        self.run_with_path(&mut path)
    }

    /// Integrates along `path`, whose step sets `dt`. The shift `y_t` is
    /// written back into the path as it is computed.
    pub fn run_with_path(&self, path: &mut NoisePath) -> TrajectoryResult {
        let dt = path.dt();
        let n_steps = path.n_steps();
        let d = self.model.dim();
        let stride = self.step.output_stride;
        let use_hierarchy = self.hier.mode != HierarchyMode::BarOZero;
        let linear = self.step.unraveling == Unraveling::Linear;
        let shift_params = NoiseParams { dt, ..self.noise };
        let l_dag = self.model.lindblad.adjoint();

        let mut kernel = HierarchyKernel::new(
            &self.model.h_sys,
            &self.model.lindblad,
            self.noise.alpha0(),
            self.noise.gamma,
            self.table.clone(),
        )
        .expect("model validated");
        let mut state = if use_hierarchy {
            HierarchyState::for_params(d, &self.hier)
        } else {
            HierarchyState::new(d, 0, 0)
        };
        let mut trial = state.clone();

        let cap = self.output_len(n_steps);
        let mut out = TrajectoryResult {
            times: Vec::with_capacity(cap),
            sigma_z: Vec::with_capacity(cap),
            weights: Vec::with_capacity(cap),
            states: Vec::with_capacity(cap),
            n_q_series: Vec::with_capacity(cap),
            q_trace_norms: Vec::with_capacity(cap),
            rejected: false,
            final_n_q: 0,
            steps_completed: 0,
            mean_abs_noise: 0.0,
        };

        let mut psi = self.model.psi0.clone();
        let mut y = ZERO;
        path.reset_shift();
        self.record(&mut out, 0.0, &psi, &state, use_hierarchy);

        let zero_o = Operator::zeros(d);
        let mut completed = 0;
        'steps: for i in 0..n_steps {
            let z_star = path.z_star()[i];
            let noise_now = if linear {
                z_star
            } else {
                path.set_shift(i, y);
                z_star + y
            };
            // Redo the step from the same start whenever the order grows.
            loop {
                let bar_o = if use_hierarchy {
                    state.assemble_bar_o()
                } else {
                    zero_o.clone()
                };
                if use_hierarchy {
                    let rates = kernel.rhs(&state, noise_now);
                    trial.copy_from(&state);
                    trial.add_scaled(dt, rates);
                    match adapt_order(&trial, &self.hier) {
                        OrderDecision::Grow => {
                            state.grow();
                            continue;
                        }
                        OrderDecision::Reject => {
                            out.rejected = true;
                            break 'steps;
                        }
                        OrderDecision::Keep => {}
                    }
                }

                let rate = if linear {
                    linear_rhs(&psi, &bar_o, noise_now, &self.model)
                } else {
                    nonlinear_rhs(&psi, &bar_o, noise_now, &self.model)
                };
                if !linear {
                    let exp_l_dag =
                        operator::expectation_slice(l_dag.as_slice(), psi.amplitudes(), d);
                    y = shift_params.advance_shift(y, exp_l_dag);
                }
                for (a, r) in psi.amplitudes_mut().iter_mut().zip(rate.amplitudes()) {
                    *a += r * dt;
                }
                if !linear {
                    psi.normalize();
                }
                if use_hierarchy {
                    core::mem::swap(&mut state, &mut trial);
                }
                break;
            }

            let finite = psi.is_finite()
                && y.re.is_finite()
                && y.im.is_finite()
                && (!use_hierarchy || state.is_finite());
            if !finite || (!linear && psi.norm_sqr() == 0.0) {
                out.rejected = true;
                break;
            }
            completed = i + 1;
            if completed % stride == 0 {
                self.record(&mut out, completed as f64 * dt, &psi, &state, use_hierarchy);
            }
        }
        if !linear && completed == n_steps {
            path.set_shift(n_steps, y);
        }

        if out.rejected {
            state.mark_rejected();
        }
        out.final_n_q = if use_hierarchy { state.n_q() } else { 0 };
        out.steps_completed = completed;
        out.mean_abs_noise = path.mean_abs_shifted(completed + 1);
        out
    }

    fn record(
        &self,
        out: &mut TrajectoryResult,
        t: f64,
        psi: &StateVector,
        state: &HierarchyState,
        use_hierarchy: bool,
    ) {
        let d = psi.dim();
        let w = psi.norm_sqr();
        let obs =
            operator::expectation_slice(self.model.observable.as_slice(), psi.amplitudes(), d);
        out.times.push(t);
        out.sigma_z.push(if w > 0.0 { obs.re / w } else { 0.0 });
        out.weights.push(w);
        out.states.push(psi.clone());
        out.n_q_series
            .push(if use_hierarchy { state.n_q() } else { 0 });
        out.q_trace_norms.push(if use_hierarchy {
            state.q0_trace_norms(self.step.n_report)
        } else {
            vec![0.0; self.step.n_report + 1]
        });
    }
}

/// One trajectory on `[0, t_final]` with step `dt`, noise stream 0 of
/// `noise.seed`, default output options.
pub fn run_trajectory(
    model: &ModelSpec,
    noise: &NoiseParams,
    hier: &HierarchyParams,
    dt: f64,
    t_final: f64,
) -> Result<TrajectoryResult, TrajectoryError> {
    if !(dt > 0.0) || !(t_final > 0.0) {
        return Err(TrajectoryError::Grid { dt, t_final });
    }
    let n_steps = Float::round(t_final / dt).max(1.0) as usize;
    let noise = NoiseParams {
        dt,
        n_steps,
        ..*noise
    };
    let solver = TrajectorySolver::new(model.clone(), noise, *hier, StepConfig::default())?;
    Ok(solver.run(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn state_strategy() -> impl Strategy<Value = StateVector> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2)
            .prop_filter("non-zero", |v| {
                v.iter().map(|(a, b)| a * a + b * b).sum::<f64>() > 1e-3
            })
            .prop_map(|v| {
                let mut s =
                    StateVector::new(v.into_iter().map(|(a, b)| c(a, b)).collect()).unwrap();
                s.normalize();
                s
            })
    }

    fn op_strategy() -> impl Strategy<Value = Operator> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4).prop_map(|v| {
            Operator::from_row_major(2, v.into_iter().map(|(a, b)| c(a, b)).collect()).unwrap()
        })
    }

    #[test]
    fn unitary_part_only_without_bath() {
        let model = ModelSpec::spin_boson(1.0);
        let s = 1.0 / 2f64.sqrt();
        let psi = StateVector::new(vec![c(s, 0.0), c(0.0, s)]).unwrap();
        let got = nonlinear_rhs(&psi, &Operator::zeros(2), ZERO, &model);
        let want = model.h_sys.apply(&psi).unwrap();
        for (g, w) in got.amplitudes().iter().zip(want.amplitudes()) {
            assert!((g - c(0.0, -1.0) * w).norm() < 1e-15);
        }
        let lin = linear_rhs(&psi, &Operator::zeros(2), ZERO, &model);
        assert_eq!(lin, got);
    }

    #[test]
    fn noise_term_vanishes_on_coupling_eigenstate() {
        let mut model = ModelSpec::spin_boson(1.0);
        model.h_sys = Operator::zeros(2);
        let s = 1.0 / 2f64.sqrt();
        let plus = StateVector::new(vec![c(s, 0.0), c(s, 0.0)]).unwrap();
        let got = nonlinear_rhs(&plus, &Operator::zeros(2), c(0.7, -1.3), &model);
        assert!(got.amplitudes().iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn linear_rhs_of_zero_state_is_zero() {
        let model = ModelSpec::spin_boson(1.0);
        let got = linear_rhs(
            &StateVector::zeros(2),
            &Operator::sigma_y(),
            c(0.2, 0.4),
            &model,
        );
        assert!(got.amplitudes().iter().all(|z| *z == ZERO));
    }

    proptest! {
        #[test]
        fn nonlinear_rhs_preserves_norm(psi in state_strategy(), o in op_strategy(),
                                        zr in -2.0f64..2.0, zi in -2.0f64..2.0) {
            let model = ModelSpec::spin_boson(1.0);
            let rate = nonlinear_rhs(&psi, &o, c(zr, zi), &model);
            prop_assert!(psi.inner(&rate).re.abs() < 1e-12);
        }
    }

    #[test]
    fn model_validation() {
        let mut m = ModelSpec::spin_boson(1.0);
        assert!(m.validate().is_ok());
        m.psi0 = StateVector::new(vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert!(matches!(
            m.validate(),
            Err(TrajectoryError::NotNormalized(_))
        ));
        let mut m = ModelSpec::spin_boson(1.0);
        m.h_sys = Operator::sigma_minus();
        assert!(matches!(
            m.validate(),
            Err(TrajectoryError::NonHermitian(_))
        ));
        let mut m = ModelSpec::spin_boson(1.0);
        m.lindblad = Operator::identity(3);
        assert!(matches!(
            m.validate(),
            Err(TrajectoryError::Dimension { .. })
        ));
    }

    #[test]
    fn grid_must_be_positive() {
        let noise = NoiseParams {
            gamma: 0.2,
            coupling: 0.2,
            dt: 0.02,
            n_steps: 1,
            seed: 0,
        };
        let err = run_trajectory(
            &ModelSpec::spin_boson(1.0),
            &noise,
            &HierarchyParams::default(),
            0.0,
            1.0,
        );
        assert!(matches!(err, Err(TrajectoryError::Grid { .. })));
    }
}
