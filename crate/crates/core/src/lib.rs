//! Non-Markovian quantum state diffusion for a bosonic bath with
//! Ornstein-Uhlenbeck correlation, solved through a truncated hierarchy of
//! auxiliary operators `Q_m^(n)`.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches
//! threads, files or the command line lives in the `nmqsd` companion crate.
//!
//! Layout:
//!
//! * [`operator`]: small dense complex matrices and state vectors.
//! * [`noise`]: colored Gaussian noise paths and the shifted noise.
//! * [`hierarchy`]: storage and evolution of the auxiliary operators.
//! * [`trajectory`]: one normalized (or linear) quantum trajectory.
//! * [`ensemble`]: deterministic reduction of many trajectories.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod ensemble;
pub mod hierarchy;
pub mod noise;
pub mod operator;
pub mod trajectory;

pub use num_complex::Complex64;

pub use ensemble::{EnsembleAccumulator, EnsembleError, EnsembleResult, NqDistribution, TailFit};
pub use hierarchy::{
    binomial_weight, CouplingTable, HierarchyError, HierarchyKernel, HierarchyMode,
    HierarchyParams, HierarchyState, OrderDecision,
};
pub use noise::{NoiseError, NoiseParams, NoisePath};
pub use operator::{Operator, OperatorError, StateVector};
pub use trajectory::{
    ModelSpec, StepConfig, TrajectoryError, TrajectoryResult, TrajectorySolver, Unraveling,
};
