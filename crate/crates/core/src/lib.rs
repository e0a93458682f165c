//! Nonlinear MCMC with interacting particles.
//!
//! A primary particle system targeting `pi` is coupled to an auxiliary system
//! targeting an easier `eta*` through jumps K_eta = (1 - eps) K + eps J_eta.
//! The jump J_eta either resamples from the auxiliary particles reweighted by
//! G = pi / eta* (Boltzmann-Gibbs) or proposes one of them and accepts with
//! probability min(1, G(y) / G(x)) (accept-reject).
//!
//! Modules:
//! - [`base`], [`rng`], [`error`]: shared types.
//! - [`targets`]: densities with exact samplers.
//! - [`linear_samplers`]: ULA, MALA and RMS variants.
//! - [`nonlinear`]: potentials, weights, jump kernels.
//! - [`ips`]: particle-system drivers.
//! - [`oracle`]: exact finite-state computations used to check the theory.
//! - [`metrics`]: MMD, entropy, calibration.

// `!(x > 0.0)` is deliberate: NaN must fail validation. Index loops mirror
// the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod base;
pub mod error;
pub mod ips;
pub mod linear_samplers;
pub mod metrics;
pub mod nonlinear;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod targets;

pub use base::{
    check_gradient, Ensemble, Initializer, LogTarget, MarkovKernel, Move, Potential, State,
    WeightedNormSpec,
};
pub use error::{Error, Result};
pub use ips::{
    particle_average, simulate_growing_history, simulate_ips, DivergencePolicy, IpsConfig,
    IpsModel, IpsState, Metrics, RecordContext, RunStatus, RunTrace, TraceRow,
};
pub use linear_samplers::{LangevinConfig, LangevinSampler, RmsState, SamplerKind, StepSchedule};
pub use nonlinear::{BgWeights, Branch, Interaction, JumpConfig, PotentialPair};
pub use oracle::{FiniteKernel, FiniteMeasure};
pub use rng::{derive_seed, RngStream};
