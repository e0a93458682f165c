//! Exact computations on finite state spaces: stochastic matrices, weighted
//! norms, mean-field flows, and the checks built on them.

pub mod finite;
pub mod flow;
pub mod instances;
pub mod lemmas;
pub mod longtime;
pub mod poc;

pub use finite::{
    check_drift, contraction_coefficient, kernel_norm, osc, stationary, tv, weighted_tv, DriftCheck, DriftSpec,
    FiniteKernel, FiniteMeasure, FinitePotential,
};
pub use flow::{
    bg_transform, finite_jump_kernel, invariance_residuals, k_eta_kernel, mean_field_flow, verify_invariance, Flow,
    InvarianceResiduals,
};
pub use instances::{bundled_four_state, metropolis_kernel, random_instance, random_kernel, random_measure, FiniteInstance};
pub use lemmas::{
    check_uniform_drift, compute_r_g, psi_reg_constant, theta_lower_bound, uniform_drift_constants, verify_psi_reg,
    verify_unif_lb, weighted_bounds, PsiRegReport, UnifLbReport, UniformDriftReport, WeightedBoundsCheck,
};
pub use longtime::{longtime_report, TheoryReport};
pub use poc::{
    exact_occupation_marginal, exact_single_pair_marginal, mc_corollary_experiment, poc_experiment, FiniteProblem,
    McPoint, PocConfig, PocPoint, PocReport,
};
