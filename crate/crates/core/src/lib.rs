//! Batched online TD(0) with linear function approximation: a stochastic
//! simulator, deterministic mean-field learning-curve recursions, and
//! spectral diagnostics of the TD operator.
//!
//! Indexing is 0-based throughout. An episode holds `T + 1` states so that
//! every transition `t = 0..T` has a successor feature `ψ(t + 1)`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod features;
pub mod linalg;
pub mod rng;
pub mod simulator;
pub mod spectral;
pub mod theory;

pub use error::{Error, Result};
pub use features::{
    build_powerlaw_ensemble, estimate_ensemble, hypercube_ensemble, place_cell_features, reduced_matrices, Episode,
    EpisodeFeatures, FeatureEnsemble, GridWorld, GridWorldSpec, ReducedMatrices, SecondMoment, TrajectorySource,
};
pub use simulator::{
    reshape_rewards, run_td, td_update_step, value_error, BatchSize, EtaSchedule, LearnerConfig, LearningCurve,
    SeedTrace, Variant,
};
pub use spectral::{
    mean_weight_modes, spectral_report, tabular_fixed_point, td_fixed_point, SpectralReport, TabularMDP,
    TabularSolution,
};
pub use theory::{
    direct_recurrence_curve, dmft_curve, dmft_step, fixed_point_plateau, hypercube_closed_form, nongaussian_curve,
    CurveOptions, FourthMomentModel, MomentMatrix, MomentState, TheoryProblem,
};
