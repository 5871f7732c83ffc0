//! Adaptive almost-sure stabilization of linear-quadratic systems whose
//! mode is a hidden continuous-time Markov chain.
//!
//! The pipeline: solve the coupled Riccati system ([`riccati`]), track the
//! hidden mode with a Wonham filter ([`wonham`]), close the loop with the
//! filter-weighted feedback ([`controller`]) and check the resulting paths
//! for stability, martingale growth and recurrence ([`simulator`]).

pub mod controller;
pub mod export;
pub mod instances;
pub mod linalg;
pub mod markov_chain;
pub mod model;
pub mod model_file;
pub mod riccati;
pub mod simulator;
pub mod wonham;

pub use controller::{
    cross_check_generator, feedback_control, generator_apply_closed_form, generator_apply_numeric, lyapunov_value,
    ControlLaw, GeneratorCheck, LyapunovSpec,
};
pub use markov_chain::{ChainError, ChainPath, GeneratorMatrix, MixingEstimate, StationaryDistribution};
pub use model::{CostSpec, ModeSet, ModelError};
pub use riccati::{
    check_pairwise_condition, solve_coupled_riccati, solve_lyapunov, verify_candidate, ConditionReport, RiccatiError,
    RiccatiSolution,
};
pub use simulator::{
    recurrence_stats, run_ensemble, simulate_closed_loop, ControlPolicy, EnsembleOptions, EnsembleReport, InitialMode,
    SimConfig, SimError, Trajectory,
};
pub use wonham::{build_c, build_d, filter_step, project_simplex, DriftStack, FilterError, FilterState};

pub use nalgebra::{DMatrix, DVector};
