//! Tabular constrained MDPs: model types, an exact solver, a simulator, an
//! instance generator, a model-based primal-dual online learner, and the
//! experiment harness built on top of them.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod exact;
pub mod harness;
pub mod instance_gen;
pub mod learner;
pub mod model;
pub mod sim;
pub mod suite;

pub use exact::{
    brute_force_cmdp, dual_value, solve_cmdp_exact, solve_unconstrained, DualPoint, ExactSolution,
    Sense, SolveError, SolveStatus,
};
pub use instance_gen::{generate, preset, GenError, GenSpec, PRESETS};
pub use learner::{
    derive_config, run_learner, FeasibilityMode, LearnerConfig, LearnerError, ModeKind,
    Multipliers, Overrides,
};
pub use model::{
    evaluate_policy, reward_cost_values, slater_constant, Dims, Kernel, MixturePolicy, ModelError,
    Policy, TabularCmdp, ValueTable, Violation,
};
pub use sim::{monte_carlo, sample_episode, sample_mixture_episode, stream_rng, Trajectory};
