//! Model-based primal-dual online learner.
//!
//! Each episode runs `T` primal-dual iterations on the empirical CMDP
//! (optimistic reward, pessimistic cost, shifted budget `b'`), executes the
//! uniform mixture of the `T` greedy policies for one episode, and feeds the
//! observed transitions into a doubling-batch transition estimate. The final
//! output is the uniform mixture over all episodes' iterates.

pub mod backup;
pub mod bonus;
pub mod config;
pub mod dual;
pub mod empirical;
pub mod run;

pub use backup::{lagrangian_greedy_backup, optimistic_evaluate, GreedyBackup};
pub use bonus::{compute_bonus, variance, BonusParams};
pub use config::{
    derive_config, ConfigError, FeasibilityMode, LearnerConfig, ModeKind, Multipliers, Overrides,
    DEFAULT_C1, DEFAULT_C2,
};
pub use dual::{dual_regret, dual_step, round_to_grid, DualGrid, DualState};
pub use empirical::{CountTables, EmpiricalModel};
pub use run::{
    primal_dual_episode, primal_dual_episode_with, run_learner, BackupCache, EpisodeOutcome,
    EpisodePlan, Learner, LearnerError, LearnerRun,
};
