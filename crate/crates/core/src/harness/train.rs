use std::time::Instant;

use thiserror::Error;

use super::metrics::{check_final_policy, MetricsAccumulator, RunHeader, RunRecord, Verdict};
use super::report::Summary;
use crate::exact::ExactSolution;
use crate::learner::{Learner, LearnerConfig, LearnerError};
use crate::model::{evaluate_mixture, slater_constant, MixturePolicy, ModelError, TabularCmdp};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("eval_every must be at least 1")]
    EvalEvery,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// Evaluate every n-th episode exactly and interpolate the rest. The
    /// first and last episodes are always evaluated.
    pub eval_every: u64,
    /// Fill `wall_ms` with elapsed time. Off by default so that identical
    /// runs produce identical CSV files.
    pub record_timing: bool,
    /// Accuracy used for the final-policy verdict.
    pub epsilon: f64,
}

impl TrainOptions {
    pub fn new(epsilon: f64) -> Self {
        Self {
            eval_every: 1,
            record_timing: false,
            epsilon,
        }
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    pub record: RunRecord,
    pub final_policy: MixturePolicy,
    pub verdict: Verdict,
    pub summary: Summary,
}

/// Runs the learner on `env` and measures every episode against the exact
/// solution.
pub fn train(
    env: &TabularCmdp,
    exact: &ExactSolution,
    cfg: &LearnerConfig,
    seed: u64,
    opts: &TrainOptions,
) -> Result<TrainOutput, TrainError> {
    if opts.eval_every == 0 {
        return Err(TrainError::EvalEvery);
    }
    let mut learner = Learner::new(env, cfg.clone(), seed)?;
    let mut acc = MetricsAccumulator::new(exact.optimal_value, env.budget());
    let start = Instant::now();
    let episodes = cfg.episodes as u64;
    let mut prev: Option<(f64, f64)> = None;
    for k in 1..=episodes {
        let out = learner.run_episode();
        let wall_ms = if opts.record_timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        let lambda_mean = out.plan.lambda_mean();
        let due = k == 1 || k == episodes || k % opts.eval_every == 0;
        let values = match prev {
            Some(v) if out.plan_repeated => Some(v),
            _ if due => Some((
                evaluate_mixture(env, env.reward(), &out.plan.mixture)?,
                evaluate_mixture(env, env.cost(), &out.plan.mixture)?,
            )),
            _ => None,
        };
        match values {
            Some((v_r, v_c)) => acc.push_evaluated(k, v_r, v_c, lambda_mean, out.model_updates, wall_ms),
            None => acc.push_skipped(k, lambda_mean, out.model_updates, wall_ms),
        }
        prev = values;
    }
    let final_policy = learner.final_policy().expect("at least one episode");
    let header = RunHeader {
        config: Some(cfg.clone()),
        seed,
        instance_hash: env.content_hash(),
        zeta: slater_constant(env).0,
        optimal_value: exact.optimal_value,
        budget: env.budget(),
        eval_every: opts.eval_every,
    };
    let record = acc.finish(header);
    let verdict = check_final_policy(env, exact, &final_policy, opts.epsilon, cfg.mode.kind())?;
    let summary = Summary::new(&record, vec![verdict.clone()]);
    Ok(TrainOutput {
        record,
        final_policy,
        verdict,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{solve_cmdp_exact, DEFAULT_TOL};
    use crate::harness::metrics::cv_from_rows;
    use crate::harness::report::csv_string;
    use crate::instance_gen::preset;
    use crate::learner::{derive_config, ModeKind, Multipliers, Overrides};

    fn setup(episodes: usize) -> (TabularCmdp, ExactSolution, LearnerConfig) {
        let m = preset("two_state_chain").unwrap();
        let exact = solve_cmdp_exact(&m, DEFAULT_TOL).unwrap();
        let cfg = derive_config(
            ModeKind::Relaxed,
            1.5,
            0.1,
            &m,
            None,
            &Multipliers::default(),
            &Overrides {
                episodes: Some(episodes),
                iterations: Some(10),
                bonus_scale: Some(0.1),
                ..Overrides::default()
            },
        )
        .unwrap();
        (m, exact, cfg)
    }

    #[test]
    fn record_is_consistent() {
        let (m, exact, cfg) = setup(40);
        let out = train(&m, &exact, &cfg, 3, &TrainOptions::new(1.5)).unwrap();
        let rows = &out.record.rows;
        assert_eq!(rows.len(), 40);
        assert_eq!(cv_from_rows(rows, m.budget()), out.record.cv_total());
        assert_eq!(out.summary.regret_total, rows[39].regret_cum);
        assert!(rows.iter().all(|r| r.wall_ms == 0 && !r.interpolated));
        assert!(rows.windows(2).all(|w| w[1].model_updates_cum >= w[0].model_updates_cum));
        for w in rows.windows(2) {
            assert!(w[1].regret_cum - w[0].regret_cum >= -1e-7);
        }
    }

    #[test]
    fn subsampled_evaluation_flags_rows() {
        let (m, exact, cfg) = setup(30);
        let full = train(&m, &exact, &cfg, 5, &TrainOptions::new(1.5)).unwrap();
        let opts = TrainOptions {
            eval_every: 7,
            ..TrainOptions::new(1.5)
        };
        let sub = train(&m, &exact, &cfg, 5, &opts).unwrap();
        assert!(sub.record.rows.iter().any(|r| r.interpolated));
        assert!(!sub.record.rows[0].interpolated && !sub.record.rows[29].interpolated);
        for (a, b) in full.record.rows.iter().zip(&sub.record.rows) {
            if !b.interpolated {
                assert_eq!(a.v_r_true, b.v_r_true);
            }
        }
        assert!(csv_string(&sub.record).lines().next().unwrap().ends_with(",interpolated"));
        assert_eq!(full.summary.verdicts, sub.summary.verdicts);
    }

    #[test]
    fn rejects_zero_eval_every() {
        let (m, exact, cfg) = setup(2);
        let opts = TrainOptions {
            eval_every: 0,
            ..TrainOptions::new(1.5)
        };
        assert!(matches!(train(&m, &exact, &cfg, 0, &opts), Err(TrainError::EvalEvery)));
    }
}
