use serde::{Deserialize, Serialize};

use crate::exact::ExactSolution;
use crate::learner::{LearnerConfig, ModeKind};
use crate::model::{evaluate_mixture, MixturePolicy, ModelError, TabularCmdp};

/// Numerical slack on every verdict comparison; in strict mode it is the
/// only slack on the cost constraint.
pub const STRICT_TOL: f64 = 1e-9;

/// One CSV row per episode; `k` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub k: u64,
    pub v_r_true: f64,
    pub v_c_true: f64,
    pub regret_cum: f64,
    pub cv_cum: f64,
    pub lambda_mean: f64,
    pub model_updates_cum: u64,
    pub wall_ms: u64,
    /// Values were interpolated rather than evaluated (`--eval-every > 1`).
    pub interpolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub config: Option<LearnerConfig>,
    pub seed: u64,
    pub instance_hash: String,
    pub zeta: f64,
    pub optimal_value: f64,
    pub budget: f64,
    pub eval_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub header: RunHeader,
    pub rows: Vec<RunRow>,
}

impl RunRecord {
    pub fn regret_total(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.regret_cum)
    }

    pub fn cv_total(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cv_cum)
    }
}

/// `max(0, sum_k (v_c_true - b))` over `rows`, accumulated in row order.
pub fn cv_from_rows(rows: &[RunRow], budget: f64) -> f64 {
    rows.iter().fold(0.0, |acc, r| acc + (r.v_c_true - budget)).max(0.0)
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    k: u64,
    lambda_mean: f64,
    model_updates_cum: u64,
    wall_ms: u64,
}

/// Builds run rows one episode at a time.
///
/// Episodes whose values are not supplied are buffered and filled in by
/// linear interpolation once the next evaluated episode arrives.
#[derive(Debug)]
pub struct MetricsAccumulator {
    optimal_value: f64,
    budget: f64,
    regret: f64,
    cv_raw: f64,
    last: Option<(u64, f64, f64)>,
    pending: Vec<Pending>,
    rows: Vec<RunRow>,
}

impl MetricsAccumulator {
    pub fn new(optimal_value: f64, budget: f64) -> Self {
        Self {
            optimal_value,
            budget,
            regret: 0.0,
            cv_raw: 0.0,
            last: None,
            pending: Vec::new(),
            rows: Vec::new(),
        }
    }

    fn emit(&mut self, p: Pending, v_r: f64, v_c: f64, interpolated: bool) {
        self.regret += self.optimal_value - v_r;
        self.cv_raw += v_c - self.budget;
        self.rows.push(RunRow {
            k: p.k,
            v_r_true: v_r,
            v_c_true: v_c,
            regret_cum: self.regret,
            cv_cum: self.cv_raw.max(0.0),
            lambda_mean: p.lambda_mean,
            model_updates_cum: p.model_updates_cum,
            wall_ms: p.wall_ms,
            interpolated,
        });
    }

    /// Adds episode `k` with exact values `(v_r, v_c)`, flushing any
    /// buffered episodes before it.
    pub fn push_evaluated(&mut self, k: u64, v_r: f64, v_c: f64, lambda_mean: f64, updates: u64, wall_ms: u64) {
        let pending = std::mem::take(&mut self.pending);
        let (k0, r0, c0) = self.last.unwrap_or((k, v_r, v_c));
        for p in pending {
            let t = if k == k0 { 1.0 } else { (p.k - k0) as f64 / (k - k0) as f64 };
            self.emit(p, r0 + t * (v_r - r0), c0 + t * (v_c - c0), true);
        }
        let p = Pending {
            k,
            lambda_mean,
            model_updates_cum: updates,
            wall_ms,
        };
        self.emit(p, v_r, v_c, false);
        self.last = Some((k, v_r, v_c));
    }

    /// Adds episode `k` without values; they are interpolated later.
    pub fn push_skipped(&mut self, k: u64, lambda_mean: f64, updates: u64, wall_ms: u64) {
        self.pending.push(Pending {
            k,
            lambda_mean,
            model_updates_cum: updates,
            wall_ms,
        });
    }

    /// Values of the most recently evaluated episode.
    pub fn last_values(&self) -> Option<(f64, f64)> {
        self.last.map(|(_, r, c)| (r, c))
    }

    /// Completes the record. Buffered episodes after the last evaluation
    /// carry its values forward.
    pub fn finish(mut self, header: RunHeader) -> RunRecord {
        let pending = std::mem::take(&mut self.pending);
        if let Some((_, r, c)) = self.last {
            for p in pending {
                self.emit(p, r, c, true);
            }
        }
        RunRecord {
            header,
            rows: self.rows,
        }
    }
}

/// Evaluates each episode mixture exactly under the true model and
/// accumulates regret and positive-part constraint violation.
///
/// Each item is `(mixture, lambda_mean, model_updates_cum)`.
pub fn compute_metrics<'a>(
    m: &TabularCmdp,
    exact: &ExactSolution,
    episode_mixtures: impl IntoIterator<Item = (&'a MixturePolicy, f64, u64)>,
    header: RunHeader,
) -> Result<RunRecord, ModelError> {
    let mut acc = MetricsAccumulator::new(exact.optimal_value, m.budget());
    for (i, (mix, lambda_mean, updates)) in episode_mixtures.into_iter().enumerate() {
        let v_r = evaluate_mixture(m, m.reward(), mix)?;
        let v_c = evaluate_mixture(m, m.cost(), mix)?;
        acc.push_evaluated(i as u64 + 1, v_r, v_c, lambda_mean, updates, 0);
    }
    Ok(acc.finish(header))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub mode: ModeKind,
    pub passed: bool,
    pub epsilon: f64,
    pub v_r: f64,
    pub v_c: f64,
    pub optimal_value: f64,
    pub budget: f64,
}

/// Exact final-policy check. Relaxed: `V_r >= V* - eps` and
/// `V_c <= b + eps`. Strict: `V_r >= V* - eps` and `V_c <= b`. Every
/// comparison allows [`STRICT_TOL`] of rounding.
pub fn check_final_policy(
    m: &TabularCmdp,
    exact: &ExactSolution,
    pi_bar: &MixturePolicy,
    epsilon: f64,
    mode: ModeKind,
) -> Result<Verdict, ModelError> {
    let v_r = evaluate_mixture(m, m.reward(), pi_bar)?;
    let v_c = evaluate_mixture(m, m.cost(), pi_bar)?;
    Ok(verdict_from_values(v_r, v_c, exact.optimal_value, m.budget(), epsilon, mode))
}

pub fn verdict_from_values(v_r: f64, v_c: f64, optimal_value: f64, budget: f64, epsilon: f64, mode: ModeKind) -> Verdict {
    let cost_slack = match mode {
        ModeKind::Relaxed => epsilon,
        ModeKind::Strict => 0.0,
    };
    Verdict {
        mode,
        passed: v_r >= optimal_value - epsilon - STRICT_TOL && v_c <= budget + cost_slack + STRICT_TOL,
        epsilon,
        v_r,
        v_c,
        optimal_value,
        budget,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{solve_cmdp_exact, DEFAULT_TOL};
    use crate::instance_gen::preset;
    use crate::model::slater_constant;

    fn header(m: &TabularCmdp, exact: &ExactSolution) -> RunHeader {
        RunHeader {
            config: None,
            seed: 0,
            instance_hash: m.content_hash(),
            zeta: slater_constant(m).0,
            optimal_value: exact.optimal_value,
            budget: m.budget(),
            eval_every: 1,
        }
    }

    #[test]
    fn optimal_mixture_has_no_regret_or_violation() {
        let m = preset("two_state_chain").unwrap();
        let exact = solve_cmdp_exact(&m, DEFAULT_TOL).unwrap();
        let mixes = vec![&exact.policy; 5];
        let rec = compute_metrics(&m, &exact, mixes.into_iter().map(|p| (p, 0.0, 0)), header(&m, &exact)).unwrap();
        assert_eq!(rec.rows.len(), 5);
        assert!(rec.regret_total().abs() < 1e-7);
        assert!(rec.cv_total() < 1e-7);
    }

    #[test]
    fn min_cost_policy_regret_is_linear() {
        let m = preset("two_state_chain").unwrap();
        let exact = solve_cmdp_exact(&m, DEFAULT_TOL).unwrap();
        let (_, pc) = slater_constant(&m);
        let mix = MixturePolicy::single(pc);
        let v_rc = evaluate_mixture(&m, m.reward(), &mix).unwrap();
        let k = 7;
        let rec = compute_metrics(
            &m,
            &exact,
            std::iter::repeat_n((&mix, 0.0, 0), k),
            header(&m, &exact),
        )
        .unwrap();
        assert_eq!(rec.cv_total(), 0.0);
        let expected = k as f64 * (exact.optimal_value - v_rc);
        assert!((rec.regret_total() - expected).abs() < 1e-9);
        assert!(rec.rows.windows(2).all(|w| w[1].regret_cum >= w[0].regret_cum));
    }

    #[test]
    fn positive_part_on_violation() {
        let mut acc = MetricsAccumulator::new(1.0, 0.5);
        acc.push_evaluated(1, 1.0, 0.7, 0.0, 0, 0);
        let rec = acc.finish(RunHeader {
            config: None,
            seed: 0,
            instance_hash: String::new(),
            zeta: 0.5,
            optimal_value: 1.0,
            budget: 0.5,
            eval_every: 1,
        });
        assert!((rec.cv_total() - 0.2).abs() < 1e-15);

        let mut acc = MetricsAccumulator::new(1.0, 0.5);
        acc.push_evaluated(1, 1.0, 0.1, 0.0, 0, 0);
        acc.push_evaluated(2, 1.0, 0.7, 0.0, 0, 0);
        let rows = acc.finish(rec.header.clone()).rows;
        assert_eq!(rows[0].cv_cum, 0.0);
        assert_eq!(rows[1].cv_cum, 0.0);
        assert_eq!(cv_from_rows(&rows, 0.5), rows[1].cv_cum);
    }

    #[test]
    fn skipped_episodes_interpolate_linearly() {
        let mut acc = MetricsAccumulator::new(2.0, 1.0);
        acc.push_evaluated(1, 1.0, 0.0, 0.0, 1, 0);
        acc.push_skipped(2, 0.0, 1, 0);
        acc.push_skipped(3, 0.0, 1, 0);
        acc.push_evaluated(4, 1.6, 0.3, 0.0, 2, 0);
        acc.push_skipped(5, 0.0, 2, 0);
        let rec = acc.finish(RunHeader {
            config: None,
            seed: 0,
            instance_hash: String::new(),
            zeta: 1.0,
            optimal_value: 2.0,
            budget: 1.0,
            eval_every: 3,
        });
        let vr: Vec<f64> = rec.rows.iter().map(|r| r.v_r_true).collect();
        let flags: Vec<bool> = rec.rows.iter().map(|r| r.interpolated).collect();
        assert_eq!(flags, vec![false, true, true, false, true]);
        for (a, b) in vr.iter().zip([1.0, 1.2, 1.4, 1.6, 1.6]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(cv_from_rows(&rec.rows, 1.0), rec.cv_total());
    }

    #[test]
    fn verdicts() {
        let m = preset("two_state_chain").unwrap();
        let exact = solve_cmdp_exact(&m, DEFAULT_TOL).unwrap();
        for mode in [ModeKind::Relaxed, ModeKind::Strict] {
            let v = check_final_policy(&m, &exact, &exact.policy, 1e-7, mode).unwrap();
            assert!(v.passed, "{mode:?} {v:?}");
        }

        let (_, pc) = slater_constant(&m);
        let mix = MixturePolicy::single(pc);
        let gap = exact.optimal_value - evaluate_mixture(&m, m.reward(), &mix).unwrap();
        assert!(check_final_policy(&m, &exact, &mix, gap + 1e-9, ModeKind::Relaxed).unwrap().passed);
        assert!(!check_final_policy(&m, &exact, &mix, gap - 1e-3, ModeKind::Relaxed).unwrap().passed);

        let eps = 0.1;
        let over = verdict_from_values(10.0, m.budget() + eps + 0.01, 1.5, m.budget(), eps, ModeKind::Relaxed);
        assert!(!over.passed);
    }
}
