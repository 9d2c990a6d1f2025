//! Optimistic-reward / pessimistic-cost backups on the empirical model.
//!
//! For a pair with data the clipped recursions are
//!
//! ```text
//! Q_r(s,a) = min{ r + bonus(P_hat, V_r[h+1]) + P_hat V_r[h+1], H }
//! Q_c(s,a) = max{ c - bonus(P_hat, V_c[h+1]) + P_hat V_c[h+1], 0 }
//! ```
//!
//! and a pair without data takes `Q_r = H`, `Q_c = 0`.

use std::sync::Arc;

use ndarray::Array2;

use super::bonus::{compute_bonus, BonusParams};
use super::empirical::EmpiricalModel;
use crate::model::{Policy, ValueTable};

/// Greedy policy for one multiplier with its optimistic reward and
/// pessimistic cost values.
#[derive(Debug, Clone)]
pub struct GreedyBackup {
    pub policy: Arc<Policy>,
    pub v_reward: ValueTable,
    pub v_cost: ValueTable,
}

impl GreedyBackup {
    /// `(V_r, V_c)` at the initial state.
    pub fn initial_values(&self, s1: usize) -> (f64, f64) {
        (self.v_reward.get(0, s1), self.v_cost.get(0, s1))
    }
}

fn q_pair(
    model: &EmpiricalModel,
    bonus: &BonusParams,
    v_reward: &ValueTable,
    v_cost: &ValueTable,
    h: usize,
    s: usize,
    a: usize,
) -> (f64, f64) {
    let n = model.batch_size(h, s, a);
    if n == 0 {
        return (bonus.horizon, 0.0);
    }
    let row = model.row(h, s, a);
    let next_r = v_reward.row(h + 1);
    let next_c = v_cost.row(h + 1);
    let q_r = model.reward()[[h, s, a]] + compute_bonus(row, next_r, n, bonus) + row.dot(&next_r);
    let q_c = model.cost()[[h, s, a]] - compute_bonus(row, next_c, n, bonus) + row.dot(&next_c);
    (q_r.min(bonus.horizon), q_c.max(0.0))
}

/// Backward greedy selection on `Q_r - lambda Q_c`, lowest action index on
/// exact ties. The value tables follow the selected actions.
pub fn lagrangian_greedy_backup(
    model: &EmpiricalModel,
    lambda: f64,
    bonus: &BonusParams,
) -> GreedyBackup {
    let dims = model.dims();
    let mut v_reward = ValueTable::zeros(dims);
    let mut v_cost = ValueTable::zeros(dims);
    let mut actions = Array2::zeros((dims.horizon, dims.states));
    for h in (0..dims.horizon).rev() {
        for s in 0..dims.states {
            let mut best = (0, f64::NEG_INFINITY, 0.0, 0.0);
            for a in 0..dims.actions {
                let (q_r, q_c) = q_pair(model, bonus, &v_reward, &v_cost, h, s, a);
                let score = q_r - lambda * q_c;
                if score > best.1 {
                    best = (a, score, q_r, q_c);
                }
            }
            actions[[h, s]] = best.0;
            v_reward.set(h, s, best.2);
            v_cost.set(h, s, best.3);
        }
    }
    GreedyBackup {
        policy: Arc::new(Policy::deterministic(&actions, dims.actions)),
        v_reward,
        v_cost,
    }
}

/// Optimistic reward and pessimistic cost values of a fixed (possibly
/// stochastic) policy: `V_h(s) = sum_a pi(a|s) Q_h(s,a)`.
pub fn optimistic_evaluate(
    model: &EmpiricalModel,
    policy: &Policy,
    bonus: &BonusParams,
) -> (ValueTable, ValueTable) {
    let dims = model.dims();
    assert_eq!(policy.dims(), dims, "policy does not match the model");
    let mut v_reward = ValueTable::zeros(dims);
    let mut v_cost = ValueTable::zeros(dims);
    for h in (0..dims.horizon).rev() {
        for s in 0..dims.states {
            let (mut vr, mut vc) = (0.0, 0.0);
            for a in 0..dims.actions {
                let p = policy.prob(h, s, a);
                if p == 0.0 {
                    continue;
                }
                let (q_r, q_c) = q_pair(model, bonus, &v_reward, &v_cost, h, s, a);
                vr += p * q_r;
                vc += p * q_c;
            }
            v_reward.set(h, s, vr);
            v_cost.set(h, s, vc);
        }
    }
    (v_reward, v_cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{solve_unconstrained, Sense};
    use crate::instance_gen::{generate, GenSpec};
    use crate::learner::config::{DEFAULT_C1, DEFAULT_C2};
    use crate::model::{evaluate_policy, TabularCmdp};
    use crate::sim::{sample_categorical, stream_rng};
    use rand::Rng;

    fn params(h: usize, scale: f64) -> BonusParams {
        BonusParams {
            c1: DEFAULT_C1,
            c2: DEFAULT_C2,
            log_inv_delta: 20.0,
            horizon: h as f64,
            scale,
        }
    }

    fn instance(seed: u64) -> TabularCmdp {
        generate(&GenSpec::new(2, 2, 2, 0.3, seed)).unwrap()
    }

    /// Feeds `per_pair` sampled successors to every `(h, s, a)`.
    fn populated(m: &TabularCmdp, per_pair: usize, seed: u64) -> EmpiricalModel {
        let mut model = EmpiricalModel::new(m);
        let d = m.dims();
        let mut rng = stream_rng(seed, 0);
        for h in 0..d.horizon {
            for s in 0..d.states {
                for a in 0..d.actions {
                    for _ in 0..per_pair {
                        let next = sample_categorical(m.transition().row(h, s, a), rng.random());
                        model.record_transition(h, s, a, next);
                    }
                }
            }
        }
        model
    }

    #[test]
    fn empty_model_is_maximally_optimistic() {
        let m = instance(1);
        let model = EmpiricalModel::new(&m);
        for lambda in [0.0, 0.7, 5.0] {
            let out = lagrangian_greedy_backup(&model, lambda, &params(2, 1.0));
            assert_eq!(out.v_reward.get(0, m.initial_state()), 2.0);
            assert!(out.v_cost.as_array().iter().all(|&v| v == 0.0));
            for h in 0..2 {
                for s in 0..2 {
                    assert_eq!(out.policy.deterministic_action(h, s), Some(0));
                }
            }
        }
    }

    #[test]
    fn zero_bonus_reduces_to_exact_dp() {
        for seed in 0..10 {
            let m = instance(seed);
            let model = populated(&m, 5, seed);
            assert!(model.fully_populated());
            for lambda in [0.0, 0.5, 2.0] {
                let out = lagrangian_greedy_backup(&model, lambda, &params(2, 0.0));
                let stage = model.reward() - &(model.cost() * lambda);
                let (pi, v) = solve_unconstrained(model.kernel(), &stage, Sense::Max).unwrap();
                assert_eq!(*out.policy, pi, "seed {seed} lambda {lambda}");
                let vr = evaluate_policy(model.kernel(), model.reward(), &pi).unwrap();
                let vc = evaluate_policy(model.kernel(), model.cost(), &pi).unwrap();
                let s1 = m.initial_state();
                assert!((out.v_reward.get(0, s1) - vr.get(0, s1)).abs() < 1e-12);
                assert!((out.v_cost.get(0, s1) - vc.get(0, s1)).abs() < 1e-12);
                let lag = out.v_reward.get(0, s1) - lambda * out.v_cost.get(0, s1);
                assert!((lag - v.get(0, s1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn values_stay_in_range() {
        for seed in 0..10 {
            let m = generate(&GenSpec::new(3, 2, 4, 0.4, seed)).unwrap();
            let model = populated(&m, 1 + seed as usize, seed);
            for scale in [0.0, 0.01, 1.0] {
                let out = lagrangian_greedy_backup(&model, 0.3 * seed as f64, &params(4, scale));
                assert!(out.v_reward.as_array().iter().all(|&v| (0.0..=4.0).contains(&v)));
                assert!(out.v_cost.as_array().iter().all(|&v| (0.0..=4.0).contains(&v)));
            }
        }
    }

    #[test]
    fn fixed_policy_evaluation_matches_greedy_on_its_own_policy() {
        let m = instance(4);
        let model = populated(&m, 3, 4);
        let out = lagrangian_greedy_backup(&model, 0.8, &params(2, 0.05));
        let (vr, vc) = optimistic_evaluate(&model, &out.policy, &params(2, 0.05));
        assert_eq!(vr, out.v_reward);
        assert_eq!(vc, out.v_cost);
    }
}
