//! Ground-truth CMDP solutions.
//!
//! [`solve_cmdp_exact`] minimizes the Lagrangian dual
//! `g(lambda) = max_pi V_r^pi - lambda (V_c^pi - b)` by bisection on the
//! subgradient `b - V_c^{pi_lambda}` and mixes the two deterministic policies
//! that bracket the optimal multiplier. [`brute_force_cmdp`] enumerates every
//! deterministic policy and is used as an independent oracle on tiny
//! instances.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use serde::Serialize;
use thiserror::Error;

use crate::model::{
    evaluate_policy, reward_cost_values, slater_constant, Kernel, MixturePolicy, ModelError,
    Policy, TabularCmdp, ValueTable,
};

/// Default bisection tolerance on the multiplier.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default enumeration bound for [`brute_force_cmdp`].
pub const DEFAULT_MAX_POLICIES: u64 = 4096;

// Slack on `cost <= b` comparisons against accumulated round-off.
const FEAS_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("instance too large for enumeration: {count} deterministic policies exceed the bound {max}")]
    TooLarge { count: String, max: u64 },
    #[error("multiplier search exceeded {cap} without reaching a feasible Lagrangian policy")]
    Degenerate { cap: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct ExactSolution {
    /// `V*_r(s_1)`, the reward value of the returned mixture.
    pub optimal_value: f64,
    pub optimal_cost: f64,
    /// At most two deterministic components.
    pub policy: MixturePolicy,
    /// Optimal multiplier; `+inf` when the instance is infeasible.
    pub lambda_star: f64,
    pub status: SolveStatus,
}

/// Backward DP on a signed stage function. Exact ties go to the lowest
/// action index. The returned table is the value of the returned policy.
pub fn solve_unconstrained(
    kernel: &Kernel,
    stage: &Array3<f64>,
    sense: Sense,
) -> Result<(Policy, ValueTable), ModelError> {
    let dims = kernel.dims();
    if stage.dim() != dims.stage_shape() {
        return Err(ModelError::Dimension(format!(
            "stage function {:?} vs kernel {dims}",
            stage.dim()
        )));
    }
    let mut values = ValueTable::zeros(dims);
    let mut actions = Array2::zeros((dims.horizon, dims.states));
    for h in (0..dims.horizon).rev() {
        for s in 0..dims.states {
            let mut best_a = 0;
            let mut best_q = f64::NAN;
            for a in 0..dims.actions {
                let q = stage[[h, s, a]] + kernel.expect(h, s, a, values.row(h + 1));
                let better = match sense {
                    Sense::Max => q > best_q,
                    Sense::Min => q < best_q,
                };
                if a == 0 || better {
                    best_a = a;
                    best_q = q;
                }
            }
            actions[[h, s]] = best_a;
            values.set(h, s, best_q);
        }
    }
    Ok((Policy::deterministic(&actions, dims.actions), values))
}

/// One evaluation of the Lagrangian dual function.
#[derive(Debug, Clone)]
pub struct DualPoint {
    pub lambda: f64,
    /// `g(lambda) = V_{r - lambda c}^{pi_lambda}(s_1) + lambda b`.
    pub value: f64,
    pub policy: Policy,
    pub reward: f64,
    pub cost: f64,
}

impl DualPoint {
    /// Subgradient of `g` at `lambda`.
    pub fn subgradient(&self, budget: f64) -> f64 {
        budget - self.cost
    }
}

pub fn dual_value(m: &TabularCmdp, lambda: f64) -> DualPoint {
    assert!(lambda >= 0.0, "multiplier must be non-negative, got {lambda}");
    let stage = m.reward() - &(m.cost() * lambda);
    let (policy, lagrangian) = solve_unconstrained(m.transition(), &stage, Sense::Max)
        .expect("instance tables share dimensions");
    let (reward, cost) = reward_cost_values(m, &policy).expect("policy matches instance");
    DualPoint {
        lambda,
        value: lagrangian.get(0, m.initial_state()) + lambda * m.budget(),
        policy,
        reward,
        cost,
    }
}

/// Optimal CMDP policy via dual bisection.
///
/// `tol` bounds the width of the final multiplier bracket. The returned
/// mixture has cost at most `b + tol` and reward within `tol * (1 + lambda_hi)`
/// of the optimum.
pub fn solve_cmdp_exact(m: &TabularCmdp, tol: f64) -> Result<ExactSolution, SolveError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let b = m.budget();
    let h = m.dims().horizon as f64;

    let (zeta, min_cost) = slater_constant(m);
    if zeta < -FEAS_EPS {
        return Ok(infeasible(m, min_cost));
    }

    let mut infeasible_pt = dual_value(m, 0.0);
    if infeasible_pt.cost <= b + FEAS_EPS {
        return Ok(ExactSolution {
            optimal_value: infeasible_pt.reward,
            optimal_cost: infeasible_pt.cost,
            policy: MixturePolicy::single(infeasible_pt.policy),
            lambda_star: 0.0,
            status: SolveStatus::Optimal,
        });
    }

    let cap = 4.0 * h / zeta.max(tol);
    let mut hi = 1.0;
    let mut feasible_pt = loop {
        let pt = dual_value(m, hi);
        if pt.cost <= b + FEAS_EPS {
            break pt;
        }
        infeasible_pt = pt;
        hi *= 2.0;
        if hi > cap {
            return match brute_force_cmdp(m, DEFAULT_MAX_POLICIES) {
                Ok(sol) => Ok(sol),
                Err(SolveError::TooLarge { .. }) => Err(SolveError::Degenerate { cap }),
                Err(e) => Err(e),
            };
        }
    };

    let mut lo = infeasible_pt.lambda;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let pt = dual_value(m, mid);
        if pt.cost <= b + FEAS_EPS {
            hi = mid;
            feasible_pt = pt;
        } else {
            lo = mid;
            infeasible_pt = pt;
        }
    }

    let mix = mix_pair(
        b,
        (feasible_pt.reward, feasible_pt.cost, feasible_pt.policy),
        (infeasible_pt.reward, infeasible_pt.cost, infeasible_pt.policy),
    );
    Ok(ExactSolution {
        lambda_star: 0.5 * (lo + hi),
        ..mix
    })
}

/// Best mixture of a feasible and an infeasible policy with cost at most `b`.
fn mix_pair(
    b: f64,
    feasible: (f64, f64, Policy),
    infeasible: (f64, f64, Policy),
) -> ExactSolution {
    let (r_f, c_f, p_f) = feasible;
    let (r_i, c_i, p_i) = infeasible;
    let single = |r, c, p| ExactSolution {
        optimal_value: r,
        optimal_cost: c,
        policy: MixturePolicy::single(p),
        lambda_star: 0.0,
        status: SolveStatus::Optimal,
    };
    if c_f == c_i || r_i <= r_f {
        return single(r_f, c_f, p_f);
    }
    let alpha = ((b - c_i) / (c_f - c_i)).clamp(0.0, 1.0);
    if alpha >= 1.0 {
        return single(r_f, c_f, p_f);
    }
    let policy = MixturePolicy::new(vec![(alpha, Arc::new(p_f)), (1.0 - alpha, Arc::new(p_i))])
        .expect("weights in [0,1] sum to one");
    ExactSolution {
        optimal_value: alpha * r_f + (1.0 - alpha) * r_i,
        optimal_cost: alpha * c_f + (1.0 - alpha) * c_i,
        policy,
        lambda_star: 0.0,
        status: SolveStatus::Optimal,
    }
}

fn infeasible(m: &TabularCmdp, min_cost: Policy) -> ExactSolution {
    let (reward, cost) = reward_cost_values(m, &min_cost).expect("policy matches instance");
    ExactSolution {
        optimal_value: reward,
        optimal_cost: cost,
        policy: MixturePolicy::single(min_cost),
        lambda_star: f64::INFINITY,
        status: SolveStatus::Infeasible,
    }
}

/// Number of deterministic policies, `A^(S*H)`, if it fits in a `u64`.
pub fn deterministic_policy_count(m: &TabularCmdp) -> Option<u64> {
    let d = m.dims();
    u32::try_from(d.states * d.horizon)
        .ok()
        .and_then(|e| (d.actions as u64).checked_pow(e))
}

/// Decodes `index` in base `A` into an `[h][s]` action table.
pub fn deterministic_policy(m: &TabularCmdp, mut index: u64) -> Policy {
    let d = m.dims();
    let mut actions = Array2::zeros((d.horizon, d.states));
    for slot in actions.iter_mut() {
        *slot = (index % d.actions as u64) as usize;
        index /= d.actions as u64;
    }
    Policy::deterministic(&actions, d.actions)
}

/// Value, cost, feasible policy index, and optionally an infeasible index
/// with its mixing weight.
type Candidate = (f64, f64, usize, Option<(usize, f64)>);

/// Exhaustive oracle: every deterministic policy and every feasible pairwise
/// mixture, evaluated with plain policy evaluation.
pub fn brute_force_cmdp(m: &TabularCmdp, max_policies: u64) -> Result<ExactSolution, SolveError> {
    let count = deterministic_policy_count(m);
    let count = match count {
        Some(n) if n <= max_policies => n,
        _ => {
            let d = m.dims();
            return Err(SolveError::TooLarge {
                count: count.map_or_else(
                    || format!("{}^{}", d.actions, d.states * d.horizon),
                    |n| n.to_string(),
                ),
                max: max_policies,
            });
        }
    };
    let b = m.budget();
    let s1 = m.initial_state();
    let mut table = Vec::with_capacity(count as usize);
    for i in 0..count {
        let p = deterministic_policy(m, i);
        let vr = evaluate_policy(m.transition(), m.reward(), &p)?.get(0, s1);
        let vc = evaluate_policy(m.transition(), m.cost(), &p)?.get(0, s1);
        table.push((vr, vc));
    }

    let mut best: Option<Candidate> = None;
    for (i, &(r_i, c_i)) in table.iter().enumerate() {
        if c_i > b + FEAS_EPS {
            continue;
        }
        if best.is_none_or(|(v, ..)| r_i > v) {
            best = Some((r_i, c_i, i, None));
        }
        for (j, &(r_j, c_j)) in table.iter().enumerate() {
            if c_j <= b + FEAS_EPS || r_j <= r_i {
                continue;
            }
            let w_j = (b - c_i) / (c_j - c_i);
            let v = (1.0 - w_j) * r_i + w_j * r_j;
            if best.is_none_or(|(bv, ..)| v > bv) {
                best = Some((v, (1.0 - w_j) * c_i + w_j * c_j, i, Some((j, w_j))));
            }
        }
    }

    let Some((value, cost, i, pair)) = best else {
        let (_, min_cost) = slater_constant(m);
        return Ok(infeasible(m, min_cost));
    };
    let policy = match pair {
        None => MixturePolicy::single(deterministic_policy(m, i as u64)),
        Some((j, w_j)) => MixturePolicy::new(vec![
            (1.0 - w_j, Arc::new(deterministic_policy(m, i as u64))),
            (w_j, Arc::new(deterministic_policy(m, j as u64))),
        ])?,
    };
    Ok(ExactSolution {
        optimal_value: value,
        optimal_cost: cost,
        policy,
        lambda_star: enumerated_dual_minimizer(&table, b, m.dims().horizon as f64),
        status: SolveStatus::Optimal,
    })
}

/// Minimizer of the piecewise-linear convex `max_i r_i - lambda (c_i - b)`
/// over the enumerated value pairs, by golden-section search.
fn enumerated_dual_minimizer(table: &[(f64, f64)], b: f64, horizon: f64) -> f64 {
    let g = |lambda: f64| {
        table
            .iter()
            .map(|&(r, c)| r - lambda * (c - b))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let min_cost = table.iter().map(|&(_, c)| c).fold(f64::INFINITY, f64::min);
    let zeta = b - min_cost;
    let (mut lo, mut hi) = (0.0, 4.0 * horizon / zeta.max(1e-9));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let x1 = hi - phi * (hi - lo);
        let x2 = lo + phi * (hi - lo);
        if g(x1) <= g(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let mid = 0.5 * (lo + hi);
    if g(0.0) <= g(mid) {
        0.0
    } else {
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance_gen::{generate, preset, GenSpec};
    use ndarray::{Array, Array4};

    fn single_state(r: [f64; 2], c: [f64; 2], b: f64) -> TabularCmdp {
        TabularCmdp::from_parts(
            Array4::from_elem((1, 1, 2, 1), 1.0),
            Array::from_shape_vec((1, 1, 2), r.to_vec()).unwrap(),
            Array::from_shape_vec((1, 1, 2), c.to_vec()).unwrap(),
            b,
            0,
        )
        .unwrap()
        .validated()
        .unwrap()
    }

    fn with_cost(m: &TabularCmdp, cost: Array3<f64>, b: f64) -> TabularCmdp {
        TabularCmdp::from_parts(
            m.transition().as_array().clone(),
            m.reward().clone(),
            cost,
            b,
            m.initial_state(),
        )
        .unwrap()
        .validated()
        .unwrap()
    }

    fn random_instance(seed: u64, states: usize, actions: usize, horizon: usize) -> TabularCmdp {
        generate(&GenSpec {
            states,
            actions,
            horizon,
            zeta_target: 0.3,
            dirichlet_alpha: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn zero_stage_ties_to_lowest_action() {
        let m = random_instance(3, 3, 3, 2);
        let (pi, v) = solve_unconstrained(m.transition(), &Array3::zeros((2, 3, 3)), Sense::Max).unwrap();
        assert!(v.as_array().iter().all(|&x| x == 0.0));
        for h in 0..2 {
            for s in 0..3 {
                assert_eq!(pi.deterministic_action(h, s), Some(0));
            }
        }
    }

    #[test]
    fn single_state_argmax() {
        let m = single_state([1.0, 0.0], [0.0, 0.0], 0.5);
        let (pi, v) = solve_unconstrained(m.transition(), m.reward(), Sense::Max).unwrap();
        assert_eq!(pi.deterministic_action(0, 0), Some(0));
        assert_eq!(v.get(0, 0), 1.0);
    }

    #[test]
    fn dp_dominates_every_deterministic_policy() {
        let m = random_instance(11, 2, 2, 2);
        let (_, v) = solve_unconstrained(m.transition(), m.reward(), Sense::Max).unwrap();
        let best = v.get(0, m.initial_state());
        assert_eq!(deterministic_policy_count(&m), Some(16));
        for i in 0..16 {
            let p = deterministic_policy(&m, i);
            let vi = evaluate_policy(m.transition(), m.reward(), &p).unwrap().get(0, m.initial_state());
            assert!(best >= vi - 1e-12, "policy {i}: {vi} > {best}");
        }
    }

    #[test]
    fn dual_value_at_zero_is_unconstrained_optimum() {
        let m = random_instance(5, 3, 2, 3);
        let (_, v) = solve_unconstrained(m.transition(), m.reward(), Sense::Max).unwrap();
        let pt = dual_value(&m, 0.0);
        assert!((pt.value - v.get(0, m.initial_state())).abs() < 1e-12);
    }

    #[test]
    fn dual_value_with_free_cost_is_affine() {
        let base = random_instance(6, 2, 2, 2);
        let m = with_cost(&base, Array3::zeros((2, 2, 2)), 0.7);
        let (_, v) = solve_unconstrained(m.transition(), m.reward(), Sense::Max).unwrap();
        for lambda in [0.0, 0.5, 3.0] {
            let pt = dual_value(&m, lambda);
            assert!((pt.value - (v.get(0, m.initial_state()) + lambda * 0.7)).abs() < 1e-12);
            assert_eq!(pt.cost, 0.0);
        }
    }

    #[test]
    fn dual_value_single_state_tie() {
        let m = single_state([1.0, 0.0], [1.0, 0.0], 0.5);
        let pt = dual_value(&m, 1.0);
        assert_eq!(pt.value, 0.5);
        assert_eq!(pt.policy.deterministic_action(0, 0), Some(0));
    }

    #[test]
    fn unconstrained_optimum_when_cost_free() {
        let base = random_instance(8, 3, 2, 2);
        let m = with_cost(&base, Array3::zeros((2, 3, 2)), 1.0);
        let sol = solve_cmdp_exact(&m, DEFAULT_TOL).unwrap();
        let (_, v) = solve_unconstrained(m.transition(), m.reward(), Sense::Max).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_eq!(sol.lambda_star, 0.0);
        assert_eq!(sol.policy.len(), 1);
        assert!((sol.optimal_value - v.get(0, m.initial_state())).abs() < 1e-12);

        let bf = brute_force_cmdp(&m, DEFAULT_MAX_POLICIES).unwrap();
        assert!((bf.optimal_value - sol.optimal_value).abs() < 1e-12);
    }

    #[test]
    fn single_state_tradeoff_mixes_evenly() {
        let m = preset("single_state_tradeoff").unwrap();
        let sol = solve_cmdp_exact(&m, DEFAULT_TOL).unwrap();
        assert!((sol.optimal_value - 0.5).abs() < 1e-9);
        assert!(sol.optimal_cost <= 0.5 + 1e-9);
        assert_eq!(sol.policy.len(), 2);
        for (w, _) in sol.policy.components() {
            assert!((w - 0.5).abs() < 1e-9);
        }
        let bf = brute_force_cmdp(&m, DEFAULT_MAX_POLICIES).unwrap();
        assert!((bf.optimal_value - 0.5).abs() < 1e-15);
        assert!((bf.lambda_star - 1.0).abs() < 1e-6);
        assert!((sol.lambda_star - 1.0).abs() < 1e-6);
    }

    #[test]
    fn all_cost_is_infeasible() {
        let m = single_state([1.0, 0.0], [1.0, 1.0], 0.5);
        let sol = solve_cmdp_exact(&m, DEFAULT_TOL).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert_eq!(brute_force_cmdp(&m, 16).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn enumeration_bound() {
        let m = random_instance(1, 3, 2, 3);
        assert!(matches!(brute_force_cmdp(&m, 511), Err(SolveError::TooLarge { .. })));
        assert!(brute_force_cmdp(&m, 512).is_ok());
    }

    #[test]
    fn dual_function_is_convex_and_bounds_optimum() {
        for seed in 0..20 {
            let m = random_instance(100 + seed, 3, 2, 2);
            let v_star = brute_force_cmdp(&m, DEFAULT_MAX_POLICIES).unwrap().optimal_value;
            let grid: Vec<f64> = (0..40).map(|i| i as f64 * 0.25).collect();
            let g: Vec<f64> = grid.iter().map(|&l| dual_value(&m, l).value).collect();
            for w in g.windows(3) {
                assert!(w[1] <= 0.5 * (w[0] + w[2]) + 1e-9);
            }
            assert!(g.iter().all(|&x| x >= v_star - 1e-9));
        }
    }

    #[test]
    fn bisection_matches_enumeration() {
        for seed in 0..30 {
            let m = random_instance(500 + seed, 2 + (seed % 2) as usize, 2, 1 + (seed % 2) as usize);
            let sol = solve_cmdp_exact(&m, DEFAULT_TOL).unwrap();
            let bf = brute_force_cmdp(&m, DEFAULT_MAX_POLICIES).unwrap();
            assert!((sol.optimal_value - bf.optimal_value).abs() < 1e-6, "seed {seed}");
            assert!(sol.optimal_cost <= m.budget() + 1e-8);
            assert!(sol.policy.len() <= 2);
        }
    }
}
