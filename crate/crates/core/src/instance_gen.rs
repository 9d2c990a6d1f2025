//! Random and preset instances with a controlled Slater constant.

use ndarray::{Array3, Array4};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{slater_constant, ModelError, TabularCmdp};
use crate::sim::stream_rng;

/// Maximum number of resampling attempts in [`generate`].
pub const MAX_RETRIES: usize = 100;

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &["single_state_tradeoff", "two_state_chain", "risky_shortcut"];

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("no instance with zeta = {zeta} and b in (0, {horizon}] after {attempts} attempts")]
    RetriesExhausted {
        zeta: f64,
        horizon: usize,
        attempts: usize,
    },
    #[error("unknown preset {name:?}; available: {}", PRESETS.join(", "))]
    UnknownPreset { name: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub zeta_target: f64,
    pub dirichlet_alpha: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(states: usize, actions: usize, horizon: usize, zeta_target: f64, seed: u64) -> Self {
        Self {
            states,
            actions,
            horizon,
            zeta_target,
            dirichlet_alpha: 1.0,
            seed,
        }
    }
}

/// Random instance whose Slater constant equals `spec.zeta_target`.
///
/// Kernel rows are symmetric Dirichlet, rewards and costs uniform on
/// `[0, 1]`, and the budget is set to the minimum achievable cost plus
/// `zeta_target`.
pub fn generate(spec: &GenSpec) -> Result<TabularCmdp, GenError> {
    if spec.states == 0 || spec.actions == 0 || spec.horizon == 0 {
        return Err(GenError::Spec("S, A and H must be positive".into()));
    }
    if !(spec.zeta_target > 0.0) {
        return Err(GenError::Spec(format!("zeta_target must be positive, got {}", spec.zeta_target)));
    }
    let gamma = Gamma::new(spec.dirichlet_alpha, 1.0)
        .map_err(|e| GenError::Spec(format!("dirichlet_alpha: {e}")))?;
    let (h_len, s_len, a_len) = (spec.horizon, spec.states, spec.actions);

    for attempt in 0..MAX_RETRIES {
        let mut rng = stream_rng(spec.seed, attempt as u64);
        let mut p = Array4::zeros((h_len, s_len, a_len, s_len));
        for h in 0..h_len {
            for s in 0..s_len {
                for a in 0..a_len {
                    let mut draws: Vec<f64> = (0..s_len).map(|_| gamma.sample(&mut rng)).collect();
                    let mut total: f64 = draws.iter().sum();
                    if !(total > 0.0) {
                        // every gamma draw underflowed; fall back to a point mass
                        draws[rng.random_range(0..s_len)] = 1.0;
                        total = 1.0;
                    }
                    for (next, d) in draws.into_iter().enumerate() {
                        p[[h, s, a, next]] = d / total;
                    }
                }
            }
        }
        let reward = Array3::from_shape_simple_fn((h_len, s_len, a_len), || rng.random::<f64>());
        let cost = Array3::from_shape_simple_fn((h_len, s_len, a_len), || rng.random::<f64>());
        // Provisional budget H only serves to pass validation; v_min does not
        // depend on it.
        let draft = TabularCmdp::from_parts(p, reward, cost, h_len as f64, 0)?.validated()?;
        let (zeta_h, _) = slater_constant(&draft);
        let v_min = h_len as f64 - zeta_h;
        let b = v_min + spec.zeta_target;
        if b > 0.0 && b <= h_len as f64 {
            return Ok(draft.with_budget(b)?);
        }
    }
    Err(GenError::RetriesExhausted {
        zeta: spec.zeta_target,
        horizon: spec.horizon,
        attempts: MAX_RETRIES,
    })
}

/// Fixed, documented instances.
///
/// * `single_state_tradeoff`: S = 1, A = 2, H = 1, r = (1, 0), c = (1, 0),
///   b = 0.5. The optimum mixes both actions evenly: V* = 0.5 at cost 0.5.
/// * `two_state_chain`: S = 2, A = 2, H = 3, start in state 0, and action
///   `a` always moves to state `a`. Action 0 is free (r = c = 0); action 1
///   earns r = 0.25 at cost 0.5 from state 0 and r = 1 at cost 0.5 from
///   state 1. Budget b = 1, so zeta = 1 (always playing action 0 costs
///   nothing). Always playing action 1 yields V_r = 2.25, V_c = 1.5, the
///   best deterministic feasible policies reach only V_r = 1.25 at V_c = 1,
///   and the constrained optimum plays "always act" with weight 2/3 and
///   "always wait" with weight 1/3: V* = 1.5, lambda* = 1.5.
/// * `risky_shortcut`: S = 3, A = 2, H = 3. State 0 is the start, 1 a
///   hazard, 2 a goal. Action 1 from the start takes a shortcut that reaches
///   the goal with probability 0.7 and the hazard otherwise; action 0 walks
///   safely to the goal with probability 0.5 and stays put otherwise. The
///   goal pays reward 1 for either action; the hazard charges cost 1. The
///   shortcut itself costs 0.2. Budget b = 0.4, so the
///   shortcut-then-retreat policy (cost 0.5) is out of reach.
pub fn preset(name: &str) -> Result<TabularCmdp, GenError> {
    let m = match name {
        "single_state_tradeoff" => TabularCmdp::from_parts(
            Array4::from_elem((1, 1, 2, 1), 1.0),
            Array3::from_shape_vec((1, 1, 2), vec![1.0, 0.0]).expect("shape"),
            Array3::from_shape_vec((1, 1, 2), vec![1.0, 0.0]).expect("shape"),
            0.5,
            0,
        )?,
        "two_state_chain" => {
            let h_len = 3;
            let mut p = Array4::zeros((h_len, 2, 2, 2));
            let mut r = Array3::zeros((h_len, 2, 2));
            let mut c = Array3::zeros((h_len, 2, 2));
            for h in 0..h_len {
                for s in 0..2 {
                    for a in 0..2 {
                        p[[h, s, a, a]] = 1.0;
                    }
                }
                r[[h, 0, 1]] = 0.25;
                c[[h, 0, 1]] = 0.5;
                r[[h, 1, 1]] = 1.0;
                c[[h, 1, 1]] = 0.5;
            }
            TabularCmdp::from_parts(p, r, c, 1.0, 0)?
        }
        "risky_shortcut" => {
            let h_len = 3;
            let mut p = Array4::zeros((h_len, 3, 2, 3));
            let mut r = Array3::zeros((h_len, 3, 2));
            let mut c = Array3::zeros((h_len, 3, 2));
            for h in 0..h_len {
                // start: walk (0.5 goal / 0.5 stay) or shortcut (0.7 goal / 0.3 hazard)
                p[[h, 0, 0, 2]] = 0.5;
                p[[h, 0, 0, 0]] = 0.5;
                p[[h, 0, 1, 2]] = 0.7;
                p[[h, 0, 1, 1]] = 0.3;
                c[[h, 0, 1]] = 0.2;
                // hazard: action 0 limps back to the start, action 1 stays
                p[[h, 1, 0, 0]] = 1.0;
                p[[h, 1, 1, 1]] = 1.0;
                c[[h, 1, 0]] = 1.0;
                c[[h, 1, 1]] = 1.0;
                // goal is absorbing and rewarding
                p[[h, 2, 0, 2]] = 1.0;
                p[[h, 2, 1, 2]] = 1.0;
                r[[h, 2, 0]] = 1.0;
                r[[h, 2, 1]] = 1.0;
            }
            TabularCmdp::from_parts(p, r, c, 0.4, 0)?
        }
        _ => {
            return Err(GenError::UnknownPreset {
                name: name.to_string(),
            })
        }
    };
    Ok(m.validated()?)
}
