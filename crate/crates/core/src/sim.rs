//! Seeded trajectory sampling.
//!
//! # Random streams
//!
//! Every random draw comes from a SplitMix64 generator (Steele, Lea and
//! Flood, 2014): the state advances by the constant `0x9E3779B97F4A7C15` and
//! each output is the state passed through the variant-13 finalizer. A run
//! seed is split into independent streams, one per episode index, by seeding
//! the generator of stream `k` with
//!
//! ```text
//! mix64(seed ^ mix64(k + 0x9E3779B97F4A7C15))
//! ```
//!
//! where `mix64` is the same finalizer. Draws within a stream are consumed in
//! a fixed order: one uniform for the mixture component (mixture episodes
//! only), then for each step one uniform for the action followed by one for
//! the successor state. Uniforms are `f64` in `[0, 1)` built from the top 53
//! bits of one output. Categorical draws use the inverse CDF with cumulative
//! sums taken in ascending index order.

use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::model::{evaluate_policy, MixturePolicy, Policy, TabularCmdp};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for stream `stream` of run seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(mix64(seed ^ mix64(stream.wrapping_add(GOLDEN_GAMMA))))
}

/// Inverse-CDF draw from `probs` given a uniform `u` in `[0, 1)`.
pub fn sample_categorical<'a>(probs: impl IntoIterator<Item = &'a f64>, u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.into_iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    // u landed in the round-off gap above the final cumulative sum
    last_positive
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub h: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub cost: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }
}

/// One episode of exactly `H` steps from `s_1` under `pi`.
pub fn sample_episode<R: RngCore + ?Sized>(m: &TabularCmdp, pi: &Policy, rng: &mut R) -> Trajectory {
    let dims = m.dims();
    debug_assert_eq!(pi.dims(), dims);
    let mut state = m.initial_state();
    let mut steps = Vec::with_capacity(dims.horizon);
    for h in 0..dims.horizon {
        let action = sample_categorical(pi.action_dist(h, state), rng.random::<f64>());
        let next_state =
            sample_categorical(m.transition().row(h, state, action), rng.random::<f64>());
        steps.push(Step {
            h,
            state,
            action,
            reward: m.reward()[[h, state, action]],
            cost: m.cost()[[h, state, action]],
            next_state,
        });
        state = next_state;
    }
    Trajectory { steps }
}

/// Draws a component once, then runs a whole episode under it.
pub fn sample_mixture_episode<R: RngCore + ?Sized>(
    m: &TabularCmdp,
    mix: &MixturePolicy,
    rng: &mut R,
) -> (usize, Trajectory) {
    let u = rng.random::<f64>();
    let index = sample_categorical(mix.components().iter().map(|(w, _)| w), u);
    (index, sample_episode(m, &mix.components()[index].1, rng))
}

/// Sample mean and standard error of a per-episode quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    fn from_sums(n: u64, sum: f64, sum_sq: f64) -> Self {
        let n_f = n as f64;
        let mean = sum / n_f;
        let var = if n > 1 {
            ((sum_sq - n_f * mean * mean) / (n_f - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / n_f).sqrt(),
        }
    }

    /// Whether `value` lies within `k` standard errors of the mean. A zero
    /// standard error demands agreement to 1e-9.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= (k * self.std_err).max(1e-9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarlo {
    pub episodes: u64,
    pub reward: Estimate,
    pub cost: Estimate,
}

/// Monte-Carlo reward and cost returns of `mix`; episode `i` uses stream `i`.
pub fn monte_carlo(m: &TabularCmdp, mix: &MixturePolicy, episodes: u64, seed: u64) -> MonteCarlo {
    assert!(episodes > 0);
    let (mut sr, mut sr2, mut sc, mut sc2) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..episodes {
        let mut rng = stream_rng(seed, i);
        let (_, traj) = sample_mixture_episode(m, mix, &mut rng);
        let (r, c) = (traj.total_reward(), traj.total_cost());
        sr += r;
        sr2 += r * r;
        sc += c;
        sc2 += c * c;
    }
    MonteCarlo {
        episodes,
        reward: Estimate::from_sums(episodes, sr, sr2),
        cost: Estimate::from_sums(episodes, sc, sc2),
    }
}

/// Exact reward and cost values of `mix`, for comparison with [`monte_carlo`].
pub fn exact_values(m: &TabularCmdp, mix: &MixturePolicy) -> (f64, f64) {
    let s1 = m.initial_state();
    mix.components().iter().fold((0.0, 0.0), |(r, c), (w, p)| {
        let vr = evaluate_policy(m.transition(), m.reward(), p).expect("dims").get(0, s1);
        let vc = evaluate_policy(m.transition(), m.cost(), p).expect("dims").get(0, s1);
        (r + w * vr, c + w * vc)
    })
}
