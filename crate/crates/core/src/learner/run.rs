use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use super::backup::{lagrangian_greedy_backup, GreedyBackup};
use super::config::{ConfigError, LearnerConfig};
use super::dual::{dual_step, DualState};
use super::empirical::EmpiricalModel;
use crate::model::{MixturePolicy, Policy, TabularCmdp};
use crate::sim::{sample_mixture_episode, stream_rng, Trajectory};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{episodes} episodes requested, above the hard cap of {cap}")]
    TooManyEpisodes { episodes: usize, cap: usize },
}

/// Greedy backups keyed by dual grid index, valid until the empirical model
/// changes.
#[derive(Debug, Default)]
pub struct BackupCache {
    entries: HashMap<u64, Arc<GreedyBackup>>,
    hits: u64,
    misses: u64,
}

impl BackupCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn invalidate(&mut self) {
        self.entries.clear();
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    fn get(&mut self, model: &EmpiricalModel, state: &DualState, cfg: &LearnerConfig) -> Arc<GreedyBackup> {
        if let Some(b) = self.entries.get(&state.index) {
            self.hits += 1;
            return Arc::clone(b);
        }
        self.misses += 1;
        let bonus = cfg.bonus_params(model.dims().horizon);
        let b = Arc::new(lagrangian_greedy_backup(model, state.lambda(), &bonus));
        self.entries.insert(state.index, Arc::clone(&b));
        b
    }
}

/// Output of the primal-dual loop for one episode.
#[derive(Debug, Clone)]
pub struct EpisodePlan {
    /// Uniform mixture over the `T` primal iterates.
    pub mixture: MixturePolicy,
    /// The `T` primal iterates in order.
    pub policies: Vec<Arc<Policy>>,
    /// `lambda_1 .. lambda_T`.
    pub lambda_trace: Vec<f64>,
    /// Pessimistic cost value at the initial state of each iterate.
    pub vc_trace: Vec<f64>,
    /// Grid index of `lambda_{T+1}`.
    pub final_index: u64,
}

impl EpisodePlan {
    pub fn lambda_mean(&self) -> f64 {
        self.lambda_trace.iter().sum::<f64>() / self.lambda_trace.len() as f64
    }
}

/// `T` alternating primal (greedy backup) and dual (rounded step) updates
/// starting from `lambda = 0`.
pub fn primal_dual_episode(model: &EmpiricalModel, cfg: &LearnerConfig, b_prime: f64) -> EpisodePlan {
    primal_dual_episode_with(model, cfg, b_prime, 0, &mut BackupCache::new())
}

/// As [`primal_dual_episode`], starting from grid index `start_index` and
/// reusing `cache`.
pub fn primal_dual_episode_with(
    model: &EmpiricalModel,
    cfg: &LearnerConfig,
    b_prime: f64,
    start_index: u64,
    cache: &mut BackupCache,
) -> EpisodePlan {
    let s1 = model.initial_state();
    let mut state = DualState::new(cfg.dual_grid(), cfg.step_size).at_index(start_index);
    let t_len = cfg.iterations;
    let mut policies = Vec::with_capacity(t_len);
    let mut lambda_trace = Vec::with_capacity(t_len);
    let mut vc_trace = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        let backup = cache.get(model, &state, cfg);
        let (_, v_c) = backup.initial_values(s1);
        lambda_trace.push(state.lambda());
        vc_trace.push(v_c);
        policies.push(Arc::clone(&backup.policy));
        state = dual_step(state, v_c, b_prime);
    }
    EpisodePlan {
        mixture: MixturePolicy::uniform(&policies).expect("T >= 1 valid policies"),
        policies,
        lambda_trace,
        vc_trace,
        final_index: state.index,
    }
}

/// Everything the learner did in one episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    /// 0-based episode index.
    pub episode: usize,
    pub plan: EpisodePlan,
    /// Mixture component executed this episode.
    pub component: usize,
    pub trajectory: Trajectory,
    /// Whether any empirical row was rebuilt from this episode's data.
    pub triggered: bool,
    /// Row rebuilds so far, this episode included.
    pub model_updates: u64,
    /// True when the plan was computed from the same model and starting
    /// multiplier as the previous episode's, so it is identical to it.
    pub plan_repeated: bool,
}

/// Accumulates the final uniform mixture over all episode mixtures.
#[derive(Debug, Default)]
struct FinalMixture {
    components: Vec<(u64, Arc<Policy>)>,
    by_ptr: HashMap<*const Policy, usize>,
    total: u64,
}

impl FinalMixture {
    fn add(&mut self, p: &Arc<Policy>) {
        self.total += 1;
        let key = Arc::as_ptr(p);
        if let Some(&i) = self.by_ptr.get(&key) {
            self.components[i].0 += 1;
            return;
        }
        // Only pointers of retained Arcs may be remembered: a dropped Arc's
        // address can be reused by a different policy.
        if let Some((count, last)) = self.components.last_mut() {
            if **last == **p {
                *count += 1;
                return;
            }
        }
        self.by_ptr.insert(key, self.components.len());
        self.components.push((1, Arc::clone(p)));
    }

    fn mixture(&self) -> Option<MixturePolicy> {
        if self.total == 0 {
            return None;
        }
        let total = self.total as f64;
        let comps = self
            .components
            .iter()
            .map(|(n, p)| (*n as f64 / total, Arc::clone(p)))
            .collect();
        Some(MixturePolicy::new(comps).expect("counts form a distribution"))
    }
}

/// Online learner over a fixed environment.
///
/// The environment is only used to sample transitions and to read the
/// (known) reward and cost tables; its kernel is never inspected.
pub struct Learner<'a> {
    env: &'a TabularCmdp,
    cfg: LearnerConfig,
    seed: u64,
    b_prime: f64,
    model: EmpiricalModel,
    cache: BackupCache,
    next_episode: usize,
    start_index: u64,
    model_changed: bool,
    last_start: Option<u64>,
    final_mix: FinalMixture,
}

impl<'a> Learner<'a> {
    pub fn new(env: &'a TabularCmdp, cfg: LearnerConfig, seed: u64) -> Result<Self, LearnerError> {
        cfg.validate(None)?;
        if cfg.episodes > cfg.max_episodes {
            return Err(LearnerError::TooManyEpisodes {
                episodes: cfg.episodes,
                cap: cfg.max_episodes,
            });
        }
        Ok(Self {
            env,
            b_prime: cfg.shifted_budget(env.budget()),
            cfg,
            seed,
            model: EmpiricalModel::new(env),
            cache: BackupCache::new(),
            next_episode: 0,
            start_index: 0,
            model_changed: true,
            last_start: None,
            final_mix: FinalMixture::default(),
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn shifted_budget(&self) -> f64 {
        self.b_prime
    }

    pub fn model(&self) -> &EmpiricalModel {
        &self.model
    }

    pub fn cache(&self) -> &BackupCache {
        &self.cache
    }

    pub fn episodes_run(&self) -> usize {
        self.next_episode
    }

    /// Plans with the current model, acts for one episode on stream
    /// `episode` of the run seed, and folds the transitions into the model.
    pub fn run_episode(&mut self) -> EpisodeOutcome {
        let k = self.next_episode;
        let start = if self.cfg.warm_start { self.start_index } else { 0 };
        let plan_repeated = !self.model_changed && self.last_start == Some(start);
        let plan = primal_dual_episode_with(&self.model, &self.cfg, self.b_prime, start, &mut self.cache);
        for p in &plan.policies {
            self.final_mix.add(p);
        }

        let mut rng = stream_rng(self.seed, k as u64);
        let (component, trajectory) = sample_mixture_episode(self.env, &plan.mixture, &mut rng);
        let mut triggered = false;
        for st in &trajectory.steps {
            triggered |= self.model.record_transition(st.h, st.state, st.action, st.next_state);
        }
        if triggered {
            self.cache.invalidate();
        }
        self.model_changed = triggered;
        self.last_start = Some(start);
        self.start_index = plan.final_index;
        self.next_episode += 1;
        EpisodeOutcome {
            episode: k,
            plan,
            component,
            trajectory,
            triggered,
            model_updates: self.model.total_updates(),
            plan_repeated,
        }
    }

    /// Uniform mixture over every primal iterate of every episode so far.
    pub fn final_policy(&self) -> Option<MixturePolicy> {
        self.final_mix.mixture()
    }

    pub fn into_model(self) -> EmpiricalModel {
        self.model
    }
}

#[derive(Debug)]
pub struct LearnerRun {
    pub final_policy: MixturePolicy,
    pub model: EmpiricalModel,
    pub episodes: usize,
}

/// Runs all `cfg.episodes` episodes, handing each outcome to `observer`.
pub fn run_learner(
    env: &TabularCmdp,
    cfg: &LearnerConfig,
    seed: u64,
    mut observer: impl FnMut(&EpisodeOutcome),
) -> Result<LearnerRun, LearnerError> {
    let mut learner = Learner::new(env, cfg.clone(), seed)?;
    for _ in 0..cfg.episodes {
        let outcome = learner.run_episode();
        observer(&outcome);
    }
    let final_policy = learner.final_policy().expect("at least one episode");
    Ok(LearnerRun {
        final_policy,
        episodes: learner.episodes_run(),
        model: learner.into_model(),
    })
}
