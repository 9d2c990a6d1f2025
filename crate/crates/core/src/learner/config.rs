use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bonus::BonusParams;
use super::dual::DualGrid;
use crate::model::{Dims, TabularCmdp};

/// Bernstein bonus constants used by the confidence analysis.
pub const DEFAULT_C1: f64 = 460.0 / 9.0;
pub const DEFAULT_C2: f64 = 544.0 / 9.0;

/// Default hard cap on the number of episodes in one run.
pub const DEFAULT_MAX_EPISODES: usize = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("epsilon = {epsilon} outside {range}")]
    Epsilon { epsilon: f64, range: String },
    #[error("strict mode requires a positive Slater constant (got {0:?})")]
    MissingZeta(Option<f64>),
    #[error("strict gap {gap} must lie in (0, zeta = {zeta})")]
    Gap { gap: f64, zeta: f64 },
    #[error("{name} must be {requirement}, got {value}")]
    Field {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
}

/// How the budget is shifted inside the empirical problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeasibilityMode {
    /// `b' = b + tau`, small violations tolerated.
    Relaxed { tau: f64 },
    /// `b' = b - gap`, zero violation targeted.
    Strict { gap: f64 },
}

impl FeasibilityMode {
    pub fn shifted_budget(&self, budget: f64) -> f64 {
        match *self {
            FeasibilityMode::Relaxed { tau } => budget + tau,
            FeasibilityMode::Strict { gap } => budget - gap,
        }
    }

    pub fn kind(&self) -> ModeKind {
        match self {
            FeasibilityMode::Relaxed { .. } => ModeKind::Relaxed,
            FeasibilityMode::Strict { .. } => ModeKind::Strict,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Relaxed,
    Strict,
}

impl std::str::FromStr for ModeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relaxed" => Ok(ModeKind::Relaxed),
            "strict" => Ok(ModeKind::Strict),
            other => Err(format!("unknown mode {other:?} (expected relaxed|strict)")),
        }
    }
}

impl std::fmt::Display for ModeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModeKind::Relaxed => "relaxed",
            ModeKind::Strict => "strict",
        })
    }
}

/// All hyperparameters of one learner run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// Number of episodes `K`.
    pub episodes: usize,
    /// Primal-dual iterations per episode `T`.
    pub iterations: usize,
    /// Dual cap `U`; always an exact multiple of `grid_step`.
    pub dual_cap: f64,
    /// Dual grid spacing `eps1`.
    pub grid_step: f64,
    /// Dual step size `eta`.
    pub step_size: f64,
    pub delta: f64,
    /// `delta / (200 S A H^2 K^2)`.
    pub delta_prime: f64,
    pub mode: FeasibilityMode,
    pub c1: f64,
    pub c2: f64,
    /// Multiplier on both bonus terms; 1 reproduces the analysed constants.
    pub bonus_scale: f64,
    /// Start each episode's dual iterate where the previous one ended.
    pub warm_start: bool,
    pub max_episodes: usize,
}

impl LearnerConfig {
    /// Builds a config with `eta = U / (H sqrt(T))`, the default bonus
    /// constants, bonus scale 1 and `U` rounded up onto the grid.
    pub fn new(
        dims: Dims,
        episodes: usize,
        iterations: usize,
        dual_cap: f64,
        grid_step: f64,
        delta: f64,
        mode: FeasibilityMode,
    ) -> Self {
        let mut cfg = Self {
            episodes,
            iterations,
            dual_cap,
            grid_step,
            step_size: f64::NAN,
            delta,
            delta_prime: f64::NAN,
            mode,
            c1: DEFAULT_C1,
            c2: DEFAULT_C2,
            bonus_scale: 1.0,
            warm_start: false,
            max_episodes: DEFAULT_MAX_EPISODES,
        };
        cfg.refresh(dims);
        cfg
    }

    /// Recomputes the derived fields (grid-aligned `U`, `eta`, `delta'`)
    /// after `episodes`, `iterations`, `dual_cap`, `grid_step` or `delta`
    /// change.
    pub fn refresh(&mut self, dims: Dims) {
        if self.grid_step > 0.0 && self.dual_cap > 0.0 {
            self.dual_cap = DualGrid::new(self.grid_step, self.dual_cap).cap();
        }
        self.step_size = self.dual_cap / (dims.horizon as f64 * (self.iterations as f64).sqrt());
        let (s, a, h, k) = (
            dims.states as f64,
            dims.actions as f64,
            dims.horizon as f64,
            self.episodes as f64,
        );
        self.delta_prime = self.delta / (200.0 * s * a * h * h * k * k);
    }

    pub fn shifted_budget(&self, budget: f64) -> f64 {
        self.mode.shifted_budget(budget)
    }

    pub fn dual_grid(&self) -> DualGrid {
        DualGrid::new(self.grid_step, self.dual_cap)
    }

    pub fn bonus_params(&self, horizon: usize) -> BonusParams {
        BonusParams {
            c1: self.c1,
            c2: self.c2,
            log_inv_delta: (1.0 / self.delta_prime).ln(),
            horizon: horizon as f64,
            scale: self.bonus_scale,
        }
    }

    /// Right-hand side of the per-episode dual regret inequality,
    /// `2 eps1 H sqrt(T) + U H / sqrt(T)`.
    pub fn dual_regret_bound(&self, horizon: usize) -> f64 {
        let h = horizon as f64;
        let t = (self.iterations as f64).sqrt();
        2.0 * self.grid_step * h * t + self.dual_cap * h / t
    }

    pub fn validate(&self, zeta: Option<f64>) -> Result<(), ConfigError> {
        let field = |name, requirement, value: f64, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Field {
                    name,
                    requirement,
                    value,
                })
            }
        };
        field("episodes", "positive", self.episodes as f64, self.episodes > 0)?;
        field("iterations", "positive", self.iterations as f64, self.iterations > 0)?;
        field("dual_cap", "positive", self.dual_cap, self.dual_cap > 0.0)?;
        field("grid_step", "positive", self.grid_step, self.grid_step > 0.0)?;
        field("step_size", "positive", self.step_size, self.step_size > 0.0)?;
        field("delta", "in (0, 1)", self.delta, self.delta > 0.0 && self.delta < 1.0)?;
        field("bonus_scale", "non-negative", self.bonus_scale, self.bonus_scale >= 0.0)?;
        field("c1", "non-negative", self.c1, self.c1 >= 0.0)?;
        field("c2", "non-negative", self.c2, self.c2 >= 0.0)?;
        match self.mode {
            FeasibilityMode::Relaxed { tau } => field("tau", "non-negative", tau, tau >= 0.0),
            FeasibilityMode::Strict { gap } => {
                field("gap", "positive", gap, gap > 0.0)?;
                match zeta {
                    Some(z) if gap >= z => Err(ConfigError::Gap { gap, zeta: z }),
                    _ => Ok(()),
                }
            }
        }
    }
}

/// Scale factors on the sample-complexity settings, which fix orders but not
/// constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub episodes: f64,
    pub iterations: f64,
    pub dual_cap: f64,
    pub grid_step: f64,
}

impl Default for Multipliers {
    fn default() -> Self {
        Self {
            episodes: 1.0,
            iterations: 1.0,
            dual_cap: 1.0,
            grid_step: 1.0,
        }
    }
}

/// Explicit values that replace derived ones.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub episodes: Option<usize>,
    pub iterations: Option<usize>,
    pub dual_cap: Option<f64>,
    pub grid_step: Option<f64>,
    pub step_size: Option<f64>,
    pub bonus_scale: Option<f64>,
    pub warm_start: Option<bool>,
    pub max_episodes: Option<usize>,
}

/// Hyperparameters from the sample-complexity settings for accuracy
/// `epsilon`.
///
/// Relaxed: `K ~ S A H^3 / eps^2`, `T = H^4 / eps^4`, `U = H / eps`,
/// `eps1 = eps^3 / H^3`, `tau = eps / 2`.
/// Strict: `K ~ S A H^5 / (eps^2 zeta^2)`, `T = H^6 / (zeta^4 eps^2)`,
/// `U = H^2 / (zeta (H - eps))`, `eps1 = eps^2 zeta^2 / H^4`,
/// `gap = zeta eps / (2 H)`.
/// Logarithmic factors in `K` are left to the multiplier.
pub fn derive_config(
    mode: ModeKind,
    epsilon: f64,
    delta: f64,
    m: &TabularCmdp,
    zeta: Option<f64>,
    mult: &Multipliers,
    overrides: &Overrides,
) -> Result<LearnerConfig, ConfigError> {
    let dims = m.dims();
    let (s, a, h) = (dims.states as f64, dims.actions as f64, dims.horizon as f64);
    let eps = epsilon;

    let (episodes, iterations, dual_cap, grid_step, feas) = match mode {
        ModeKind::Relaxed => {
            if !(eps > 0.0 && eps <= h) {
                return Err(ConfigError::Epsilon {
                    epsilon: eps,
                    range: format!("(0, H = {h}]"),
                });
            }
            (
                s * a * h.powi(3) / eps.powi(2),
                h.powi(4) / eps.powi(4),
                h / eps,
                eps.powi(3) / h.powi(3),
                FeasibilityMode::Relaxed { tau: eps / 2.0 },
            )
        }
        ModeKind::Strict => {
            let z = match zeta {
                Some(z) if z > 0.0 => z,
                other => return Err(ConfigError::MissingZeta(other)),
            };
            if !(eps > 0.0 && eps <= h - z) {
                return Err(ConfigError::Epsilon {
                    epsilon: eps,
                    range: format!("(0, H - zeta = {}]", h - z),
                });
            }
            (
                s * a * h.powi(5) / (eps.powi(2) * z.powi(2)),
                h.powi(6) / (z.powi(4) * eps.powi(2)),
                h.powi(2) / (z * (h - eps)),
                eps.powi(2) * z.powi(2) / h.powi(4),
                FeasibilityMode::Strict {
                    gap: z * eps / (2.0 * h),
                },
            )
        }
    };

    let ceil_count = |x: f64| (x.ceil() as usize).max(1);
    let mut cfg = LearnerConfig::new(
        dims,
        overrides
            .episodes
            .unwrap_or_else(|| ceil_count(episodes * mult.episodes)),
        overrides
            .iterations
            .unwrap_or_else(|| ceil_count(iterations * mult.iterations)),
        overrides.dual_cap.unwrap_or(dual_cap * mult.dual_cap),
        overrides.grid_step.unwrap_or(grid_step * mult.grid_step),
        delta,
        feas,
    );
    if let Some(scale) = overrides.bonus_scale {
        cfg.bonus_scale = scale;
    }
    if let Some(w) = overrides.warm_start {
        cfg.warm_start = w;
    }
    if let Some(cap) = overrides.max_episodes {
        cfg.max_episodes = cap;
    }
    if let Some(eta) = overrides.step_size {
        cfg.step_size = eta;
    }
    cfg.validate(zeta)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance_gen::preset;
    use crate::model::slater_constant;

    fn chain() -> TabularCmdp {
        preset("two_state_chain").unwrap()
    }

    #[test]
    fn relaxed_with_epsilon_equal_horizon() {
        let m = chain();
        let cfg = derive_config(
            ModeKind::Relaxed,
            3.0,
            0.1,
            &m,
            None,
            &Multipliers::default(),
            &Overrides::default(),
        )
        .unwrap();
        assert_eq!(cfg.mode, FeasibilityMode::Relaxed { tau: 1.5 });
        assert_eq!(cfg.dual_cap, 1.0);
        assert_eq!(cfg.iterations, 1);
        assert_eq!(cfg.grid_step, 1.0);
        assert_eq!(cfg.step_size, 1.0 / 3.0);
    }

    #[test]
    fn relaxed_half_epsilon_horizon_four() {
        let m = crate::instance_gen::generate(&crate::instance_gen::GenSpec::new(2, 2, 4, 0.5, 1)).unwrap();
        let cfg = derive_config(
            ModeKind::Relaxed,
            0.5,
            0.1,
            &m,
            None,
            &Multipliers::default(),
            &Overrides::default(),
        )
        .unwrap();
        assert_eq!(cfg.iterations, 4096);
        assert_eq!(cfg.dual_cap, 8.0);
        assert_eq!(cfg.grid_step, 0.001953125);
        assert_eq!(cfg.episodes, (2.0f64 * 2.0 * 64.0 / 0.25) as usize);
        assert_eq!(cfg.step_size, 8.0 / (4.0 * 64.0));
        let dp = 0.1 / (200.0 * 2.0 * 2.0 * 16.0 * (cfg.episodes as f64).powi(2));
        assert!((cfg.delta_prime - dp).abs() <= 1e-12 * dp);
    }

    #[test]
    fn strict_gap_uses_slater_constant() {
        let m = chain();
        let (zeta, _) = slater_constant(&m);
        let cfg = derive_config(
            ModeKind::Strict,
            1.5,
            0.1,
            &m,
            Some(zeta),
            &Multipliers::default(),
            &Overrides::default(),
        )
        .unwrap();
        assert_eq!(cfg.mode, FeasibilityMode::Strict { gap: zeta * 1.5 / 6.0 });
        assert!((cfg.dual_cap - 9.0 / (zeta * 1.5)).abs() < 1e-12 + cfg.grid_step);
        assert!(cfg.shifted_budget(m.budget()) < m.budget());
    }

    #[test]
    fn strict_without_zeta_or_out_of_range() {
        let m = chain();
        let d = Multipliers::default();
        let o = Overrides::default();
        assert_eq!(
            derive_config(ModeKind::Strict, 1.0, 0.1, &m, None, &d, &o),
            Err(ConfigError::MissingZeta(None))
        );
        assert!(matches!(
            derive_config(ModeKind::Strict, 2.5, 0.1, &m, Some(1.0), &d, &o),
            Err(ConfigError::Epsilon { .. })
        ));
        assert!(matches!(
            derive_config(ModeKind::Relaxed, 3.5, 0.1, &m, None, &d, &o),
            Err(ConfigError::Epsilon { .. })
        ));
        assert!(matches!(
            derive_config(ModeKind::Relaxed, 1.0, 1.5, &m, None, &d, &o),
            Err(ConfigError::Field { name: "delta", .. })
        ));
    }

    #[test]
    fn overrides_recompute_step_size_and_cap() {
        let m = chain();
        let o = Overrides {
            episodes: Some(10),
            iterations: Some(4),
            dual_cap: Some(1.1),
            grid_step: Some(0.25),
            bonus_scale: Some(0.1),
            ..Overrides::default()
        };
        let cfg = derive_config(ModeKind::Relaxed, 1.0, 0.1, &m, None, &Multipliers::default(), &o).unwrap();
        assert_eq!(cfg.episodes, 10);
        assert_eq!(cfg.dual_cap, 1.25);
        assert_eq!(cfg.step_size, 1.25 / (3.0 * 2.0));
        assert_eq!(cfg.bonus_scale, 0.1);
    }

    #[test]
    fn gap_must_stay_below_zeta() {
        let m = chain();
        let mut cfg = LearnerConfig::new(m.dims(), 1, 1, 1.0, 0.5, 0.1, FeasibilityMode::Strict { gap: 1.2 });
        assert!(matches!(cfg.validate(Some(1.0)), Err(ConfigError::Gap { .. })));
        cfg.mode = FeasibilityMode::Strict { gap: 0.5 };
        assert!(cfg.validate(Some(1.0)).is_ok());
    }

    #[test]
    fn mode_names_parse() {
        assert_eq!("strict".parse::<ModeKind>(), Ok(ModeKind::Strict));
        assert!("lax".parse::<ModeKind>().is_err());
    }
}
