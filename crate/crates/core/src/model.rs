//! Tabular finite-horizon CMDP instances, time-indexed policies and exact
//! policy evaluation under a known kernel.
//!
//! All indices are 0-based: steps run `0..H`, states `0..S`, actions `0..A`.
//! Value tables carry an extra terminal row at index `H` that is identically
//! zero.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, Array4, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Tolerance applied to probability sums on input.
pub const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid instance ({} violation(s)): {}", .0.len(), .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("invalid mixture: {0}")]
    Mixture(String),
    #[error("malformed instance file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Sizes shared by instances, kernels, policies and value tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn new(states: usize, actions: usize, horizon: usize) -> Self {
        Self {
            states,
            actions,
            horizon,
        }
    }

    /// Number of `(h, s, a)` triples.
    pub fn triples(&self) -> usize {
        self.horizon * self.states * self.actions
    }

    pub fn stage_shape(&self) -> (usize, usize, usize) {
        (self.horizon, self.states, self.actions)
    }

    pub fn kernel_shape(&self) -> (usize, usize, usize, usize) {
        (self.horizon, self.states, self.actions, self.states)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S={} A={} H={}", self.states, self.actions, self.horizon)
    }
}

/// A time-indexed transition kernel stored as `[h][s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    probs: Array4<f64>,
}

impl Kernel {
    /// Wraps a dense `[h][s][a][s']` array. Rows are not checked here; see
    /// [`TabularCmdp::validate`].
    pub fn from_array(probs: Array4<f64>) -> Self {
        Self { probs }
    }

    pub fn dims(&self) -> Dims {
        let (h, s, a, _) = self.probs.dim();
        Dims::new(s, a, h)
    }

    pub fn row(&self, h: usize, s: usize, a: usize) -> ArrayView1<'_, f64> {
        self.probs.slice(s![h, s, a, ..])
    }

    pub fn as_array(&self) -> &Array4<f64> {
        &self.probs
    }

    pub(crate) fn as_array_mut(&mut self) -> &mut Array4<f64> {
        &mut self.probs
    }

    /// Expected next-step value `sum_{s'} P(s'|h,s,a) v(s')`.
    pub fn expect(&self, h: usize, s: usize, a: usize, next_values: ArrayView1<'_, f64>) -> f64 {
        self.row(h, s, a).dot(&next_values)
    }
}

/// One location at which a [`TabularCmdp`] breaks its invariants.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NegativeProbability {
        h: usize,
        s: usize,
        a: usize,
        next: usize,
        value: f64,
    },
    RowSum {
        h: usize,
        s: usize,
        a: usize,
        sum: f64,
    },
    RewardRange {
        h: usize,
        s: usize,
        a: usize,
        value: f64,
    },
    CostRange {
        h: usize,
        s: usize,
        a: usize,
        value: f64,
    },
    Budget {
        budget: f64,
        horizon: usize,
    },
    InitialState {
        state: usize,
        states: usize,
    },
    EmptyDimension {
        dims: Dims,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::NegativeProbability {
                h,
                s,
                a,
                next,
                value,
            } => write!(f, "P[{h}][{s}][{a}][{next}] = {value} is negative"),
            Violation::RowSum { h, s, a, sum } => {
                write!(f, "P[{h}][{s}][{a}] sums to {sum} (off by {:e})", sum - 1.0)
            }
            Violation::RewardRange { h, s, a, value } => {
                write!(f, "r[{h}][{s}][{a}] = {value} outside [0,1]")
            }
            Violation::CostRange { h, s, a, value } => {
                write!(f, "c[{h}][{s}][{a}] = {value} outside [0,1]")
            }
            Violation::Budget { budget, horizon } => {
                write!(f, "budget out of (0,H]: b = {budget}, H = {horizon}")
            }
            Violation::InitialState { state, states } => {
                write!(f, "initial state {state} out of range 0..{states}")
            }
            Violation::EmptyDimension { dims } => write!(f, "empty dimension ({dims})"),
        }
    }
}

/// Ground-truth CMDP instance `(S, A, H, P, r, c, b)` with initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularCmdp {
    dims: Dims,
    transition: Kernel,
    reward: Array3<f64>,
    cost: Array3<f64>,
    budget: f64,
    initial_state: usize,
}

impl TabularCmdp {
    /// Assembles an instance after checking array shapes only. Call
    /// [`TabularCmdp::validate`] or [`TabularCmdp::validated`] before use.
    pub fn from_parts(
        transition: Array4<f64>,
        reward: Array3<f64>,
        cost: Array3<f64>,
        budget: f64,
        initial_state: usize,
    ) -> Result<Self, ModelError> {
        let kernel = Kernel::from_array(transition);
        let dims = kernel.dims();
        if kernel.as_array().dim().3 != dims.states {
            return Err(ModelError::Dimension(format!(
                "kernel successor axis has {} entries, expected S = {}",
                kernel.as_array().dim().3,
                dims.states
            )));
        }
        for (name, table) in [("reward", &reward), ("cost", &cost)] {
            if table.dim() != dims.stage_shape() {
                return Err(ModelError::Dimension(format!(
                    "{name} table has shape {:?}, expected {:?}",
                    table.dim(),
                    dims.stage_shape()
                )));
            }
        }
        Ok(Self {
            dims,
            transition: kernel,
            reward,
            cost,
            budget,
            initial_state,
        })
    }

    /// Validates, then renormalizes every transition row once so that
    /// downstream arithmetic sees exact distributions.
    pub fn validated(mut self) -> Result<Self, ModelError> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(ModelError::Invalid(violations));
        }
        let dims = self.dims;
        let probs = self.transition.as_array_mut();
        for h in 0..dims.horizon {
            for s in 0..dims.states {
                for a in 0..dims.actions {
                    let mut row = probs.slice_mut(s![h, s, a, ..]);
                    let sum = row.sum();
                    row.mapv_inplace(|p| p / sum);
                }
            }
        }
        Ok(self)
    }

    /// Lists every invariant breach; an empty list means the instance is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let dims = self.dims;
        let mut out = Vec::new();
        if dims.states == 0 || dims.actions == 0 || dims.horizon == 0 {
            out.push(Violation::EmptyDimension { dims });
            return out;
        }
        for h in 0..dims.horizon {
            for s in 0..dims.states {
                for a in 0..dims.actions {
                    let row = self.transition.row(h, s, a);
                    for (next, &p) in row.iter().enumerate() {
                        if !(p >= 0.0) {
                            out.push(Violation::NegativeProbability {
                                h,
                                s,
                                a,
                                next,
                                value: p,
                            });
                        }
                    }
                    let sum = row.sum();
                    if !((sum - 1.0).abs() <= PROB_TOL) {
                        out.push(Violation::RowSum { h, s, a, sum });
                    }
                    let r = self.reward[[h, s, a]];
                    if !(0.0..=1.0).contains(&r) {
                        out.push(Violation::RewardRange { h, s, a, value: r });
                    }
                    let c = self.cost[[h, s, a]];
                    if !(0.0..=1.0).contains(&c) {
                        out.push(Violation::CostRange { h, s, a, value: c });
                    }
                }
            }
        }
        if !(self.budget > 0.0 && self.budget <= dims.horizon as f64) {
            out.push(Violation::Budget {
                budget: self.budget,
                horizon: dims.horizon,
            });
        }
        if self.initial_state >= dims.states {
            out.push(Violation::InitialState {
                state: self.initial_state,
                states: dims.states,
            });
        }
        out
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn transition(&self) -> &Kernel {
        &self.transition
    }

    pub fn reward(&self) -> &Array3<f64> {
        &self.reward
    }

    pub fn cost(&self) -> &Array3<f64> {
        &self.cost
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// Same instance with a different budget. The result is re-validated.
    pub fn with_budget(&self, budget: f64) -> Result<Self, ModelError> {
        let mut out = self.clone();
        out.budget = budget;
        let violations = out.validate();
        if violations.is_empty() {
            Ok(out)
        } else {
            Err(ModelError::Invalid(violations))
        }
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile::from(self)
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(&self.to_file()).expect("instance serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        file.into_instance()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// On-disk instance layout. Arrays are dense and 0-based:
/// `P[h][s][a][s']`, `r[h][s][a]`, `c[h][s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "P")]
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "r")]
    pub reward: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "c")]
    pub cost: Vec<Vec<Vec<f64>>>,
    pub b: f64,
    pub s1: usize,
}

impl InstanceFile {
    /// Checks shapes against the declared sizes, then runs validation.
    pub fn into_instance(self) -> Result<TabularCmdp, ModelError> {
        let dims = Dims::new(self.states, self.actions, self.horizon);
        let transition = dense4(&self.transition, dims.kernel_shape(), "P")?;
        let reward = dense3(&self.reward, dims.stage_shape(), "r")?;
        let cost = dense3(&self.cost, dims.stage_shape(), "c")?;
        TabularCmdp::from_parts(transition, reward, cost, self.b, self.s1)?.validated()
    }
}

impl From<&TabularCmdp> for InstanceFile {
    fn from(m: &TabularCmdp) -> Self {
        let d = m.dims;
        let p = m.transition.as_array();
        InstanceFile {
            states: d.states,
            actions: d.actions,
            horizon: d.horizon,
            transition: (0..d.horizon)
                .map(|h| {
                    (0..d.states)
                        .map(|s| {
                            (0..d.actions)
                                .map(|a| p.slice(s![h, s, a, ..]).to_vec())
                                .collect()
                        })
                        .collect()
                })
                .collect(),
            reward: nested3(&m.reward),
            cost: nested3(&m.cost),
            b: m.budget,
            s1: m.initial_state,
        }
    }
}

fn nested3(t: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    t.outer_iter()
        .map(|plane| plane.outer_iter().map(|row| row.to_vec()).collect())
        .collect()
}

fn dense3(
    v: &[Vec<Vec<f64>>],
    shape: (usize, usize, usize),
    name: &str,
) -> Result<Array3<f64>, ModelError> {
    let mut out = Array3::zeros(shape);
    if v.len() != shape.0 {
        return Err(ModelError::Format(format!(
            "{name} has {} steps, expected {}",
            v.len(),
            shape.0
        )));
    }
    for (h, plane) in v.iter().enumerate() {
        if plane.len() != shape.1 {
            return Err(ModelError::Format(format!("{name}[{h}] has wrong state count")));
        }
        for (s, row) in plane.iter().enumerate() {
            if row.len() != shape.2 {
                return Err(ModelError::Format(format!("{name}[{h}][{s}] has wrong action count")));
            }
            for (a, &x) in row.iter().enumerate() {
                out[[h, s, a]] = x;
            }
        }
    }
    Ok(out)
}

fn dense4(
    v: &[Vec<Vec<Vec<f64>>>],
    shape: (usize, usize, usize, usize),
    name: &str,
) -> Result<Array4<f64>, ModelError> {
    let mut out = Array4::zeros(shape);
    if v.len() != shape.0 {
        return Err(ModelError::Format(format!(
            "{name} has {} steps, expected {}",
            v.len(),
            shape.0
        )));
    }
    for (h, cube) in v.iter().enumerate() {
        let plane = dense3(cube, (shape.1, shape.2, shape.3), &format!("{name}[{h}]"))?;
        out.slice_mut(s![h, .., .., ..]).assign(&plane);
    }
    Ok(out)
}

/// Time-indexed stochastic decision rule `pi[h][s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    rule: Array3<f64>,
}

impl Policy {
    pub fn new(rule: Array3<f64>) -> Result<Self, ModelError> {
        let (h_len, s_len, a_len) = rule.dim();
        if h_len == 0 || s_len == 0 || a_len == 0 {
            return Err(ModelError::Policy("empty dimension".into()));
        }
        for h in 0..h_len {
            for s in 0..s_len {
                let dist = rule.slice(s![h, s, ..]);
                if dist.iter().any(|&p| !(p >= 0.0)) {
                    return Err(ModelError::Policy(format!("negative probability at ({h},{s})")));
                }
                let sum = dist.sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(ModelError::Policy(format!(
                        "action distribution at ({h},{s}) sums to {sum}"
                    )));
                }
            }
        }
        Ok(Self { rule })
    }

    /// Deterministic policy from an `[h][s]` table of action indices.
    pub fn deterministic(actions: &Array2<usize>, num_actions: usize) -> Self {
        let (h_len, s_len) = actions.dim();
        let mut rule = Array3::zeros((h_len, s_len, num_actions));
        for ((h, s), &a) in actions.indexed_iter() {
            assert!(a < num_actions, "action {a} out of range");
            rule[[h, s, a]] = 1.0;
        }
        Self { rule }
    }

    pub fn uniform(dims: Dims) -> Self {
        let p = 1.0 / dims.actions as f64;
        Self {
            rule: Array3::from_elem(dims.stage_shape(), p),
        }
    }

    pub fn dims(&self) -> Dims {
        let (h, s, a) = self.rule.dim();
        Dims::new(s, a, h)
    }

    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rule[[h, s, a]]
    }

    pub fn action_dist(&self, h: usize, s: usize) -> ArrayView1<'_, f64> {
        self.rule.slice(s![h, s, ..])
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.rule
    }

    /// The chosen action if the rule at `(h, s)` is a point mass.
    pub fn deterministic_action(&self, h: usize, s: usize) -> Option<usize> {
        let dist = self.action_dist(h, s);
        dist.iter().position(|&p| p == 1.0)
    }

    /// Same policy with actions relabelled: new action `perm[a]` plays old `a`.
    pub fn permute_actions(&self, perm: &[usize]) -> Self {
        let mut rule = Array3::zeros(self.rule.dim());
        for ((h, s, a), &p) in self.rule.indexed_iter() {
            rule[[h, s, perm[a]]] = p;
        }
        Self { rule }
    }
}

/// Weighted mixture of policies, sampled once per episode.
#[derive(Debug, Clone)]
pub struct MixturePolicy {
    components: Vec<(f64, Arc<Policy>)>,
}

impl MixturePolicy {
    pub fn new(components: Vec<(f64, Arc<Policy>)>) -> Result<Self, ModelError> {
        if components.is_empty() {
            return Err(ModelError::Mixture("no components".into()));
        }
        if components.iter().any(|(w, _)| !(*w >= 0.0)) {
            return Err(ModelError::Mixture("negative weight".into()));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(ModelError::Mixture(format!("weights sum to {total}")));
        }
        let dims = components[0].1.dims();
        if components.iter().any(|(_, p)| p.dims() != dims) {
            return Err(ModelError::Mixture("components disagree on dimensions".into()));
        }
        Ok(Self { components })
    }

    pub fn single(policy: Policy) -> Self {
        Self {
            components: vec![(1.0, Arc::new(policy))],
        }
    }

    /// Uniform weights over `policies`, merging runs of identical neighbours.
    pub fn uniform(policies: &[Arc<Policy>]) -> Result<Self, ModelError> {
        let w = 1.0 / policies.len() as f64;
        let mut components: Vec<(f64, Arc<Policy>)> = Vec::new();
        for p in policies {
            match components.last_mut() {
                Some((weight, last)) if Arc::ptr_eq(last, p) || **last == **p => *weight += w,
                _ => components.push((w, Arc::clone(p))),
            }
        }
        Self::new(components)
    }

    pub fn components(&self) -> &[(f64, Arc<Policy>)] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dims(&self) -> Dims {
        self.components[0].1.dims()
    }
}

/// `V[h][s]` for `h` in `0..=H`; the last row is the zero terminal row.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    values: Array2<f64>,
}

impl ValueTable {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            values: Array2::zeros((dims.horizon + 1, dims.states)),
        }
    }

    pub fn get(&self, h: usize, s: usize) -> f64 {
        self.values[[h, s]]
    }

    pub fn set(&mut self, h: usize, s: usize, v: f64) {
        self.values[[h, s]] = v;
    }

    pub fn row(&self, h: usize) -> ArrayView1<'_, f64> {
        self.values.row(h)
    }

    pub fn as_array(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn horizon(&self) -> usize {
        self.values.nrows() - 1
    }
}

/// Exact value of `policy` on stage function `stage` by backward recursion
/// `V_h(s) = sum_a pi_h(a|s) [g_h(s,a) + sum_s' P(s'|h,s,a) V_{h+1}(s')]`.
pub fn evaluate_policy(
    kernel: &Kernel,
    stage: &Array3<f64>,
    policy: &Policy,
) -> Result<ValueTable, ModelError> {
    let dims = kernel.dims();
    if stage.dim() != dims.stage_shape() {
        return Err(ModelError::Dimension(format!(
            "stage function {:?} vs kernel {dims}",
            stage.dim()
        )));
    }
    if policy.dims() != dims {
        return Err(ModelError::Dimension(format!(
            "policy {} vs kernel {dims}",
            policy.dims()
        )));
    }
    let mut values = ValueTable::zeros(dims);
    for h in (0..dims.horizon).rev() {
        for s in 0..dims.states {
            let mut v = 0.0;
            for a in 0..dims.actions {
                let p = policy.prob(h, s, a);
                if p == 0.0 {
                    continue;
                }
                v += p * (stage[[h, s, a]] + kernel.expect(h, s, a, values.row(h + 1)));
            }
            values.set(h, s, v);
        }
    }
    Ok(values)
}

/// `sum_i w_i V_1^{pi_i}(s_1)` for stage function `stage`.
pub fn evaluate_mixture(
    m: &TabularCmdp,
    stage: &Array3<f64>,
    mix: &MixturePolicy,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (w, p) in mix.components() {
        total += w * evaluate_policy(m.transition(), stage, p)?.get(0, m.initial_state());
    }
    Ok(total)
}

/// Reward and cost values of `policy` at `(0, s_1)`.
pub fn reward_cost_values(m: &TabularCmdp, policy: &Policy) -> Result<(f64, f64), ModelError> {
    let s1 = m.initial_state();
    let vr = evaluate_policy(m.transition(), m.reward(), policy)?.get(0, s1);
    let vc = evaluate_policy(m.transition(), m.cost(), policy)?.get(0, s1);
    Ok((vr, vc))
}

/// Slater constant `zeta = b - min_pi V_c^pi(s_1)` and a deterministic
/// policy attaining the minimum. May be non-positive.
pub fn slater_constant(m: &TabularCmdp) -> (f64, Policy) {
    let (policy, values) =
        crate::exact::solve_unconstrained(m.transition(), m.cost(), crate::exact::Sense::Min)
            .expect("instance tables share dimensions");
    (m.budget() - values.get(0, m.initial_state()), policy)
}
