use ndarray::{s, Array3, Array4, ArrayView1};

use crate::model::{Dims, Kernel, TabularCmdp};

/// Visitation counters behind the doubling-batch model.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTables {
    /// Total visits to each `(h, s, a)`.
    pub total_visits: Array3<u64>,
    /// Transitions recorded since the row was last rebuilt.
    pub batch_transitions: Array4<u64>,
    /// Size of the batch behind the current empirical row; 0 if never built.
    pub batch_size: Array3<u64>,
    /// Number of rebuilds so far.
    pub epoch: Array3<u32>,
    batch_history: Vec<Vec<u64>>,
}

impl CountTables {
    fn new(dims: Dims) -> Self {
        Self {
            total_visits: Array3::zeros(dims.stage_shape()),
            batch_transitions: Array4::zeros(dims.kernel_shape()),
            batch_size: Array3::zeros(dims.stage_shape()),
            epoch: Array3::zeros(dims.stage_shape()),
            batch_history: vec![Vec::new(); dims.triples()],
        }
    }
}

/// Empirical CMDP: known reward and cost tables plus a transition estimate
/// rebuilt from the latest batch whenever a pair's visit count reaches a
/// power of two.
#[derive(Debug, Clone)]
pub struct EmpiricalModel {
    dims: Dims,
    reward: Array3<f64>,
    cost: Array3<f64>,
    initial_state: usize,
    kernel_hat: Kernel,
    counts: CountTables,
    updates: u64,
}

impl EmpiricalModel {
    /// Empty model for `env`'s dimensions; only its (known) reward and cost
    /// tables are copied.
    pub fn new(env: &TabularCmdp) -> Self {
        let dims = env.dims();
        Self {
            dims,
            reward: env.reward().clone(),
            cost: env.cost().clone(),
            initial_state: env.initial_state(),
            kernel_hat: Kernel::from_array(Array4::zeros(dims.kernel_shape())),
            counts: CountTables::new(dims),
            updates: 0,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn reward(&self) -> &Array3<f64> {
        &self.reward
    }

    pub fn cost(&self) -> &Array3<f64> {
        &self.cost
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// Estimated kernel. Rows with `batch_size == 0` are all zeros.
    pub fn kernel(&self) -> &Kernel {
        &self.kernel_hat
    }

    pub fn row(&self, h: usize, s: usize, a: usize) -> ArrayView1<'_, f64> {
        self.kernel_hat.row(h, s, a)
    }

    pub fn counts(&self) -> &CountTables {
        &self.counts
    }

    pub fn batch_size(&self, h: usize, s: usize, a: usize) -> u64 {
        self.counts.batch_size[[h, s, a]]
    }

    /// Sizes of every batch used to rebuild the row, oldest first.
    pub fn batch_history(&self, h: usize, s: usize, a: usize) -> &[u64] {
        &self.counts.batch_history[self.flat(h, s, a)]
    }

    /// Total number of row rebuilds across all `(h, s, a)`.
    pub fn total_updates(&self) -> u64 {
        self.updates
    }

    /// True once every `(h, s, a)` row has been built at least once.
    pub fn fully_populated(&self) -> bool {
        self.counts.batch_size.iter().all(|&n| n > 0)
    }

    fn flat(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.dims.states + s) * self.dims.actions + a
    }

    /// Records one observed transition. Returns `true` when the visit count
    /// of `(h, s, a)` reached a power of two and its row was rebuilt from the
    /// transitions gathered since the previous rebuild.
    pub fn record_transition(&mut self, h: usize, s: usize, a: usize, next: usize) -> bool {
        let c = &mut self.counts;
        c.total_visits[[h, s, a]] += 1;
        c.batch_transitions[[h, s, a, next]] += 1;
        if !c.total_visits[[h, s, a]].is_power_of_two() {
            return false;
        }
        let mut batch = c.batch_transitions.slice_mut(s![h, s, a, ..]);
        let n: u64 = batch.sum();
        let mut row = self.kernel_hat.as_array_mut().slice_mut(s![h, s, a, ..]);
        for (p, &k) in row.iter_mut().zip(batch.iter()) {
            *p = k as f64 / n as f64;
        }
        batch.fill(0);
        c.batch_size[[h, s, a]] = n;
        c.epoch[[h, s, a]] += 1;
        let idx = (h * self.dims.states + s) * self.dims.actions + a;
        self.counts.batch_history[idx].push(n);
        self.updates += 1;
        true
    }
}
