use serde::{Deserialize, Serialize};

/// The discrete multiplier set `{0, eps1, 2 eps1, ..., U}`.
///
/// Points are stored by integer index so that the cap is exactly
/// representable and grid membership is exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualGrid {
    step: f64,
    cap_index: u64,
}

impl DualGrid {
    /// Grid with spacing `step` whose top point is the smallest multiple of
    /// `step` that is at least `cap`.
    pub fn new(step: f64, cap: f64) -> Self {
        assert!(step > 0.0 && cap > 0.0, "grid needs positive step and cap");
        // guard against cap/step landing a hair above an integer
        let ratio = cap / step;
        let nearest = ratio.round();
        let cap_index = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest
        } else {
            ratio.ceil()
        };
        Self {
            step,
            cap_index: (cap_index as u64).max(1),
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn cap_index(&self) -> u64 {
        self.cap_index
    }

    pub fn cap(&self) -> f64 {
        self.value(self.cap_index)
    }

    pub fn value(&self, index: u64) -> f64 {
        index as f64 * self.step
    }

    /// Index of the nearest grid point; midpoints round down, values below
    /// zero clamp to 0 and values above the cap clamp to the cap.
    pub fn round_index(&self, raw: f64) -> u64 {
        if !(raw > 0.0) {
            return 0;
        }
        let x = raw / self.step;
        if x >= self.cap_index as f64 {
            return self.cap_index;
        }
        let floor = x.floor();
        let index = if x - floor > 0.5 { floor + 1.0 } else { floor };
        (index as u64).min(self.cap_index)
    }
}

/// Nearest point of `grid` to `raw`.
pub fn round_to_grid(raw: f64, grid: &DualGrid) -> f64 {
    grid.value(grid.round_index(raw))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualState {
    pub grid: DualGrid,
    pub index: u64,
    pub step_size: f64,
}

impl DualState {
    pub fn new(grid: DualGrid, step_size: f64) -> Self {
        Self {
            grid,
            index: 0,
            step_size,
        }
    }

    pub fn at_index(mut self, index: u64) -> Self {
        self.index = index.min(self.grid.cap_index());
        self
    }

    pub fn lambda(&self) -> f64 {
        self.grid.value(self.index)
    }
}

/// Rounded projected step `R[lambda + eta (v_c - b')]`.
pub fn dual_step(state: DualState, v_c_hat: f64, b_prime: f64) -> DualState {
    let raw = state.lambda() + state.step_size * (v_c_hat - b_prime);
    DualState {
        index: state.grid.round_index(raw),
        ..state
    }
}

/// Average dual regret `(1/T) sum_t (lambda_t - lambda)(b' - v_t)` of one
/// episode's traces against a fixed comparator `lambda`.
pub fn dual_regret(lambda_trace: &[f64], vc_trace: &[f64], b_prime: f64, lambda: f64) -> f64 {
    assert_eq!(lambda_trace.len(), vc_trace.len());
    let t = lambda_trace.len() as f64;
    lambda_trace
        .iter()
        .zip(vc_trace)
        .map(|(&l, &v)| (l - lambda) * (b_prime - v))
        .sum::<f64>()
        / t
}
