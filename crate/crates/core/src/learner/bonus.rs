use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BonusParams {
    pub c1: f64,
    pub c2: f64,
    /// `log(1 / delta')`.
    pub log_inv_delta: f64,
    pub horizon: f64,
    pub scale: f64,
}

/// Variance of `v` under `p`, `<p, v^2> - <p, v>^2`, computed in centred
/// form.
pub fn variance(p: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    let mean = p.dot(&v);
    p.iter()
        .zip(v.iter())
        .map(|(&pi, &vi)| pi * (vi - mean) * (vi - mean))
        .sum()
}

/// Bernstein-style bonus
/// `scale * (c1 sqrt(Var(p, v) L / n) + c2 H L / n)` with `L = log(1/delta')`.
///
/// # Panics
///
/// If `n == 0`; rows without data take the default branch of the backup
/// instead.
pub fn compute_bonus(
    p_hat: ArrayView1<'_, f64>,
    v_next: ArrayView1<'_, f64>,
    n: u64,
    params: &BonusParams,
) -> f64 {
    assert!(n > 0, "bonus needs a non-empty batch");
    if params.scale == 0.0 {
        return 0.0;
    }
    let n = n as f64;
    let l = params.log_inv_delta;
    let var = variance(p_hat, v_next);
    params.scale * (params.c1 * (var * l / n).sqrt() + params.c2 * params.horizon * l / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::config::{DEFAULT_C1, DEFAULT_C2};
    use ndarray::arr1;

    fn params(l: f64, h: f64, scale: f64) -> BonusParams {
        BonusParams {
            c1: DEFAULT_C1,
            c2: DEFAULT_C2,
            log_inv_delta: l,
            horizon: h,
            scale,
        }
    }

    #[test]
    fn constant_values_leave_only_second_term() {
        let p = arr1(&[0.2, 0.3, 0.5]);
        let v = arr1(&[1.7, 1.7, 1.7]);
        let b = compute_bonus(p.view(), v.view(), 8, &params(3.0, 2.0, 0.5));
        assert!((b - 0.5 * DEFAULT_C2 * 2.0 * 3.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn reference_value() {
        // (460/9) sqrt(0.25/100) + (544/9) * 2/100, evaluated by hand
        let b = compute_bonus(
            arr1(&[0.5, 0.5]).view(),
            arr1(&[0.0, 1.0]).view(),
            100,
            &params(1.0, 2.0, 1.0),
        );
        assert!((b - 3.764_444_444_444_444).abs() < 1e-12, "{b}");
    }

    #[test]
    fn doubling_batch_scales_terms() {
        let p = arr1(&[0.3, 0.7]);
        let v = arr1(&[0.0, 2.0]);
        let only_first = BonusParams { c2: 0.0, ..params(2.0, 3.0, 1.0) };
        let only_second = BonusParams { c1: 0.0, ..params(2.0, 3.0, 1.0) };
        let f1 = compute_bonus(p.view(), v.view(), 10, &only_first);
        let f2 = compute_bonus(p.view(), v.view(), 20, &only_first);
        assert!((f1 / f2 - 2f64.sqrt()).abs() < 1e-12);
        let s1 = compute_bonus(p.view(), v.view(), 10, &only_second);
        let s2 = compute_bonus(p.view(), v.view(), 20, &only_second);
        assert!((s1 / s2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn variance_matches_raw_moments() {
        let p = arr1(&[0.1, 0.6, 0.3]);
        let v = arr1(&[0.5, 2.0, 1.25]);
        let mean: f64 = p.dot(&v);
        let raw: f64 = p.dot(&v.mapv(|x| x * x)) - mean * mean;
        assert!((variance(p.view(), v.view()) - raw).abs() < 1e-14);
    }

    #[test]
    #[should_panic(expected = "non-empty batch")]
    fn empty_batch_panics() {
        compute_bonus(arr1(&[1.0]).view(), arr1(&[0.0]).view(), 0, &params(1.0, 1.0, 1.0));
    }
}
