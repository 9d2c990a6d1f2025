//! Acceptance battery. Each criterion is a self-contained, seeded check that
//! reports pass/fail with a one-line diagnostic; the `acceptance` test target
//! and the `cmdp suite` subcommand both run these.

use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::exact::{brute_force_cmdp, deterministic_policy, deterministic_policy_count, solve_cmdp_exact, DEFAULT_TOL};
use crate::harness::{check_final_policy, csv_string, emit_report, train, TrainOptions};
use crate::instance_gen::{generate, preset, GenSpec};
use crate::learner::{
    derive_config, dual_regret, lagrangian_greedy_backup, optimistic_evaluate, round_to_grid, run_learner,
    BonusParams, EmpiricalModel, LearnerConfig, ModeKind, Multipliers, Overrides,
};
use crate::model::{evaluate_mixture, evaluate_policy, slater_constant, Policy, TabularCmdp};
use crate::sim::{exact_values, monte_carlo, sample_categorical, stream_rng};

#[derive(Debug, Clone)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub limit: Duration,
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {} ({:.2} s, limit {} s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.limit.as_secs(),
            self.detail
        )
    }
}

pub const CRITERIA: [(u8, &str, u64); 10] = [
    (1, "oracle equivalence", 10),
    (2, "evaluation correctness", 60),
    (3, "dual-regret inequality", 60),
    (4, "doubling-epoch bound", 60),
    (5, "optimism frequency", 300),
    (6, "dual-variable bound", 60),
    (7, "greedy primal validation", 60),
    (8, "end-to-end convergence trend", 600),
    (9, "rounding and grid invariants", 5),
    (10, "reproducibility", 60),
];

/// Runs criterion `id` (1 to 10). The runtime limit is part of the verdict.
pub fn run_criterion(id: u8) -> Option<CriterionOutcome> {
    let &(_, name, limit) = CRITERIA.iter().find(|c| c.0 == id)?;
    let start = Instant::now();
    let (ok, detail) = match id {
        1 => oracle_equivalence(),
        2 => evaluation_correctness(),
        3 => dual_regret_inequality(),
        4 => doubling_epochs(),
        5 => optimism_frequency(),
        6 => dual_bound(),
        7 => greedy_primal(),
        8 => convergence_trend(),
        9 => rounding_invariants(),
        10 => reproducibility(),
        _ => unreachable!(),
    };
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(limit);
    let (passed, detail) = if ok && elapsed > limit {
        (false, format!("{detail}; exceeded time limit"))
    } else {
        (ok, detail)
    };
    Some(CriterionOutcome {
        id,
        name,
        passed,
        detail,
        elapsed,
        limit,
    })
}

pub fn run_all() -> Vec<CriterionOutcome> {
    CRITERIA.iter().filter_map(|c| run_criterion(c.0)).collect()
}

type Check = (bool, String);

fn relaxed(m: &TabularCmdp, eps: f64, o: Overrides) -> LearnerConfig {
    derive_config(ModeKind::Relaxed, eps, 0.1, m, None, &Multipliers::default(), &o).expect("valid config")
}

fn strict(m: &TabularCmdp, eps: f64, zeta: f64, o: Overrides) -> LearnerConfig {
    derive_config(ModeKind::Strict, eps, 0.1, m, Some(zeta), &Multipliers::default(), &o).expect("valid config")
}

fn oracle_equivalence() -> Check {
    let mut worst_gap = 0.0f64;
    let mut worst_cost = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for i in 0..100u64 {
        let spec = GenSpec::new(
            1 + (i % 3) as usize,
            1 + ((i / 3) % 2) as usize,
            1 + ((i / 6) % 2) as usize,
            0.05 + 0.45 * ((i * 37) % 100) as f64 / 100.0,
            1000 + i,
        );
        let m = match generate(&spec) {
            Ok(m) => m,
            Err(e) => {
                failures.push(format!("seed {}: {e}", spec.seed));
                continue;
            }
        };
        let exact = solve_cmdp_exact(&m, DEFAULT_TOL);
        let bf = brute_force_cmdp(&m, u64::MAX);
        match (exact, bf) {
            (Ok(e), Ok(b)) => {
                let gap = (e.optimal_value - b.optimal_value).abs();
                let cost = evaluate_mixture(&m, m.cost(), &e.policy).expect("dims") - m.budget();
                worst_gap = worst_gap.max(gap);
                worst_cost = worst_cost.max(cost);
                if gap > 1e-6 || cost > 1e-6 {
                    failures.push(format!("instance {i}: gap {gap:.3e}, excess cost {cost:.3e}"));
                }
            }
            (e, b) => failures.push(format!("instance {i}: {:?} / {:?}", e.err(), b.err())),
        }
    }
    (
        failures.is_empty(),
        format!(
            "100 instances, max |V*_exact - V*_brute| = {worst_gap:.2e}, max cost - b = {worst_cost:.2e}{}",
            summarize(&failures)
        ),
    )
}

fn evaluation_correctness() -> Check {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let m = generate(&GenSpec::new(3, 2, 3, 0.3, 2000 + i)).expect("instance");
        let exact = solve_cmdp_exact(&m, DEFAULT_TOL).expect("solvable");
        let (vr, vc) = exact_values(&m, &exact.policy);
        let mc = monte_carlo(&m, &exact.policy, 100_000, 77 + i);
        for (est, v) in [(mc.reward, vr), (mc.cost, vc)] {
            if est.std_err > 0.0 {
                worst = worst.max((est.mean - v).abs() / est.std_err);
            }
            if !est.covers(v, 4.0) {
                failures.push(format!("instance {i}: MC {:.5} +- {:.1e} vs DP {v:.5}", est.mean, est.std_err));
            }
        }
    }
    (
        failures.is_empty(),
        format!("20 instances x 1e5 episodes, worst deviation {worst:.2} standard errors{}", summarize(&failures)),
    )
}

fn dual_regret_inequality() -> Check {
    let m = generate(&GenSpec::new(3, 2, 3, 0.5, 3000)).expect("instance");
    let zeta = slater_constant(&m).0;
    let mut failures = Vec::new();
    let mut checks = 0usize;
    let mut worst_ratio = f64::NEG_INFINITY;
    for scale in [1.0, 0.1, 0.0] {
        let o = Overrides {
            episodes: Some(200),
            iterations: Some(100),
            bonus_scale: Some(scale),
            ..Overrides::default()
        };
        for cfg in [relaxed(&m, 1.0, o), strict(&m, 1.0, zeta, o)] {
            let h = m.dims().horizon;
            let bound = cfg.dual_regret_bound(h);
            let b_prime = cfg.shifted_budget(m.budget());
            let kind = cfg.mode.kind();
            run_learner(&m, &cfg, 31, |out| {
                for lambda in [0.0, cfg.dual_cap] {
                    let reg = dual_regret(&out.plan.lambda_trace, &out.plan.vc_trace, b_prime, lambda);
                    checks += 1;
                    worst_ratio = worst_ratio.max(reg / bound);
                    if reg > bound {
                        failures.push(format!(
                            "{kind} scale {scale} episode {} lambda {lambda}: {reg:.4e} > {bound:.4e}",
                            out.episode
                        ));
                    }
                }
            })
            .expect("learner run");
        }
    }
    (
        failures.is_empty(),
        format!("{checks} checks over 2 modes x 3 bonus scales, max regret/bound = {worst_ratio:.3}{}", summarize(&failures)),
    )
}

fn doubling_epochs() -> Check {
    let m = generate(&GenSpec::new(3, 2, 3, 0.5, 4000)).expect("instance");
    let cfg = relaxed(
        &m,
        1.0,
        Overrides {
            episodes: Some(1024),
            iterations: Some(10),
            bonus_scale: Some(0.1),
            ..Overrides::default()
        },
    );
    let run = run_learner(&m, &cfg, 41, |_| {}).expect("learner run");
    let d = m.dims();
    let bound = (d.triples() * 11) as u64;
    let updates = run.model.total_updates();
    let mut bad = Vec::new();
    for h in 0..d.horizon {
        for s in 0..d.states {
            for a in 0..d.actions {
                let hist = run.model.batch_history(h, s, a);
                let ok = hist.iter().enumerate().all(|(j, &n)| n == if j == 0 { 1 } else { 1 << (j - 1) });
                if !ok {
                    bad.push(format!("({h},{s},{a}): {hist:?}"));
                }
            }
        }
    }
    (
        updates <= bound && bad.is_empty(),
        format!("{updates} updates <= S*A*H*11 = {bound}{}", summarize(&bad)),
    )
}

fn optimism_frequency() -> Check {
    let m = generate(&GenSpec::new(3, 2, 3, 0.5, 5000)).expect("instance");
    let d = m.dims();
    let reference = Policy::uniform(d);
    let s1 = m.initial_state();
    let vr_true = evaluate_policy(m.transition(), m.reward(), &reference).expect("dims").get(0, s1);
    let vc_true = evaluate_policy(m.transition(), m.cost(), &reference).expect("dims").get(0, s1);
    let episodes = 300usize;
    let cfg = relaxed(
        &m,
        1.0,
        Overrides {
            episodes: Some(episodes),
            ..Overrides::default()
        },
    );
    let bonus: BonusParams = cfg.bonus_params(d.horizon);
    let trials = 200u64;
    let mut hits = 0u64;
    for trial in 0..trials {
        let mut model = EmpiricalModel::new(&m);
        for k in 0..episodes as u64 {
            let mut rng = stream_rng(6000 + trial, k);
            let mut s = s1;
            for h in 0..d.horizon {
                let a = sample_categorical(reference.action_dist(h, s), rng.random());
                let next = sample_categorical(m.transition().row(h, s, a), rng.random());
                model.record_transition(h, s, a, next);
                s = next;
            }
        }
        let (vr_hat, vc_hat) = optimistic_evaluate(&model, &reference, &bonus);
        if vr_hat.get(0, s1) >= vr_true && vc_true >= vc_hat.get(0, s1) {
            hits += 1;
        }
    }
    let rate = hits as f64 / trials as f64;
    (
        rate >= 0.99,
        format!("optimism held in {hits}/{trials} trials ({:.1}%), delta = 0.1, bonus constants c1 = 460/9, c2 = 544/9", 100.0 * rate),
    )
}

fn dual_bound() -> Check {
    let mut failures = Vec::new();
    let mut worst_ratio = 0.0f64;
    let mut iterates = 0usize;
    for i in 0..50u64 {
        let m = generate(&GenSpec::new(3, 2, 3, 0.5, 7000 + i)).expect("instance");
        let h = m.dims().horizon as f64;
        let zeta = slater_constant(&m).0;
        let exact = solve_cmdp_exact(&m, DEFAULT_TOL).expect("solvable");
        worst_ratio = worst_ratio.max(exact.lambda_star / (h / zeta));
        if exact.lambda_star > h / zeta {
            failures.push(format!("instance {i}: lambda* {} > H/zeta {}", exact.lambda_star, h / zeta));
        }
        let o = Overrides {
            episodes: Some(20),
            iterations: Some(20),
            bonus_scale: Some(0.05),
            ..Overrides::default()
        };
        for cfg in [relaxed(&m, 1.0, o), strict(&m, 1.0, zeta, o)] {
            let grid = cfg.dual_grid();
            let mut escapes = 0usize;
            run_learner(&m, &cfg, i, |out| {
                for &l in &out.plan.lambda_trace {
                    iterates += 1;
                    if !(0.0..=cfg.dual_cap).contains(&l) || grid.value(grid.round_index(l)) != l {
                        escapes += 1;
                    }
                }
            })
            .expect("learner run");
            if escapes > 0 {
                failures.push(format!("instance {i} {}: {escapes} grid escapes", cfg.mode.kind()));
            }
        }
    }
    (
        failures.is_empty(),
        format!(
            "50 instances, max lambda*/(H/zeta) = {worst_ratio:.3}, {iterates} learner iterates on the grid{}",
            summarize(&failures)
        ),
    )
}

fn greedy_primal() -> Check {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let mut clipped_mismatch = 0usize;
    for i in 0..50u64 {
        let spec = GenSpec::new(1 + (i % 2) as usize, 2, 1 + ((i / 2) % 3) as usize, 0.3, 8000 + i);
        let m = generate(&spec).expect("instance");
        let d = m.dims();
        let mut model = EmpiricalModel::new(&m);
        let mut rng = stream_rng(8500 + i, 0);
        for h in 0..d.horizon {
            for s in 0..d.states {
                for a in 0..d.actions {
                    for _ in 0..6 {
                        let next = sample_categorical(m.transition().row(h, s, a), rng.random());
                        model.record_transition(h, s, a, next);
                    }
                }
            }
        }
        assert!(model.fully_populated());
        let cfg = relaxed(&m, 1.0, Overrides::default());
        let s1 = m.initial_state();
        let count = deterministic_policy_count(&m).expect("tiny instance");
        for scale in [0.0, 0.1] {
            let bonus = BonusParams {
                scale,
                ..cfg.bonus_params(d.horizon)
            };
            for lambda in [0.0, 0.5, cfg.dual_cap] {
                let g = lagrangian_greedy_backup(&model, lambda, &bonus);
                let greedy = g.v_reward.get(0, s1) - lambda * g.v_cost.get(0, s1);
                let best = (0..count)
                    .map(|j| {
                        let (vr, vc) = optimistic_evaluate(&model, &deterministic_policy(&m, j), &bonus);
                        vr.get(0, s1) - lambda * vc.get(0, s1)
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                let gap = (greedy - best).abs();
                if scale == 0.0 {
                    worst = worst.max(gap);
                    if gap > 1e-9 {
                        failures.push(format!("instance {i} lambda {lambda}: greedy {greedy} vs best {best}"));
                    }
                } else if gap > 1e-9 {
                    clipped_mismatch += 1;
                }
            }
        }
    }
    (
        failures.is_empty(),
        format!(
            "50 instances x 3 multipliers, max gap {worst:.2e}; with bonus scale 0.1 (clipping active) greedy differs from enumeration in {clipped_mismatch}/150 cases{}",
            summarize(&failures)
        ),
    )
}

fn convergence_trend() -> Check {
    let m = preset("two_state_chain").expect("preset");
    let exact = solve_cmdp_exact(&m, DEFAULT_TOL).expect("solvable");
    let h = m.dims().horizon as f64;
    let eps = 0.5 * h;
    let zeta = slater_constant(&m).0;
    let o = Overrides {
        episodes: Some(5000),
        iterations: Some(50),
        bonus_scale: Some(0.1),
        ..Overrides::default()
    };
    let opts = TrainOptions::new(eps);

    let rel = train(&m, &exact, &relaxed(&m, eps, o), 8, &opts).expect("relaxed run");
    let rows = &rel.record.rows;
    let tenth = rows.len() / 10;
    let mean = |r: &[crate::harness::RunRow]| r.iter().map(|x| exact.optimal_value - x.v_r_true).sum::<f64>() / r.len() as f64;
    let first = mean(&rows[..tenth]);
    let last = mean(&rows[rows.len() - tenth..]);
    let a = last < 0.5 * first;
    let b = rel.verdict.passed;

    let scfg = strict(&m, eps, zeta, o);
    let str_run = run_learner(&m, &scfg, 8, |_| {}).expect("strict run");
    let v = check_final_policy(&m, &exact, &str_run.final_policy, eps, ModeKind::Strict).expect("dims");
    let c = v.v_c <= m.budget() + 0.05 * h;
    (
        a && b && c,
        format!(
            "(a) mean regret first 10% {first:.4}, last 10% {last:.4} [{}]; (b) relaxed V_r {:.4} >= {:.4}, V_c {:.4} <= {:.4} [{}]; (c) strict V_c {:.4} <= {:.4} [{}]",
            ok(a),
            rel.verdict.v_r,
            exact.optimal_value - eps,
            rel.verdict.v_c,
            m.budget() + eps,
            ok(b),
            v.v_c,
            m.budget() + 0.05 * h,
            ok(c)
        ),
    )
}

fn rounding_invariants() -> Check {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let two_state = preset("two_state_chain").expect("preset");
    let generated = generate(&GenSpec::new(3, 2, 3, 0.5, 9000)).expect("instance");
    let zeta = slater_constant(&generated).0;
    let configs = [relaxed(&two_state, 1.5, Overrides::default()), strict(&generated, 1.0, zeta, Overrides::default())];
    let mut rng = stream_rng(9100, 0);
    for cfg in &configs {
        let grid = cfg.dual_grid();
        let (u, e1) = (grid.cap(), grid.step());
        for _ in 0..50_000 {
            let l: f64 = rng.random_range(-0.5 * u..1.5 * u);
            let r = round_to_grid(l, &grid);
            let on_grid = grid.value(grid.round_index(r)) == r;
            let ok = if l < 0.0 {
                r == 0.0
            } else if l > u {
                r == u
            } else {
                let err = (r - l).abs();
                worst = worst.max(err / e1);
                err <= e1 / 2.0 + 1e-12 * u.max(1.0)
            };
            if !(ok && on_grid) && failures.len() < 10 {
                failures.push(format!("lambda {l}: rounded to {r} (U {u}, eps1 {e1})"));
            }
        }
    }
    (
        failures.is_empty(),
        format!("1e5 samples over 2 grids, max |R(l) - l| / eps1 = {worst:.6} on [0, U], clamping exact outside{}", summarize(&failures)),
    )
}

fn reproducibility() -> Check {
    let m = generate(&GenSpec::new(3, 2, 3, 0.5, 10_000)).expect("instance");
    let exact = solve_cmdp_exact(&m, DEFAULT_TOL).expect("solvable");
    let cfg = relaxed(
        &m,
        1.0,
        Overrides {
            episodes: Some(500),
            iterations: Some(20),
            bonus_scale: Some(0.1),
            ..Overrides::default()
        },
    );
    let opts = TrainOptions::new(1.0);
    let mut files = Vec::new();
    for _ in 0..2 {
        let out = train(&m, &exact, &cfg, 1234, &opts).expect("train");
        let dir = tempfile_dir();
        emit_report(&out.record, &out.summary, &dir, false).expect("emit");
        files.push(std::fs::read(dir.join("run.csv")).expect("read run.csv"));
        let _ = std::fs::remove_dir_all(&dir);
        debug_assert_eq!(csv_string(&out.record).into_bytes(), *files.last().unwrap());
    }
    let same = files[0] == files[1];
    (
        same,
        format!("two runs of 500 episodes: run.csv {} bytes each, identical = {same}", files[0].len()),
    )
}

fn tempfile_dir() -> std::path::PathBuf {
    use std::sync::atomic::{AtomicU64, Ordering};
    static N: AtomicU64 = AtomicU64::new(0);
    std::env::temp_dir().join(format!("cmdp-suite-{}-{}", std::process::id(), N.fetch_add(1, Ordering::Relaxed)))
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

fn summarize(failures: &[String]) -> String {
    match failures {
        [] => String::new(),
        [first, ..] => format!("; {} failure(s), first: {first}", failures.len()),
    }
}
