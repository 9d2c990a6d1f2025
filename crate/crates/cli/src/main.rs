use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmdp_core::exact::DEFAULT_TOL;
use cmdp_core::harness::{emit_report, line_chart_svg, read_csv, train, PolicyFile, Summary, TrainOptions};
use cmdp_core::sim::{exact_values, monte_carlo};
use cmdp_core::suite::{run_criterion, CRITERIA};
use cmdp_core::{
    derive_config, generate, preset, slater_constant, solve_cmdp_exact, GenSpec, ModeKind, Multipliers, Overrides,
    TabularCmdp,
};
use serde_json::json;

mod file_config;

use file_config::TrainFile;

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "cmdp", version, about = "Tabular constrained-MDP lab: exact solver, primal-dual learner, harness")]
struct Cli {
    /// Run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path: a file for generate/solve/evaluate, a directory for train/report.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random or preset instance file.
    Generate(GenerateArgs),
    /// Solve an instance exactly and print a JSON summary.
    Solve(SolveArgs),
    /// Run the online learner and measure it against the exact solution.
    Train(Box<TrainArgs>),
    /// Monte-Carlo evaluation of a policy, next to its exact values.
    Evaluate(EvaluateArgs),
    /// Redraw plots and check totals of an existing run directory.
    Report(ReportArgs),
    /// Run the acceptance battery.
    Suite(SuiteArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Named preset instead of a random instance.
    #[arg(long, conflicts_with_all = ["states", "actions", "horizon", "zeta"])]
    preset: Option<String>,
    #[arg(long, short = 'S', default_value_t = 3)]
    states: usize,
    #[arg(long, short = 'A', default_value_t = 2)]
    actions: usize,
    #[arg(long, short = 'H', default_value_t = 3)]
    horizon: usize,
    /// Target Slater constant.
    #[arg(long, default_value_t = 0.5)]
    zeta: f64,
    /// Symmetric Dirichlet concentration of the kernel rows.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Also write the optimal mixture policy.
    #[arg(long)]
    out_policy: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML or JSON file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    mode: Option<ModeKind>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Slater constant for strict mode; computed from the instance if absent.
    #[arg(long)]
    zeta: Option<f64>,
    /// Episodes.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Primal-dual iterations per episode.
    #[arg(long = "T")]
    t: Option<usize>,
    /// Dual cap.
    #[arg(long = "U")]
    u: Option<f64>,
    /// Dual grid step.
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    bonus_scale: Option<f64>,
    /// Start each episode's dual iterate where the previous one ended.
    #[arg(long)]
    warm_start: Option<bool>,
    /// Evaluate every n-th episode exactly and interpolate the rest.
    #[arg(long)]
    eval_every: Option<u64>,
    /// Fill the wall_ms column (makes run.csv non-reproducible).
    #[arg(long)]
    record_timing: bool,
    /// Skip regret.svg / cv.svg.
    #[arg(long)]
    no_plots: bool,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_policy: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Policy file; defaults to the exact optimal mixture.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    episodes: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding run.csv (and optionally summary.json).
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Args)]
struct SuiteArgs {
    /// Run only these criteria (repeatable); all by default.
    #[arg(long = "criterion", short = 'c')]
    criteria: Vec<u8>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a, cli.seed, cli.out),
        Command::Solve(a) => cmd_solve(a, cli.out),
        Command::Train(a) => cmd_train(*a, cli.seed, cli.out),
        Command::Evaluate(a) => cmd_evaluate(a, cli.seed, cli.out),
        Command::Report(a) => cmd_report(a, cli.out),
        Command::Suite(a) => cmd_suite(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs, seed: Option<u64>, out: Option<PathBuf>) -> Result<bool> {
    let m = match a.preset {
        Some(name) => preset(&name)?,
        None => generate(&GenSpec {
            states: a.states,
            actions: a.actions,
            horizon: a.horizon,
            zeta_target: a.zeta,
            dirichlet_alpha: a.alpha,
            seed: seed.unwrap_or(0),
        })?,
    };
    let text = serde_json::to_string_pretty(&m.to_file())? + "\n";
    write_or_print(out.as_deref(), &text)?;
    Ok(true)
}

fn load_instance(path: &Path) -> Result<TabularCmdp> {
    TabularCmdp::load(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(null)
    }
}

fn cmd_solve(a: SolveArgs, out: Option<PathBuf>) -> Result<bool> {
    let m = load_instance(&a.instance)?;
    let sol = solve_cmdp_exact(&m, a.tol)?;
    let (zeta, _) = slater_constant(&m);
    let summary = json!({
        "optimal_value": sol.optimal_value,
        "optimal_cost": sol.optimal_cost,
        "lambda_star": finite_or_null(sol.lambda_star),
        "zeta": zeta,
        "status": sol.status,
    });
    write_or_print(out.as_deref(), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    if let Some(p) = a.out_policy {
        PolicyFile::from_mixture(&sol.policy).save(p)?;
    }
    Ok(true)
}

fn cmd_train(flags: TrainArgs, seed: Option<u64>, out: Option<PathBuf>) -> Result<bool> {
    let file = match &flags.config {
        Some(p) => TrainFile::load(p)?,
        None => TrainFile::default(),
    };
    let instance = flags
        .instance
        .or(file.instance)
        .ok_or("train needs --instance (or `instance` in the config file)")?;
    let m = load_instance(&instance)?;
    let mode = flags.mode.or(file.mode).unwrap_or(ModeKind::Relaxed);
    let epsilon = flags.epsilon.or(file.epsilon).ok_or("train needs --epsilon")?;
    let delta = flags.delta.or(file.delta).unwrap_or(0.1);
    let seed = seed.or(file.seed).unwrap_or(0);
    let tol = flags.tol.or(file.tol).unwrap_or(DEFAULT_TOL);
    let zeta = match flags.zeta.or(file.zeta) {
        Some(z) => Some(z),
        None if mode == ModeKind::Strict => Some(slater_constant(&m).0),
        None => None,
    };
    let overrides = Overrides {
        episodes: flags.k.or(file.k),
        iterations: flags.t.or(file.t),
        dual_cap: flags.u.or(file.u),
        grid_step: flags.eps1.or(file.eps1),
        bonus_scale: flags.bonus_scale.or(file.bonus_scale),
        warm_start: flags.warm_start.or(file.warm_start),
        ..Overrides::default()
    };
    let cfg = derive_config(mode, epsilon, delta, &m, zeta, &Multipliers::default(), &overrides)?;
    let exact = solve_cmdp_exact(&m, tol)?;
    let opts = TrainOptions {
        eval_every: flags.eval_every.or(file.eval_every).unwrap_or(1),
        record_timing: flags.record_timing || file.record_timing.unwrap_or(false),
        epsilon,
    };
    let run = train(&m, &exact, &cfg, seed, &opts)?;

    if let Some(dir) = out.or(file.out) {
        emit_report(&run.record, &run.summary, &dir, !flags.no_plots)?;
    }
    if let Some(p) = flags.out_csv.or(file.out_csv) {
        fs::write(p, cmdp_core::harness::csv_string(&run.record))?;
    }
    if let Some(p) = flags.out_policy.or(file.out_policy) {
        PolicyFile::from_mixture(&run.final_policy).save(p)?;
    }
    println!("{}", serde_json::to_string_pretty(&run.summary)?);
    Ok(run.summary.all_passed)
}

fn cmd_evaluate(a: EvaluateArgs, seed: Option<u64>, out: Option<PathBuf>) -> Result<bool> {
    let m = load_instance(&a.instance)?;
    let mix = match &a.policy {
        Some(p) => PolicyFile::load(p)
            .map_err(|e| format!("{}: {e}", p.display()))?
            .into_mixture()?,
        None => solve_cmdp_exact(&m, DEFAULT_TOL)?.policy,
    };
    if mix.dims() != m.dims() {
        return Err("policy dimensions do not match the instance".into());
    }
    let (vr, vc) = exact_values(&m, &mix);
    let mc = monte_carlo(&m, &mix, a.episodes.max(1), seed.unwrap_or(0));
    let agree = mc.reward.covers(vr, 4.0) && mc.cost.covers(vc, 4.0);
    let report = json!({
        "episodes": mc.episodes,
        "exact": {"reward": vr, "cost": vc},
        "monte_carlo": {
            "reward": {"mean": mc.reward.mean, "std_err": mc.reward.std_err},
            "cost": {"mean": mc.cost.mean, "std_err": mc.cost.std_err},
        },
        "within_4_std_err": agree,
    });
    write_or_print(out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(agree)
}

fn cmd_report(a: ReportArgs, out: Option<PathBuf>) -> Result<bool> {
    let rows = read_csv(a.run_dir.join("run.csv"))?;
    let dest = out.unwrap_or_else(|| a.run_dir.clone());
    fs::create_dir_all(&dest)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let regret: Vec<f64> = rows.iter().map(|r| r.regret_cum).collect();
    let cv: Vec<f64> = rows.iter().map(|r| r.cv_cum).collect();
    fs::write(dest.join("regret.svg"), line_chart_svg("Cumulative regret", "regret", &xs, &regret))?;
    fs::write(dest.join("cv.svg"), line_chart_svg("Cumulative constraint violation", "violation", &xs, &cv))?;

    let last = rows.last();
    let mut consistent = true;
    let mut verdicts = json!(null);
    let summary_path = a.run_dir.join("summary.json");
    if summary_path.exists() {
        let s: Summary = serde_json::from_str(&fs::read_to_string(&summary_path)?)?;
        consistent = s.episodes == rows.len()
            && last.is_some_and(|r| r.regret_cum == s.regret_total && r.cv_cum == s.cv_total);
        verdicts = json!({"all_passed": s.all_passed, "verdicts": s.verdicts});
        consistent &= s.all_passed;
    }
    let report = json!({
        "episodes": rows.len(),
        "regret_total": last.map(|r| r.regret_cum),
        "cv_total": last.map(|r| r.cv_cum),
        "interpolated_rows": rows.iter().filter(|r| r.interpolated).count(),
        "summary": verdicts,
        "consistent": consistent,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(consistent)
}

fn cmd_suite(a: SuiteArgs) -> Result<bool> {
    let ids: Vec<u8> = if a.criteria.is_empty() {
        CRITERIA.iter().map(|c| c.0).collect()
    } else {
        a.criteria
    };
    let mut all = true;
    for id in ids {
        let outcome = run_criterion(id).ok_or_else(|| format!("unknown criterion {id} (expected 1-10)"))?;
        println!("{outcome}");
        all &= outcome.passed;
    }
    Ok(all)
}
