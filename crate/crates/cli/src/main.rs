use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cara_core::engine::TrialState;
use cara_core::harness;
use cara_core::history::read_history;
use cara_core::inference::infer;
use cara_core::model::{Extrapolation, Method, Objective, Planner, TrialConfig};
use cara_core::presets;
use cara_core::solver::oracle_plan;
use cara_core::CaraError;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "cara", version, about = "CARA designs with delayed outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config JSON path, or a preset name (setup1_sex, setup2_sex, setup1_sex_who).
    #[arg(long, global = true)]
    config: Option<String>,

    /// Horizon T used when --config names a preset.
    #[arg(long, global = true, default_value_t = 4)]
    horizon: usize,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, default_value_t = 1000)]
    reps: usize,

    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Run a single method instead of the objective's comparison set.
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,

    #[arg(long, global = true, value_enum)]
    extrapolation: Option<ExtrapolationArg>,

    #[arg(long, global = true, value_enum)]
    planner: Option<PlannerArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Oracle and Neyman plans with the true parameters.
    Oracle,
    /// Monte Carlo replications and summary artifacts.
    Simulate,
    /// Rejection rates over a grid of true effects.
    PowerCurve {
        /// min,max,steps
        #[arg(long)]
        grid: Option<String>,
    },
    /// Next-stage allocation from a history observed through --stage.
    Interim {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        stage: usize,
    },
    /// End-of-trial estimate, variance and confidence interval.
    Infer {
        #[arg(long)]
        history: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Proposed,
    ProposedDbcd,
    CompleteRandomization,
    Neyman,
    FrRule,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Proposed => Method::Proposed,
            MethodArg::ProposedDbcd => Method::ProposedDbcd,
            MethodArg::CompleteRandomization => Method::CompleteRandomization,
            MethodArg::Neyman => Method::Neyman,
            MethodArg::FrRule => Method::FrRule,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtrapolationArg {
    Conservative,
    Optimistic,
    Neutral,
}

impl From<ExtrapolationArg> for Extrapolation {
    fn from(e: ExtrapolationArg) -> Self {
        match e {
            ExtrapolationArg::Conservative => Extrapolation::Conservative,
            ExtrapolationArg::Optimistic => Extrapolation::Optimistic,
            ExtrapolationArg::Neutral => Extrapolation::Neutral,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlannerArg {
    Forward,
    #[value(name = "one_step", alias = "one-step")]
    OneStep,
}

impl From<PlannerArg> for Planner {
    fn from(p: PlannerArg) -> Self {
        match p {
            PlannerArg::Forward => Planner::Forward,
            PlannerArg::OneStep => Planner::OneStep,
        }
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<CaraError> for Failure {
    fn from(e: CaraError) -> Self {
        match e {
            CaraError::InvalidConfig(_)
            | CaraError::Schema { .. }
            | CaraError::StageMismatch { .. }
            | CaraError::OutcomeFamily
            | CaraError::Io(_)
            | CaraError::Json(_)
            | CaraError::Csv(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn load_config(cli: &Cli) -> Result<TrialConfig, Failure> {
    let name = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = match presets::preset(name, cli.horizon) {
        Some(cfg) => cfg,
        None => {
            let text = fs::read_to_string(name).map_err(|e| Failure::Config(format!("{name}: {e}")))?;
            TrialConfig::from_json(&text)?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(m) = cli.method {
        cfg.method = m.into();
    }
    if let Some(e) = cli.extrapolation {
        cfg.extrapolation = e.into();
    }
    if let Some(p) = cli.planner {
        cfg.planner = p.into();
    }
    Ok(cfg.validated()?)
}

fn methods(cli: &Cli, cfg: &TrialConfig) -> Vec<Method> {
    match cli.method {
        Some(m) => vec![m.into()],
        None => Method::comparison_set(cfg.objective).to_vec(),
    }
}

fn print_json(value: &serde_json::Value) {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    // a closed pipe downstream is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Failure::Config(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn cmd_oracle(cli: &Cli) -> CliResult {
    let cfg = load_config(cli)?;
    let dgp = cfg
        .dgp
        .as_ref()
        .ok_or_else(|| Failure::Config("oracle needs a dgp".into()))?;
    let report = oracle_plan(dgp, &cfg)?;
    write(&cli.out.join("oracle.csv"), &harness::oracle_csv(&report)?)?;
    let value = serde_json::to_value(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
    write(&cli.out.join("oracle.json"), &serde_json::to_string_pretty(&value).unwrap())?;
    print_json(&value);
    Ok(())
}

fn cmd_simulate(cli: &Cli) -> CliResult {
    let cfg = load_config(cli)?;
    if cfg.dgp.is_none() {
        return Err(Failure::Config("simulate needs a dgp".into()));
    }
    let sim = harness::simulate(&cfg, &methods(cli, &cfg), &[cfg.extrapolation], cli.reps, cfg.seed)?;
    harness::write_artifacts(&sim, &cli.out)?;
    let violations: usize = sim.summary.methods.iter().map(|m| m.chain_violations).sum();
    print_json(&serde_json::to_value(&sim.summary).map_err(|e| Failure::Runtime(e.to_string()))?);
    if violations > 0 {
        return Err(Failure::Runtime(format!("{violations} variance-chain violations")));
    }
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Config(format!("--grid expects min,max,steps, got {spec:?}"));
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let min: f64 = parts[0].parse().map_err(|_| bad())?;
    let max: f64 = parts[1].parse().map_err(|_| bad())?;
    let steps: usize = parts[2].parse().map_err(|_| bad())?;
    if steps == 0 || !(min.is_finite() && max.is_finite()) {
        return Err(bad());
    }
    Ok(harness::grid(min, max, steps))
}

fn cmd_power_curve(cli: &Cli, grid: Option<&str>) -> CliResult {
    let cfg = load_config(cli)?;
    if cfg.dgp.is_none() {
        return Err(Failure::Config("power-curve needs a dgp".into()));
    }
    let ates = match grid {
        Some(g) => parse_grid(g)?,
        None => match cfg.objective {
            Objective::PowerMax => harness::grid(0.0, 0.66, 8),
            Objective::FailureReduction => harness::grid(0.0, 0.42, 8),
        },
    };
    let rows = harness::power_curve(&cfg, &ates, &methods(cli, &cfg), cli.reps, cfg.seed)?;
    harness::write_power_curve(&rows, &cli.out.join("power.csv"))?;
    print_json(&serde_json::to_value(&rows).map_err(|e| Failure::Runtime(e.to_string()))?);
    Ok(())
}

fn read_records(cfg: &TrialConfig, path: &Path) -> Result<Vec<cara_core::ParticipantRecord>, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(read_history(file, &cfg.labels())?)
}

fn cmd_interim(cli: &Cli, history: &Path, stage: usize) -> CliResult {
    let cfg = load_config(cli)?;
    if stage == 0 || stage >= cfg.horizon {
        return Err(Failure::Config(format!(
            "--stage must lie in 1..={} to plan a next stage",
            cfg.horizon - 1
        )));
    }
    let records = read_records(&cfg, history)?;
    let labels = cfg.labels();
    let mut state = TrialState::new(cfg)?;
    let mut by_stage: BTreeMap<usize, Vec<_>> = BTreeMap::new();
    for rec in records.into_iter().filter(|r| r.stage <= stage) {
        by_stage.entry(rec.stage).or_default().push(rec);
    }
    for t in 1..=stage {
        state.ingest_stage(by_stage.remove(&t).unwrap_or_default())?;
    }
    let plan = state.plans.last().expect("a plan follows every interim before T");
    let next: BTreeMap<&str, f64> = labels.iter().map(String::as_str).zip(plan.next.iter().copied()).collect();
    print_json(&json!({
        "stage": stage,
        "next_stage": stage + 1,
        "allocation": next,
        "planned": plan.planned,
        "objective": plan.objective,
        "failures": plan.failures,
        "feasible": plan.feasible,
        "snapshot": state.snapshots.last(),
        "flags": state.flags,
    }));
    Ok(())
}

fn cmd_infer(cli: &Cli, history: &Path) -> CliResult {
    let cfg = load_config(cli)?;
    let records = read_records(&cfg, history)?;
    let report = infer(&records, cfg.horizon, cfg.n_strata(), cfg.alpha);
    let per: BTreeMap<String, f64> = cfg.labels().into_iter().zip(report.tau_hat_x.iter().copied()).collect();
    print_json(&json!({
        "tau_hat": report.tau_hat,
        "tau_hat_x": per,
        "v_hat": report.v_hat,
        "ci": report.ci,
        "n": report.n,
        "alpha": report.alpha,
        "warnings": report.warnings,
    }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Oracle => cmd_oracle(&cli),
        Command::Simulate => cmd_simulate(&cli),
        Command::PowerCurve { grid } => cmd_power_curve(&cli, grid.as_deref()),
        Command::Interim { history, stage } => cmd_interim(&cli, history, *stage),
        Command::Infer { history } => cmd_infer(&cli, history),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
