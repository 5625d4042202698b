use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use glad_core::executive::{ExecError, PolicyConfig, PolicyName};
use glad_core::experiment::{
    emit_report, run_experiment, Bench, CellSummary, ExperimentConfig, ExperimentError, ReportFormat,
};
use glad_core::optimizer::{MuOverrides, PlanError, Planner, PlannerConfig, PlanningProblem};
use glad_core::safety::SensorParams;
use glad_core::scenario::Scenario;
use glad_core::sim::{events_to_csv, TrafficCondition};

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "glad",
    version,
    about = "Layered task and motion planner with safety-aware replanning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the optimal task-motion plan for a scenario.
    Plan(PlanArgs),
    /// Run a single trial and print its trace.
    Run(RunArgs),
    /// Run the policy comparison experiment.
    Bench(BenchArgs),
    /// Sweep sensor quality and report utility per policy.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Built-in scenario name or path to a scenario file.
    #[arg(long, default_value = "urban_grid")]
    scenario: String,
    #[arg(long, default_value = "GLAD")]
    policy: PolicyName,
    /// Write the trajectory as CSV to this path.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, default_value = "urban_grid")]
    scenario: String,
    #[arg(long, default_value = "GLAD")]
    policy: PolicyName,
    #[arg(long, default_value = "heavy")]
    traffic: String,
    #[arg(long, env = "GLAD_SEED", default_value_t = 0)]
    seed: u64,
    /// Also print the executed behaviors as CSV.
    #[arg(long)]
    events: bool,
}

#[derive(Args, Debug, Clone)]
struct ExperimentArgs {
    #[arg(long, default_value = "urban_grid")]
    scenario: String,
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<PolicyName>>,
    /// Comma-separated traffic conditions: `normal`, `heavy`, or `name=lambda`.
    #[arg(long, value_delimiter = ',')]
    traffic: Option<Vec<String>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, env = "GLAD_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: ExperimentArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    /// Recall values to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.85,0.9,0.95")]
    recall: Vec<f64>,
    /// Precision values to sweep; each is paired with every recall value.
    #[arg(long, value_delimiter = ',', default_value = "0.84")]
    precision: Vec<f64>,
}

enum Failure {
    Config(anyhow::Error),
    Infeasible(anyhow::Error),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn is_infeasible(e: &ExperimentError) -> bool {
    matches!(
        e,
        ExperimentError::Trial {
            source: ExecError::Plan(PlanError::InfeasibleRequest(_)),
            ..
        }
    )
}

fn experiment_err(e: ExperimentError) -> Failure {
    if is_infeasible(&e) {
        Failure::Infeasible(e.into())
    } else if matches!(e, ExperimentError::NoRequest | ExperimentError::Sensor(_)) {
        Failure::Config(e.into())
    } else {
        Failure::Other(e.into())
    }
}

fn load_scenario(name: &str) -> Result<Scenario, Failure> {
    Scenario::resolve(name)
        .with_context(|| format!("loading scenario `{name}`"))
        .map_err(Failure::Config)
}

fn parse_traffic(spec: &str) -> Result<TrafficCondition> {
    if let Some(t) = TrafficCondition::by_name(spec) {
        return Ok(t);
    }
    let (name, lambda) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("unknown traffic condition `{spec}`"))?;
    let lambda: f64 = lambda.parse().with_context(|| format!("bad lambda in `{spec}`"))?;
    if !(0.0..=1.0).contains(&lambda) {
        bail!("lambda must lie in [0, 1], got {lambda}");
    }
    Ok(TrafficCondition::custom(name, lambda))
}

fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::Config)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(Failure::Config)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &args.policies {
        cfg.policies = p.clone();
    }
    if let Some(t) = &args.traffic {
        cfg.traffic = t
            .iter()
            .map(|s| parse_traffic(s))
            .collect::<Result<_>>()
            .map_err(Failure::Config)?;
    }
    if let Some(n) = args.trials {
        cfg.trials = n;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    if cfg.trials == 0 {
        return Err(config_err(anyhow!("trials must be at least 1")));
    }
    if cfg.policies.is_empty() || cfg.traffic.is_empty() {
        return Err(config_err(anyhow!(
            "at least one policy and one traffic condition are required"
        )));
    }
    Ok(cfg)
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::Other),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_plan(args: PlanArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&args.scenario)?;
    let request = scenario
        .request
        .clone()
        .ok_or_else(|| config_err(anyhow!("scenario has no service request")))?;
    let policy = PolicyConfig::new(args.policy);
    let mut pc = PlannerConfig::for_map(&scenario.map);
    pc.cost_mode = policy.planner_cost_mode();
    let planner = Planner::new(scenario.map.clone(), pc);
    let prefs = if policy.use_pref {
        scenario.preferences.clone()
    } else {
        Vec::new()
    };
    let coeffs = Default::default();
    let plan = planner
        .optimal_plan(&PlanningProblem {
            request: &request,
            prefs: &prefs,
            visited: &[],
            start: scenario.map.start(),
            overrides: &MuOverrides::new(),
            coeffs: &coeffs,
        })
        .map_err(|e| match e {
            PlanError::InfeasibleRequest(_) => Failure::Infeasible(e.into()),
            PlanError::Service(_) => Failure::Config(e.into()),
        })?;
    print!("{}", plan.report());
    if let Some(path) = args.trajectory {
        let mut csv = String::new();
        for (i, (traj, bp)) in plan.trajectories.iter().zip(&plan.behavior_plans).enumerate() {
            let body = traj.to_csv(bp);
            if i == 0 {
                csv.push_str(&body);
            } else {
                csv.extend(body.lines().skip(1).map(|l| format!("{l}\n")));
            }
        }
        write_output(&Some(path), &csv)?;
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&args.scenario)?;
    let traffic = parse_traffic(&args.traffic).map_err(Failure::Config)?;
    let cfg = ExperimentConfig {
        policies: vec![args.policy],
        ..ExperimentConfig::default()
    };
    let bench = Bench::new(scenario, &cfg).map_err(experiment_err)?;
    let trace = bench.run_one(args.policy, &traffic, args.seed).map_err(|e| match e {
        ExecError::Plan(PlanError::InfeasibleRequest(_)) => Failure::Infeasible(e.into()),
        other => Failure::Other(other.into()),
    })?;
    print!("{}", trace.log_text());
    if args.events {
        print!("{}", events_to_csv(&trace.events));
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    let cfg = experiment_config(&args.common)?;
    let scenario = load_scenario(&args.common.scenario)?;
    let results = run_experiment(&scenario, &cfg).map_err(experiment_err)?;
    let summaries: Vec<CellSummary> = results.into_iter().map(|r| r.summary).collect();
    let report = emit_report(&summaries, args.common.format).map_err(experiment_err)?;
    write_output(&args.common.out, &report)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let base = experiment_config(&args.common)?;
    let scenario = load_scenario(&args.common.scenario)?;
    let mut out = String::from("recall,precision,");
    let mut header_done = false;
    for &precision in &args.precision {
        for &recall in &args.recall {
            let cfg = ExperimentConfig {
                sensor: SensorParams {
                    recall,
                    precision,
                    ..base.sensor
                },
                ..base.clone()
            };
            let results = run_experiment(&scenario, &cfg).map_err(experiment_err)?;
            let summaries: Vec<CellSummary> = results.into_iter().map(|r| r.summary).collect();
            let csv = emit_report(&summaries, ReportFormat::Csv).map_err(experiment_err)?;
            let mut lines = csv.lines();
            let header = lines.next().unwrap_or_default();
            if !header_done {
                out.push_str(header);
                out.push('\n');
                header_done = true;
            }
            for l in lines {
                out.push_str(&format!("{recall},{precision},{l}\n"));
            }
        }
    }
    write_output(&args.common.out, &out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Infeasible(e)) => {
            eprintln!("infeasible: {e:#}");
            ExitCode::from(EXIT_INFEASIBLE)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
