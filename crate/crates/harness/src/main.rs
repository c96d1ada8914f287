use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use stiffsplit::controller::ControlSignal;
use stiffsplit::vectorfields::DEFAULT_PROPENSITY_FLOOR;
use stiffsplit::TruncationPairs;
use stiffsplit_harness::bench::bench;
use stiffsplit_harness::experiment::run_experiment;
use stiffsplit_harness::plan::{parse_methods, resolve_benchmark, ControllerSettings, ExperimentPlan, Regime};
use stiffsplit_harness::report::error_report;
use stiffsplit_harness::validate;

#[derive(Parser)]
#[command(name = "stiffsplit", version, about = "Adaptive fast-slow splitting for chemical Langevin equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ensembles against SSA and write metrics, densities and traces.
    Run(RunArgs),
    /// Print the MSE coefficient breakdown at one state as JSON.
    ErrorReport(ErrorReportArgs),
    /// Run the invariant checks.
    Validate(ValidateArgs),
    /// Time each method on one ensemble.
    Bench(RunArgs),
}

#[derive(Args)]
struct NetworkArgs {
    /// Benchmark shorthand such as `k5=0.1`, or a path to a network JSON file.
    #[arg(long = "benchmark", default_value = "k5=0.1")]
    benchmarks: Vec<String>,
    /// Directory holding the `k5_<value>.json` benchmark files.
    #[arg(long)]
    benchmarks_dir: Option<PathBuf>,
    /// Floor on propensities inside square-root ratios of the error model.
    #[arg(long, default_value_t = DEFAULT_PROPENSITY_FLOOR)]
    propensity_floor: f64,
    /// Truncation pair set: `all` or `within-group`.
    #[arg(long, default_value = "all")]
    truncation_pairs: TruncationPairs,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    network: NetworkArgs,
    /// Comma separated list of ssa, em, split-fixed, fs-mse-pi, ilie-pi.
    #[arg(long, alias = "method", default_value = "ssa,em,split-fixed,fs-mse-pi,ilie-pi")]
    methods: String,
    /// Trajectories per repetition.
    #[arg(long, alias = "trajectories", default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Horizon; defaults to the benchmark's `t_end`.
    #[arg(long)]
    t_end: Option<f64>,
    /// Macro-step budget; defaults to the benchmark's `macro_steps`.
    #[arg(long)]
    steps: Option<usize>,
    /// Fixed step for em and split-fixed; defaults to horizon / steps.
    #[arg(long)]
    dt: Option<f64>,
    /// Fast substeps per macro step for split-fixed.
    #[arg(long, default_value_t = 4)]
    substeps: usize,
    /// Tolerance for the adaptive methods; calibrated to the step budget when omitted.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    rmax: Option<f64>,
    #[arg(long)]
    nmax: Option<usize>,
    #[arg(long)]
    dt_min: Option<f64>,
    #[arg(long)]
    dt_max: Option<f64>,
    /// Error signal fed to the PI law: `floor` or `total`.
    #[arg(long)]
    control_signal: Option<ControlSignal>,
    /// Pilot paths per calibration evaluation.
    #[arg(long, default_value_t = 100)]
    pilot_paths: usize,
    /// Keep negative state entries instead of clamping them to zero.
    #[arg(long)]
    no_clamp: bool,
    /// Write trace.csv for trajectory 0 of each CLE method.
    #[arg(long)]
    trace: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "STIFFSPLIT_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct ErrorReportArgs {
    #[command(flatten)]
    network: NetworkArgs,
    /// Comma separated state; defaults to the benchmark's initial state.
    #[arg(long)]
    state: Option<String>,
    #[arg(long, default_value_t = 1e-5)]
    dt: f64,
    #[arg(long, default_value_t = 4)]
    substeps: usize,
}

#[derive(Args)]
struct ValidateArgs {
    /// Print the results as JSON.
    #[arg(long)]
    json: bool,
}

fn default_benchmarks_dir() -> PathBuf {
    let local = PathBuf::from("benchmarks");
    if local.is_dir() {
        local
    } else {
        let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks");
        bundled.canonicalize().unwrap_or(bundled)
    }
}

impl NetworkArgs {
    fn regimes(&self) -> Result<Vec<Regime>> {
        let dir = self.benchmarks_dir.clone().unwrap_or_else(default_benchmarks_dir);
        self.benchmarks
            .iter()
            .map(|b| Regime::load(&resolve_benchmark(b, &dir)))
            .collect()
    }
}

impl RunArgs {
    fn plan(&self) -> Result<ExperimentPlan> {
        let mut plan = ExperimentPlan::new(self.network.regimes()?, self.out.clone());
        plan.methods = parse_methods(&self.methods)?;
        plan.paths = self.paths;
        plan.reps = self.reps;
        plan.seed = self.seed;
        plan.t_end = self.t_end;
        plan.steps = self.steps;
        plan.dt = self.dt;
        plan.substeps = self.substeps;
        plan.epsilon = self.epsilon;
        plan.truncation_pairs = self.network.truncation_pairs;
        plan.propensity_floor = self.network.propensity_floor;
        plan.pilot_paths = self.pilot_paths;
        plan.options.clamp_nonnegative = !self.no_clamp;
        plan.trace = self.trace;
        plan.threads = self.threads;
        let mut c = ControllerSettings::default();
        c.theta = self.theta.unwrap_or(c.theta);
        c.alpha = self.alpha.unwrap_or(c.alpha);
        c.beta = self.beta.unwrap_or(c.beta);
        c.r_max = self.rmax.unwrap_or(c.r_max);
        c.n_max = self.nmax.unwrap_or(c.n_max);
        c.dt_min = self.dt_min;
        c.dt_max = self.dt_max;
        c.signal = self.control_signal.unwrap_or(c.signal);
        plan.controller = c;
        plan.validate()?;
        Ok(plan)
    }
}

fn run(args: &RunArgs) -> Result<()> {
    let plan = args.plan()?;
    let outcomes = run_experiment(&plan)?;
    for regime in &outcomes {
        println!("{}", regime.regime);
        println!("  {:<12} {:<8} {:>10} {:>10} {:>10} {:>9}", "method", "species", "rel_w1", "js", "steps", "seconds");
        for m in &regime.methods {
            for (name, s) in &m.metrics.species {
                println!(
                    "  {:<12} {:<8} {:>10.4} {:>10.4} {:>10.1} {:>9.2}",
                    m.setup.method.name(),
                    name,
                    s.rel_w1.mean,
                    s.js_div.mean,
                    m.pooled.mean_steps(),
                    m.seconds
                );
            }
            if m.pooled.failures > 0 {
                println!("  {:<12} {} failed paths excluded", m.setup.method.name(), m.pooled.failures);
            }
        }
    }
    println!("results in {}", plan.out.display());
    Ok(())
}

fn parse_state(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad state entry `{p}`")))
        .collect()
}

fn report(args: &ErrorReportArgs) -> Result<()> {
    let regimes = args.network.regimes()?;
    if regimes.len() != 1 {
        bail!("error-report takes exactly one benchmark");
    }
    let regime = &regimes[0];
    let state = match &args.state {
        Some(s) => parse_state(s)?,
        None => regime.initial_state.clone(),
    };
    let r = error_report(
        &regime.network,
        &state,
        args.dt,
        args.substeps,
        args.network.truncation_pairs,
        args.network.propensity_floor,
    )?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}

fn validate_all(args: &ValidateArgs) -> bool {
    let checks = validate::run_all();
    if args.json {
        println!("{}", serde_json::to_string_pretty(&checks).expect("checks serialize"));
    } else {
        for c in &checks {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
    }
    checks.iter().all(|c| c.passed)
}

fn bench_all(args: &RunArgs) -> Result<()> {
    let plan = args.plan()?;
    let reports = bench(&plan)?;
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::ErrorReport(a) => report(a),
        Command::Bench(a) => bench_all(a),
        Command::Validate(a) => {
            return if validate_all(a) { ExitCode::SUCCESS } else { ExitCode::from(2) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
