use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cvf_cli::commands;
use cvf_cli::config::{
    self, EvalConfig, FitConfig, MetricSpec, ObstacleConfig, SimulateConfig, StartSpec,
};
use cvf_cli::error::CliError;
use cvf_core::bench::BenchConfig;
use cvf_core::learner::{ConstraintMode, FitOptions};

#[derive(Parser)]
#[command(
    name = "cvf",
    version,
    about = "Learn, simulate and benchmark contracting polynomial vector fields"
)]
struct Cli {
    /// Only log warnings and errors (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to demonstration CSVs.
    Fit(FitArgs),
    /// Integrate a model from a set of starts, optionally around obstacles.
    Simulate(SimulateArgs),
    /// Benchmark a model against demonstrations.
    Eval(EvalArgs),
    /// Run the session service.
    Serve(ServeArgs),
}

fn parse_point(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect()
}

#[derive(Args)]
struct FitArgs {
    /// Resolved configuration from an earlier run; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, num_args = 1.., required_unless_present = "config")]
    demos: Vec<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    out: Option<PathBuf>,
    /// Field degree [default: 3].
    #[arg(long)]
    degree: Option<usize>,
    /// Contraction rate [default: 1].
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    /// `identity` or a JSON file with a metric spec.
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    trajectory_degree: Option<usize>,
    #[arg(long)]
    accuracy: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Replace the exact constraints by pointwise ones at this many times.
    #[arg(long)]
    sampled: Option<usize>,
    /// Least-squares fit without contraction constraints.
    #[arg(long)]
    unconstrained: bool,
}

impl FitArgs {
    fn resolve(self) -> Result<FitConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => config::load_json(path)?,
            None => FitConfig {
                demos: Vec::new(),
                out: PathBuf::new(),
                tau: 1.0,
                metric: MetricSpec::Identity,
                unconstrained: false,
                options: FitOptions::default(),
            },
        };
        if !self.demos.is_empty() {
            cfg.demos = self.demos;
        }
        if let Some(out) = self.out {
            cfg.out = out;
        }
        if let Some(d) = self.degree {
            cfg.options.degree = d;
        }
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        if let Some(m) = self.metric {
            cfg.metric = MetricSpec::parse_flag(&m)?;
        }
        if self.trajectory_degree.is_some() {
            cfg.options.trajectory_degree = self.trajectory_degree;
        }
        if let Some(a) = self.accuracy {
            cfg.options.solver.accuracy = a;
        }
        if let Some(m) = self.max_iterations {
            cfg.options.solver.max_iterations = m;
        }
        if let Some(points) = self.sampled {
            cfg.options.constraint = ConstraintMode::Sampled { points };
        }
        cfg.unconstrained |= self.unconstrained;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    model: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    out_dir: Option<PathBuf>,
    /// Start point `x1,x2,...`; repeat for several. Without it, seeded grid
    /// starts are used.
    #[arg(long = "start", value_parser = parse_point, allow_negative_numbers = true)]
    starts: Vec<Vec<f64>>,
    /// Number of grid starts [default: 16].
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Relative growth of the grid box [default: 0.25].
    #[arg(long)]
    inflation: Option<f64>,
    /// Demonstrations whose bounding box holds the grid (default: the model's
    /// normalization box).
    #[arg(long, num_args = 1..)]
    grid_demos: Vec<PathBuf>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Horizon in longest-demonstration durations [default: 30].
    #[arg(long)]
    horizon_multiple: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    stop_threshold: Option<f64>,
    /// Newline-delimited JSON obstacle frames.
    #[arg(long)]
    obstacles: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    decay: Option<u32>,
    #[arg(long)]
    exclusion_radius: Option<f64>,
}

impl SimulateArgs {
    fn resolve(self) -> Result<SimulateConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => config::load_json(path)?,
            None => SimulateConfig {
                model: PathBuf::new(),
                out_dir: PathBuf::new(),
                starts: StartSpec::Grid {
                    count: 16,
                    seed: 2020,
                    inflation: 0.25,
                    demos: Vec::new(),
                },
                horizon: None,
                horizon_multiple: 30.0,
                dt: None,
                stop_threshold: None,
                obstacles: None,
            },
        };
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if let Some(o) = self.out_dir {
            cfg.out_dir = o;
        }
        if !self.starts.is_empty() {
            cfg.starts = StartSpec::Points {
                points: self.starts,
            };
        } else if let StartSpec::Grid {
            count,
            seed,
            inflation,
            demos,
        } = &mut cfg.starts
        {
            *count = self.grid.unwrap_or(*count);
            *seed = self.seed.unwrap_or(*seed);
            *inflation = self.inflation.unwrap_or(*inflation);
            if !self.grid_demos.is_empty() {
                *demos = self.grid_demos;
            }
        }
        cfg.horizon = self.horizon.or(cfg.horizon);
        cfg.horizon_multiple = self.horizon_multiple.unwrap_or(cfg.horizon_multiple);
        cfg.dt = self.dt.or(cfg.dt);
        cfg.stop_threshold = self.stop_threshold.or(cfg.stop_threshold);
        if let Some(file) = self.obstacles {
            cfg.obstacles = Some(ObstacleConfig::new(file));
        }
        if let Some(o) = cfg.obstacles.as_mut() {
            o.alpha = self.alpha.or(o.alpha);
            o.decay = self.decay.unwrap_or(o.decay);
            o.exclusion_radius = self.exclusion_radius.unwrap_or(o.exclusion_radius);
        } else if self.alpha.is_some() || self.decay.is_some() || self.exclusion_radius.is_some() {
            return Err(CliError::Config(
                "obstacle parameters given without --obstacles".into(),
            ));
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    model: Option<PathBuf>,
    #[arg(long, num_args = 1.., required_unless_present = "config")]
    train: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    test: Vec<PathBuf>,
    /// Goal `x1,x2,...` (default: mean of the demonstration end points).
    #[arg(long, value_parser = parse_point, allow_negative_numbers = true)]
    goal: Option<Vec<f64>>,
    #[arg(long)]
    goal_radius: Option<f64>,
    #[arg(long)]
    grid_starts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training time in seconds for the report (default: read from the fit
    /// audit next to the model).
    #[arg(long)]
    training_time: Option<f64>,
    /// Write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl EvalArgs {
    fn resolve(self) -> Result<EvalConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => config::load_json(path)?,
            None => EvalConfig {
                model: PathBuf::new(),
                train: Vec::new(),
                test: Vec::new(),
                bench: BenchConfig::default(),
                training_time: None,
                out: None,
            },
        };
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if !self.train.is_empty() {
            cfg.train = self.train;
        }
        if !self.test.is_empty() {
            cfg.test = self.test;
        }
        cfg.bench.goal = self.goal.or(cfg.bench.goal);
        cfg.bench.goal_radius = self.goal_radius.unwrap_or(cfg.bench.goal_radius);
        cfg.bench.grid_starts = self.grid_starts.unwrap_or(cfg.bench.grid_starts);
        cfg.bench.seed = self.seed.unwrap_or(cfg.bench.seed);
        cfg.training_time = self.training_time.or(cfg.training_time);
        cfg.out = self.out.or(cfg.out);
        Ok(cfg)
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit(args) => {
            let cfg = args.resolve()?;
            let outcome = commands::run_fit(&cfg)?;
            println!(
                "wrote {} (loss {:.6e}, status {:?})",
                cfg.out.display(),
                outcome.model.loss(),
                outcome.model.diagnostics().status
            );
        }
        Command::Simulate(args) => {
            let cfg = args.resolve()?;
            let summary = commands::run_simulate(&cfg)?;
            println!(
                "wrote {} trajectories and summary.json to {}",
                summary.runs.len(),
                cfg.out_dir.display()
            );
        }
        Command::Eval(args) => {
            let cfg = args.resolve()?;
            let report = commands::run_eval(&cfg)?;
            print!("{report}");
        }
        Command::Serve(args) => {
            let runtime =
                tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
            runtime
                .block_on(cvf_cli::service::serve(SocketAddr::new(
                    args.host, args.port,
                )))
                .map_err(|e| CliError::Other(format!("serve: {e}")))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
