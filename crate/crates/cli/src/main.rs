use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trialcmdp::cmdp::SolverOptions;
use trialcmdp_cli::config::{RunConfig, SweepConfig, DEFAULT_ALPHA};
use trialcmdp_cli::error::{CliError, Result};
use trialcmdp_cli::formats::{write_oc_csv, PolicyArtifact};
use trialcmdp_cli::pipeline::{ensure_dir, solve, sweep, write_oc_file, write_solution};
use trialcmdp_cli::reproduce::{self, Experiment};
use trialcmdp_cli::selftest;

/// Exact constrained-MDP response-adaptive designs for two-arm binary trials.
#[derive(Debug, Parser)]
#[command(name = "trialcmdp", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, or output file for `evaluate`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for state-space sweeps and OC grids.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Cutting-plane stopping tolerance.
    #[arg(long, global = true)]
    eps_tol: Option<f64>,
    /// Multiplier growth factor during feasibility repair.
    #[arg(long, global = true)]
    phi: Option<f64>,
    /// Accepted for scripts; every computation is deterministic already.
    #[arg(long, global = true)]
    seedless: bool,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the configured design; writes a JSON report and a policy artifact.
    Solve,
    /// Operating characteristics of a stored policy as CSV.
    Evaluate(EvaluateArgs),
    /// Solve the configured design and evaluate it over the configured grid.
    Sweep,
    /// Run a hard-wired experiment pipeline.
    Reproduce {
        /// Experiment id, e.g. app1-n75 or app2-n200-p100-thc25.
        id: String,
    },
    /// Fast internal consistency checks.
    Selftest,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Policy artifact written by `solve`.
    policy: PathBuf,
    /// Control success probability (overrides the config sweep).
    #[arg(long)]
    theta_c: Option<f64>,
    /// Evenly spaced θ_D points on [0, 1].
    #[arg(long, conflicts_with = "theta_d")]
    points: Option<usize>,
    /// Explicit θ_D values.
    #[arg(long, value_delimiter = ',')]
    theta_d: Option<Vec<f64>>,
    /// Significance level of the final test.
    #[arg(long)]
    alpha: Option<f64>,
    /// Required policy horizon.
    #[arg(long)]
    horizon: Option<usize>,
}

impl Cli {
    fn load_config(&self) -> Result<Option<RunConfig>> {
        self.config.as_deref().map(RunConfig::load).transpose()
    }

    fn require_config(&self) -> Result<RunConfig> {
        self.load_config()?
            .ok_or_else(|| CliError::config("--config", "this command needs a config file"))
    }

    fn solver_options(&self, config: Option<&RunConfig>) -> Result<SolverOptions> {
        let mut opts = match config {
            Some(c) => c.solver_options()?,
            None => SolverOptions::default(),
        };
        let check = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::config(name, format!("{v} must be positive")))
            }
        };
        if let Some(v) = self.eps_tol {
            opts.eps_tol = check("--eps-tol", v)?;
        }
        if let Some(v) = self.phi {
            opts.phi = check("--phi", v)?;
        }
        Ok(opts)
    }

    fn out_dir(&self, config: Option<&RunConfig>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| config.and_then(|c| c.output.dir.clone()))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::config("--threads", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config("--threads", e.to_string()))?;
    }
    Ok(())
}

fn stem(config: &RunConfig) -> String {
    config.design.kind.to_ascii_lowercase()
}

fn cmd_solve(cli: &Cli, with_sweep: bool) -> Result<()> {
    let config = cli.require_config()?;
    let spec = config.design_spec()?;
    let opts = cli.solver_options(Some(&config))?;
    let sweep_cfg = match (&config.sweep, with_sweep) {
        (Some(s), true) => Some(s.clone()),
        (None, true) => {
            return Err(CliError::config(
                "sweep",
                "the sweep command needs a [sweep] table",
            ))
        }
        _ => None,
    };
    init_threads(cli.threads.or(config.solver.threads))?;
    let solved = solve(&spec, &opts)?;
    let rows = sweep_cfg
        .map(|s| sweep(&solved.outcome.policy, &s))
        .transpose()?;
    let dir = cli.out_dir(Some(&config));
    ensure_dir(&dir)?;
    let stem = stem(&config);
    write_solution(&dir, &stem, &solved)?;
    if let Some(rows) = rows {
        write_oc_file(&dir.join(format!("{stem}_oc.csv")), &rows)?;
    }
    let r = solved.record();
    println!("{} n={} objective={}", r.design, r.horizon, r.objective);
    if let (Some(dual), Some(gap)) = (r.dual_value, r.gap) {
        println!(
            "dual={dual} gap={gap:e} kkt={:e} deterministic={}",
            r.kkt_residual.unwrap_or(0.0),
            r.deterministic.unwrap_or(false)
        );
    }
    Ok(())
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let config = cli.load_config()?;
    let artifact = PolicyArtifact::read(&args.policy)?;
    let expected = args.horizon.or(config.as_ref().map(|c| c.design.horizon));
    if let Some(expected) = expected {
        if expected != artifact.horizon() {
            return Err(trialcmdp::Error::HorizonMismatch {
                expected,
                found: artifact.horizon(),
            }
            .into());
        }
    }
    let mut spec = config
        .as_ref()
        .and_then(|c| c.sweep.clone())
        .unwrap_or(SweepConfig {
            theta_c: 0.5,
            theta_d: None,
            points: None,
            alpha: DEFAULT_ALPHA,
        });
    if let Some(v) = args.theta_c {
        spec.theta_c = v;
    }
    if let Some(v) = &args.theta_d {
        spec.theta_d = Some(v.clone());
    }
    if let Some(k) = args.points {
        spec.points = Some(k);
        spec.theta_d = None;
    }
    if let Some(a) = args.alpha {
        spec.alpha = a;
    }
    spec.grid()?;
    init_threads(
        cli.threads
            .or(config.as_ref().and_then(|c| c.solver.threads)),
    )?;
    let rows = sweep(&artifact.policy, &spec)?;
    match &cli.out {
        Some(path) => write_oc_file(path, &rows),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_oc_csv(&mut lock, &rows)?;
            lock.flush().map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

fn cmd_reproduce(cli: &Cli, id: &str) -> Result<()> {
    let exp = Experiment::parse(id)?;
    let config = cli.load_config()?;
    let opts = cli.solver_options(config.as_ref())?;
    init_threads(
        cli.threads
            .or(config.as_ref().and_then(|c| c.solver.threads)),
    )?;
    let dir = cli.out.clone().unwrap_or_else(|| Path::new(".").join(id));
    let solved = reproduce::run(&exp, &opts, &dir)?;
    for s in &solved {
        let r = s.record();
        println!(
            "{:<8} objective={:.4} gap={} seconds={:.2}",
            r.design,
            r.objective,
            r.gap.map_or("-".into(), |g| format!("{g:.3e}")),
            r.seconds
        );
    }
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let checks = selftest::run();
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    if failed > 0 {
        return Err(CliError::SelfTest(failed));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Solve => cmd_solve(cli, false),
        Command::Sweep => cmd_solve(cli, true),
        Command::Evaluate(args) => cmd_evaluate(cli, args),
        Command::Reproduce { id } => cmd_reproduce(cli, id),
        Command::Selftest => cmd_selftest(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
