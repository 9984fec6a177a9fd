//! `permadyn`: sampling, simulation and verification suites from the command
//! line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use permadyn_core::dynamics::{simulate, DynamicsKind, HopTable, RateModel, SimulationLimits};
use permadyn_core::harness::{load_config, run_suite, ConfigError, ExperimentConfig, Suite};
use permadyn_core::kernel::build_kernel_matrix;
use permadyn_core::papangelou::RatioIntensity;
use permadyn_core::rng::Stream;
use permadyn_core::sampler::{CoxProcess, CoxWeights};
use serde_json::json;

const DEFAULT_OUT: &str = "permadyn-out";

#[derive(Debug, Parser)]
#[command(
    name = "permadyn",
    version,
    about = "Permanental point processes and their Glauber/Kawasaki dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `[run] seed` and `[process] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `[run] out_dir`.
    #[arg(long, env = "PERMADYN_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    /// Number of fields; defaults to the first `[process] l`.
    #[arg(long)]
    l: Option<usize>,
    #[arg(long, default_value_t = 1)]
    replicas: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Trajectories to simulate, each from its own stationary start.
    #[arg(long, default_value_t = 1)]
    replicas: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw configurations of the Cox process.
    Sample(SampleArgs),
    /// Simulate Glauber dynamics from stationary starts.
    Glauber(SimulateArgs),
    /// Simulate Kawasaki dynamics from stationary starts.
    Kawasaki(SimulateArgs),
    /// α-permanent, kernel and Gaussian moment identities.
    Identities(Common),
    /// One- and two-point correlation functions.
    Correlations(Common),
    /// Monte-Carlo and ratio Papangelou intensities.
    Papangelou(Common),
    /// GNZ/Mecke identity.
    Gnz(Common),
    /// Rate balance identities.
    Balance(Common),
    /// Detailed balance of exact generators.
    Reversibility(Common),
    /// Stationary-start simulations.
    Stationarity(Common),
    /// Diffusive scaling ladder.
    Scaling(Common),
    /// Every suite plus the determinism check.
    All(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, ConfigError> {
    match &common.config {
        Some(p) => load_config(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.run.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_checks(common: &Common, cfg: &ExperimentConfig, suite: Suite) -> Result<bool> {
    let report = run_suite(cfg, suite, common.seed);
    let dir = out_dir(common, cfg);
    let paths = report
        .write(&dir)
        .with_context(|| format!("writing report to {}", dir.display()))?;
    print!("{}", report.summary());
    for c in report.failed_checks() {
        println!(
            "  failed: {} (observed {:e}, expected {:e}, tolerance {:e}) {}",
            c.name,
            c.observed,
            c.expected,
            c.tolerance,
            c.error.as_deref().unwrap_or("")
        );
    }
    println!("report: {}", paths[0].display());
    Ok(report.pass)
}

fn sample(args: &SampleArgs, cfg: &ExperimentConfig) -> Result<()> {
    let seed = cfg.master_seed(args.common.seed);
    let l = args.l.unwrap_or(cfg.l_values()[0]);
    if l == 0 {
        bail!("--l must be at least 1");
    }
    let grid = cfg.grid.build()?;
    let k = build_kernel_matrix(&grid, &cfg.kernel.build()?)?;
    let process = CoxProcess::new(k, l)?;
    let samples = process.sample_batch(&Stream::new(seed).child("sample"), args.replicas, false);
    let dir = out_dir(&args.common, cfg);
    std::fs::create_dir_all(&dir)?;
    let mut text = String::new();
    for s in &samples {
        let counts: Vec<String> = s.configuration.counts().iter().map(|c| c.to_string()).collect();
        text.push_str(&counts.join(" "));
        text.push('\n');
    }
    write(&dir.join("samples.txt"), &text)?;
    let sidecar = json!({
        "seed": seed,
        "l": l,
        "replicas": args.replicas,
        "grid": cfg.grid,
        "kernel": cfg.kernel,
        "cell_volume": grid.cell_volume(),
        "expected_total": process.expected_total(),
        "centers": grid.centers().iter().map(|c| c[..grid.dimension()].to_vec()).collect::<Vec<_>>(),
    });
    write(&dir.join("samples.json"), &serde_json::to_string_pretty(&sidecar)?)?;
    println!(
        "{} configurations written to {}",
        samples.len(),
        dir.join("samples.txt").display()
    );
    Ok(())
}

fn trajectories(args: &SimulateArgs, cfg: &ExperimentConfig, kind: DynamicsKind) -> Result<()> {
    let d = &cfg.dynamics;
    let seed = cfg.master_seed(args.common.seed);
    let stream = Stream::new(seed).child("simulate");
    let grid = d.grid.build()?;
    let k = build_kernel_matrix(&grid, &d.kernel.build()?)?;
    let mut weights = CoxWeights::from_kernel(&k, d.l)?;
    weights.validate(&stream.child("validate"))?;
    let mut r = RatioIntensity::new(&weights)?;
    let model = d.rate_model(RateModel::clamp_for(d.l, k.max_diagonal()))?;
    let hops = HopTable::new(&grid, &model.hop);
    let process = CoxProcess::new(k, d.l)?;
    let limits = SimulationLimits {
        horizon: d.horizon,
        max_events: d.max_events,
    };
    let name = format!("{kind:?}").to_lowercase();
    let dir = out_dir(&args.common, cfg);
    std::fs::create_dir_all(&dir)?;
    let mut runs = Vec::new();
    for i in 0..args.replicas as u64 {
        let start = process.sample(&stream.child("initial"), i, false).configuration;
        let mut rng = stream.child(&name).index(i).rng();
        let t = simulate(kind, &start, &grid, &model, &hops, &mut r, limits, &mut rng)?;
        let csv = dir.join(format!("{name}_{i}.csv"));
        write(&csv, &t.to_csv())?;
        runs.push(json!({
            "replica": i,
            "events": t.events.len(),
            "final_time": t.final_time,
            "truncated": t.truncated,
            "initial": t.initial.counts(),
            "final": t.final_configuration()?.counts(),
            "csv": csv.file_name().map(|f| f.to_string_lossy().into_owned()),
        }));
    }
    let sidecar = json!({ "kind": name, "seed": seed, "dynamics": d, "runs": runs });
    write(
        &dir.join(format!("{name}.json")),
        &serde_json::to_string_pretty(&sidecar)?,
    )?;
    println!("{} {name} trajectories written to {}", args.replicas, dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Sample(a) => &a.common,
        Command::Glauber(a) | Command::Kawasaki(a) => &a.common,
        Command::Identities(c)
        | Command::Correlations(c)
        | Command::Papangelou(c)
        | Command::Gnz(c)
        | Command::Balance(c)
        | Command::Reversibility(c)
        | Command::Stationarity(c)
        | Command::Scaling(c)
        | Command::All(c) => c,
    };
    let cfg = match load(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("permadyn: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Sample(a) => sample(a, &cfg).map(|_| true),
        Command::Glauber(a) => trajectories(a, &cfg, DynamicsKind::Glauber).map(|_| true),
        Command::Kawasaki(a) => trajectories(a, &cfg, DynamicsKind::Kawasaki).map(|_| true),
        Command::Identities(c) => run_checks(c, &cfg, Suite::Identities),
        Command::Correlations(c) => run_checks(c, &cfg, Suite::Correlations),
        Command::Papangelou(c) => run_checks(c, &cfg, Suite::Papangelou),
        Command::Gnz(c) => run_checks(c, &cfg, Suite::Gnz),
        Command::Balance(c) => run_checks(c, &cfg, Suite::Balance),
        Command::Reversibility(c) => run_checks(c, &cfg, Suite::Reversibility),
        Command::Stationarity(c) => run_checks(c, &cfg, Suite::Stationarity),
        Command::Scaling(c) => run_checks(c, &cfg, Suite::Scaling),
        Command::All(c) => run_checks(c, &cfg, Suite::All),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("permadyn: {e:#}");
            ExitCode::FAILURE
        }
    }
}
