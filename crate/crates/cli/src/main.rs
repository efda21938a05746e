use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use perihom::json::to_json;
use perihom::model::{load_model, model_hash, validate};
use perihom::simulate::{simulate_paths, PathEnsemble};
use perihom::stats::Estimate;
use perihom::verify::{full_report, SigmaMc, SCHEMA_VERSION};
use perihom::{homogenize, Error, LevyTripletModel, RunConfig, SimulationConfig, TorusGrid};
use serde::Serialize;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (build ", env!("PERIHOM_BUILD_ID"), ")");

/// Homogenized limit of a periodic Lévy-type process: solve for the effective
/// drift and covariance on a grid, and check them by Monte Carlo.
#[derive(Parser, Debug)]
#[command(name = "perihom", version = VERSION)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate the model's standing assumptions and print the report.
    /// Exits 0 even when checks fail.
    Inspect(Common),
    /// Write the invariant measure π as CSV (x0,…,weight).
    Invariant(Common),
    /// Write the corrector β and its gradient as CSV.
    Corrector(Common),
    /// Print the effective law (b̄*, Σ and its terms) as JSON.
    Sigma(Common),
    /// Simulate the scaled process over the ε sweep and print a summary.
    Simulate(SweepArgs),
    /// Run the full verification pipeline and print the report. Exits 1 if
    /// any verdict fails.
    Verify(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Model file, or builtin:<name> (harmonic-mean, constant-levy,
    /// asymmetric-atom, stable-like, convolution-2d, brownian, sine-drift,
    /// deterministic).
    #[arg(long)]
    model: Option<String>,
    /// Nodes per dimension of the solver grid [default: 256].
    #[arg(long)]
    grid: Option<usize>,
    /// TOML run configuration; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for output files; without it results go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for simulation [default: logical cores].
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated, strictly decreasing ε values [default: 0.2,0.1,0.05].
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Unscaled time step [default: 0.01].
    #[arg(long)]
    dt: Option<f64>,
    /// Horizon T of the scaled process [default: 1].
    #[arg(long)]
    horizon: Option<f64>,
    /// Paths per ε [default: 10000].
    #[arg(long)]
    paths: Option<usize>,
    /// Base seed of the per-path random streams [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated thresholds δ for the large-jump counts [default: 0.5].
    #[arg(long, value_delimiter = ',')]
    delta: Option<Vec<f64>>,
}

/// A failure with its exit code: 2 for unusable input, 1 otherwise.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let input = e.stage() == Some("parse")
            || matches!(e.root(), Error::Parse(_) | Error::InvalidConfig(_) | Error::InvalidModel(_));
        Failure {
            code: if input { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
    }
}

fn merged_config(common: &Common, sweep: Option<&SweepArgs>) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(m) = &common.model {
        cfg.model = m.clone();
    }
    if let Some(g) = common.grid {
        cfg.grid = g;
    }
    if let Some(s) = sweep {
        let w = &mut cfg.sweep;
        if let Some(v) = &s.eps {
            w.eps = v.clone();
        }
        if let Some(v) = s.dt {
            w.dt = v;
        }
        if let Some(v) = s.horizon {
            w.horizon = v;
        }
        if let Some(v) = s.paths {
            w.n_paths = v;
        }
        if let Some(v) = s.seed {
            w.seed = v;
        }
        if let Some(v) = &s.delta {
            w.deltas = v.clone();
        }
    }
    if cfg.model.is_empty() {
        return Err(usage("no model given: pass --model or set `model` in --config"));
    }
    Ok(cfg)
}

fn set_workers(common: &Common) -> Result<(), Failure> {
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(usage("--workers must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    Ok(())
}

/// Writes `text` to `out/name`, or to stdout without an output directory.
fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<(), Failure> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| io_failure(Path::new("<stdout>"), e))?;
        }
    }
    Ok(())
}

fn setup(cfg: &RunConfig) -> Result<(LevyTripletModel, TorusGrid), Failure> {
    let model = load_model(&cfg.model).map_err(|e| e.at("parse"))?;
    let grid = TorusGrid::uniform(model.geometry().clone(), cfg.grid).map_err(|e| e.at("validate"))?;
    Ok((model, grid))
}

fn csv_text(write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> String {
    let mut buf = Vec::new();
    write(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

fn print_plan(sim: &SimulationConfig) {
    let cost = sim.plan();
    eprintln!(
        "ε = {}: {} steps of dt = {} per path × {} paths = {:.3e} steps",
        sim.eps, cost.steps_per_path, cost.dt_effective, sim.n_paths, cost.total_steps
    );
}

#[derive(Serialize)]
struct RunSummary {
    eps: f64,
    cost: perihom::SimulationCost,
    ctilde_mean: Vec<f64>,
    ctilde_se: Vec<f64>,
    sigma_mc: SigmaMc,
    mean_jumps: Estimate,
}

#[derive(Serialize)]
struct SimulationSummary {
    schema_version: u32,
    model: String,
    model_hash: String,
    config: RunConfig,
    sigma_solver: Vec<Vec<f64>>,
    runs: Vec<RunSummary>,
}

fn summarize(e: &PathEnsemble) -> RunSummary {
    let dd = e.dim * e.dim;
    let est: Vec<Estimate> = (0..dd).map(|k| Estimate::of(e.ctilde.iter().map(|c| c[k]))).collect();
    RunSummary {
        eps: e.config.eps,
        cost: e.cost.clone(),
        ctilde_mean: est.iter().map(|x| x.mean).collect(),
        ctilde_se: est.iter().map(|x| x.se).collect(),
        sigma_mc: SigmaMc::of(e),
        mean_jumps: Estimate::of(e.jump_counts.iter().map(|&c| c as f64)),
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Inspect(c) => {
            let cfg = merged_config(&c, None)?;
            let (model, grid) = setup(&cfg)?;
            let report = validate(&model, &grid);
            for f in report.failures() {
                eprintln!("check {} failed: {}", f.name, f.detail);
            }
            emit(c.out.as_deref(), "validation.json", &(to_json(&report) + "\n"))?;
            Ok(0)
        }
        Command::Invariant(c) => {
            let cfg = merged_config(&c, None)?;
            let (model, grid) = setup(&cfg)?;
            let h = homogenize(&model, &grid)?;
            emit(c.out.as_deref(), "invariant.csv", &csv_text(|w| h.invariant.write_csv(&grid, w)))?;
            Ok(0)
        }
        Command::Corrector(c) => {
            let cfg = merged_config(&c, None)?;
            let (model, grid) = setup(&cfg)?;
            let h = homogenize(&model, &grid)?;
            emit(c.out.as_deref(), "corrector.csv", &csv_text(|w| h.corrector.write_csv(&grid, w)))?;
            Ok(0)
        }
        Command::Sigma(c) => {
            let cfg = merged_config(&c, None)?;
            let (model, grid) = setup(&cfg)?;
            let h = homogenize(&model, &grid)?;
            emit(c.out.as_deref(), "sigma.json", &(h.law.to_json() + "\n"))?;
            Ok(0)
        }
        Command::Simulate(s) => {
            let cfg = merged_config(&s.common, Some(&s))?;
            set_workers(&s.common)?;
            let (model, grid) = setup(&cfg)?;
            let h = homogenize(&model, &grid)?;
            let mut runs = Vec::new();
            for &eps in &cfg.sweep.eps {
                let sim = cfg.sweep.at(eps);
                print_plan(&sim);
                let ens = simulate_paths(&model, &h.law, Some((&h.corrector, &grid)), &sim).map_err(|e| e.at("simulate"))?;
                if let Some(dir) = s.common.out.as_deref() {
                    emit(Some(dir), &format!("paths_eps{eps}.csv"), &csv_text(|w| ens.write_csv(w)))?;
                }
                runs.push(summarize(&ens));
            }
            let summary = SimulationSummary {
                schema_version: SCHEMA_VERSION,
                model: model.name().to_string(),
                model_hash: model_hash(&model),
                config: cfg,
                sigma_solver: h.law.sigma.clone(),
                runs,
            };
            emit(s.common.out.as_deref(), "simulation.json", &(to_json(&summary) + "\n"))?;
            Ok(0)
        }
        Command::Verify(s) => {
            let cfg = merged_config(&s.common, Some(&s))?;
            set_workers(&s.common)?;
            for &eps in &cfg.sweep.eps {
                print_plan(&cfg.sweep.at(eps));
            }
            let report = full_report(&cfg)?;
            eprint!("{}", report.summary());
            emit(s.common.out.as_deref(), "report.json", &(report.to_json() + "\n"))?;
            Ok(if report.passed { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
