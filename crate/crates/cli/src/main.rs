use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use proxy_ifm::run::{self, Engine, Format, Mode, RunError, RunOptions};
use proxy_ifm::scenario::{self, ScenarioError};

#[derive(Parser)]
#[command(name = "proxy-ifm", version, about = "Time-bin interferometer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario on one engine.
    Simulate {
        /// Scenario file or golden scenario name.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        engine: Option<Engine>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        shots: Option<u64>,
        #[arg(long, env = "PROXY_IFM_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        cutoff: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: Format,
    },
    /// Sweep a delay phase and report normalised detector intensities.
    Sweep {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "delay_phase", value_parser = ["delay_phase"])]
        param: String,
        /// Delay element; defaults to the scenario's sweep element.
        #[arg(long)]
        element: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        from: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        to: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: Format,
    },
    /// Joint outcome table from the truncated Fock-space simulation.
    Oracle {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        cutoff: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: Format,
    },
    /// Factor a unitary into nearest-neighbour two-mode steps.
    Decompose {
        /// CSV of complex entries, one matrix row per line.
        #[arg(long)]
        unitary: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    ListScenarios,
}

enum Failure {
    Validation(String),
    Engine(String),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Engine(e.to_string())
        }
    }
}

fn output_path(out: Option<PathBuf>, default_name: &str) -> PathBuf {
    match out {
        Some(p) => p,
        None => {
            let dir = std::env::var_os("PROXY_IFM_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
            dir.join(default_name)
        }
    }
}

fn angle(text: &str, key: &str) -> Result<f64, Failure> {
    scenario::parse_angle(text).ok_or_else(|| Failure::Validation(format!("--{key}: cannot read angle `{text}`")))
}

fn report_written(files: &[PathBuf]) {
    for f in files {
        eprintln!("wrote {}", f.display());
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { scenario, engine, mode, shots, seed, cutoff, out, format } => {
            let s = scenario::resolve(&scenario)?;
            let opts = RunOptions { engine, mode, shots, seed, cutoff };
            let report = run::run(&s, &opts)?;
            let path = output_path(out, &format!("{}.{}", s.name, format.extension()));
            report_written(&run::emit(&report, format, &path)?);
        }
        Command::Sweep { scenario, param: _, element, from, to, steps, out, format } => {
            let s = scenario::resolve(&scenario)?;
            let base = s.sweep.clone();
            let from = match from {
                Some(t) => angle(&t, "from")?,
                None => base.as_ref().map_or(0.0, |b| b.from),
            };
            let to = match to {
                Some(t) => angle(&t, "to")?,
                None => base.as_ref().map_or(2.0 * std::f64::consts::PI, |b| b.to),
            };
            let steps = steps.or(base.as_ref().map(|b| b.steps)).unwrap_or(32);
            if steps == 0 {
                return Err(Failure::Validation("--steps must be positive".into()));
            }
            let phases = scenario::linspace(from, to, steps);
            let report = run::run_sweep(&s, element.as_deref(), &phases)?;
            let path = output_path(out, &format!("{}.sweep.{}", s.name, format.extension()));
            report_written(&run::emit(&report, format, &path)?);
        }
        Command::Oracle { scenario, cutoff, out, format } => {
            let s = scenario::resolve(&scenario)?;
            let opts = RunOptions { engine: Some(Engine::Fock), mode: Some(Mode::Exact), cutoff, ..Default::default() };
            let report = run::run(&s, &opts)?;
            let path = output_path(out, &format!("{}.oracle.{}", s.name, format.extension()));
            report_written(&run::emit(&report, format, &path)?);
        }
        Command::Decompose { unitary, tol, out } => {
            let text = std::fs::read_to_string(&unitary)
                .map_err(|e| Failure::Validation(format!("cannot read `{}`: {e}", unitary.display())))?;
            let d = run::decompose_unitary(&text, tol)?;
            let stem = unitary.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "unitary".into());
            let path = output_path(out, &format!("{stem}.steps.csv"));
            run::write_steps(&d, &path)?;
            report_written(&[path]);
            eprintln!("{} steps", d.steps.len());
        }
        Command::ListScenarios => {
            for name in scenario::golden_names() {
                let s = scenario::golden(name).expect("golden scenarios parse");
                println!("{name}\t{}\t{}", s.source.name(), s.description);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Engine(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
