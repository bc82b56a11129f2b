use clap::{Parser, Subcommand};
use echolab::commands::Session;
use echolab::config::ExperimentConfig;
use echolab::{CliError, EXIT_RUNTIME};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "echolab", version, about = "Moving-interface echo experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Invert a measurement recorded for a different medium.
    #[arg(long, global = true)]
    override_hash: bool,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Check every config block and the H1D hypothesis.
    Validate,
    /// Write the probe signal.
    Probe,
    /// Write the boundary trace of the ansatz.
    Ansatz,
    /// Run the Galerkin solver and write the measured trace.
    Simulate,
    /// Reconstruct the interface from a measurement.
    Invert {
        /// Measurement CSV; defaults to measurement.csv in the output directory.
        #[arg(long)]
        measurement: Option<PathBuf>,
    },
    /// Run the identity suites.
    Verify,
    /// Forward model followed by inversion, with error report.
    Roundtrip,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Probe => "probe",
            Command::Ansatz => "ansatz",
            Command::Simulate => "simulate",
            Command::Invert { .. } => "invert",
            Command::Verify => "verify",
            Command::Roundtrip => "roundtrip",
        }
    }
}

fn run(cli: Cli) -> Result<echolab::commands::Outcome, CliError> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Runtime {
                stage: "threads",
                message: e.to_string(),
            })?;
    }
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let config = ExperimentConfig::load(&path)?;
    let out = cli
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("echolab-out"));
    let measurement = match &cli.command {
        Command::Invert { measurement } => measurement.clone(),
        _ => None,
    };
    let mut s = Session::new(config, out, cli.override_hash, measurement, cli.command.name());
    match cli.command {
        Command::Validate => s.validate(),
        Command::Probe => s.probe(),
        Command::Ansatz => s.ansatz(),
        Command::Simulate => s.simulate(),
        Command::Invert { .. } => s.invert(),
        Command::Verify => s.verify(),
        Command::Roundtrip => s.roundtrip(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_RUNTIME } else { 0 });
        }
    };
    match run(cli) {
        Ok(o) => {
            println!("{}", serde_json::to_string_pretty(&o.report).expect("report serializes"));
            ExitCode::from(o.code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
