//! Command-line experiment runner: distance sweeps, full key-exchange
//! sessions, interferometer alignment traces and analytic predictions, all
//! written as CSV.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use commands::{
    run_alignment, run_session_cmd, sweep_rows, transcript_path, write_alignment, write_file,
    write_predict, write_session_csv, write_sweep,
};
pub use config::{ConfigError, ExperimentConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Simulation(String),
    #[error("session aborted: {0}")]
    Abort(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Simulation(_) => 2,
            CliError::Abort(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cowqkd",
    version,
    about = "Coherent one-way QKD link simulator",
    after_help = "Any configuration key can be overridden with --section.key=value, \
                  e.g. --fibre.length_km=150 or --source.mu=0.4."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run seed, up to 64 hex digits.
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Slots simulated per sweep row.
    #[arg(long, global = true)]
    pub slots: Option<String>,
    /// Skip the Monte-Carlo columns of a sweep.
    #[arg(long, global = true)]
    pub analytic_only: bool,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Analytic and simulated rates over the configured fibre lengths.
    Sweep,
    /// Full key exchange with block-by-block report and transcript.
    Session,
    /// Monitor-line count-rate trace of the alignment procedure.
    Align,
    /// Analytic link budget and rates only.
    Predict,
}

impl Command {
    fn default_out(self) -> &'static str {
        match self {
            Command::Sweep => "sweep.csv",
            Command::Session => "session.csv",
            Command::Align => "align.csv",
            Command::Predict => "predict.csv",
        }
    }
}

type Override = (String, String);

/// Splits `--section.key=value` overrides from the arguments clap handles.
fn split_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Vec<Override>), CliError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let is_override = arg
            .to_str()
            .and_then(|s| s.strip_prefix("--"))
            .map(|s| s.split('=').next().unwrap_or("").contains('.'))
            .unwrap_or(false);
        if !is_override {
            rest.push(arg);
            continue;
        }
        let s = arg.to_str().expect("checked above");
        let (key, value) = s[2..].split_once('=').ok_or_else(|| {
            CliError::Usage(format!("override {s} needs the form --section.key=value"))
        })?;
        overrides.push((key.to_string(), value.to_string()));
    }
    Ok((rest, overrides))
}

/// Defaults, then the config file, then overrides, then dedicated flags.
pub fn build_config(
    cli: &Cli,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        cfg.parse_into(&text)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    if let Some(seed) = &cli.seed {
        cfg.set("run.seed", seed)?;
    }
    if let Some(slots) = &cli.slots {
        cfg.set("sweep.slots", slots)?;
    }
    if cli.analytic_only {
        cfg.analytic_only = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli, cfg: &ExperimentConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(cli.command.default_out()));
    let say = |stdout: &mut dyn Write, s: String| {
        // a closed stdout is not worth failing the run over
        let _ = stdout.write_all(s.as_bytes());
    };
    match cli.command {
        Command::Sweep | Command::Predict => {
            let mut cfg = cfg.clone();
            if cli.command == Command::Predict {
                cfg.analytic_only = true;
            }
            let rows = sweep_rows(&cfg)?;
            if cli.command == Command::Sweep {
                write_file(&out, |w| write_sweep(&cfg, &rows, w))?;
            } else {
                write_file(&out, |w| write_predict(&cfg, &rows, w))?;
            }
            for r in &rows {
                say(
                    stdout,
                    format!(
                        "{:>7.1} km  loss {:>5.2} dB  qber {:.4}  secret rate {:.3e} bit/s\n",
                        r.length_km, r.total_loss_db, r.analytic.qber, r.analytic.secret_rate_hz
                    ),
                );
            }
        }
        Command::Align => {
            let trace = run_alignment(cfg)?;
            write_file(&out, |w| write_alignment(cfg, &trace, w))?;
            say(
                stdout,
                format!(
                    "locked visibility {:.4} (minimum window {:.4}), scan fringe period {:.1} steps\n",
                    trace.visibility,
                    trace.min_visibility(),
                    std::f64::consts::TAU / trace.fit.phase_per_step
                ),
            );
        }
        Command::Session => {
            let outcome = run_session_cmd(cfg)?;
            write_file(&out, |w| write_session_csv(cfg, &outcome, w))?;
            write_file(&transcript_path(&out), |w| w.write_all(&outcome.transcript))?;
            say(stdout, outcome.report.summary());
            if let Some(reason) = &outcome.report.abort_reason {
                return Err(CliError::Abort(reason.clone()));
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    run_with(args, &mut std::io::stdout().lock())
}

/// As [`run`], with the command's report written to `stdout`.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let result = (|| {
        let (rest, overrides) = split_overrides(args)?;
        let cli = match Cli::try_parse_from(rest) {
            Ok(c) => c,
            Err(e) => {
                if e.use_stderr() {
                    eprint!("{}", e.render());
                } else {
                    let _ = write!(stdout, "{}", e.render());
                }
                return Ok(Some(e.exit_code()));
            }
        };
        let cfg = build_config(&cli, &overrides)?;
        if cli.print_config {
            let _ = stdout.write_all(cfg.to_text().as_bytes());
            return Ok(None);
        }
        execute(&cli, &cfg, stdout).map(|_| None)
    })();
    match result {
        Ok(code) => code.unwrap_or(0),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
