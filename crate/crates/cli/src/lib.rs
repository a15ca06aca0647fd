//! Benchmark harness behind the `qrwkv` binary.
//!
//! [`main_with_args`] parses a command line, runs it and returns the process
//! exit code: 0 on success, 1 for configuration errors, 2 when a run diverges
//! or fails.

pub mod config;
pub mod runner;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use qrwkv::model::Variant;
use qrwkv::tasks::{self, TaskName};
use qrwkv::train::RunReport;

pub use config::{ExperimentConfig, Overrides, Preset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUN: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(_) | CliError::Io(_) => EXIT_RUN,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qrwkv", version, about = "Quantum-enhanced RWKV forecasting benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the (task × variant × seed) matrix and write reports.
    Run(RunArgs),
    /// Write the generated series of every configured task and seed as CSV.
    ExportTasks(CommonArgs),
    /// Run the oracle suite and print one line per check.
    Verify,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML experiment file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Task to include; repeatable.
    #[arg(long = "task", value_parser = parse_task)]
    pub tasks: Vec<TaskName>,
    /// Seed to include; repeatable.
    #[arg(long = "seed")]
    pub seed: Vec<u64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Defaults to the config value, then $QRWKV_OUTPUT_DIR, then `results`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Variant to include; repeatable.
    #[arg(long = "variant", value_parser = parse_variant)]
    pub variants: Vec<Variant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Runs trained in parallel.
    #[arg(long)]
    pub workers: Option<usize>,
}

fn parse_task(s: &str) -> Result<TaskName, String> {
    s.parse().map_err(config::bare)
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(config::bare)
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset,
            tasks: self.tasks.clone(),
            seeds: self.seed.iter().chain(&self.seeds).copied().collect(),
            output_dir: self.output_dir.clone(),
            force: self.force,
            ..Overrides::default()
        }
    }

    fn load(&self, extra: impl FnOnce(&mut Overrides)) -> Result<ExperimentConfig, CliError> {
        let mut o = self.overrides();
        extra(&mut o);
        ExperimentConfig::load(self.config.as_deref(), &o)
    }
}

/// Resolves the config and trains the matrix. Reports come back in job order.
pub fn cmd_run(args: &RunArgs) -> Result<Vec<RunReport>, CliError> {
    let cfg = args.common.load(|o| {
        o.variants = args.variants.clone();
        o.epochs = args.epochs;
        o.workers = args.workers;
    })?;
    log::info!(
        "{} runs ({} tasks × {} variants × {} seeds), {} epochs, {} worker(s), output {}",
        cfg.tasks.len() * cfg.variants.len() * cfg.seeds.len(),
        cfg.tasks.len(),
        cfg.variants.len(),
        cfg.seeds.len(),
        cfg.train.epochs,
        cfg.workers,
        cfg.output_dir.display()
    );
    runner::run_matrix(&cfg)
}

/// Writes `tasks/<task>-<seed>.csv` for every configured task and seed.
pub fn cmd_export_tasks(args: &CommonArgs) -> Result<Vec<PathBuf>, CliError> {
    let cfg = args.load(|_| {})?;
    let dir = cfg.output_dir.join("tasks");
    runner::prepare_output_dir(&dir, cfg.force)?;
    let mut written = Vec::new();
    for t in &cfg.tasks {
        for &seed in &cfg.seeds {
            let spec = cfg.task_for(t, seed);
            let series = tasks::generate(&spec).map_err(|e| CliError::Config(e.to_string()))?;
            let path = dir.join(format!("{}-{seed}.csv", spec.name()));
            write_series(&path, &series)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn write_series(path: &Path, series: &[f64]) -> Result<(), CliError> {
    let f = std::fs::File::create(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    tasks::write_series_csv(std::io::BufWriter::new(f), series)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Prints the oracle table; returns whether every check passed.
pub fn cmd_verify(out: &mut impl std::io::Write) -> std::io::Result<bool> {
    let start = Instant::now();
    let checks = qrwkv::verify::run_suite();
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{mark}  {:width$}  {}", c.name, c.detail)?;
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    writeln!(
        out,
        "{passed}/{} checks passed in {:.1} s",
        checks.len(),
        start.elapsed().as_secs_f64()
    )?;
    Ok(passed == checks.len())
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args).map(|reports| {
            let diverged = reports.iter().filter(|r| !r.is_ok()).count();
            if diverged > 0 {
                log::error!("{diverged} run(s) diverged");
                EXIT_RUN
            } else {
                EXIT_OK
            }
        }),
        Command::ExportTasks(args) => cmd_export_tasks(args).map(|paths| {
            log::info!("wrote {} series", paths.len());
            EXIT_OK
        }),
        Command::Verify => {
            let ok = cmd_verify(&mut std::io::stdout()).map_err(|e| CliError::Io(e.to_string()));
            ok.map(|ok| if ok { EXIT_OK } else { EXIT_RUN })
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
