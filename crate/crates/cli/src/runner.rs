//! Matrix execution. Workers train runs and hand them to one collector, which
//! owns every output file.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use qrwkv::model::{checkpoint, Variant};
use qrwkv::tasks::TaskSpec;
use qrwkv::train::{self, RunReport, TrainedRun};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_MD: &str = "results.md";
pub const LOSSES_CSV: &str = "losses.csv";
pub const CONFIG_ECHO: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// One cell of the (task × variant × seed) matrix.
#[derive(Debug, Clone)]
pub struct Job {
    pub task: TaskSpec,
    pub variant: Variant,
    pub seed: u64,
}

/// Jobs in task, variant, seed order.
pub fn jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let mut out = Vec::new();
    for t in &cfg.tasks {
        for &variant in &cfg.variants {
            for &seed in &cfg.seeds {
                out.push(Job {
                    task: cfg.task_for(t, seed),
                    variant,
                    seed,
                });
            }
        }
    }
    out
}

pub fn checkpoint_path(dir: &Path, r: &RunReport) -> PathBuf {
    dir.join(CHECKPOINT_DIR)
        .join(format!("{}-{}-{}.qrwkv", r.task, r.variant, r.seed))
}

/// Creates `dir`, refusing one that already has entries unless `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", dir.display())))?;
        if entries.next().is_some() && !force {
            return Err(CliError::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

#[derive(Serialize)]
struct LossRow {
    task: &'static str,
    variant: &'static str,
    seed: u64,
    epoch: usize,
    train_loss: f64,
}

/// Per-epoch training losses. Epoch 0 is the untrained full-set MSE; epoch
/// `k ≥ 1` is the mean minibatch loss of the k-th pass.
pub fn write_losses_csv(w: impl Write, reports: &[RunReport]) -> Result<(), CliError> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    for r in reports {
        let losses = std::iter::once(r.initial_train_mse).chain(r.epoch_losses.iter().copied());
        for (epoch, train_loss) in losses.enumerate() {
            out.serialize(LossRow {
                task: r.task.as_str(),
                variant: r.variant.as_str(),
                seed: r.seed,
                epoch,
                train_loss,
            })
            .map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    out.flush().map_err(|e| CliError::Io(e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Runs the whole matrix and writes every artifact into `cfg.output_dir`.
/// Returns the reports in job order.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<Vec<RunReport>, CliError> {
    let dir = &cfg.output_dir;
    prepare_output_dir(dir, cfg.force)?;
    std::fs::write(dir.join(CONFIG_ECHO), cfg.to_toml())
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    std::fs::create_dir_all(dir.join(CHECKPOINT_DIR))
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;

    let jobs = jobs(cfg);
    let total = jobs.len();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, qrwkv::Result<TrainedRun>)>();
    let mut slots: Vec<Option<RunReport>> = vec![None; total];
    let mut first_err = None;

    std::thread::scope(|s| {
        for _ in 0..cfg.workers.min(total) {
            let tx = tx.clone();
            let (jobs, next) = (&jobs, &next);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let model = cfg.model.with_variant(job.variant);
                let run = train::train_model(&model, &cfg.train, &job.task, job.seed);
                if tx.send((i, run)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut done = 0;
        for (i, run) in rx {
            done += 1;
            let job = &jobs[i];
            match run {
                Ok(run) => {
                    let r = &run.report;
                    log::info!(
                        "[{done}/{total}] {} {} seed {}: mae {:.4} mse {:.4} ({:.1} s)",
                        r.task,
                        r.variant,
                        r.seed,
                        r.mae,
                        r.mse,
                        r.wall_seconds
                    );
                    if let Err(e) = checkpoint::save(&run.model, checkpoint_path(dir, r)) {
                        log::error!("checkpoint for {} {} seed {}: {e}", r.task, r.variant, r.seed);
                        first_err.get_or_insert(CliError::Io(e.to_string()));
                    }
                    slots[i] = Some(run.report);
                }
                Err(e) => {
                    log::error!(
                        "[{done}/{total}] {} {} seed {} failed: {e}",
                        job.task.name(),
                        job.variant,
                        job.seed
                    );
                    first_err.get_or_insert(CliError::Run(e.to_string()));
                }
            }
        }
    });

    let reports: Vec<RunReport> = slots.into_iter().flatten().collect();
    train::write_results_csv(create(&dir.join(RESULTS_CSV))?, &reports)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_losses_csv(create(&dir.join(LOSSES_CSV))?, &reports)?;
    if Variant::ALL.iter().all(|v| cfg.variants.contains(v)) {
        match train::compare_all(&reports) {
            Ok(c) => std::fs::write(dir.join(RESULTS_MD), train::markdown_table(&c))
                .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?,
            Err(e) => {
                first_err.get_or_insert(CliError::Run(e.to_string()));
            }
        }
    } else {
        log::info!("one variant only; skipping {RESULTS_MD}");
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(reports)
}
