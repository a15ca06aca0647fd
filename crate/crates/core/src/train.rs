//! Adam, metrics, single training runs and the quantum-vs-classical comparison.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::tasks::{self, SeriesDataset, TaskName, TaskSpec};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// Moment buffers shaped like `params`, with β = (0.9, 0.999), ε = 1e-8.
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, set has {}",
                self.m.len(),
                params.len()
            )));
        }
        if let Some((_, p)) = params
            .iter()
            .find(|(_, p)| p.requires_grad && p.grad.is_none())
        {
            return Err(Error::Contract(format!("parameter {} has no gradient", p.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.requires_grad {
                continue;
            }
            let grad = p.grad.as_ref().expect("checked above").data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, theta) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *theta -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        params.zero_grad();
        Ok(())
    }
}

/// `(MAE, MSE)` of `yhat` against `y`.
pub fn metrics(y: &[f64], yhat: &[f64]) -> Result<(f64, f64)> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(Error::dim("metrics", &[y.len()], &[yhat.len()]));
    }
    let n = y.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let d = a - b;
        abs += d.abs();
        sq += d * d;
    }
    Ok((abs / n, sq / n))
}

/// Optimization settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub window: usize,
    pub lr: f64,
    pub split_ratio: f64,
}

impl Default for TrainConfig {
    /// 300 epochs, batch 64, window 32, lr 1e-3, 80/20 split.
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 64,
            window: 32,
            lr: 1e-3,
            split_ratio: tasks::DEFAULT_SPLIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    /// Training produced a non-finite loss or value; metrics are NaN.
    Diverged { epoch: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub task: TaskName,
    pub variant: Variant,
    pub seed: u64,
    /// Test-split errors in raw series units.
    pub mae: f64,
    pub mse: f64,
    pub epochs: usize,
    pub wall_seconds: f64,
    pub status: RunStatus,
    /// Normalized next-step MSE of the untrained model over every training window.
    pub initial_train_mse: f64,
    /// Same after the last epoch.
    pub final_train_mse: f64,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl RunReport {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

pub struct TrainedRun {
    pub report: RunReport,
    pub model: Model,
}

fn batch_tensors(ds: &SeriesDataset, idx: &[usize]) -> Result<(Tensor, Tensor)> {
    let t = ds.window();
    let mut xs = Vec::with_capacity(idx.len() * t);
    let mut ys = Vec::with_capacity(idx.len() * t);
    for &i in idx {
        let (x, y) = ds.window_pair(i);
        xs.extend(x);
        ys.extend(y);
    }
    Ok((
        Tensor::new([idx.len(), t, 1], xs)?,
        Tensor::new([idx.len(), t, 1], ys)?,
    ))
}

/// Forward-only normalized MSE over every training window.
pub fn train_mse(model: &Model, ds: &SeriesDataset) -> Result<f64> {
    let all: Vec<usize> = (0..ds.num_windows()).collect();
    let (x, y) = batch_tensors(ds, &all)?;
    let (pred, _) = model.predict(&x, None)?;
    Ok(metrics(y.data(), pred.data())?.1)
}

/// Runs over the whole series prefix and scores the test positions in raw units.
pub fn evaluate(model: &Model, ds: &SeriesDataset) -> Result<(f64, f64)> {
    let pred = model.predict_series(&ds.eval_inputs())?;
    let norm = ds.normalizer();
    let yhat: Vec<f64> = pred[ds.test_positions()]
        .iter()
        .map(|z| norm.denorm(*z))
        .collect();
    metrics(ds.test(), &yhat)
}

/// One minibatch: forward, MSE, backward, Adam. Returns the loss.
fn train_batch(model: &mut Model, opt: &mut Adam, x: Tensor, y: Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x);
    let yv = g.constant(y);
    let (pred, _) = model.forward(&mut g, xv, None)?;
    let loss = g.mse(pred, yv)?;
    let value = g.value(loss)[0];
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    g.backward(loss, model.params_mut())?;
    opt.step(model.params_mut())?;
    Ok(value)
}

/// Trains a fresh `model_config` model on `task` from `seed`.
///
/// The seed drives parameter initialization and the per-epoch shuffle; the
/// series itself comes from `task.seed`. A non-finite loss or activation ends
/// the run with [`RunStatus::Diverged`] instead of an error.
pub fn train_model(
    model_config: &ModelConfig,
    train: &TrainConfig,
    task: &TaskSpec,
    seed: u64,
) -> Result<TrainedRun> {
    let start = Instant::now();
    if train.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let ds = tasks::make_dataset(tasks::generate(task)?, train.split_ratio, train.window)?;
    let mut model = Model::new(model_config.clone(), seed)?;
    let mut opt = Adam::new(model.params(), train.lr);
    let mut shuffle = ChaCha8Rng::seed_from_u64(seed);
    shuffle.set_stream(2);
    let mut report = RunReport {
        task: task.name(),
        variant: model_config.variant,
        seed,
        mae: f64::NAN,
        mse: f64::NAN,
        epochs: train.epochs,
        wall_seconds: 0.0,
        status: RunStatus::Ok,
        initial_train_mse: f64::NAN,
        final_train_mse: f64::NAN,
        epoch_losses: Vec::with_capacity(train.epochs),
    };
    let mut epoch = 0;
    let outcome = (|| -> Result<()> {
        report.initial_train_mse = train_mse(&model, &ds)?;
        let mut order: Vec<usize> = (0..ds.num_windows()).collect();
        while epoch < train.epochs {
            order.shuffle(&mut shuffle);
            let mut total = 0.0;
            for chunk in order.chunks(train.batch_size) {
                let (x, y) = batch_tensors(&ds, chunk)?;
                total += train_batch(&mut model, &mut opt, x, y)? * chunk.len() as f64;
            }
            report.epoch_losses.push(total / order.len() as f64);
            epoch += 1;
        }
        report.final_train_mse = train_mse(&model, &ds)?;
        let (mae, mse) = evaluate(&model, &ds)?;
        if !(mae.is_finite() && mse.is_finite()) {
            return Err(Error::Numeric(format!("test metrics are {mae}, {mse}")));
        }
        report.mae = mae;
        report.mse = mse;
        Ok(())
    })();
    match outcome {
        Ok(()) => {}
        Err(Error::Numeric(message)) => {
            log::warn!(
                "{} {} seed {seed} diverged at epoch {epoch}: {message}",
                report.task,
                report.variant
            );
            report.mae = f64::NAN;
            report.mse = f64::NAN;
            report.status = RunStatus::Diverged { epoch, message };
        }
        Err(e) => return Err(e),
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(TrainedRun { report, model })
}

/// Strictly lower on both metrics.
pub fn quantum_better(mae_q: f64, mse_q: f64, mae_c: f64, mse_c: f64) -> bool {
    mae_q < mae_c && mse_q < mse_c
}

/// Seed-averaged metrics of both variants on one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub task: TaskName,
    pub quantum: (f64, f64),
    pub classical: (f64, f64),
    pub quantum_better: bool,
    /// Diverged runs left out of the means.
    pub excluded: usize,
}

fn mean_metrics(runs: &[&RunReport]) -> (f64, f64) {
    let ok: Vec<_> = runs.iter().filter(|r| r.is_ok()).collect();
    if ok.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = ok.len() as f64;
    (
        ok.iter().map(|r| r.mae).sum::<f64>() / n,
        ok.iter().map(|r| r.mse).sum::<f64>() / n,
    )
}

/// Averages each variant over its seeds and applies [`quantum_better`].
pub fn compare(reports: &[RunReport]) -> Result<Comparison> {
    let task = reports
        .first()
        .ok_or_else(|| Error::Config("no reports to compare".into()))?
        .task;
    if let Some(r) = reports.iter().find(|r| r.task != task) {
        return Err(Error::Config(format!(
            "reports mix tasks {task} and {}",
            r.task
        )));
    }
    let of = |v: Variant| -> Vec<&RunReport> { reports.iter().filter(|r| r.variant == v).collect() };
    let (q, c) = (of(Variant::Quantum), of(Variant::Classical));
    let seeds = |rs: &[&RunReport]| -> BTreeSet<u64> { rs.iter().map(|r| r.seed).collect() };
    let (sq, sc) = (seeds(&q), seeds(&c));
    if sq.is_empty() || sq != sc {
        return Err(Error::Config(format!(
            "{task}: quantum seeds {sq:?} and classical seeds {sc:?} must match and be non-empty"
        )));
    }
    let excluded = reports.iter().filter(|r| !r.is_ok()).count();
    for r in reports.iter().filter(|r| !r.is_ok()) {
        log::warn!("excluding diverged run {} {} seed {}", r.task, r.variant, r.seed);
    }
    let quantum = mean_metrics(&q);
    let classical = mean_metrics(&c);
    Ok(Comparison {
        task,
        quantum,
        classical,
        quantum_better: quantum_better(quantum.0, quantum.1, classical.0, classical.1),
        excluded,
    })
}

/// Groups reports by task (in [`TaskName::ALL`] order) and compares each.
pub fn compare_all(reports: &[RunReport]) -> Result<Vec<Comparison>> {
    TaskName::ALL
        .iter()
        .filter_map(|&t| {
            let rs: Vec<RunReport> = reports.iter().filter(|r| r.task == t).cloned().collect();
            (!rs.is_empty()).then(|| compare(&rs))
        })
        .collect()
}

#[derive(Serialize)]
struct CsvRow<'a> {
    task: &'a str,
    variant: &'a str,
    seed: u64,
    mae: f64,
    mse: f64,
    epochs: usize,
    wall_seconds: f64,
}

/// `task,variant,seed,mae,mse,epochs,wall_seconds` with a header row.
pub fn write_results_csv(w: impl Write, reports: &[RunReport]) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    for r in reports {
        out.serialize(CsvRow {
            task: r.task.as_str(),
            variant: r.variant.as_str(),
            seed: r.seed,
            mae: r.mae,
            mse: r.mse,
            epochs: r.epochs,
            wall_seconds: r.wall_seconds,
        })
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    out.flush()?;
    Ok(())
}

fn cell(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4}")
    } else {
        "n/a".into()
    }
}

/// Markdown table with columns Task, Model, MAE, MSE, Quantum Better.
pub fn markdown_table(comparisons: &[Comparison]) -> String {
    let mut s = String::from("| Task | Model | MAE | MSE | Quantum Better |\n|---|---|---|---|---|\n");
    for c in comparisons {
        let flag = if c.quantum_better { "Yes" } else { "No" };
        let _ = writeln!(
            s,
            "| {} | Quantum | {} | {} | {flag} |",
            c.task.title(),
            cell(c.quantum.0),
            cell(c.quantum.1)
        );
        let _ = writeln!(
            s,
            "|  | Classical | {} | {} |  |",
            cell(c.classical.0),
            cell(c.classical.1)
        );
    }
    s
}
