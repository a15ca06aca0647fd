//! Experiment configuration: presets, the TOML file format and flag overrides.

use std::path::{Path, PathBuf};

use qrwkv::model::{ModelConfig, Variant};
use qrwkv::tasks::{self, TaskName, TaskParams, TaskSpec};
use qrwkv::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::CliError;

/// Environment variable consulted when neither a flag nor the file names an
/// output directory.
pub const OUTPUT_DIR_ENV: &str = "QRWKV_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "results";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn model(self) -> ModelConfig {
        match self {
            Preset::Desk => ModelConfig::desk(Variant::Classical),
            Preset::Paper => ModelConfig::paper(Variant::Classical),
        }
    }

    pub fn epochs(self) -> usize {
        match self {
            Preset::Desk => 300,
            Preset::Paper => 1000,
        }
    }
}

/// Partial model table; missing keys come from the preset.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelOverrides {
    n_embd: Option<usize>,
    n_layer: Option<usize>,
    n_intermediate: Option<usize>,
    n_head: Option<usize>,
    n_qubits: Option<usize>,
    q_depth: Option<usize>,
    input_norm: Option<bool>,
    max_half_life: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskEntry {
    name: TaskName,
    length: Option<usize>,
    params: Option<Spanned<toml::Table>>,
}

/// Shape of the TOML file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    preset: Option<Preset>,
    seeds: Option<Vec<u64>>,
    variants: Option<Vec<Variant>>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    window: Option<usize>,
    lr: Option<f64>,
    split_ratio: Option<f64>,
    workers: Option<usize>,
    output_dir: Option<PathBuf>,
    force: Option<bool>,
    model: Option<ModelOverrides>,
    tasks: Option<Vec<TaskEntry>>,
}

/// Values given on the command line. `None` and empty lists defer to the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub tasks: Vec<TaskName>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub epochs: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub force: bool,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// Architecture shared by both variants; `variant` is set per run.
    pub model: ModelConfig,
    pub variants: Vec<Variant>,
    /// Series definitions; `seed` is replaced by the run seed.
    pub tasks: Vec<TaskSpec>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub force: bool,
}

fn pick<T: Clone>(flag: &[T], file: Option<Vec<T>>, default: Vec<T>) -> Vec<T> {
    if flag.is_empty() {
        file.unwrap_or(default)
    } else {
        flag.to_vec()
    }
}

/// Message without the `config error:` prefix, which the caller adds once.
pub(crate) fn bare(e: qrwkv::Error) -> String {
    match e {
        qrwkv::Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn task_params(name: TaskName, table: toml::Table) -> Result<TaskParams, toml::de::Error> {
    let v = toml::Value::Table(table);
    Ok(match name {
        TaskName::Arma => TaskParams::Arma(v.try_into()?),
        TaskName::ChaoticLogistic => TaskParams::ChaoticLogistic(v.try_into()?),
        TaskName::DampedOsc => TaskParams::DampedOsc(v.try_into()?),
        TaskName::NoisyDampedOsc => {
            // the noisy task keeps its own default noise level
            let mut base = toml::Table::try_from(tasks::DampedParams::noisy())
                .expect("params serialize to a table");
            if let toml::Value::Table(t) = v {
                base.extend(t);
            }
            TaskParams::NoisyDampedOsc(toml::Value::Table(base).try_into()?)
        }
        TaskName::PiecewiseRegime => {
            let _: Empty = v.try_into()?;
            TaskParams::PiecewiseRegime
        }
        TaskName::Sawtooth => TaskParams::Sawtooth(v.try_into()?),
        TaskName::Square => TaskParams::Square(v.try_into()?),
        TaskName::Triangle => TaskParams::Triangle(v.try_into()?),
        TaskName::SeasonalTrend => TaskParams::SeasonalTrend(v.try_into()?),
        TaskName::Sine => TaskParams::Sine(v.try_into()?),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

fn params_table(params: &TaskParams) -> toml::Table {
    let t = match params {
        TaskParams::Arma(p) => toml::Table::try_from(p),
        TaskParams::ChaoticLogistic(p) => toml::Table::try_from(p),
        TaskParams::DampedOsc(p) | TaskParams::NoisyDampedOsc(p) => toml::Table::try_from(p),
        TaskParams::PiecewiseRegime => Ok(toml::Table::new()),
        TaskParams::Sawtooth(p) | TaskParams::Square(p) | TaskParams::Triangle(p) | TaskParams::Sine(p) => {
            toml::Table::try_from(p)
        }
        TaskParams::SeasonalTrend(p) => toml::Table::try_from(p),
    };
    t.expect("params serialize to a table")
}

impl ExperimentConfig {
    /// Reads `path` (if any) and applies `cli` on top.
    pub fn load(path: Option<&Path>, cli: &Overrides) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        let origin = path.map_or("<flags>".to_string(), |p| p.display().to_string());
        Self::from_toml(&text, &origin, cli)
    }

    /// Parses config text; `origin` labels error messages.
    pub fn from_toml(text: &str, origin: &str, cli: &Overrides) -> Result<Self, CliError> {
        let file: FileConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        let preset = cli.preset.or(file.preset).unwrap_or(Preset::Desk);

        let mut model = preset.model();
        if let Some(m) = file.model {
            let set = |dst: &mut usize, v: Option<usize>| {
                if let Some(v) = v {
                    *dst = v;
                }
            };
            set(&mut model.n_embd, m.n_embd);
            set(&mut model.n_layer, m.n_layer);
            set(&mut model.n_intermediate, m.n_intermediate);
            set(&mut model.n_head, m.n_head);
            set(&mut model.n_qubits, m.n_qubits);
            set(&mut model.q_depth, m.q_depth);
            if let Some(v) = m.input_norm {
                model.input_norm = v;
            }
            if let Some(v) = m.max_half_life {
                model.max_half_life = v;
            }
        }
        model
            .validate()
            .map_err(|e| CliError::Config(format!("{origin}: [model]: {}", bare(e))))?;

        let mut task_specs = Vec::new();
        for entry in file.tasks.unwrap_or_default() {
            let mut spec = TaskSpec::new(entry.name, 0);
            if let Some(len) = entry.length {
                spec.length = len;
            }
            if let Some(p) = entry.params {
                let line = line_of(text, p.span().start);
                spec.params = task_params(entry.name, p.into_inner()).map_err(|e| {
                    CliError::Config(format!(
                        "{origin}: line {line}: params for {}: {}",
                        entry.name,
                        e.message()
                    ))
                })?;
            }
            task_specs.push(spec);
        }
        if !cli.tasks.is_empty() {
            // a flag picks tasks from the file when present there, defaults otherwise
            task_specs = cli
                .tasks
                .iter()
                .map(|&n| {
                    task_specs
                        .iter()
                        .find(|s| s.name() == n)
                        .cloned()
                        .unwrap_or_else(|| TaskSpec::new(n, 0))
                })
                .collect();
        }
        if task_specs.is_empty() {
            task_specs = TaskName::ALL.iter().map(|&n| TaskSpec::new(n, 0)).collect();
        }

        let seeds: Vec<u64> = pick(&cli.seeds, file.seeds, vec![1, 2, 3]);
        let variants: Vec<Variant> = pick(&cli.variants, file.variants, Variant::ALL.to_vec());

        let defaults = TrainConfig::default();
        let train = TrainConfig {
            epochs: cli.epochs.or(file.epochs).unwrap_or(preset.epochs()),
            batch_size: file.batch_size.unwrap_or(defaults.batch_size),
            window: file.window.unwrap_or(defaults.window),
            lr: file.lr.unwrap_or(defaults.lr),
            split_ratio: file.split_ratio.unwrap_or(defaults.split_ratio),
        };
        let workers = cli.workers.or(file.workers).unwrap_or(1);
        let output_dir = cli
            .output_dir
            .clone()
            .or(file.output_dir)
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));

        let cfg = Self {
            preset,
            model,
            variants,
            tasks: task_specs,
            seeds,
            train,
            workers,
            output_dir,
            force: cli.force || file.force.unwrap_or(false),
        };
        cfg.validate().map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if self.tasks.is_empty() {
            return Err("tasks must not be empty".into());
        }
        if self.seeds.is_empty() {
            return Err("seeds must not be empty".into());
        }
        if self.variants.is_empty() {
            return Err("variants must not be empty".into());
        }
        if self.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        if self.train.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(format!("lr must be positive, got {}", self.train.lr));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if self.tasks[..i].iter().any(|o| o.name() == t.name()) {
                return Err(format!("task {} listed twice", t.name()));
            }
        }
        // catches short series, bad params and oversized windows before any training
        for spec in &self.tasks {
            let series = tasks::generate(spec).map_err(|e| format!("task {}: {}", spec.name(), bare(e)))?;
            tasks::make_dataset(series, self.train.split_ratio, self.train.window)
                .map_err(|e| format!("task {}: {}", spec.name(), bare(e)))?;
        }
        Ok(())
    }

    /// The task definition with the run seed filled in.
    pub fn task_for(&self, task: &TaskSpec, seed: u64) -> TaskSpec {
        TaskSpec {
            seed,
            ..task.clone()
        }
    }

    /// Every setting spelled out in the file format, so the echo can be fed
    /// back through `--config`.
    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct TaskOut {
            name: TaskName,
            length: usize,
            params: toml::Table,
        }
        #[derive(Serialize)]
        struct ModelOut {
            n_embd: usize,
            n_layer: usize,
            n_intermediate: usize,
            n_head: usize,
            n_qubits: usize,
            q_depth: usize,
            input_norm: bool,
            max_half_life: f64,
        }
        #[derive(Serialize)]
        struct Out<'a> {
            preset: Preset,
            seeds: &'a [u64],
            variants: &'a [Variant],
            epochs: usize,
            batch_size: usize,
            window: usize,
            lr: f64,
            split_ratio: f64,
            workers: usize,
            output_dir: &'a Path,
            force: bool,
            model: ModelOut,
            tasks: Vec<TaskOut>,
        }
        let m = &self.model;
        let out = Out {
            preset: self.preset,
            seeds: &self.seeds,
            variants: &self.variants,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            window: self.train.window,
            lr: self.train.lr,
            split_ratio: self.train.split_ratio,
            workers: self.workers,
            output_dir: &self.output_dir,
            force: self.force,
            model: ModelOut {
                n_embd: m.n_embd,
                n_layer: m.n_layer,
                n_intermediate: m.n_intermediate,
                n_head: m.n_head,
                n_qubits: m.n_qubits,
                q_depth: m.q_depth,
                input_norm: m.input_norm,
                max_half_life: m.max_half_life,
            },
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskOut {
                    name: t.name(),
                    length: t.length,
                    params: params_table(&t.params),
                })
                .collect(),
        };
        toml::to_string(&out).expect("config serializes")
    }
}
