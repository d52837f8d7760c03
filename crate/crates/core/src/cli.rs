//! Command-line front end: `gen-data`, `train`, `predict` and `benchmark`.
//!
//! Each command reads one JSON document and writes plain-text artifacts into
//! the output directory. Relative paths inside a config file are resolved
//! against the directory holding that file.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, load_csv, split, Dataset, Encoder, Schema, Standardizer, SynthSpec, Table,
};
use crate::error::{Error, Result};
use crate::nn::{NetworkConfig, UnitMask, WeightSet};
use crate::trainer::{
    evaluate, run_benchmark, train, BenchmarkDataset, BenchmarkSettings, EpochStats, EvalReport,
    Method, TrainConfig, TrainedModel,
};
use crate::upmm::UpmmParams;

#[derive(Debug, Parser)]
#[command(name = "coda", version, about = "Clustering-based dropout network training")]
pub struct Cli {
    /// Overrides the seed of the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config file's `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a generator spec.
    GenData { spec: PathBuf },
    /// Train one model as described by a run config.
    Train { config: PathBuf },
    /// Predict labels for a CSV file with a trained model.
    Predict { model: PathBuf, data: PathBuf },
    /// Run every (dataset, method, repeat) combination of a benchmark config.
    Benchmark { config: PathBuf },
}

/// Where a run gets its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthSpec),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    /// Held-out file; without it the training file is split.
    #[serde(default)]
    pub test: Option<PathBuf>,
    pub schema: PathBuf,
}

/// Hyperparameters shared by `train` and `benchmark` configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSettings {
    #[serde(default = "defaults::hidden_layers")]
    pub hidden_layers: usize,
    /// Defaults to the generator width for synthetic data.
    #[serde(default)]
    pub units_per_layer: Option<usize>,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::dropout_rate")]
    pub dropout_rate: f64,
    #[serde(default)]
    pub upmm: UpmmParams,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self {
            hidden_layers: defaults::hidden_layers(),
            units_per_layer: None,
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            learning_rate: defaults::learning_rate(),
            dropout_rate: defaults::dropout_rate(),
            upmm: UpmmParams::default(),
        }
    }
}

mod defaults {
    pub fn hidden_layers() -> usize {
        2
    }
    pub fn epochs() -> usize {
        50
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn learning_rate() -> f64 {
        0.1
    }
    pub fn dropout_rate() -> f64 {
        0.5
    }
    pub fn split_fraction() -> f64 {
        0.5
    }
    pub fn positive_label() -> usize {
        2
    }
    pub fn yes() -> bool {
        true
    }
}

impl TrainingSettings {
    fn train_config(&self, method: Method, seed: u64, data: &Dataset, source: &DataSource) -> Result<TrainConfig> {
        let units = match (self.units_per_layer, source) {
            (Some(units), _) => units,
            (None, DataSource::Synthetic(spec)) => spec.units,
            (None, DataSource::Csv(_)) => {
                return Err(Error::config(
                    "training.units_per_layer",
                    "required for CSV data",
                ))
            }
        };
        let network = NetworkConfig::new(data.dim(), self.hidden_layers, units, data.num_labels())?;
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            method,
            dropout_rate: self.dropout_rate,
            upmm: self.upmm,
            network,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "defaults::split_fraction")]
    pub split_fraction: f64,
    #[serde(default = "defaults::yes")]
    pub standardize: bool,
    #[serde(default = "defaults::positive_label")]
    pub positive_label: usize,
    #[serde(default)]
    pub training: TrainingSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkEntry {
    pub name: String,
    pub source: DataSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub datasets: Vec<BenchmarkEntry>,
    pub methods: Vec<Method>,
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "defaults::split_fraction")]
    pub split_fraction: f64,
    #[serde(default = "defaults::yes")]
    pub standardize: bool,
    #[serde(default = "defaults::positive_label")]
    pub positive_label: usize,
    #[serde(default)]
    pub training: TrainingSettings,
}

/// Feature preprocessing stored with a model so raw CSV rows can be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPipeline {
    pub encoder: Encoder,
    pub standardizer: Option<Standardizer>,
}

/// Contents of `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub method: Method,
    pub input: InputPipeline,
    pub model: TrainedModel,
}

/// Contents of `truth.json` next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub generator: WeightSet,
    pub masks: Vec<UnitMask>,
    /// 1-based generating architecture of every row of `data.csv`.
    pub truth: Vec<usize>,
}

/// Parses arguments, runs the command, and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData { spec } => {
            let spec: SynthSpec = read_json(spec)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            cmd_gen_data(&spec, cli.seed.unwrap_or(0), &out).map(|_| ())
        }
        Command::Train { config } => {
            let mut cfg: RunConfig = read_json(config)?;
            resolve_source(&mut cfg.data, config);
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let out = output_dir(cli.out.as_ref(), cfg.out.as_ref(), config);
            cmd_train(&cfg, &out).map(|_| ())
        }
        Command::Predict { model, data } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            cmd_predict(model, data, &out)
        }
        Command::Benchmark { config } => {
            let mut cfg: BenchmarkConfig = read_json(config)?;
            for entry in &mut cfg.datasets {
                resolve_source(&mut entry.source, config);
            }
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let out = output_dir(cli.out.as_ref(), cfg.out.as_ref(), config);
            cmd_benchmark(&cfg, &out)
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: format!("reading {}", path.display()),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: format!("serializing {}", path.display()),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn relative_to(config: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match config.parent() {
        Some(dir) => dir.join(path),
        None => path.to_path_buf(),
    }
}

fn resolve_source(source: &mut DataSource, config: &Path) {
    if let DataSource::Csv(csv) = source {
        csv.train = relative_to(config, &csv.train);
        csv.schema = relative_to(config, &csv.schema);
        if let Some(test) = &mut csv.test {
            *test = relative_to(config, test);
        }
    }
}

fn output_dir(flag: Option<&PathBuf>, from_config: Option<&PathBuf>, config: &Path) -> PathBuf {
    match (flag, from_config) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => relative_to(config, dir),
        (None, None) => PathBuf::from("out"),
    }
}

/// Writes `data.csv`, `truth.json`, `spec.json` and `schema.json` into `out`.
pub fn cmd_gen_data(spec: &SynthSpec, seed: u64, out: &Path) -> Result<Dataset> {
    let synth = generate_synthetic(spec, seed)?;
    create_dir(out)?;
    synth.dataset.write_csv(&out.join("data.csv"))?;
    write_json(&out.join("spec.json"), spec)?;
    write_json(&out.join("schema.json"), &synth.dataset.schema())?;
    let truth = TruthFile {
        generator: synth.generator,
        masks: synth.masks,
        truth: synth.dataset.truth().map(<[usize]>::to_vec).unwrap_or_default(),
    };
    write_json(&out.join("truth.json"), &truth)?;
    Ok(synth.dataset)
}

/// Loads the data named by `source`. Synthetic data are first written to
/// `out` so they can be read back like any CSV file.
fn load_source(
    source: &DataSource,
    seed: u64,
    out: &Path,
) -> Result<(Dataset, Option<Dataset>, Encoder)> {
    let (train_path, test_path, schema, truth) = match source {
        DataSource::Synthetic(spec) => {
            let generated = cmd_gen_data(spec, seed, out)?;
            let truth = generated.truth().map(<[usize]>::to_vec);
            (out.join("data.csv"), None, generated.schema(), truth)
        }
        DataSource::Csv(csv) => (
            csv.train.clone(),
            csv.test.clone(),
            Schema::from_json_file(&csv.schema)?,
            None,
        ),
    };
    let (data, encoder) = load_csv(&train_path, &schema)?;
    let data = match truth {
        Some(truth) => Dataset::new(
            data.dim(),
            data.num_labels(),
            data.features().to_vec(),
            data.labels().to_vec(),
            Some(truth),
        )?
        .with_feature_names(data.feature_names().to_vec())?,
        None => data,
    };
    let test = match test_path {
        Some(path) => Some(encode_labelled(&encoder, &path)?),
        None => None,
    };
    Ok((data, test, encoder))
}

fn encode_labelled(encoder: &Encoder, path: &Path) -> Result<Dataset> {
    let table = Table::read(path)?;
    let rows = encoder.encode(&table, true)?;
    let labels = rows.labels.expect("label column is required");
    Dataset::new(rows.dim, encoder.label_levels.len(), rows.features, labels, None)?
        .with_feature_names(encoder.feature_names.clone())
}

fn check_positive_label(label: usize, data: &Dataset) -> Result<()> {
    if label == 0 || label > data.num_labels() {
        return Err(Error::config(
            "positive_label",
            format!("must lie in [1, {}], got {label}", data.num_labels()),
        ));
    }
    Ok(())
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config("split_fraction", "must lie strictly between 0 and 1"));
    }
    Ok(())
}

fn log_csv(history: &[EpochStats], with_k: bool) -> String {
    let mut text = String::from(if with_k { "epoch,loss,K\n" } else { "epoch,loss\n" });
    for e in history {
        match (with_k, e.architectures) {
            (true, Some(k)) => text.push_str(&format!("{},{},{k}\n", e.epoch, e.loss)),
            _ => text.push_str(&format!("{},{}\n", e.epoch, e.loss)),
        }
    }
    text
}

/// Trains and writes `model.json`, `log.csv` and `metrics.json` into `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    check_fraction(cfg.split_fraction)?;
    create_dir(out)?;
    let (data, test, encoder) = load_source(&cfg.data, cfg.seed, out)?;
    check_positive_label(cfg.positive_label, &data)?;
    let (train_set, test_set) = match test {
        Some(test) => (data, test),
        None => split(&data, cfg.split_fraction, cfg.seed)?,
    };
    let (train_set, test_set, standardizer) = if cfg.standardize {
        let (train_set, mut others, s) = crate::data::standardize(&train_set, &[&test_set])?;
        (train_set, others.remove(0), Some(s))
    } else {
        (train_set, test_set, None)
    };
    if test_set.is_empty() {
        return Err(Error::usage("test split is empty"));
    }
    let train_cfg = cfg
        .training
        .train_config(cfg.method, cfg.seed, &train_set, &cfg.data)?;
    let (model, history) = train(&train_set, &train_cfg)?;
    let mut report = evaluate(&model, &test_set, cfg.positive_label)?;
    report.seeds = vec![cfg.seed];

    let file = ModelFile {
        method: cfg.method,
        input: InputPipeline {
            encoder,
            standardizer,
        },
        model,
    };
    write_json(&out.join("model.json"), &file)?;
    write_text(&out.join("log.csv"), &log_csv(&history, cfg.method == Method::Coda))?;
    write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}

/// Writes `predictions.csv` with one row per input row.
pub fn cmd_predict(model_path: &Path, data_path: &Path, out: &Path) -> Result<()> {
    let file: ModelFile = read_json(model_path)?;
    if let TrainedModel::Coda(model) = &file.model {
        model.validate()?;
    }
    let table = Table::read(data_path)?;
    let rows = file.input.encoder.encode(&table, false)?;
    crate::error::check_dim("model input width", file.model.config().input_dim, rows.dim)?;
    let coda = file.method == Method::Coda;
    let mut text = String::from(if coda { "row,label,architecture\n" } else { "row,label\n" });
    let mut x = vec![0.0; rows.dim];
    for n in 0..rows.len() {
        x.copy_from_slice(rows.row(n));
        if let Some(s) = &file.input.standardizer {
            s.apply_row(&mut x);
        }
        let (class, arch) = file.model.predict_row(&x)?;
        let label = file
            .input
            .encoder
            .label_name(class + 1)
            .ok_or_else(|| Error::numeric(format!("model predicted unknown class {class}")))?;
        let label = csv_field(label);
        match arch {
            Some(k) => text.push_str(&format!("{},{label},{k}\n", n + 1)),
            None => text.push_str(&format!("{},{label}\n", n + 1)),
        }
    }
    create_dir(out)?;
    write_text(&out.join("predictions.csv"), &text)
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

/// Writes `results.csv` and `report.md`. Fails only when every run failed.
pub fn cmd_benchmark(cfg: &BenchmarkConfig, out: &Path) -> Result<()> {
    check_fraction(cfg.split_fraction)?;
    if cfg.datasets.is_empty() {
        return Err(Error::config("datasets", "must list at least one dataset"));
    }
    create_dir(out)?;
    let mut datasets = Vec::with_capacity(cfg.datasets.len());
    for (i, entry) in cfg.datasets.iter().enumerate() {
        let data_seed = cfg.seed.wrapping_add(i as u64);
        let data = match &entry.source {
            DataSource::Synthetic(spec) => generate_synthetic(spec, data_seed)?.dataset,
            DataSource::Csv(csv) => {
                if csv.test.is_some() {
                    return Err(Error::config(
                        format!("datasets.{}.test", entry.name),
                        "benchmark datasets are split per repeat",
                    ));
                }
                load_csv(&csv.train, &Schema::from_json_file(&csv.schema)?)?.0
            }
        };
        check_positive_label(cfg.positive_label, &data)?;
        let units = match (cfg.training.units_per_layer, &entry.source) {
            (Some(units), _) => Some(units),
            (None, DataSource::Synthetic(spec)) => Some(spec.units),
            (None, DataSource::Csv(_)) => {
                return Err(Error::config(
                    "training.units_per_layer",
                    "required for CSV data",
                ))
            }
        };
        datasets.push(BenchmarkDataset {
            name: entry.name.clone(),
            data,
            units_per_layer: units,
        });
    }
    let first = &datasets[0];
    let template = cfg.training.train_config(
        Method::Coda,
        cfg.seed,
        &first.data,
        &cfg.datasets[0].source,
    )?;
    let settings = BenchmarkSettings {
        methods: cfg.methods.clone(),
        repeats: cfg.repeats,
        template,
        split_fraction: cfg.split_fraction,
        standardize: cfg.standardize,
        positive_label: cfg.positive_label,
        seed: cfg.seed,
    };
    let results = run_benchmark(&datasets, &settings)?;
    write_text(&out.join("results.csv"), &results.to_csv()?)?;
    write_text(&out.join("report.md"), &results.to_markdown())?;
    if results.all_failed() {
        return Err(Error::numeric("every benchmark run failed"));
    }
    Ok(())
}
