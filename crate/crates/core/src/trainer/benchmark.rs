use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split, standardize, Dataset};
use crate::error::{Error, Result};
use crate::rng::seeded;

use super::metrics::{paired_t_test, significance_marker, EvalReport, TTest};
use super::{evaluate, train, Method, TrainConfig};

#[derive(Debug, Clone)]
pub struct BenchmarkDataset {
    pub name: String,
    pub data: Dataset,
    /// Overrides the template's hidden width for this dataset.
    pub units_per_layer: Option<usize>,
}

/// Everything a benchmark needs besides the datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSettings {
    pub methods: Vec<Method>,
    pub repeats: usize,
    /// Hyperparameters shared by all runs; method, seed and network widths
    /// are filled in per run.
    pub template: TrainConfig,
    pub split_fraction: f64,
    pub standardize: bool,
    pub positive_label: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub method: Method,
    /// One-based.
    pub repeat: usize,
    pub seed: u64,
    pub split_seed: u64,
    pub outcome: std::result::Result<EvalReport, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dataset: String,
    pub method: Method,
    /// Successful runs.
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset: String,
    /// The method compared against CODA.
    pub method: Method,
    pub test: std::result::Result<TTest, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResults {
    pub seed: u64,
    pub repeats: usize,
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
    pub comparisons: Vec<Comparison>,
}

struct Job<'a> {
    dataset: &'a BenchmarkDataset,
    method: Method,
    repeat: usize,
    seed: u64,
    split_seed: u64,
}

/// Trains and scores every (dataset, method, repeat) triple.
///
/// Within a repeat all methods share one split, so the t-tests are paired by
/// repeat. A failed run is recorded and the others continue.
pub fn run_benchmark(
    datasets: &[BenchmarkDataset],
    settings: &BenchmarkSettings,
) -> Result<BenchmarkResults> {
    if settings.repeats == 0 {
        return Err(Error::config("repeats", "must be at least 1"));
    }
    if settings.methods.is_empty() {
        return Err(Error::config("methods", "must name at least one method"));
    }
    let mut master = seeded(settings.seed);
    let mut jobs = Vec::new();
    for dataset in datasets {
        for repeat in 1..=settings.repeats {
            let split_seed = master.random();
            for &method in &settings.methods {
                jobs.push(Job {
                    dataset,
                    method,
                    repeat,
                    seed: master.random(),
                    split_seed,
                });
            }
        }
    }

    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|job| RunRecord {
            dataset: job.dataset.name.clone(),
            method: job.method,
            repeat: job.repeat,
            seed: job.seed,
            split_seed: job.split_seed,
            outcome: run_one(job, settings).map_err(|e| {
                format!(
                    "{} / {} / repeat {}: {e}",
                    job.dataset.name, job.method, job.repeat
                )
            }),
        })
        .collect();

    let mut cells = Vec::new();
    let mut comparisons = Vec::new();
    for dataset in datasets {
        let scores = |method: Method| -> Vec<Option<f64>> {
            runs.iter()
                .filter(|r| r.dataset == dataset.name && r.method == method)
                .map(|r| r.outcome.as_ref().ok().map(|e| e.f1))
                .collect()
        };
        for &method in &settings.methods {
            let ok: Vec<f64> = scores(method).into_iter().flatten().collect();
            let (mean, std) = mean_std(&ok);
            cells.push(CellSummary {
                dataset: dataset.name.clone(),
                method,
                n: ok.len(),
                mean,
                std,
            });
        }
        if !settings.methods.contains(&Method::Coda) {
            continue;
        }
        let coda = scores(Method::Coda);
        for &method in settings.methods.iter().filter(|&&m| m != Method::Coda) {
            let (a, b): (Vec<f64>, Vec<f64>) = coda
                .iter()
                .zip(scores(method))
                .filter_map(|(a, b)| Some(((*a)?, b?)))
                .unzip();
            comparisons.push(Comparison {
                dataset: dataset.name.clone(),
                method,
                test: paired_t_test(&a, &b).map_err(|e| e.to_string()),
            });
        }
    }
    Ok(BenchmarkResults {
        seed: settings.seed,
        repeats: settings.repeats,
        runs,
        cells,
        comparisons,
    })
}

fn run_one(job: &Job<'_>, settings: &BenchmarkSettings) -> Result<EvalReport> {
    let (train_set, test_set) = split(&job.dataset.data, settings.split_fraction, job.split_seed)?;
    let (train_set, test_set) = if settings.standardize {
        let (train_set, mut others, _) = standardize(&train_set, &[&test_set])?;
        (train_set, others.remove(0))
    } else {
        (train_set, test_set)
    };
    let mut cfg = settings.template.fit_to(&train_set);
    cfg.method = job.method;
    cfg.seed = job.seed;
    if let Some(units) = job.dataset.units_per_layer {
        cfg.network.units_per_layer = units;
    }
    let (model, _) = train(&train_set, &cfg)?;
    let mut report = evaluate(&model, &test_set, settings.positive_label)?;
    report.seeds = vec![job.split_seed, job.seed];
    Ok(report)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl BenchmarkResults {
    pub fn all_failed(&self) -> bool {
        self.runs.iter().all(|r| r.outcome.is_err())
    }

    pub fn cell(&self, dataset: &str, method: Method) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.dataset == dataset && c.method == method)
    }

    fn comparison(&self, dataset: &str, method: Method) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.dataset == dataset && c.method == method)
    }

    /// `dataset,method,repeat,f1,precision,recall,K,seed`; metrics are empty
    /// for failed runs and `K` is empty for the baselines.
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let wrap = |source| Error::Csv {
            context: "writing results".into(),
            source,
        };
        writer
            .write_record(["dataset", "method", "repeat", "f1", "precision", "recall", "K", "seed"])
            .map_err(wrap)?;
        for run in &self.runs {
            let (f1, precision, recall, k) = match &run.outcome {
                Ok(e) => (
                    e.f1.to_string(),
                    e.precision.to_string(),
                    e.recall.to_string(),
                    e.architectures.map(|k| k.to_string()).unwrap_or_default(),
                ),
                Err(_) => Default::default(),
            };
            writer
                .write_record([
                    run.dataset.clone(),
                    run.method.to_string(),
                    run.repeat.to_string(),
                    f1,
                    precision,
                    recall,
                    k,
                    run.seed.to_string(),
                ])
                .map_err(wrap)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Numeric(e.to_string()))
    }

    pub fn to_markdown(&self) -> String {
        let mut datasets: Vec<&str> = Vec::new();
        let mut methods: Vec<Method> = Vec::new();
        for c in &self.cells {
            if !datasets.contains(&c.dataset.as_str()) {
                datasets.push(&c.dataset);
            }
            if !methods.contains(&c.method) {
                methods.push(c.method);
            }
        }

        let mut out = String::new();
        let _ = writeln!(out, "# Benchmark results\n");
        let _ = writeln!(
            out,
            "F1 on the test split, mean ± sample std over successful runs. Master seed {}, {} repeats.\n",
            self.seed, self.repeats
        );
        let _ = write!(out, "| dataset |");
        for m in &methods {
            let _ = write!(out, " {m} |");
        }
        let _ = write!(out, "\n|---|");
        for _ in &methods {
            let _ = write!(out, "---|");
        }
        out.push('\n');
        for d in &datasets {
            let _ = write!(out, "| {d} |");
            for &m in &methods {
                let cell = self.cell(d, m).expect("cell for every pair");
                let marker = self
                    .comparison(d, m)
                    .and_then(|c| c.test.as_ref().ok())
                    .map_or("", |t| significance_marker(t.p));
                if cell.n == 0 {
                    let _ = write!(out, " failed |");
                } else {
                    let _ = write!(out, " {} ± {} (n={}){} |", cell.mean, cell.std, cell.n, marker);
                }
            }
            out.push('\n');
        }

        if !self.comparisons.is_empty() {
            let _ = writeln!(
                out,
                "\n`**` marks p < 0.01 and `*` marks p < 0.05 in a two-sided paired t-test against coda.\n"
            );
            let _ = writeln!(out, "## Paired t-tests against coda\n");
            let _ = writeln!(out, "| dataset | method | t | p | df |\n|---|---|---|---|---|");
            for c in &self.comparisons {
                match &c.test {
                    Ok(t) => {
                        let _ = writeln!(out, "| {} | {} | {} | {} | {} |", c.dataset, c.method, t.t, t.p, t.df);
                    }
                    Err(e) => {
                        let _ = writeln!(out, "| {} | {} | {e} | | |", c.dataset, c.method);
                    }
                }
            }
        }

        let failures: Vec<&String> = self.runs.iter().filter_map(|r| r.outcome.as_ref().err()).collect();
        if !failures.is_empty() {
            let _ = writeln!(out, "\n## Failed runs\n");
            for f in failures {
                let _ = writeln!(out, "- {f}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkConfig;

    fn toy(name: &str, seed: u64) -> BenchmarkDataset {
        let mut rng = seeded(seed);
        let n = 40;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = 1 + i % 2;
            features.push(label as f64 + rng.random::<f64>());
            features.push(rng.random::<f64>());
            labels.push(label);
        }
        BenchmarkDataset {
            name: name.into(),
            data: Dataset::new(2, 2, features, labels, None).unwrap(),
            units_per_layer: None,
        }
    }

    fn settings(methods: Vec<Method>, repeats: usize) -> BenchmarkSettings {
        let mut template = TrainConfig::new(Method::Coda, NetworkConfig::new(1, 1, 3, 2).unwrap());
        template.epochs = 3;
        template.batch_size = 8;
        BenchmarkSettings {
            methods,
            repeats,
            template,
            split_fraction: 0.5,
            standardize: true,
            positive_label: 2,
            seed: 11,
        }
    }

    #[test]
    fn bookkeeping_and_determinism() {
        let data = [toy("toy", 1)];
        let s = settings(vec![Method::Coda, Method::Dnn], 3);
        let r = run_benchmark(&data, &s).unwrap();
        assert_eq!(r.runs.len(), 6);
        assert_eq!(r.cells.len(), 2);
        assert!(r.cells.iter().all(|c| c.n == 3));
        assert_eq!(r.comparisons.len(), 1);
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with("dataset,method,repeat,f1,precision,recall,K,seed\n"));

        let again = run_benchmark(&data, &s).unwrap();
        assert_eq!(again, r);
        assert_eq!(again.to_markdown(), r.to_markdown());
        assert_eq!(again.to_csv().unwrap(), csv);

        // methods of one repeat share the split
        for pair in r.runs.chunks(2) {
            assert_eq!(pair[0].split_seed, pair[1].split_seed);
            assert_ne!(pair[0].seed, pair[1].seed);
        }
    }

    #[test]
    fn failures_are_recorded_per_run() {
        let data = [toy("toy", 2)];
        let mut s = settings(vec![Method::Dnn, Method::Dropout], 2);
        s.template.dropout_rate = 1.5;
        let r = run_benchmark(&data, &s).unwrap();
        assert!(!r.all_failed());
        let failed: Vec<_> = r.runs.iter().filter(|r| r.outcome.is_err()).collect();
        assert_eq!(failed.len(), 2);
        assert!(failed[0].outcome.as_ref().unwrap_err().starts_with("toy / dropout / repeat 1"));
        assert!(r.to_markdown().contains("## Failed runs"));
        assert!(r.to_csv().unwrap().contains("toy,dropout,1,,,,,"));
    }

    #[test]
    fn zero_repeats_rejected() {
        assert!(run_benchmark(&[toy("t", 0)], &settings(vec![Method::Dnn], 0)).is_err());
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[1.0]), (1.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
