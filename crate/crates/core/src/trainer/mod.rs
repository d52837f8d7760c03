//! Training loops for CODA and the two baselines, plus evaluation.

mod benchmark;
mod metrics;

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset};
use crate::error::{check_dim, Error, Result};
use crate::nn::{self, batch_gradient, Instance, NetworkConfig, UnitMask, WeightSet, INIT_STD};
use crate::rng::{fork, seeded};
use crate::upmm::{
    anneal_mask, assign, assignment_scores, predict, spawn_architecture, UpmmModel, UpmmParams,
};

pub use benchmark::{
    run_benchmark, BenchmarkDataset, BenchmarkResults, BenchmarkSettings, CellSummary, Comparison,
    RunRecord,
};
pub use metrics::{cluster_purity, f1_score, paired_t_test, significance_marker, EvalReport, TTest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Coda,
    Dnn,
    Dropout,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Coda, Method::Dnn, Method::Dropout];

    pub fn name(self) -> &'static str {
        match self {
            Method::Coda => "coda",
            Method::Dnn => "dnn",
            Method::Dropout => "dropout",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub method: Method,
    pub dropout_rate: f64,
    pub upmm: UpmmParams,
    pub network: NetworkConfig,
}

impl TrainConfig {
    /// Default hyperparameters for `method` on `network`.
    pub fn new(method: Method, network: NetworkConfig) -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.1,
            seed: 0,
            method,
            dropout_rate: 0.5,
            upmm: UpmmParams::default(),
            network,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        // Zero is allowed and leaves the weights untouched.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if self.method == Method::Dropout
            && !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0)
        {
            return Err(Error::config("dropout_rate", "must lie strictly between 0 and 1"));
        }
        if self.method == Method::Coda {
            self.upmm.validate()?;
        }
        self.network.validate()
    }

    /// Copy with the input and output widths taken from `data`.
    pub fn fit_to(&self, data: &Dataset) -> Self {
        let mut cfg = *self;
        cfg.network.input_dim = data.dim();
        cfg.network.num_labels = data.num_labels();
        cfg
    }

    fn check(&self, train: &Dataset, method: Method) -> Result<()> {
        if self.method != method {
            return Err(Error::usage(format!(
                "config is for method {}, not {method}",
                self.method
            )));
        }
        self.validate()?;
        check_dim("training feature width", self.network.input_dim, train.dim())?;
        check_dim("training label count", self.network.num_labels, train.num_labels())?;
        if train.is_empty() {
            return Err(Error::usage("training set is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// One-based.
    pub epoch: usize,
    /// Mean cross-entropy of the training instances at their update step.
    pub loss: f64,
    /// Architecture count after pruning (CODA only).
    pub architectures: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodaOutcome {
    pub model: UpmmModel,
    pub history: Vec<EpochStats>,
    /// Final-epoch architecture of each training instance, after pruning.
    pub assignments: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutcome {
    /// Weights as trained.
    pub weights: WeightSet,
    /// Weights used with the full mask at prediction time.
    pub inference: WeightSet,
    pub history: Vec<EpochStats>,
}

pub fn train_coda(train: &Dataset, cfg: &TrainConfig) -> Result<CodaOutcome> {
    train_coda_observed(train, cfg, |_, _| {})
}

/// [`train_coda`] calling `observe(model, assigned)` after every mini-batch,
/// where `assigned` counts the instances assigned so far this epoch.
pub fn train_coda_observed(
    train: &Dataset,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&UpmmModel, usize),
) -> Result<CodaOutcome> {
    cfg.check(train, Method::Coda)?;
    let mut master = seeded(cfg.seed);
    let weights = WeightSet::gaussian(cfg.network, INIT_STD, &mut master);
    let mut assign_rng = fork(&mut master);
    let mut model = UpmmModel::new(weights, cfg.upmm)?;
    let mut assignments = vec![usize::MAX; train.len()];
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        for arch in &mut model.architectures {
            arch.begin_epoch();
        }
        let mut loss_sum = 0.0;
        let mut assigned = 0;
        for batch in batches(train.len(), cfg.batch_size, master.random())? {
            let mut groups: BTreeMap<usize, Vec<Instance<'_>>> = BTreeMap::new();
            for &n in &batch {
                let inst = train.instance(n);
                let (scores, proposal) =
                    assignment_scores(inst, &model, &mut assign_rng, cfg.upmm.regularized)?;
                let k = assign(&scores, &mut assign_rng)?;
                if k == scores.new_index() {
                    let proposal = proposal
                        .ok_or_else(|| Error::numeric("new architecture drawn at capacity"))?;
                    model
                        .architectures
                        .push(spawn_architecture(n, inst, &proposal, cfg.upmm.theta)?);
                } else {
                    model.architectures[k].add_member(n, inst.x);
                }
                assignments[n] = k;
                groups.entry(k).or_default().push(inst);
            }
            for (k, group) in &groups {
                let mask = &model.architectures[*k].mask;
                let (loss, grads) = batch_gradient(group, &model.weights, mask)?;
                model.weights.apply_gradients(&grads, cfg.learning_rate)?;
                loss_sum += loss * group.len() as f64;
            }
            assigned += batch.len();
            observe(&model, assigned);
        }

        let survivors = model.prune_empty();
        let mut remap = vec![usize::MAX; survivors.last().map_or(0, |&k| k + 1)];
        for (new, &old) in survivors.iter().enumerate() {
            remap[old] = new;
        }
        for a in &mut assignments {
            *a = remap[*a];
        }

        let seeds: Vec<u64> = model.architectures.iter().map(|_| master.random()).collect();
        let masks = model
            .architectures
            .par_iter()
            .zip(seeds)
            .map(|(arch, seed)| {
                let members: Vec<Instance<'_>> =
                    arch.members().iter().map(|&n| train.instance(n)).collect();
                anneal_mask(&arch.mask, &members, &model.weights, &model.params, &mut seeded(seed))
                    .map(|out| out.mask)
            })
            .collect::<Result<Vec<UnitMask>>>()?;
        for (arch, mask) in model.architectures.iter_mut().zip(masks) {
            arch.mask = mask;
        }

        history.push(EpochStats {
            epoch,
            loss: loss_sum / train.len() as f64,
            architectures: Some(model.num_architectures()),
        });
    }
    Ok(CodaOutcome {
        model,
        history,
        assignments,
    })
}

pub fn train_dnn(train: &Dataset, cfg: &TrainConfig) -> Result<NetworkOutcome> {
    cfg.check(train, Method::Dnn)?;
    train_network(train, cfg, None)
}

/// Classical dropout on hidden units with a fresh i.i.d. mask per mini-batch.
pub fn train_dropout(train: &Dataset, cfg: &TrainConfig) -> Result<NetworkOutcome> {
    cfg.check(train, Method::Dropout)?;
    train_network(train, cfg, Some(cfg.dropout_rate))
}

/// Shared by both baselines so that they consume the seed identically.
fn train_network(train: &Dataset, cfg: &TrainConfig, rate: Option<f64>) -> Result<NetworkOutcome> {
    let mut master = seeded(cfg.seed);
    let mut weights = WeightSet::gaussian(cfg.network, INIT_STD, &mut master);
    let mut mask_rng = fork(&mut master);
    let units = cfg.network.hidden_units();
    let full = UnitMask::full(units);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for batch in batches(train.len(), cfg.batch_size, master.random())? {
            let group: Vec<Instance<'_>> = batch.iter().map(|&n| train.instance(n)).collect();
            let sampled;
            let mask = match rate {
                Some(rate) => {
                    sampled = UnitMask::bernoulli(units, 1.0 - rate, &mut mask_rng);
                    &sampled
                }
                None => &full,
            };
            let (loss, grads) = batch_gradient(&group, &weights, mask)?;
            weights.apply_gradients(&grads, cfg.learning_rate)?;
            loss_sum += loss * group.len() as f64;
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / train.len() as f64,
            architectures: None,
        });
    }
    let inference = match rate {
        Some(rate) => weights.scale_hidden_outgoing(1.0 - rate),
        None => weights.clone(),
    };
    Ok(NetworkOutcome {
        weights,
        inference,
        history,
    })
}

/// A trained classifier of any method, ready for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainedModel {
    Coda(UpmmModel),
    Network(WeightSet),
}

impl TrainedModel {
    pub fn config(&self) -> &NetworkConfig {
        match self {
            TrainedModel::Coda(model) => model.config(),
            TrainedModel::Network(weights) => weights.config(),
        }
    }

    pub fn architectures(&self) -> Option<usize> {
        match self {
            TrainedModel::Coda(model) => Some(model.num_architectures()),
            TrainedModel::Network(_) => None,
        }
    }

    /// Zero-based class and, for CODA, the routing architecture.
    pub fn predict_row(&self, x: &[f64]) -> Result<(usize, Option<usize>)> {
        match self {
            TrainedModel::Coda(model) => {
                let p = predict(x, model)?;
                Ok((p.class, Some(p.architecture)))
            }
            TrainedModel::Network(weights) => {
                let full = UnitMask::full(weights.config().hidden_units());
                Ok((nn::forward(x, weights, &full)?.predicted_class(), None))
            }
        }
    }

    /// One-based predicted labels for every row of `data`, computed in parallel.
    pub fn predict_labels(&self, data: &Dataset) -> Result<Vec<usize>> {
        (0..data.len())
            .into_par_iter()
            .map(|n| self.predict_row(data.row(n)).map(|(c, _)| c + 1))
            .collect()
    }
}

/// Trains `cfg.method` on `train`; returns the model and its epoch log.
pub fn train(train: &Dataset, cfg: &TrainConfig) -> Result<(TrainedModel, Vec<EpochStats>)> {
    match cfg.method {
        Method::Coda => {
            let out = train_coda(train, cfg)?;
            Ok((TrainedModel::Coda(out.model), out.history))
        }
        Method::Dnn => {
            let out = train_dnn(train, cfg)?;
            Ok((TrainedModel::Network(out.inference), out.history))
        }
        Method::Dropout => {
            let out = train_dropout(train, cfg)?;
            Ok((TrainedModel::Network(out.inference), out.history))
        }
    }
}

/// Binary F1 of `model` on `test`.
pub fn evaluate(model: &TrainedModel, test: &Dataset, positive_label: usize) -> Result<EvalReport> {
    let predictions = model.predict_labels(test)?;
    let mut report = f1_score(&predictions, test.labels(), positive_label)?;
    report.architectures = model.architectures();
    Ok(report)
}
