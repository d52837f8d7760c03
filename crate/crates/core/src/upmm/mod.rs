//! Uniform process mixture over dropout masks.
//!
//! Every architecture `k` owns a mask `z*_k` (its MAP point) and the running
//! feature sum of the instances currently assigned to it. Scores are kept in
//! log space throughout: for an existing architecture the assignment score is
//! `beta1 * log s_k + beta2 * log f(y | z*_k, W)` with
//! `log s_k = -||x - m_k||^2 / D`, and a new architecture scores
//! `log alpha + log E_{G0}[f(y | z, W)]`, the expectation being a Monte-Carlo
//! average over masks drawn from independent Bernoulli(theta) bits.

mod anneal;

use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::{self, InputProjection, Instance, NetworkConfig, UnitMask, WeightSet};

pub use anneal::{
    anneal_mask, sa_accept, temperature, update_mask_sa, AnnealOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpmmParams {
    /// Concentration of the uniform process.
    pub alpha: f64,
    /// Exponent on the similarity term.
    pub beta1: f64,
    /// Exponent on the likelihood term.
    pub beta2: f64,
    /// Prior keep probability of every hidden unit.
    pub theta: f64,
    /// Annealing temperature scale.
    pub gamma1: f64,
    /// Annealing temperature exponent.
    pub gamma2: f64,
    /// Masks sampled for the new-architecture integral.
    pub new_arch_samples: usize,
    pub sweeps_per_update: usize,
    /// Include the similarity term when assigning during training.
    pub regularized: bool,
    /// Upper bound on the number of architectures; `None` is unbounded.
    pub max_architectures: Option<usize>,
}

impl Default for UpmmParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta1: 1.0,
            beta2: 1.0,
            theta: 0.5,
            gamma1: 1.0,
            gamma2: 1.0,
            new_arch_samples: 16,
            sweeps_per_update: 2,
            regularized: true,
            max_architectures: None,
        }
    }
}

impl UpmmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("upmm.alpha", "must be positive and finite"));
        }
        if !(self.beta1 >= 0.0 && self.beta1.is_finite()) {
            return Err(Error::config("upmm.beta1", "must be non-negative and finite"));
        }
        if !(self.beta2 >= 0.0 && self.beta2.is_finite()) {
            return Err(Error::config("upmm.beta2", "must be non-negative and finite"));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::config("upmm.theta", "must lie strictly between 0 and 1"));
        }
        if !(self.gamma1 > 0.0 && self.gamma1.is_finite()) {
            return Err(Error::config("upmm.gamma1", "must be positive and finite"));
        }
        if !self.gamma2.is_finite() {
            return Err(Error::config("upmm.gamma2", "must be finite"));
        }
        if self.new_arch_samples == 0 {
            return Err(Error::config("upmm.new_arch_samples", "must be at least 1"));
        }
        if self.sweeps_per_update == 0 {
            return Err(Error::config("upmm.sweeps_per_update", "must be at least 1"));
        }
        if self.max_architectures == Some(0) {
            return Err(Error::config("upmm.max_architectures", "must be at least 1"));
        }
        Ok(())
    }
}

/// One dropout architecture and the instances currently assigned to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ArchitectureDoc", into = "ArchitectureDoc")]
pub struct ArchitectureState {
    pub mask: UnitMask,
    members: Vec<usize>,
    count: usize,
    feature_sum: Vec<f64>,
    /// Mean of the previous epoch's members, used while the current member
    /// set is still empty.
    anchor: Option<Vec<f64>>,
}

impl ArchitectureState {
    pub fn new(mask: UnitMask, input_dim: usize) -> Self {
        Self {
            mask,
            members: Vec::new(),
            count: 0,
            feature_sum: vec![0.0; input_dim],
            anchor: None,
        }
    }

    pub fn singleton(mask: UnitMask, index: usize, x: &[f64]) -> Self {
        let mut state = Self::new(mask, x.len());
        state.add_member(index, x);
        state
    }

    pub fn add_member(&mut self, index: usize, x: &[f64]) {
        debug_assert_eq!(x.len(), self.feature_sum.len());
        self.members.push(index);
        self.count += 1;
        for (s, v) in self.feature_sum.iter_mut().zip(x) {
            *s += v;
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Instance indices assigned during training. Not persisted, so empty for
    /// a model read back from disk even though `count()` is not.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn feature_sum(&self) -> &[f64] {
        &self.feature_sum
    }

    pub fn mean(&self) -> Option<Vec<f64>> {
        (self.count > 0).then(|| {
            let n = self.count as f64;
            self.feature_sum.iter().map(|s| s / n).collect()
        })
    }

    /// Reference point for similarity: the member mean, else the anchor.
    pub fn center(&self) -> Option<Cow<'_, [f64]>> {
        match self.mean() {
            Some(mean) => Some(Cow::Owned(mean)),
            None => self.anchor.as_deref().map(Cow::Borrowed),
        }
    }

    /// Clears the member bookkeeping, remembering the current mean as anchor.
    pub fn begin_epoch(&mut self) {
        if let Some(mean) = self.mean() {
            self.anchor = Some(mean);
        }
        self.members.clear();
        self.count = 0;
        self.feature_sum.iter_mut().for_each(|s| *s = 0.0);
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchitectureDoc {
    mask: UnitMask,
    member_count: usize,
    feature_sum: Vec<f64>,
}

impl From<ArchitectureState> for ArchitectureDoc {
    fn from(state: ArchitectureState) -> Self {
        Self {
            mask: state.mask,
            member_count: state.count,
            feature_sum: state.feature_sum,
        }
    }
}

impl From<ArchitectureDoc> for ArchitectureState {
    fn from(doc: ArchitectureDoc) -> Self {
        Self {
            mask: doc.mask,
            members: Vec::new(),
            count: doc.member_count,
            feature_sum: doc.feature_sum,
            anchor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpmmModel {
    pub params: UpmmParams,
    pub weights: WeightSet,
    pub architectures: Vec<ArchitectureState>,
}

impl UpmmModel {
    pub fn new(weights: WeightSet, params: UpmmParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            weights,
            architectures: Vec::new(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        self.weights.config()
    }

    pub fn num_architectures(&self) -> usize {
        self.architectures.len()
    }

    /// Checks the shape of every architecture against the network.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let config = self.config();
        for arch in &self.architectures {
            check_dim("architecture mask", config.hidden_units(), arch.mask.len())?;
            check_dim("architecture feature sum", config.input_dim, arch.feature_sum.len())?;
        }
        Ok(())
    }

    /// Drops architectures without members; returns the old index of every
    /// surviving architecture, in order.
    pub fn prune_empty(&mut self) -> Vec<usize> {
        let mut kept = Vec::with_capacity(self.architectures.len());
        let mut index = 0;
        self.architectures.retain(|a| {
            let keep = !a.is_empty();
            if keep {
                kept.push(index);
            }
            index += 1;
            keep
        });
        kept
    }
}

/// Uniform process predictive over `k` existing clusters plus a new one.
pub fn up_prior(k: usize, alpha: f64) -> Vec<f64> {
    let denom = k as f64 + alpha;
    let mut probs = vec![1.0 / denom; k];
    probs.push(alpha / denom);
    probs
}

/// `log s_k`, normalized by the feature dimension.
pub fn log_similarity(x: &[f64], state: &ArchitectureState) -> Result<f64> {
    let center = state
        .center()
        .ok_or_else(|| Error::usage("similarity to an architecture with no members"))?;
    check_dim("feature vector", center.len(), x.len())?;
    let dist: f64 = x.iter().zip(center.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(-dist / x.len() as f64)
}

/// `log f(y | mask, W)`.
pub fn log_arch_likelihood(inst: Instance<'_>, mask: &UnitMask, w: &WeightSet) -> Result<f64> {
    let trace = nn::forward(inst.x, w, mask)?;
    Ok(nn::log_prob_of_class(&trace.probs, inst.class))
}

pub(crate) fn projected_log_lik(
    proj: &InputProjection,
    class: usize,
    w: &WeightSet,
    mask: &UnitMask,
) -> f64 {
    nn::log_prob_of_class(&proj.probs(w, mask), class)
}

/// `log G0(mask)` under independent Bernoulli(theta) bits.
pub fn log_mask_prior(mask: &UnitMask, theta: f64) -> f64 {
    let kept = mask.kept_count() as f64;
    let dropped = (mask.len() - mask.kept_count()) as f64;
    kept * theta.ln() + dropped * (1.0 - theta).ln()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Monte-Carlo estimate of the new-architecture score, with the sampled masks
/// kept so a spawned architecture can start from the best of them.
#[derive(Debug, Clone)]
pub struct NewArchProposal {
    pub log_score: f64,
    /// Sampled masks and their log-likelihoods, in draw order.
    pub candidates: Vec<(UnitMask, f64)>,
}

pub fn log_new_arch_score<R: Rng + ?Sized>(
    inst: Instance<'_>,
    w: &WeightSet,
    params: &UpmmParams,
    rng: &mut R,
) -> Result<NewArchProposal> {
    let proj = InputProjection::new(inst.x, w)?;
    new_arch_from_projection(&proj, inst.class, w, params, rng)
}

fn new_arch_from_projection<R: Rng + ?Sized>(
    proj: &InputProjection,
    class: usize,
    w: &WeightSet,
    params: &UpmmParams,
    rng: &mut R,
) -> Result<NewArchProposal> {
    if params.new_arch_samples == 0 {
        return Err(Error::usage("new_arch_samples must be at least 1"));
    }
    let m = w.config().hidden_units();
    let candidates: Vec<(UnitMask, f64)> = (0..params.new_arch_samples)
        .map(|_| {
            let mask = UnitMask::bernoulli(m, params.theta, rng);
            let ll = projected_log_lik(proj, class, w, &mask);
            (mask, ll)
        })
        .collect();
    let lls: Vec<f64> = candidates.iter().map(|(_, ll)| *ll).collect();
    let log_mean = log_sum_exp(&lls) - (lls.len() as f64).ln();
    Ok(NewArchProposal {
        log_score: params.alpha.ln() + log_mean,
        candidates,
    })
}

/// Unnormalized log-scores and normalized probabilities over the `K`
/// existing architectures followed by the new-architecture option.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentScores {
    pub log_scores: Vec<f64>,
    pub probs: Vec<f64>,
}

impl AssignmentScores {
    pub fn from_log_scores(log_scores: Vec<f64>) -> Result<Self> {
        if log_scores.is_empty() {
            return Err(Error::usage("no assignment options"));
        }
        if log_scores.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
            return Err(Error::numeric("assignment log-score is NaN or +inf"));
        }
        let norm = log_sum_exp(&log_scores);
        if norm == f64::NEG_INFINITY {
            return Err(Error::numeric("every assignment option has zero probability"));
        }
        let probs = log_scores.iter().map(|s| (s - norm).exp()).collect();
        Ok(Self { log_scores, probs })
    }

    /// Index of the new-architecture option.
    pub fn new_index(&self) -> usize {
        self.probs.len() - 1
    }
}

pub fn assignment_scores<R: Rng + ?Sized>(
    inst: Instance<'_>,
    model: &UpmmModel,
    rng: &mut R,
    regularized: bool,
) -> Result<(AssignmentScores, Option<NewArchProposal>)> {
    let w = &model.weights;
    let params = &model.params;
    let proj = InputProjection::new(inst.x, w)?;
    let mut log_scores = Vec::with_capacity(model.architectures.len() + 1);
    for arch in &model.architectures {
        let ll = projected_log_lik(&proj, inst.class, w, &arch.mask);
        let score = if regularized {
            params.beta1 * log_similarity(inst.x, arch)? + params.beta2 * ll
        } else {
            ll
        };
        log_scores.push(score);
    }
    let at_capacity = params
        .max_architectures
        .is_some_and(|cap| model.architectures.len() >= cap);
    let proposal = if at_capacity {
        log_scores.push(f64::NEG_INFINITY);
        None
    } else {
        let proposal = new_arch_from_projection(&proj, inst.class, w, params, rng)?;
        log_scores.push(proposal.log_score);
        Some(proposal)
    };
    Ok((AssignmentScores::from_log_scores(log_scores)?, proposal))
}

/// Categorical draw from the assignment probabilities.
pub fn assign<R: Rng + ?Sized>(scores: &AssignmentScores, rng: &mut R) -> Result<usize> {
    let probs = &scores.probs;
    if probs.is_empty() {
        return Err(Error::usage("no assignment options"));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::numeric("assignment probabilities must be finite and non-negative"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::numeric(format!(
            "assignment probabilities sum to {total}, not 1"
        )));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cumulative += p;
            if u < cumulative {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}

/// `log G0(mask) + sum_i log f(y_i | mask, W)` over `members`.
pub fn log_posterior_score(
    mask: &UnitMask,
    members: &[Instance<'_>],
    w: &WeightSet,
    theta: f64,
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::usage("posterior score of an architecture with no members"));
    }
    w.check_mask(mask)?;
    let mut total = log_mask_prior(mask, theta);
    for inst in members {
        total += log_arch_likelihood(*inst, mask, w)?;
    }
    Ok(total)
}

/// New singleton architecture starting from the best proposal mask.
pub fn spawn_architecture(
    index: usize,
    inst: Instance<'_>,
    proposal: &NewArchProposal,
    theta: f64,
) -> Result<ArchitectureState> {
    let mut best: Option<(&UnitMask, f64)> = None;
    for (mask, ll) in &proposal.candidates {
        let score = log_mask_prior(mask, theta) + ll;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((mask, score));
        }
    }
    let (mask, _) = best.ok_or_else(|| Error::usage("proposal has no candidate masks"))?;
    Ok(ArchitectureState::singleton(mask.clone(), index, inst.x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    /// Zero-based class index.
    pub class: usize,
    pub architecture: usize,
}

/// Routes `x` to `argmax_k beta1 log s_k + beta2 log max(y-hat_k)` and
/// returns that architecture's most probable class.
pub fn predict(x: &[f64], model: &UpmmModel) -> Result<Prediction> {
    if model.architectures.is_empty() {
        return Err(Error::usage("prediction with a model that has no architectures"));
    }
    let w = &model.weights;
    let proj = InputProjection::new(x, w)?;
    let mut best: Option<(f64, Prediction)> = None;
    for (k, arch) in model.architectures.iter().enumerate() {
        let probs = proj.probs(w, &arch.mask);
        let class = nn::argmax(&probs);
        let confidence = probs[class].max(nn::LIKELIHOOD_FLOOR).ln();
        let score = model.params.beta1 * log_similarity(x, arch)? + model.params.beta2 * confidence;
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((
                score,
                Prediction {
                    class,
                    architecture: k,
                },
            ));
        }
    }
    Ok(best.expect("at least one architecture").1)
}
