use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub seeds: Vec<u64>,
    pub architectures: Option<usize>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Binary F1 treating `positive_label` as the positive class; every other
/// label counts as negative. Undefined ratios are reported as 0.
pub fn f1_score(predictions: &[usize], labels: &[usize], positive_label: usize) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(Error::usage(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == positive_label, y == positive_label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    Ok(EvalReport {
        f1,
        precision,
        recall,
        tp,
        fp,
        fn_,
        tn,
        seeds: Vec::new(),
        architectures: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Paired Student t-test on `a - b`, two-sided.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::usage(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::UndefinedTest(format!("need at least 2 pairs, got {n}")));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::UndefinedTest("non-finite score".into()));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::UndefinedTest("paired differences have zero variance".into()));
    }
    let t = mean / (var / n as f64).sqrt();
    let df = n - 1;
    let nu = df as f64;
    // P(|T| > t) = I_{nu / (nu + t^2)}(nu / 2, 1 / 2)
    let p = beta_reg(nu / 2.0, 0.5, nu / (nu + t * t));
    Ok(TTest { t, p, df })
}

/// `**` below 0.01, `*` below 0.05, otherwise empty.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Fraction of instances whose cluster's majority truth id equals their own.
pub fn cluster_purity(assignments: &[usize], truth: &[usize]) -> Result<f64> {
    if assignments.len() != truth.len() {
        return Err(Error::usage(format!(
            "{} assignments for {} truth ids",
            assignments.len(),
            truth.len()
        )));
    }
    if assignments.is_empty() {
        return Err(Error::usage("purity of an empty assignment"));
    }
    let mut table: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&a, &t) in assignments.iter().zip(truth) {
        *table.entry(a).or_default().entry(t).or_default() += 1;
    }
    let majority: usize = table
        .values()
        .map(|counts| counts.values().copied().max().unwrap_or(0))
        .sum();
    Ok(majority as f64 / assignments.len() as f64)
}
