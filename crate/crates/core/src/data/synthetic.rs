use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, NetworkConfig, UnitMask, WeightSet};

use super::Dataset;

/// Parameters of the mixture-of-subnetworks generator.
///
/// Cluster `k` (0-based) draws features around the mean ladder
/// `0, +s, -s, +2s, -2s, ...` with `s = cluster_mean_scale`, and labels
/// instances with the generator network under its own dropout mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub num_labels: usize,
    pub units: usize,
    pub k_true: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_mean_scale")]
    pub cluster_mean_scale: f64,
    #[serde(default = "default_variance")]
    pub feature_variance: f64,
    #[serde(default = "default_drop_rate")]
    pub drop_rate: f64,
}

fn default_hidden_layers() -> usize {
    2
}
fn default_mean_scale() -> f64 {
    5.0
}
fn default_variance() -> f64 {
    50.0
}
fn default_drop_rate() -> f64 {
    0.5
}

impl SynthSpec {
    /// The four published benchmark shapes: SDS1..SDS4.
    pub fn sds(index: usize) -> Option<Self> {
        let (d, units) = match index {
            1 => (50, 25),
            2 => (100, 50),
            3 => (150, 75),
            4 => (200, 100),
            _ => return None,
        };
        Some(Self {
            n: 6000,
            d,
            num_labels: 2,
            units,
            k_true: 3,
            hidden_layers: default_hidden_layers(),
            cluster_mean_scale: default_mean_scale(),
            feature_variance: default_variance(),
            drop_rate: default_drop_rate(),
        })
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn per_cluster(&self) -> usize {
        self.n / self.k_true
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("units", self.units),
            ("k_true", self.k_true),
            ("hidden_layers", self.hidden_layers),
            ("n", self.n),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.num_labels < 2 {
            return Err(Error::config("num_labels", "must be at least 2"));
        }
        if !self.n.is_multiple_of(self.k_true) {
            return Err(Error::config(
                "n",
                format!("{} is not divisible by k_true = {}", self.n, self.k_true),
            ));
        }
        if !(self.drop_rate > 0.0 && self.drop_rate < 1.0) {
            return Err(Error::config("drop_rate", "must lie strictly between 0 and 1"));
        }
        if !(self.feature_variance > 0.0 && self.feature_variance.is_finite()) {
            return Err(Error::config("feature_variance", "must be positive and finite"));
        }
        if !self.cluster_mean_scale.is_finite() {
            return Err(Error::config("cluster_mean_scale", "must be finite"));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<NetworkConfig> {
        NetworkConfig::new(self.d, self.hidden_layers, self.units, self.num_labels)
    }

    /// Units dropped from every hidden layer of each generating mask.
    pub fn dropped_per_layer(&self) -> usize {
        (self.drop_rate * self.units as f64).floor() as usize
    }

    /// Per-coordinate mean of cluster `k` (0-based).
    pub fn cluster_mean(&self, k: usize) -> f64 {
        let step = k.div_ceil(2) as f64 * self.cluster_mean_scale;
        if k % 2 == 1 {
            step
        } else {
            -step
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Instances are grouped by generating cluster; `truth` holds 1-based ids.
    pub dataset: Dataset,
    pub generator: WeightSet,
    pub masks: Vec<UnitMask>,
}

pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = crate::rng::seeded(seed);
    let config = spec.network()?;
    let generator = WeightSet::gaussian(config, 1.0, &mut rng);

    let dropped = spec.dropped_per_layer();
    let masks: Vec<UnitMask> = (0..spec.k_true)
        .map(|_| {
            let mut mask = UnitMask::full(config.hidden_units());
            for layer in 0..spec.hidden_layers {
                for unit in sample(&mut rng, spec.units, dropped) {
                    mask.set(layer * spec.units + unit, false);
                }
            }
            mask
        })
        .collect();

    let sd = spec.feature_variance.sqrt();
    let per_cluster = spec.per_cluster();
    let mut features = Vec::with_capacity(spec.n * spec.d);
    let mut labels = Vec::with_capacity(spec.n);
    let mut truth = Vec::with_capacity(spec.n);
    for (k, mask) in masks.iter().enumerate() {
        let normal = Normal::new(spec.cluster_mean(k), sd)
            .map_err(|e| Error::numeric(format!("feature distribution: {e}")))?;
        for _ in 0..per_cluster {
            let x: Vec<f64> = (0..spec.d).map(|_| normal.sample(&mut rng)).collect();
            let trace = nn::forward(&x, &generator, mask)?;
            labels.push(trace.predicted_class() + 1);
            truth.push(k + 1);
            features.extend(x);
        }
    }
    let dataset = Dataset::new(spec.d, spec.num_labels, features, labels, Some(truth))?;
    Ok(SyntheticData {
        dataset,
        generator,
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n: 300,
            d: 10,
            num_labels: 2,
            units: 7,
            k_true: 3,
            hidden_layers: 2,
            cluster_mean_scale: 5.0,
            feature_variance: 50.0,
            drop_rate: 0.5,
        }
    }

    #[test]
    fn published_shapes() {
        let sds1 = SynthSpec::sds(1).unwrap();
        assert_eq!((sds1.n, sds1.d, sds1.units, sds1.k_true), (6000, 50, 25, 3));
        assert_eq!(sds1.per_cluster(), 2000);
        assert_eq!(SynthSpec::sds(4).unwrap().units, 100);
        assert!(SynthSpec::sds(5).is_none());
    }

    #[test]
    fn mean_ladder() {
        let s = small();
        let means: Vec<f64> = (0..5).map(|k| s.cluster_mean(k)).collect();
        assert_eq!(means, vec![0.0, 5.0, -5.0, 10.0, -10.0]);
    }

    #[test]
    fn indivisible_n_names_the_field() {
        let mut s = small();
        s.n = 301;
        match s.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "n"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn masks_drop_exactly_half_per_layer() {
        let s = small();
        let data = generate_synthetic(&s, 3).unwrap();
        assert_eq!(data.masks.len(), 3);
        for mask in &data.masks {
            for layer in 0..2 {
                let kept = mask.layer(layer, 7).iter().filter(|&&b| b).count();
                assert_eq!(kept, 7 - 3);
            }
        }
    }

    #[test]
    fn labels_reproduce_from_generator() {
        let s = small();
        let data = generate_synthetic(&s, 9).unwrap();
        let ds = &data.dataset;
        let truth = ds.truth().unwrap();
        for n in 0..ds.len() {
            let mask = &data.masks[truth[n] - 1];
            let trace = nn::forward(ds.row(n), &data.generator, mask).unwrap();
            assert_eq!(trace.predicted_class() + 1, ds.label(n));
        }
        assert_eq!(generate_synthetic(&s, 9).unwrap(), data);
        assert!(data.generator.layers().iter().all(|l| l.bias().iter().all(|&b| b == 0.0)));
    }
}
