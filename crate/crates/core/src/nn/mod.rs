//! Dense sigmoid/softmax network with per-instance hidden-unit masks.
//!
//! Weights are stored per layer pair as a `fan_in x fan_out` row-major matrix
//! so that `weight(i, j)` is the weight from unit `i` to unit `j`. Only hidden
//! units can be masked; a masked unit emits exactly zero, which makes its bias
//! and every weight touching it inert for both propagation directions.

mod propagate;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use propagate::{
    backward, batch_gradient, batch_loss, forward, label_likelihood, log_label_likelihood,
    log_prob_of_class, sgd_step, ForwardTrace, Gradients, InputProjection, Instance,
    LIKELIHOOD_FLOOR,
};

pub(crate) use propagate::argmax;

/// Standard deviation of the initial weight distribution.
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub units_per_layer: usize,
    pub num_labels: usize,
}

impl NetworkConfig {
    pub fn new(
        input_dim: usize,
        hidden_layers: usize,
        units_per_layer: usize,
        num_labels: usize,
    ) -> Result<Self> {
        let config = Self {
            input_dim,
            hidden_layers,
            units_per_layer,
            num_labels,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("network.input_dim", "must be at least 1"));
        }
        if self.hidden_layers == 0 {
            return Err(Error::config("network.hidden_layers", "must be at least 1"));
        }
        if self.units_per_layer == 0 {
            return Err(Error::config("network.units_per_layer", "must be at least 1"));
        }
        if self.num_labels < 2 {
            return Err(Error::config("network.num_labels", "must be at least 2"));
        }
        Ok(())
    }

    /// Total number of maskable (hidden) units.
    pub fn hidden_units(&self) -> usize {
        self.hidden_layers * self.units_per_layer
    }

    /// Widths of every layer from input to output.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.hidden_layers + 2);
        widths.push(self.input_dim);
        widths.extend(std::iter::repeat_n(self.units_per_layer, self.hidden_layers));
        widths.push(self.num_labels);
        widths
    }
}

/// Binary keep/drop indicator over hidden units, layer-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<u8>", into = "Vec<u8>")]
pub struct UnitMask {
    bits: Vec<bool>,
}

impl UnitMask {
    pub fn full(len: usize) -> Self {
        Self {
            bits: vec![true; len],
        }
    }

    pub fn empty(len: usize) -> Self {
        Self {
            bits: vec![false; len],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Draws each bit independently, keeping a unit with probability `keep`.
    pub fn bernoulli<R: Rng + ?Sized>(len: usize, keep: f64, rng: &mut R) -> Self {
        Self {
            bits: (0..len).map(|_| rng.random::<f64>() < keep).collect(),
        }
    }

    /// The `index`-th mask in binary enumeration order (bit `m` is unit `m`).
    pub fn from_index(len: usize, index: u64) -> Self {
        Self {
            bits: (0..len).map(|m| (index >> m) & 1 == 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_kept(&self, unit: usize) -> bool {
        self.bits[unit]
    }

    pub fn set(&mut self, unit: usize, keep: bool) {
        self.bits[unit] = keep;
    }

    pub fn flip(&mut self, unit: usize) {
        self.bits[unit] = !self.bits[unit];
    }

    pub fn kept_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Bits of hidden layer `layer` when every layer has `units` units.
    pub fn layer(&self, layer: usize, units: usize) -> &[bool] {
        &self.bits[layer * units..(layer + 1) * units]
    }
}

impl From<Vec<u8>> for UnitMask {
    fn from(raw: Vec<u8>) -> Self {
        Self {
            bits: raw.into_iter().map(|b| b != 0).collect(),
        }
    }
}

impl From<UnitMask> for Vec<u8> {
    fn from(mask: UnitMask) -> Self {
        mask.bits.into_iter().map(u8::from).collect()
    }
}

/// One fully connected layer pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    fan_in: usize,
    fan_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[from * self.fan_out + to]
    }

    pub fn weight_mut(&mut self, from: usize, to: usize) -> &mut f64 {
        &mut self.weights[from * self.fan_out + to]
    }

    /// Outgoing weights of unit `from`.
    pub fn row(&self, from: usize) -> &[f64] {
        &self.weights[from * self.fan_out..(from + 1) * self.fan_out]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

/// All weights and biases of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightSetDoc", into = "WeightSetDoc")]
pub struct WeightSet {
    config: NetworkConfig,
    layers: Vec<DenseLayer>,
}

impl WeightSet {
    pub fn zeros(config: NetworkConfig) -> Self {
        let widths = config.layer_widths();
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer::zeros(w[0], w[1]))
            .collect();
        Self { config, layers }
    }

    /// Weights drawn i.i.d. from `N(0, std^2)`, biases zero.
    pub fn gaussian<R: Rng + ?Sized>(config: NetworkConfig, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("standard deviation must be finite and >= 0");
        let mut weights = Self::zeros(config);
        for layer in &mut weights.layers {
            for w in layer.weights.iter_mut() {
                *w = normal.sample(rng);
            }
        }
        weights
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Copy whose hidden-unit outgoing weights are multiplied by `keep`.
    ///
    /// This is the inference-time rescaling for networks trained with random
    /// dropout at keep probability `keep`.
    pub fn scale_hidden_outgoing(&self, keep: f64) -> Self {
        let mut scaled = self.clone();
        for layer in scaled.layers.iter_mut().skip(1) {
            for w in layer.weights.iter_mut() {
                *w *= keep;
            }
        }
        scaled
    }

    pub(crate) fn check_mask(&self, mask: &UnitMask) -> Result<()> {
        check_dim("unit mask", self.config.hidden_units(), mask.len())
    }
}

pub fn init_weights(config: NetworkConfig, seed: u64) -> Result<WeightSet> {
    config.validate()?;
    let mut rng = crate::rng::seeded(seed);
    Ok(WeightSet::gaussian(config, INIT_STD, &mut rng))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightSetDoc {
    config: NetworkConfig,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<WeightSet> for WeightSetDoc {
    fn from(w: WeightSet) -> Self {
        let layers = w
            .layers
            .iter()
            .map(|layer| LayerDoc {
                weights: (0..layer.fan_in).map(|i| layer.row(i).to_vec()).collect(),
                bias: layer.bias.clone(),
            })
            .collect();
        WeightSetDoc {
            config: w.config,
            layers,
        }
    }
}

impl TryFrom<WeightSetDoc> for WeightSet {
    type Error = Error;

    fn try_from(doc: WeightSetDoc) -> Result<Self> {
        doc.config.validate()?;
        let widths = doc.config.layer_widths();
        check_dim("weight layer count", widths.len() - 1, doc.layers.len())?;
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (pair, layer) in widths.windows(2).zip(doc.layers) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            check_dim("weight matrix rows", fan_in, layer.weights.len())?;
            check_dim("bias length", fan_out, layer.bias.len())?;
            let mut weights = Vec::with_capacity(fan_in * fan_out);
            for row in layer.weights {
                check_dim("weight matrix columns", fan_out, row.len())?;
                weights.extend(row);
            }
            if weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::numeric("weight set contains a non-finite entry"));
            }
            layers.push(DenseLayer {
                fan_in,
                fan_out,
                weights,
                bias: layer.bias,
            });
        }
        Ok(WeightSet {
            config: doc.config,
            layers,
        })
    }
}
