use crate::error::{check_dim, Error, Result};

use super::{DenseLayer, UnitMask, WeightSet};

/// Probabilities below this value are clipped before taking logarithms.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

/// Activations recorded by one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub hidden_pre: Vec<Vec<f64>>,
    pub hidden_post: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    /// Index of the most probable class (lowest index on ties).
    pub fn predicted_class(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// `bias + a * W`. Zero activations are skipped so nothing stored on the
/// outgoing weights of a silent unit can reach the next layer.
fn affine(input: &[f64], layer: &DenseLayer) -> Vec<f64> {
    let mut out = layer.bias().to_vec();
    for (i, &a) in input.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(layer.row(i)) {
            *o += a * w;
        }
    }
    out
}

fn activate(pre: &[f64], keep: &[bool]) -> Vec<f64> {
    pre.iter()
        .zip(keep)
        .map(|(&z, &k)| if k { sigmoid(z) } else { 0.0 })
        .collect()
}

pub fn forward(x: &[f64], w: &WeightSet, mask: &UnitMask) -> Result<ForwardTrace> {
    let config = w.config();
    check_dim("feature vector", config.input_dim, x.len())?;
    w.check_mask(mask)?;
    let units = config.units_per_layer;
    let hidden = config.hidden_layers;
    let mut hidden_pre = Vec::with_capacity(hidden);
    let mut hidden_post: Vec<Vec<f64>> = Vec::with_capacity(hidden);
    for (h, layer) in w.layers()[..hidden].iter().enumerate() {
        let input = if h == 0 { x } else { &hidden_post[h - 1] };
        let pre = affine(input, layer);
        let post = activate(&pre, mask.layer(h, units));
        hidden_pre.push(pre);
        hidden_post.push(post);
    }
    let logits = affine(&hidden_post[hidden - 1], &w.layers()[hidden]);
    let probs = softmax(&logits);
    Ok(ForwardTrace {
        input: x.to_vec(),
        hidden_pre,
        hidden_post,
        logits,
        probs,
    })
}

/// First hidden layer pre-activations of one instance.
///
/// These do not depend on the mask, so scoring many masks against the same
/// instance (and the same weights) can share them.
#[derive(Debug, Clone)]
pub struct InputProjection {
    pre: Vec<f64>,
}

impl InputProjection {
    pub fn new(x: &[f64], w: &WeightSet) -> Result<Self> {
        check_dim("feature vector", w.config().input_dim, x.len())?;
        Ok(Self {
            pre: affine(x, &w.layers()[0]),
        })
    }

    /// Output probabilities under `mask`; bit-identical to `forward(..).probs`.
    pub fn probs(&self, w: &WeightSet, mask: &UnitMask) -> Vec<f64> {
        let config = w.config();
        let units = config.units_per_layer;
        let hidden = config.hidden_layers;
        let mut post = activate(&self.pre, mask.layer(0, units));
        for h in 1..hidden {
            let pre = affine(&post, &w.layers()[h]);
            post = activate(&pre, mask.layer(h, units));
        }
        softmax(&affine(&post, &w.layers()[hidden]))
    }
}

/// `log y-hat` at `class`, clipped below at `log LIKELIHOOD_FLOOR`.
pub fn log_prob_of_class(probs: &[f64], class: usize) -> f64 {
    probs[class].max(LIKELIHOOD_FLOOR).ln()
}

/// `sum_l y_l log y-hat_l` with clipping and `0 log 0 = 0`.
pub fn log_label_likelihood(target: &[f64], probs: &[f64]) -> f64 {
    target
        .iter()
        .zip(probs)
        .filter(|(&y, _)| y != 0.0)
        .map(|(&y, &p)| y * p.max(LIKELIHOOD_FLOOR).ln())
        .sum()
}

pub fn label_likelihood(target: &[f64], probs: &[f64]) -> f64 {
    log_label_likelihood(target, probs).exp()
}

/// A labelled instance; `class` is the zero-based label index.
#[derive(Debug, Clone, Copy)]
pub struct Instance<'a> {
    pub x: &'a [f64],
    pub class: usize,
}

/// Mean cross-entropy over `batch`.
pub fn batch_loss(batch: &[Instance<'_>], w: &WeightSet, mask: &UnitMask) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::usage("batch_loss called with an empty batch"));
    }
    let mut total = 0.0;
    for inst in batch {
        check_class(inst.class, w)?;
        let trace = forward(inst.x, w, mask)?;
        total -= log_prob_of_class(&trace.probs, inst.class);
    }
    Ok(total / batch.len() as f64)
}

fn check_class(class: usize, w: &WeightSet) -> Result<()> {
    if class >= w.config().num_labels {
        return Err(Error::usage(format!(
            "class index {class} out of range for {} labels",
            w.config().num_labels
        )));
    }
    Ok(())
}

/// Parameter gradients laid out like a [`WeightSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<DenseLayer>,
}

impl Gradients {
    pub fn zeros_like(w: &WeightSet) -> Self {
        Self {
            layers: w
                .layers()
                .iter()
                .map(|l| DenseLayer::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights_mut().iter_mut().zip(b.weights()) {
                *x += y;
            }
            for (x, y) in a.bias_mut().iter_mut().zip(b.bias()) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.weights_mut().iter_mut().for_each(|v| *v *= factor);
            layer.bias_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Gradient of `-log y-hat_class` for the instance recorded in `trace`.
pub fn backward(
    trace: &ForwardTrace,
    class: usize,
    w: &WeightSet,
    mask: &UnitMask,
) -> Result<Gradients> {
    let config = w.config();
    let hidden = config.hidden_layers;
    let units = config.units_per_layer;
    w.check_mask(mask)?;
    check_class(class, w)?;
    check_dim("trace input", config.input_dim, trace.input.len())?;
    check_dim("trace hidden layers", hidden, trace.hidden_post.len())?;
    check_dim("trace hidden layers", hidden, trace.hidden_pre.len())?;
    check_dim("trace output", config.num_labels, trace.probs.len())?;
    for (pre, post) in trace.hidden_pre.iter().zip(&trace.hidden_post) {
        check_dim("trace hidden width", units, pre.len())?;
        check_dim("trace hidden width", units, post.len())?;
    }

    let mut grads = Gradients::zeros_like(w);
    let mut delta: Vec<f64> = trace.probs.clone();
    delta[class] -= 1.0;

    for l in (0..=hidden).rev() {
        let input = if l == 0 {
            &trace.input
        } else {
            &trace.hidden_post[l - 1]
        };
        let layer = &w.layers()[l];
        let g = &mut grads.layers[l];
        for (i, &a) in input.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &d) in delta.iter().enumerate() {
                *g.weight_mut(i, j) = a * d;
            }
        }
        g.bias_mut().copy_from_slice(&delta);

        if l > 0 {
            let keep = mask.layer(l - 1, units);
            let post = &trace.hidden_post[l - 1];
            delta = (0..layer.fan_in())
                .map(|i| {
                    if !keep[i] {
                        return 0.0;
                    }
                    let back: f64 = layer.row(i).iter().zip(&delta).map(|(w, d)| w * d).sum();
                    back * post[i] * (1.0 - post[i])
                })
                .collect();
        }
    }
    Ok(grads)
}

/// Mean loss and mean gradient over `batch` under one mask.
pub fn batch_gradient(
    batch: &[Instance<'_>],
    w: &WeightSet,
    mask: &UnitMask,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::usage("batch_gradient called with an empty batch"));
    }
    let mut total = Gradients::zeros_like(w);
    let mut loss = 0.0;
    for inst in batch {
        let trace = forward(inst.x, w, mask)?;
        loss -= log_prob_of_class(&trace.probs, inst.class);
        total.add_assign(&backward(&trace, inst.class, w, mask)?);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

/// `w - lr * grads`.
pub fn sgd_step(w: &WeightSet, grads: &Gradients, lr: f64) -> Result<WeightSet> {
    let mut next = w.clone();
    next.apply_gradients(grads, lr)?;
    Ok(next)
}

impl WeightSet {
    /// In-place form of [`sgd_step`]. Leaves `self` untouched on error.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::usage(format!(
                "learning rate must be finite and non-negative, got {lr}"
            )));
        }
        check_dim("gradient layer count", self.layers().len(), grads.layers.len())?;
        for (index, (layer, g)) in self.layers().iter().zip(&grads.layers).enumerate() {
            check_dim("gradient matrix", layer.weights().len(), g.weights().len())?;
            check_dim("gradient bias", layer.bias().len(), g.bias().len())?;
            if g.weights().iter().chain(g.bias()).any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient in layer {index}"
                )));
            }
        }
        for (layer, g) in self.layers_mut().iter_mut().zip(&grads.layers) {
            for (w, d) in layer.weights_mut().iter_mut().zip(g.weights()) {
                *w -= lr * d;
            }
            for (b, d) in layer.bias_mut().iter_mut().zip(g.bias()) {
                *b -= lr * d;
            }
        }
        Ok(())
    }
}
