use coda::nn::{backward, batch_gradient, batch_loss, forward, Instance, NetworkConfig, UnitMask, WeightSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(x: &[f64], class: usize, w: &WeightSet, mask: &UnitMask) -> f64 {
    -forward(x, w, mask).unwrap().probs[class].ln()
}

/// Weights of a layer followed by its biases.
fn param_mut(w: &mut WeightSet, layer: usize, p: usize) -> &mut f64 {
    let layer = &mut w.layers_mut()[layer];
    let n = layer.weights().len();
    if p < n {
        &mut layer.weights_mut()[p]
    } else {
        &mut layer.bias_mut()[p - n]
    }
}

/// Max relative error between `backward` and central differences.
fn max_relative_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=5);
    let u = rng.random_range(1..=5);
    let h = rng.random_range(1..=3);
    let l = rng.random_range(2..=4);
    let config = NetworkConfig::new(d, h, u, l).unwrap();
    let mut w = WeightSet::gaussian(config, 1.0, &mut rng);
    let mask = UnitMask::bernoulli(h * u, 0.7, &mut rng);
    let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let class = rng.random_range(0..l);
    let trace = forward(&x, &w, &mask).unwrap();
    let grads = backward(&trace, class, &w, &mask).unwrap();

    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for li in 0..w.layers().len() {
        let count = w.layers()[li].weights().len() + w.layers()[li].bias().len();
        for p in 0..count {
            let n_weights = w.layers()[li].weights().len();
            let original = *param_mut(&mut w, li, p);
            *param_mut(&mut w, li, p) = original + eps;
            let up = loss(&x, class, &w, &mask);
            *param_mut(&mut w, li, p) = original - eps;
            let down = loss(&x, class, &w, &mask);
            *param_mut(&mut w, li, p) = original;
            let numeric = (up - down) / (2.0 * eps);
            let g = &grads.layers()[li];
            let analytic = if p < n_weights {
                g.weights()[p]
            } else {
                g.bias()[p - n_weights]
            };
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn backward_matches_central_differences() {
    for seed in 0..50 {
        let err = max_relative_error(seed);
        assert!(err < 1e-4, "network {seed}: relative error {err}");
    }
}

#[test]
fn batch_gradient_is_mean_of_instance_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = NetworkConfig::new(3, 2, 4, 3).unwrap();
    let w = WeightSet::gaussian(config, 0.5, &mut rng);
    let mask = UnitMask::bernoulli(8, 0.5, &mut rng);
    let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
    let batch: Vec<Instance<'_>> = xs.iter().enumerate().map(|(i, x)| Instance { x, class: i % 3 }).collect();
    let (mean_loss, grads) = batch_gradient(&batch, &w, &mask).unwrap();
    assert!((mean_loss - batch_loss(&batch, &w, &mask).unwrap()).abs() < 1e-12);
    for (li, g) in grads.layers().iter().enumerate() {
        for p in 0..g.weights().len() {
            let sum: f64 = batch
                .iter()
                .map(|inst| {
                    let trace = forward(inst.x, &w, &mask).unwrap();
                    backward(&trace, inst.class, &w, &mask).unwrap().layers()[li].weights()[p]
                })
                .sum();
            assert!((g.weights()[p] - sum / 4.0).abs() < 1e-12);
        }
    }
}
