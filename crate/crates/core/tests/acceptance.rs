//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! per criterion and exits nonzero if any failed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use coda::data::{generate_synthetic, standardize, Dataset, SynthSpec};
use coda::nn::{backward, forward, Instance, NetworkConfig, UnitMask, WeightSet};
use coda::trainer::{
    cluster_purity, f1_score, paired_t_test, run_benchmark, train_coda, BenchmarkDataset,
    BenchmarkSettings, Method, TrainConfig,
};
use coda::upmm::{
    log_new_arch_score, sa_accept, up_prior, update_mask_sa, ArchitectureState, UpmmModel,
    UpmmParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tempfile::TempDir;

type Criterion = (&'static str, fn() -> Verdict, Duration);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sigmoid hidden layers with masking and a softmax output, from scratch.
fn oracle_probs(x: &[f64], w: &WeightSet, mask: &UnitMask) -> Vec<f64> {
    let cfg = w.config();
    let mut act = x.to_vec();
    for (h, layer) in w.layers().iter().enumerate() {
        let mut next: Vec<f64> = (0..layer.fan_out())
            .map(|j| layer.bias()[j] + act.iter().enumerate().map(|(i, a)| a * layer.weight(i, j)).sum::<f64>())
            .collect();
        if h < cfg.hidden_layers {
            for (j, z) in next.iter_mut().enumerate() {
                *z = if mask.bits()[h * cfg.units_per_layer + j] { 1.0 / (1.0 + (-*z).exp()) } else { 0.0 };
            }
        }
        act = next;
    }
    let max = act.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = act.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn log_prior(mask: &UnitMask, theta: f64) -> f64 {
    mask.bits().iter().map(|&b| if b { theta.ln() } else { (1.0 - theta).ln() }).sum()
}

fn oracle_posterior(mask: &UnitMask, members: &[(Vec<f64>, usize)], w: &WeightSet, theta: f64) -> f64 {
    log_prior(mask, theta)
        + members.iter().map(|(x, c)| oracle_probs(x, w, mask)[*c].max(1e-12).ln()).sum::<f64>()
}

/// Net with 4 hidden units (2 layers of 2) and `count` random members.
fn small_problem(seed: u64, count: usize) -> (WeightSet, Vec<(Vec<f64>, usize)>) {
    let cfg = NetworkConfig::new(3, 2, 2, 3).unwrap();
    let mut r = rng(seed);
    let mut w = WeightSet::gaussian(cfg, 2.0, &mut r);
    for layer in w.layers_mut() {
        for b in layer.bias_mut() {
            *b = r.random::<f64>() - 0.5;
        }
    }
    let members = (0..count)
        .map(|_| ((0..3).map(|_| r.random::<f64>() * 4.0 - 2.0).collect(), r.random_range(0..3)))
        .collect();
    (w, members)
}

fn param_mut(w: &mut WeightSet, layer: usize, p: usize) -> &mut f64 {
    let layer = &mut w.layers_mut()[layer];
    let n = layer.weights().len();
    if p < n {
        &mut layer.weights_mut()[p]
    } else {
        &mut layer.bias_mut()[p - n]
    }
}

fn gradient_oracle() -> Verdict {
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut r = rng(seed);
        let (d, u, h, l) = (r.random_range(1..=5), r.random_range(1..=5), r.random_range(1..=3), r.random_range(2..=4));
        let mut w = WeightSet::gaussian(NetworkConfig::new(d, h, u, l).unwrap(), 1.0, &mut r);
        let mask = UnitMask::bernoulli(h * u, 0.7, &mut r);
        let x: Vec<f64> = (0..d).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let class = r.random_range(0..l);
        let grads = backward(&forward(&x, &w, &mask).unwrap(), class, &w, &mask).unwrap();
        let loss = |w: &WeightSet| -forward(&x, w, &mask).unwrap().probs[class].ln();
        for li in 0..w.layers().len() {
            let n_weights = w.layers()[li].weights().len();
            for p in 0..n_weights + w.layers()[li].bias().len() {
                let original = *param_mut(&mut w, li, p);
                *param_mut(&mut w, li, p) = original + eps;
                let up = loss(&w);
                *param_mut(&mut w, li, p) = original - eps;
                let down = loss(&w);
                *param_mut(&mut w, li, p) = original;
                let numeric = (up - down) / (2.0 * eps);
                let g = &grads.layers()[li];
                let analytic = if p < n_weights { g.weights()[p] } else { g.bias()[p - n_weights] };
                worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
            }
        }
    }
    verdict(worst < 1e-4, format!("max relative error {worst:.3e} over 50 networks (limit 1e-4)"))
}

fn mask_posterior_oracle() -> Verdict {
    let params = UpmmParams { gamma1: 1e-9, theta: 0.5, ..Default::default() };
    let mut hits = 0;
    for trial in 0..20u64 {
        let mut r = rng(1000 + trial);
        let count = r.random_range(1..=5);
        let (w, members) = small_problem(2000 + trial, count);
        let want = (0..16u64)
            .map(|i| oracle_posterior(&UnitMask::from_index(4, i), &members, &w, 0.5))
            .fold(f64::NEG_INFINITY, f64::max);
        let xs: Vec<f64> = members.iter().flat_map(|(x, _)| x.iter().copied()).collect();
        let labels: Vec<usize> = members.iter().map(|(_, c)| c + 1).collect();
        let data = Dataset::new(3, 3, xs, labels, None).unwrap();
        let mut arch = ArchitectureState::new(UnitMask::full(4), 3);
        for (n, (x, _)) in members.iter().enumerate() {
            arch.add_member(n, x);
        }
        let mut model = UpmmModel::new(w.clone(), params).unwrap();
        model.architectures = vec![arch];
        let mut best = f64::NEG_INFINITY;
        for _ in 0..20 {
            model.architectures[0].mask = UnitMask::bernoulli(4, 0.5, &mut r);
            let mask = update_mask_sa(&mut model, 0, &data, &mut r).unwrap();
            best = best.max(oracle_posterior(&mask, &members, &w, 0.5));
        }
        if (best - want).abs() < 1e-9 {
            hits += 1;
        }
    }
    verdict(hits >= 19, format!("{hits}/20 trials reached the enumerated optimum (need 19)"))
}

fn acceptance_law() -> Verdict {
    let mut r = rng(7);
    let trials = 10_000;
    let accepted = (0..trials).filter(|_| sa_accept(-1.0, 2.0, &mut r)).count();
    let freq = accepted as f64 / trials as f64;
    let target = (-0.5f64).exp();
    verdict(
        (freq - target).abs() <= 0.02,
        format!("frequency {freq:.4} vs exp(-1/2) = {target:.4} (tolerance 0.02)"),
    )
}

fn monte_carlo_integral() -> Verdict {
    let params = UpmmParams { new_arch_samples: 10_000, theta: 0.5, alpha: 1.0, ..Default::default() };
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let (w, members) = small_problem(3000 + seed, 1);
        let (x, class) = &members[0];
        let exact: f64 = (0..16u64)
            .map(|i| {
                let mask = UnitMask::from_index(4, i);
                log_prior(&mask, 0.5).exp() * oracle_probs(x, &w, &mask)[*class]
            })
            .sum::<f64>()
            .ln();
        let got = log_new_arch_score(Instance { x, class: *class }, &w, &params, &mut rng(seed))
            .unwrap()
            .log_score;
        worst = worst.max((got - exact).abs());
    }
    verdict(worst < 0.05, format!("max gap {worst:.4} nats over 5 instances with S=10^4 (limit 0.05)"))
}

fn uniform_process_prior() -> Verdict {
    let cases: [(usize, f64, Vec<f64>); 4] = [
        (0, 1.0, vec![1.0]),
        (3, 1.0, vec![0.25, 0.25, 0.25, 0.25]),
        (2, 2.0, vec![0.25, 0.25, 0.5]),
        (10, 0.5, {
            let mut v = vec![1.0 / 10.5; 10];
            v.push(0.5 / 10.5);
            v
        }),
    ];
    let mut pass = true;
    let mut worst_sum: f64 = 0.0;
    for (k, alpha, want) in &cases {
        let got = up_prior(*k, *alpha);
        worst_sum = worst_sum.max((got.iter().sum::<f64>() - 1.0).abs());
        pass &= got == *want;
    }
    pass &= worst_sum <= 1e-15;
    verdict(pass, format!("exact values on 4 cases, max |sum - 1| = {worst_sum:.1e}"))
}

fn desk_sds1(seed: u64) -> Dataset {
    let spec = SynthSpec::sds(1).unwrap().with_n(1500);
    generate_synthetic(&spec, seed).unwrap().dataset
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn structure_recovery() -> Verdict {
    let results: Vec<(u64, usize, f64)> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let (train, _, _) = standardize(&desk_sds1(seed), &[]).unwrap();
            let mut cfg = TrainConfig::new(Method::Coda, NetworkConfig::new(50, 2, 25, 2).unwrap()).fit_to(&train);
            cfg.seed = seed;
            let out = train_coda(&train, &cfg).unwrap();
            let purity = cluster_purity(&out.assignments, train.truth().unwrap()).unwrap();
            (seed, out.model.num_architectures(), purity)
        })
        .collect();
    let k = median(results.iter().map(|r| r.1 as f64).collect());
    let purity = median(results.iter().map(|r| r.2).collect());
    let per_seed: Vec<String> = results.iter().map(|(s, k, p)| format!("seed {s}: K={k} purity={p:.3}")).collect();
    verdict(
        (2.0..=6.0).contains(&k) && purity >= 0.8,
        format!("median K {k} (need 2..=6), median purity {purity:.3} (need 0.8); {}", per_seed.join(", ")),
    )
}

fn relative_performance() -> Verdict {
    let data = BenchmarkDataset { name: "sds1-desk".into(), data: desk_sds1(0), units_per_layer: None };
    let positives = data.data.labels().iter().filter(|&&l| l == 2).count();
    let positive_rate = positives as f64 / data.data.len() as f64;
    let settings = BenchmarkSettings {
        methods: Method::ALL.to_vec(),
        repeats: 5,
        template: TrainConfig::new(Method::Coda, NetworkConfig::new(50, 2, 25, 2).unwrap()),
        split_fraction: 0.5,
        standardize: true,
        positive_label: 2,
        seed: 0,
    };
    let results = run_benchmark(&[data], &settings).unwrap();
    let mean = |m: Method| results.cell("sds1-desk", m).map(|c| c.mean).unwrap_or(f64::NAN);
    let (coda, dnn, dropout) = (mean(Method::Coda), mean(Method::Dnn), mean(Method::Dropout));
    verdict(
        coda >= dnn - 0.02 && coda >= dropout - 0.02,
        format!(
            "mean F1 CODA {coda:.3}, DNN {dnn:.3}, Dropout {dropout:.3} \
             (published full-scale SDS1: CODA 0.737, DNN 0.682, Dropout 0.680); \
             positive class rate {positive_rate:.3}"
        ),
    )
}

fn metric_oracles() -> Verdict {
    let mut r = rng(11);
    let mut f1_ok = 0;
    for _ in 0..1000 {
        let n = r.random_range(0..60);
        let preds: Vec<usize> = (0..n).map(|_| r.random_range(1..=3)).collect();
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(1..=3)).collect();
        let mut confusion = [[0usize; 2]; 2];
        for (p, y) in preds.iter().zip(&labels) {
            confusion[usize::from(*p == 2)][usize::from(*y == 2)] += 1;
        }
        let (tp, fp, fn_) = (confusion[1][1], confusion[1][0], confusion[0][1]);
        let want = if tp == 0 { 0.0 } else { (2 * tp) as f64 / (2 * tp + fp + fn_) as f64 };
        let got = f1_score(&preds, &labels, 2).unwrap();
        if got.f1 == want && got.tp == tp && got.fp == fp && got.fn_ == fn_ && got.tn == confusion[0][0] {
            f1_ok += 1;
        }
    }
    let cases: [(&[f64], &[f64], f64, f64); 3] = [
        (
            &[0.737, 0.741, 0.729, 0.744, 0.735],
            &[0.682, 0.690, 0.671, 0.688, 0.679],
            47.68553709209169,
            1.1569972869483436e-06,
        ),
        (&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1.5, 1.8, 3.3, 3.9, 5.6, 5.8], -1.0151523782886178, 0.35661047553621233),
        (&[0.61, 0.58, 0.66], &[0.60, 0.61, 0.59], 0.5735393346764044, 0.6241769859985856),
    ];
    let mut t_ok = 0;
    for (a, b, t, p) in cases {
        let got = paired_t_test(a, b).unwrap();
        if (got.t - t).abs() < 1e-6 && (got.p - p).abs() < 1e-6 {
            t_ok += 1;
        }
    }
    verdict(f1_ok == 1000 && t_ok == 3, format!("F1 {f1_ok}/1000 exact, t-test {t_ok}/3 within 1e-6"))
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap());
    }
    files
}

fn determinism() -> Verdict {
    let dir = TempDir::new().unwrap();
    let spec = r#"{"n": 300, "d": 10, "num_labels": 2, "units": 5, "k_true": 3}"#;
    let train_cfg = dir.path().join("train.json");
    fs::write(
        &train_cfg,
        format!(r#"{{"data": {{"synthetic": {spec}}}, "method": "coda", "seed": 4, "training": {{"epochs": 5}}}}"#),
    )
    .unwrap();
    let bench_cfg = dir.path().join("bench.json");
    fs::write(
        &bench_cfg,
        format!(
            r#"{{"datasets": [{{"name": "small", "source": {{"synthetic": {spec}}}}}],
                "methods": ["coda", "dnn", "dropout"], "repeats": 3, "seed": 4,
                "training": {{"epochs": 5}}}}"#
        ),
    )
    .unwrap();
    let mut identical = Vec::new();
    for (command, cfg) in [("train", &train_cfg), ("benchmark", &bench_cfg)] {
        let mut trees = Vec::new();
        for run in ["a", "b"] {
            let out = dir.path().join(format!("{command}-{run}"));
            let code = coda::cli::main_with_args([
                "coda",
                "--out",
                out.to_str().unwrap(),
                command,
                cfg.to_str().unwrap(),
            ]);
            assert_eq!(code, 0, "{command} failed");
            trees.push(read_tree(&out));
        }
        identical.push((command, trees[0].len(), trees[0] == trees[1]));
    }
    let detail: Vec<String> = identical
        .iter()
        .map(|(c, n, same)| format!("{c}: {n} files {}", if *same { "identical" } else { "differ" }))
        .collect();
    verdict(identical.iter().all(|(_, n, same)| *same && *n > 0), detail.join(", "))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient oracle", gradient_oracle, Duration::from_secs(10)),
        ("mask posterior oracle", mask_posterior_oracle, Duration::from_secs(30)),
        ("SA acceptance law", acceptance_law, Duration::MAX),
        ("Monte-Carlo new-architecture integral", monte_carlo_integral, Duration::MAX),
        ("uniform process prior", uniform_process_prior, Duration::MAX),
        ("synthetic structure recovery", structure_recovery, Duration::from_secs(600)),
        ("relative performance", relative_performance, Duration::from_secs(900)),
        ("F1 and t-test oracles", metric_oracles, Duration::MAX),
        ("determinism", determinism, Duration::MAX),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        let elapsed = start.elapsed();
        let pass = v.pass && elapsed <= *limit;
        if !pass {
            failed += 1;
        }
        let budget = if *limit == Duration::MAX { String::new() } else { format!(", limit {}s", limit.as_secs()) };
        println!(
            "{} criterion {} ({name}): {} [{:.1}s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
