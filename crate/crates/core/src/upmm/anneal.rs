use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{InputProjection, Instance, UnitMask, WeightSet};

use super::{log_mask_prior, projected_log_lik, UpmmModel, UpmmParams};

/// Metropolis-style acceptance: always for `delta >= 0`, otherwise with
/// probability `exp(delta / temperature)`.
pub fn sa_accept<R: Rng + ?Sized>(delta: f64, temperature: f64, rng: &mut R) -> bool {
    if delta >= 0.0 {
        return true;
    }
    if temperature <= 0.0 || !temperature.is_finite() {
        return temperature == f64::INFINITY;
    }
    rng.random::<f64>() < (delta / temperature).exp()
}

/// `gamma1 * |log nu|^gamma2`.
pub fn temperature(log_score: f64, params: &UpmmParams) -> f64 {
    params.gamma1 * log_score.abs().powf(params.gamma2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealOutcome {
    pub mask: UnitMask,
    pub log_score: f64,
    pub accepted_flips: usize,
}

/// Single-bit-flip simulated annealing on the mask posterior of `members`.
///
/// Each sweep visits every unit once in a fresh random order.
pub fn anneal_mask<R: Rng + ?Sized>(
    initial: &UnitMask,
    members: &[Instance<'_>],
    w: &WeightSet,
    params: &UpmmParams,
    rng: &mut R,
) -> Result<AnnealOutcome> {
    if members.is_empty() {
        return Err(Error::usage("annealing an architecture with no members"));
    }
    w.check_mask(initial)?;
    let projections = members
        .iter()
        .map(|inst| InputProjection::new(inst.x, w))
        .collect::<Result<Vec<_>>>()?;
    let score = |mask: &UnitMask| -> f64 {
        let mut total = log_mask_prior(mask, params.theta);
        for (p, inst) in projections.iter().zip(members) {
            total += projected_log_lik(p, inst.class, w, mask);
        }
        total
    };

    let mut mask = initial.clone();
    let mut current = score(&mask);
    let mut temp = temperature(current, params);
    let mut order: Vec<usize> = (0..mask.len()).collect();
    let mut accepted_flips = 0;
    for _ in 0..params.sweeps_per_update {
        order.shuffle(rng);
        for &unit in &order {
            mask.flip(unit);
            let proposed = score(&mask);
            if sa_accept(proposed - current, temp, rng) {
                current = proposed;
                accepted_flips += 1;
            } else {
                mask.flip(unit);
            }
            temp = temperature(current, params);
        }
    }
    Ok(AnnealOutcome {
        mask,
        log_score: current,
        accepted_flips,
    })
}

/// Anneals architecture `k` of `model` over its members in `data` and stores
/// the resulting mask.
pub fn update_mask_sa<R: Rng + ?Sized>(
    model: &mut UpmmModel,
    k: usize,
    data: &Dataset,
    rng: &mut R,
) -> Result<UnitMask> {
    let arch = model
        .architectures
        .get(k)
        .ok_or_else(|| Error::usage(format!("architecture {k} does not exist")))?;
    let members: Vec<Instance<'_>> = arch.members().iter().map(|&n| data.instance(n)).collect();
    let outcome = anneal_mask(&arch.mask, &members, &model.weights, &model.params, rng)?;
    model.architectures[k].mask = outcome.mask.clone();
    Ok(outcome.mask)
}
