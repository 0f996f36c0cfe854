use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CompartmentalModel, ThetaFull};
use crate::simulate::{observe, simulate_nonextinct, stream_rng, ExtinctionRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictiveRow {
    pub t: f64,
    pub mean: f64,
    pub p05: f64,
    pub p50: f64,
    pub p95: f64,
}

/// Initial counts for population `n_pop`: tracked proportions rounded,
/// susceptibles absorbing the rounding so untracked mass is preserved.
pub fn initial_counts(x0: &[f64], n_pop: u64) -> Result<Vec<i64>> {
    let n = n_pop as f64;
    let mut counts: Vec<i64> = x0.iter().map(|v| (v * n).round() as i64).collect();
    let removed = ((1.0 - x0.iter().sum::<f64>()) * n).round() as i64;
    counts[0] = n_pop as i64 - removed - counts[1..].iter().sum::<i64>();
    if counts.iter().any(|c| *c < 0) {
        return Err(Error::Domain(x0.to_vec()));
    }
    Ok(counts)
}

/// Linearly interpolated sample quantile (R type 7).
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Simulated observation bands under `theta` for the first observed
/// coordinate, in units of proportion of `n_pop`.
///
/// Only major outbreaks (per `rule`) are kept. Simulation `i` uses RNG
/// stream `i` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn post_predictive(
    model: &CompartmentalModel,
    theta: &ThetaFull,
    observed: &[usize],
    n_pop: u64,
    times: &[f64],
    n_sims: usize,
    seed: u64,
    rule: &ExtinctionRule,
) -> Result<Vec<PredictiveRow>> {
    theta.validate(model)?;
    if n_sims == 0 || times.is_empty() {
        return Err(Error::Invalid("need at least one simulation and one time".into()));
    }
    let init = initial_counts(&theta.eta.x0, n_pop)?;
    let t_max = times[times.len() - 1];
    let sims = (0..n_sims)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let (traj, _) =
                simulate_nonextinct(model, &theta.eta.zeta, n_pop, &init, t_max, rule, 10_000, &mut rng)?;
            let obs = observe(&traj, observed, &theta.p, &theta.tau, times, &mut rng)?;
            Ok(obs.values.into_iter().map(|v| v[0]).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut col: Vec<f64> = sims.iter().map(|s| s[k]).collect();
            col.sort_by(f64::total_cmp);
            PredictiveRow {
                t,
                mean: col.iter().sum::<f64>() / col.len() as f64,
                p05: quantile(&col, 0.05),
                p50: quantile(&col, 0.5),
                p95: quantile(&col, 0.95),
            }
        })
        .collect())
}
