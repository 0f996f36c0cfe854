//! Simulate-then-fit replication studies.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{fit, initial_counts, FitOptions, Parameterization};
use crate::model::{CompartmentalModel, ThetaFull};
use crate::simulate::{
    observe, regular_grid, simulate_nonextinct, stream_rng, ExtinctionRule, ObservationSeries, Trajectory,
};

/// Offset separating observation streams from simulation streams.
const OBSERVATION_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub truth: ThetaFull,
    pub observed: Vec<usize>,
    pub n_pop: u64,
    pub n_target: usize,
    pub replicates: usize,
    /// Names of estimated parameters; the rest stay at their true values.
    pub free: Vec<String>,
    pub seed: u64,
    pub rule: ExtinctionRule,
    pub max_attempts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyData {
    pub delta: f64,
    pub series: Vec<ObservationSeries>,
    /// Simulations needed per replicate to get a major outbreak.
    pub attempts: Vec<usize>,
}

/// The non-extinct trajectory of replicate `r` and the attempts it took.
pub fn simulate_replicate(model: &CompartmentalModel, sc: &Scenario, r: usize) -> Result<(Trajectory, usize)> {
    let init = initial_counts(&sc.truth.eta.x0, sc.n_pop)?;
    let mut rng = stream_rng(sc.seed, r as u64);
    simulate_nonextinct(model, &sc.truth.eta.zeta, sc.n_pop, &init, f64::INFINITY, &sc.rule, sc.max_attempts, &mut rng)
}

/// Simulates one non-extinct observed series per replicate on the common
/// sampling step `mean(extinction time) / n_target`.
///
/// Replicate `r` simulates on stream `r` and observes on a separate stream,
/// so data are independent of scheduling. Trajectories are regenerated
/// rather than held, keeping memory flat in the replicate count.
pub fn simulate_study(model: &CompartmentalModel, sc: &Scenario) -> Result<StudyData> {
    sc.truth.validate(model)?;
    if sc.replicates == 0 {
        return Ok(StudyData { delta: f64::NAN, series: Vec::new(), attempts: Vec::new() });
    }
    let simulate = |r: usize| simulate_replicate(model, sc, r);
    let first: Vec<(f64, usize)> = (0..sc.replicates)
        .into_par_iter()
        .map(|r| {
            let (traj, attempts) = simulate(r)?;
            let t = traj
                .extinction_time()
                .ok_or_else(|| Error::Degenerate(format!("replicate {r} did not die out")))?;
            Ok((t, attempts))
        })
        .collect::<Result<_>>()?;
    let mean_duration = first.iter().map(|f| f.0).sum::<f64>() / first.len() as f64;
    let delta = mean_duration / sc.n_target as f64;
    let series = (0..sc.replicates)
        .into_par_iter()
        .map(|r| {
            let (traj, _) = simulate(r)?;
            let times = regular_grid(delta, first[r].0);
            let mut rng = stream_rng(sc.seed, OBSERVATION_STREAM + r as u64);
            observe(&traj, &sc.observed, &sc.truth.p, &sc.truth.tau, &times, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyData {
        delta,
        series,
        attempts: first.iter().map(|f| f.1).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Sample mean, SD (n - 1 denominator) and range; `None` when empty.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Summary {
            mean,
            sd,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFit {
    pub replicate: usize,
    pub n_points: usize,
    pub loglik: f64,
    pub estimates: BTreeMap<String, f64>,
    pub boundary: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationReport {
    pub replicates: usize,
    pub delta: f64,
    pub n_points: Option<Summary>,
    pub fits: Vec<ReplicateFit>,
    /// Replicates whose fit failed, with the reason.
    pub failures: Vec<(usize, String)>,
    /// Per free parameter, over successful fits.
    pub estimates: BTreeMap<String, Summary>,
}

/// Simulates the scenario and fits every replicate.
///
/// The fit of replicate `r` is seeded with `fit_opts.seed + r`. Failed fits
/// are reported rather than aborting the study.
pub fn run_replication(
    model: &CompartmentalModel,
    sc: &Scenario,
    fit_opts: &FitOptions,
) -> Result<ReplicationReport> {
    let free: Vec<&str> = sc.free.iter().map(String::as_str).collect();
    let param = Parameterization::new(model, &sc.observed, &sc.truth, &free)?;
    let data = simulate_study(model, sc)?;
    let outcomes: Vec<Result<ReplicateFit>> = data
        .series
        .par_iter()
        .enumerate()
        .map(|(r, series)| {
            let opts = FitOptions {
                seed: fit_opts.seed.wrapping_add(r as u64),
                ..fit_opts.clone()
            };
            let res = fit(model, series, &param, &opts)?;
            Ok(ReplicateFit {
                replicate: r,
                n_points: series.times.len(),
                loglik: res.loglik,
                estimates: res.estimates,
                boundary: res.boundary,
            })
        })
        .collect();
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(f) => fits.push(f),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    let estimates = param
        .free_names()
        .into_iter()
        .filter_map(|name| {
            let vals: Vec<f64> = fits.iter().map(|f| f.estimates[name]).collect();
            Summary::of(&vals).map(|s| (name.to_string(), s))
        })
        .collect();
    let points: Vec<f64> = data.series.iter().map(|s| s.times.len() as f64).collect();
    Ok(ReplicationReport {
        replicates: sc.replicates,
        delta: data.delta,
        n_points: Summary::of(&points),
        fits,
        failures,
        estimates,
    })
}
