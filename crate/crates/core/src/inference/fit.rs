use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nelder_mead::{nelder_mead, NelderMeadOptions};
use super::transform::{Parameterization, Transform};
use crate::error::{Error, Result};
use crate::gaussian_approx::{build_system, SystemOptions};
use crate::kalman::{log_likelihood, LikelihoodStatus, LogLikResult, DEGENERATE_LOGLIK};
use crate::model::{CompartmentalModel, ThetaFull};
use crate::simulate::{stream_rng, ObservationSeries};

/// Log-likelihood of `series` under `theta`.
pub fn loglik_at(
    model: &CompartmentalModel,
    theta: &ThetaFull,
    series: &ObservationSeries,
    opts: &SystemOptions,
) -> LogLikResult {
    match build_system(model, theta, &series.observed, &series.times, series.n_pop, opts) {
        Ok(sys) => log_likelihood(&sys, series),
        Err(_) => LogLikResult {
            loglik: DEGENERATE_LOGLIK,
            per_step: Vec::new(),
            status: LikelihoodStatus::Degenerate,
        },
    }
}

fn loglik_value(model: &CompartmentalModel, theta: &ThetaFull, series: &ObservationSeries, opts: &SystemOptions) -> f64 {
    match build_system(model, theta, &series.observed, &series.times, series.n_pop, opts) {
        Ok(sys) => log_likelihood(&sys, series).loglik,
        Err(_) => DEGENERATE_LOGLIK,
    }
}

/// Box of starting values, in constrained units, one interval per free parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypercube {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Hypercube {
    /// `[0.5 g, 1.5 g]` around each guess `g`.
    ///
    /// Proportions are capped below 1; zero guesses for log-scale
    /// parameters get `[1e-3, 1]`.
    pub fn around(guess: &[f64], kinds: &[Transform]) -> Self {
        let (lower, upper) = guess
            .iter()
            .zip(kinds)
            .map(|(&g, kind)| match kind {
                Transform::LogitReciprocal => ((0.5 * g).max(1e-6), (1.5 * g).min(0.999)),
                Transform::Log if g <= 0.0 => (1e-3, 1.0),
                _ => (0.5 * g, 1.5 * g),
            })
            .unzip();
        Hypercube { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..hi) } else { lo })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub n_starts: usize,
    pub seed: u64,
    pub optimizer: NelderMeadOptions,
    pub system: SystemOptions,
    /// Starting box; defaults to [`Hypercube::around`] the base parameter.
    pub hypercube: Option<Hypercube>,
    /// Additional starts (constrained units) run after the random ones.
    pub extra_starts: Vec<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            n_starts: 10,
            seed: 1,
            optimizer: NelderMeadOptions::default(),
            system: SystemOptions::default(),
            hypercube: None,
            extra_starts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartRecord {
    /// Constrained starting values of the free parameters.
    pub initial: Vec<f64>,
    pub mu: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub theta_hat: ThetaFull,
    /// Full parameter by name.
    pub estimates: BTreeMap<String, f64>,
    pub free: Vec<String>,
    pub loglik: f64,
    pub mu_hat: Vec<f64>,
    pub starts: Vec<StartRecord>,
    pub best_start: usize,
    pub evaluations: usize,
    /// Free parameters whose estimate saturated (e.g. a reporting rate of 1).
    pub boundary: Vec<String>,
}

/// Maximum likelihood by multi-start Nelder-Mead in the unconstrained space.
///
/// Start `i` is drawn from the hypercube with RNG stream `i` of `opts.seed`,
/// so results do not depend on the number of threads.
pub fn fit(
    model: &CompartmentalModel,
    series: &ObservationSeries,
    param: &Parameterization,
    opts: &FitOptions,
) -> Result<FitResult> {
    series.validate()?;
    if param.observed() != series.observed.as_slice() {
        return Err(Error::Invalid("parameterization and data observe different coordinates".into()));
    }
    if opts.n_starts + opts.extra_starts.len() == 0 {
        return Err(Error::Invalid("at least one start is required".into()));
    }
    if opts.extra_starts.iter().any(|s| s.len() != param.dim()) {
        return Err(Error::Invalid(format!("extra starts must have {} values", param.dim())));
    }
    let base = param.base(model)?;
    let cube = match &opts.hypercube {
        Some(c) => c.clone(),
        None => Hypercube::around(&param.free_values(&base), &param.free_kinds()),
    };
    if cube.dim() != param.dim() || cube.lower.iter().zip(&cube.upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::Invalid(format!(
            "hypercube must have {} intervals with lower <= upper",
            param.dim()
        )));
    }
    let kinds = param.free_kinds();
    let objective = |mu: &[f64]| -> f64 {
        match param.untransform(model, mu) {
            Ok(theta) => -loglik_value(model, &theta, series, &opts.system),
            Err(_) => -DEGENERATE_LOGLIK,
        }
    };
    let starts: Vec<StartRecord> = (0..opts.n_starts + opts.extra_starts.len())
        .into_par_iter()
        .map(|i| {
            let initial = if i < opts.n_starts {
                cube.sample(&mut stream_rng(opts.seed, i as u64))
            } else {
                opts.extra_starts[i - opts.n_starts].clone()
            };
            let mu0: Vec<f64> = initial.iter().zip(&kinds).map(|(v, k)| k.forward(*v)).collect();
            let r = nelder_mead(objective, &mu0, &opts.optimizer);
            StartRecord {
                initial,
                mu: r.x,
                loglik: -r.value,
                converged: r.converged,
                evaluations: r.evaluations,
            }
        })
        .collect();
    let (best_start, best) = starts
        .iter()
        .enumerate()
        .filter(|(_, s)| s.loglik > DEGENERATE_LOGLIK && s.loglik.is_finite())
        .max_by(|a, b| a.1.loglik.total_cmp(&b.1.loglik))
        .ok_or_else(|| Error::Degenerate(format!("all {} starts were degenerate", starts.len())))?;
    let theta_hat = param.untransform(model, &best.mu)?;
    Ok(FitResult {
        estimates: theta_hat.to_named(model, param.observed()),
        free: param.free_names().iter().map(|s| s.to_string()).collect(),
        loglik: best.loglik,
        mu_hat: best.mu.clone(),
        boundary: param.boundary(&best.mu),
        theta_hat,
        best_start,
        evaluations: starts.iter().map(|s| s.evaluations).sum(),
        starts,
    })
}
