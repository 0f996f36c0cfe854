use rayon::prelude::*;
use serde::Serialize;

use super::fit::{fit, FitOptions, FitResult, Hypercube};
use super::transform::{Parameterization, Transform};
use crate::error::{Error, Result};
use crate::model::CompartmentalModel;
use crate::simulate::ObservationSeries;

/// Half the 95% chi-square quantile with one degree of freedom.
pub const CI_THRESHOLD: f64 = 1.92;

pub const DEFAULT_GRID_POINTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileResult {
    pub param: String,
    pub grid: Vec<f64>,
    /// Maximized log-likelihood at each grid value.
    pub logliks: Vec<f64>,
    pub estimate: f64,
    /// Largest log-likelihood seen, fit or profile.
    pub loglik_max: f64,
    pub lower: f64,
    pub upper: f64,
    /// False when the profile never drops below the cutoff on that side of the grid.
    pub lower_bounded: bool,
    pub upper_bounded: bool,
    pub threshold: f64,
}

/// `points` evenly spaced values over `estimate * [0.7, 1.3]`, clipped to 1
/// for proportions.
pub fn default_grid(estimate: f64, kind: Transform, points: usize) -> Vec<f64> {
    let lo = 0.7 * estimate;
    let hi = match kind {
        Transform::LogitReciprocal => (1.3 * estimate).min(1.0),
        _ => 1.3 * estimate,
    };
    if points < 2 {
        return vec![estimate];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Interval where the profile stays within `threshold` of `loglik_max`.
///
/// `points` are `(value, loglik)` pairs and must contain the estimate.
/// Crossings are located by linear interpolation between neighbours; when
/// no crossing exists on a side, the outermost value is returned with a
/// `false` flag.
pub fn confidence_interval(
    points: &[(f64, f64)],
    estimate: f64,
    loglik_max: f64,
    threshold: f64,
) -> (f64, bool, f64, bool) {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let cutoff = loglik_max - threshold;
    let centre = pts
        .iter()
        .position(|p| p.0 == estimate)
        .unwrap_or_else(|| pts.partition_point(|p| p.0 < estimate).min(pts.len() - 1));
    let crossing = |inside: (f64, f64), outside: (f64, f64)| {
        let w = (inside.1 - cutoff) / (inside.1 - outside.1);
        inside.0 + w * (outside.0 - inside.0)
    };
    let mut lower = (pts[0].0, false);
    for j in (0..centre).rev() {
        if pts[j].1 < cutoff {
            lower = (crossing(pts[j + 1], pts[j]), true);
            break;
        }
    }
    let mut upper = (pts[pts.len() - 1].0, false);
    for j in centre + 1..pts.len() {
        if pts[j].1 < cutoff {
            upper = (crossing(pts[j - 1], pts[j]), true);
            break;
        }
    }
    (lower.0, lower.1, upper.0, upper.1)
}

/// Profile likelihood of `name` over `grid`, re-maximizing the other free
/// parameters at each value.
///
/// Each grid fit starts from the global estimate plus `opts.n_starts`
/// random draws around it.
pub fn profile_ci(
    model: &CompartmentalModel,
    series: &ObservationSeries,
    param: &Parameterization,
    fitted: &FitResult,
    name: &str,
    grid: &[f64],
    opts: &FitOptions,
) -> Result<ProfileResult> {
    if !fitted.free.iter().any(|f| f == name) {
        return Err(Error::Invalid(format!("`{name}` was not estimated")));
    }
    if grid.is_empty() {
        return Err(Error::Invalid("empty profile grid".into()));
    }
    let estimate = fitted.estimates[name];
    let rebased = param.rebased(&fitted.theta_hat);
    let logliks = grid
        .par_iter()
        .enumerate()
        .map(|(g, &value)| {
            let fixed = rebased.with_fixed(name, value)?;
            let base = fixed.base(model)?;
            let warm = fixed.free_values(&base);
            let point_opts = FitOptions {
                seed: opts.seed.wrapping_add(g as u64 + 1),
                hypercube: Some(Hypercube::around(&warm, &fixed.free_kinds())),
                extra_starts: vec![warm],
                ..opts.clone()
            };
            Ok(fit(model, series, &fixed, &point_opts)?.loglik)
        })
        .collect::<Result<Vec<f64>>>()?;
    let loglik_max = logliks.iter().copied().fold(fitted.loglik, f64::max);
    let mut points: Vec<(f64, f64)> = grid.iter().copied().zip(logliks.iter().copied()).collect();
    points.push((estimate, fitted.loglik));
    let (lower, lower_bounded, upper, upper_bounded) =
        confidence_interval(&points, estimate, loglik_max, CI_THRESHOLD);
    Ok(ProfileResult {
        param: name.to_string(),
        grid: grid.to_vec(),
        logliks,
        estimate,
        loglik_max,
        lower,
        upper,
        lower_bounded,
        upper_bounded,
        threshold: CI_THRESHOLD,
    })
}
