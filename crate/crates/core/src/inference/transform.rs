//! Maps between constrained parameters and the unconstrained search space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CompartmentalModel, ThetaFull};

/// Unconstrained values below this saturate: logit-reciprocal parameters
/// report exactly 1 and log-scale parameters are floored at `exp(MU_FLOOR)`.
pub const MU_FLOOR: f64 = -30.0;

/// Forward image of a logit-reciprocal parameter sitting exactly at 1.
const MU_AT_ONE: f64 = -35.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `theta = exp(mu)`.
    Log,
    /// `theta = 1 / (1 + exp(mu))`, for proportions in (0, 1].
    LogitReciprocal,
    /// Held at its base value, not searched.
    Fixed,
}

impl Transform {
    pub fn forward(self, value: f64) -> f64 {
        match self {
            Transform::Log => value.max(MU_FLOOR.exp()).ln(),
            Transform::LogitReciprocal => {
                if value >= 1.0 {
                    MU_AT_ONE
                } else {
                    ((1.0 - value) / value).ln()
                }
            }
            Transform::Fixed => value,
        }
    }

    pub fn inverse(self, mu: f64) -> f64 {
        match self {
            Transform::Log => mu.max(MU_FLOOR).exp(),
            Transform::LogitReciprocal => {
                if mu < MU_FLOOR {
                    1.0
                } else {
                    1.0 / (1.0 + mu.exp())
                }
            }
            Transform::Fixed => mu,
        }
    }

    fn saturated(self, mu: f64) -> bool {
        !matches!(self, Transform::Fixed) && mu < MU_FLOOR
    }
}

/// Which parameters are estimated, how they are transformed, and the values
/// of the held ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameterization {
    names: Vec<String>,
    base: Vec<f64>,
    kinds: Vec<Transform>,
    observed: Vec<usize>,
    n_rates: usize,
    dim: usize,
    /// Recompute `s0` as one minus the other initial proportions.
    complete_s0: bool,
}

impl Parameterization {
    /// Estimates `free` (by name) with the default transform for each kind
    /// of parameter; everything else stays at `base`.
    ///
    /// Unless `s0` itself is free, the susceptible fraction is tied to the
    /// other initial proportions by `s0 = 1 - sum(others)`.
    pub fn new(
        model: &CompartmentalModel,
        observed: &[usize],
        base: &ThetaFull,
        free: &[&str],
    ) -> Result<Self> {
        base.validate(model)?;
        let names = ThetaFull::names(model, observed);
        if base.q() != observed.len() {
            return Err(Error::Invalid("base parameter does not match the observed coordinates".into()));
        }
        if let Some(unknown) = free.iter().find(|f| !names.iter().any(|n| n == *f)) {
            return Err(Error::Invalid(format!(
                "cannot estimate unknown parameter `{unknown}` (known: {names:?})"
            )));
        }
        let n_rates = model.rate_names().len();
        let d = model.dim();
        let kinds: Vec<Transform> = names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                if !free.contains(&name.as_str()) {
                    Transform::Fixed
                } else if i < n_rates || name.starts_with("tau") {
                    Transform::Log
                } else {
                    // initial proportions and reporting rates
                    Transform::LogitReciprocal
                }
            })
            .collect();
        let complete_s0 = kinds[n_rates] == Transform::Fixed;
        let mut base = base.to_vec();
        if complete_s0 {
            base[n_rates] = 1.0 - base[n_rates + 1..n_rates + d].iter().sum::<f64>();
        }
        Ok(Parameterization {
            dim: kinds.iter().filter(|k| **k != Transform::Fixed).count(),
            names,
            base,
            kinds,
            observed: observed.to_vec(),
            n_rates,
            complete_s0,
        })
    }

    /// Number of searched parameters.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn free_names(&self) -> Vec<&str> {
        self.free_indices().map(|i| self.names[i].as_str()).collect()
    }

    pub fn kinds(&self) -> &[Transform] {
        &self.kinds
    }

    fn free_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k != Transform::Fixed)
            .map(|(i, _)| i)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn base(&self, model: &CompartmentalModel) -> Result<ThetaFull> {
        ThetaFull::from_vec(model, self.observed.len(), &self.base)
    }

    /// A copy with `name` held at `value` (used for profiling).
    pub fn with_fixed(&self, name: &str, value: f64) -> Result<Self> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))?;
        let mut out = self.clone();
        if out.kinds[i] != Transform::Fixed {
            out.kinds[i] = Transform::Fixed;
            out.dim -= 1;
        }
        out.base[i] = value;
        Ok(out)
    }

    /// A copy whose held values are taken from `theta`.
    pub fn rebased(&self, theta: &ThetaFull) -> Self {
        let mut out = self.clone();
        out.base = theta.to_vec();
        out
    }

    /// Constrained free values in search order.
    pub fn free_values(&self, theta: &ThetaFull) -> Vec<f64> {
        let v = theta.to_vec();
        self.free_indices().map(|i| v[i]).collect()
    }

    pub fn free_kinds(&self) -> Vec<Transform> {
        self.free_indices().map(|i| self.kinds[i]).collect()
    }

    pub fn transform(&self, theta: &ThetaFull) -> Vec<f64> {
        let v = theta.to_vec();
        self.free_indices().map(|i| self.kinds[i].forward(v[i])).collect()
    }

    /// Flat constrained vector for `mu` (no validation).
    fn flat(&self, mu: &[f64]) -> Vec<f64> {
        let mut v = self.base.clone();
        for (i, m) in self.free_indices().zip(mu) {
            v[i] = self.kinds[i].inverse(*m);
        }
        if self.complete_s0 {
            let d = self.names.len() - self.n_rates - 2 * self.observed.len();
            v[self.n_rates] = 1.0 - v[self.n_rates + 1..self.n_rates + d].iter().sum::<f64>();
        }
        v
    }

    pub fn untransform(&self, model: &CompartmentalModel, mu: &[f64]) -> Result<ThetaFull> {
        if mu.len() != self.dim {
            return Err(Error::Invalid(format!(
                "expected {} unconstrained values, got {}",
                self.dim,
                mu.len()
            )));
        }
        ThetaFull::from_vec(model, self.observed.len(), &self.flat(mu))
    }

    /// Names of free parameters whose unconstrained value is saturated.
    pub fn boundary(&self, mu: &[f64]) -> Vec<String> {
        self.free_indices()
            .zip(mu)
            .filter(|(i, m)| self.kinds[*i].saturated(**m))
            .map(|(i, _)| self.names[i].clone())
            .collect()
    }
}
