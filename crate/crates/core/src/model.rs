//! Density-dependent compartmental jump models.
//!
//! A model tracks `d` compartment proportions (the last, "removed",
//! compartment is implied by closure and never stored). Every jump carries
//! an integer displacement vector and a mass-action intensity
//! `beta(x) = zeta[c] * x[f1] * ... * x[fm]`, which is all the SIR/SEIR
//! family needs and gives closed-form gradients.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on simplex membership checks.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Most negative eigenvalue accepted before a diffusion matrix is rejected.
const NEG_EIG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sir,
    Seir,
}

impl ModelKind {
    pub fn build(self) -> CompartmentalModel {
        match self {
            ModelKind::Sir => sir_model(),
            ModelKind::Seir => seir_model(),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sir" => Ok(ModelKind::Sir),
            "seir" => Ok(ModelKind::Seir),
            other => Err(Error::Invalid(format!("unknown model `{other}`"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Sir => "sir",
            ModelKind::Seir => "seir",
        })
    }
}

/// Mass-action intensity `zeta[rate] * prod(x[f] for f in factors)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Intensity {
    pub rate: usize,
    pub factors: Vec<usize>,
}

impl Intensity {
    #[inline]
    pub fn eval(&self, zeta: &[f64], x: &[f64]) -> f64 {
        self.factors
            .iter()
            .fold(zeta[self.rate], |acc, &f| acc * x[f])
    }

    /// Adds `scale * d(beta)/dx` into `out`.
    #[inline]
    fn add_gradient(&self, zeta: &[f64], x: &[f64], scale: f64, out: &mut [f64]) {
        for (skip, &f) in self.factors.iter().enumerate() {
            let mut g = zeta[self.rate] * scale;
            for (j, &other) in self.factors.iter().enumerate() {
                if j != skip {
                    g *= x[other];
                }
            }
            out[f] += g;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jump {
    pub delta: Vec<i64>,
    pub intensity: Intensity,
}

/// A closed-population compartmental model with density-dependent jumps.
#[derive(Debug, Clone)]
pub struct CompartmentalModel {
    kind: ModelKind,
    labels: Vec<&'static str>,
    rate_names: Vec<&'static str>,
    jumps: Vec<Jump>,
    /// Tracked coordinates that count as "infected" (extinction, grids).
    infected: Vec<usize>,
}

pub fn sir_model() -> CompartmentalModel {
    CompartmentalModel {
        kind: ModelKind::Sir,
        labels: vec!["S", "I"],
        rate_names: vec!["lambda", "gamma"],
        jumps: vec![
            Jump {
                delta: vec![-1, 1],
                intensity: Intensity { rate: 0, factors: vec![0, 1] },
            },
            Jump {
                delta: vec![0, -1],
                intensity: Intensity { rate: 1, factors: vec![1] },
            },
        ],
        infected: vec![1],
    }
}

/// S -> E at `lambda s i`, E -> I at `epsilon e`, I -> R at `gamma i`.
pub fn seir_model() -> CompartmentalModel {
    CompartmentalModel {
        kind: ModelKind::Seir,
        labels: vec!["S", "E", "I"],
        rate_names: vec!["lambda", "gamma", "epsilon"],
        jumps: vec![
            Jump {
                delta: vec![-1, 1, 0],
                intensity: Intensity { rate: 0, factors: vec![0, 2] },
            },
            Jump {
                delta: vec![0, -1, 1],
                intensity: Intensity { rate: 2, factors: vec![1] },
            },
            Jump {
                delta: vec![0, 0, -1],
                intensity: Intensity { rate: 1, factors: vec![2] },
            },
        ],
        infected: vec![1, 2],
    }
}

impl CompartmentalModel {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Number of tracked compartments.
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[&'static str] {
        &self.labels
    }

    pub fn rate_names(&self) -> &[&'static str] {
        &self.rate_names
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn infected(&self) -> &[usize] {
        &self.infected
    }

    /// Names of the initial-proportion parameters, e.g. `s0`, `i0`.
    pub fn init_names(&self) -> Vec<String> {
        self.labels
            .iter()
            .map(|l| format!("{}0", l.to_ascii_lowercase()))
            .collect()
    }

    /// Index of a tracked compartment by (case-insensitive) label.
    pub fn coordinate(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.eq_ignore_ascii_case(label))
    }

    pub fn check_simplex(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Invalid(format!(
                "state has length {}, model dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        let sum: f64 = x.iter().sum();
        let inside = x
            .iter()
            .all(|&v| v.is_finite() && (-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&v))
            && sum <= 1.0 + SIMPLEX_TOL;
        if inside {
            Ok(())
        } else {
            Err(Error::Domain(x.to_vec()))
        }
    }

    fn check_zeta(&self, zeta: &[f64]) -> Result<()> {
        if zeta.len() != self.rate_names.len() {
            return Err(Error::Invalid(format!(
                "expected {} rate parameters, got {}",
                self.rate_names.len(),
                zeta.len()
            )));
        }
        Ok(())
    }

    /// `b(x) = sum_l l * beta_l(x)`.
    pub fn drift(&self, zeta: &[f64], x: &[f64]) -> Result<DVector<f64>> {
        self.check_zeta(zeta)?;
        self.check_simplex(x)?;
        let mut out = DVector::zeros(self.dim());
        self.drift_into(zeta, x, out.as_mut_slice());
        Ok(out)
    }

    /// `Sigma(x) = sum_l beta_l(x) l l^T`.
    pub fn diffusion_matrix(&self, zeta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_zeta(zeta)?;
        self.check_simplex(x)?;
        let d = self.dim();
        let mut buf = vec![0.0; d * d];
        self.diffusion_into(zeta, x, &mut buf);
        Ok(DMatrix::from_row_slice(d, d, &buf))
    }

    /// Lower-triangular `sigma` with `sigma sigma^T = Sigma(x)`.
    ///
    /// Singular pivots produce zero columns instead of failing, so
    /// boundary states (no infected) factor to the zero matrix.
    pub fn diffusion_factor(&self, zeta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
        let sigma = self.diffusion_matrix(zeta, x)?;
        semidefinite_cholesky(&sigma)
    }

    /// Analytic Jacobian `d b_i / d x_j`.
    pub fn drift_jacobian(&self, zeta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_zeta(zeta)?;
        self.check_simplex(x)?;
        let d = self.dim();
        let mut buf = vec![0.0; d * d];
        self.jacobian_into(zeta, x, &mut buf);
        Ok(DMatrix::from_row_slice(d, d, &buf))
    }

    /// Unchecked drift, written into `out` (length `d`).
    #[inline]
    pub fn drift_into(&self, zeta: &[f64], x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for jump in &self.jumps {
            let beta = jump.intensity.eval(zeta, x);
            for (o, &l) in out.iter_mut().zip(&jump.delta) {
                *o += l as f64 * beta;
            }
        }
    }

    /// Unchecked diffusion matrix, row-major into `out` (length `d*d`).
    #[inline]
    pub fn diffusion_into(&self, zeta: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        out.iter_mut().for_each(|v| *v = 0.0);
        for jump in &self.jumps {
            let beta = jump.intensity.eval(zeta, x);
            for i in 0..d {
                let li = jump.delta[i];
                if li == 0 {
                    continue;
                }
                for j in 0..d {
                    out[i * d + j] += beta * (li * jump.delta[j]) as f64;
                }
            }
        }
    }

    /// Unchecked Jacobian, row-major into `out` (length `d*d`).
    #[inline]
    pub fn jacobian_into(&self, zeta: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut grad = [0.0; 8];
        let grad = &mut grad[..d];
        for jump in &self.jumps {
            grad.iter_mut().for_each(|g| *g = 0.0);
            jump.intensity.add_gradient(zeta, x, 1.0, grad);
            for i in 0..d {
                let li = jump.delta[i];
                if li == 0 {
                    continue;
                }
                for j in 0..d {
                    out[i * d + j] += li as f64 * grad[j];
                }
            }
        }
    }

    /// Jump propensity `N * beta(counts / N)` of the unnormalized process.
    #[inline]
    pub fn propensity(&self, jump: usize, zeta: &[f64], counts: &[i64], n: f64) -> f64 {
        let intensity = &self.jumps[jump].intensity;
        let mut rate = zeta[intensity.rate] * n;
        for &f in &intensity.factors {
            rate *= counts[f] as f64 / n;
        }
        rate
    }
}

/// Cholesky factor of a positive semidefinite matrix that tolerates
/// singular pivots by emitting zero columns.
pub fn semidefinite_cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pivot_tol = 1e-14 * scale.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag < -NEG_EIG_TOL {
            return Err(Error::Numeric(format!(
                "matrix is not positive semidefinite (pivot {diag:e})"
            )));
        }
        if diag <= pivot_tol {
            continue;
        }
        let root = diag.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..d {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / root;
        }
    }
    Ok(l)
}

/// Epidemic parameters `eta = (zeta, x0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpidemicParams {
    /// Transition rates, in the model's `rate_names` order.
    pub zeta: Vec<f64>,
    /// Initial proportions of the tracked compartments.
    pub x0: Vec<f64>,
}

impl EpidemicParams {
    pub fn validate(&self, model: &CompartmentalModel) -> Result<()> {
        model.check_zeta(&self.zeta)?;
        if self.x0.len() != model.dim() {
            return Err(Error::Invalid(format!(
                "expected {} initial proportions, got {}",
                model.dim(),
                self.x0.len()
            )));
        }
        if let Some(r) = self.zeta.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::Invalid(format!("rates must be positive, got {r}")));
        }
        if self.x0.iter().any(|v| !(*v >= 0.0 && *v < 1.0 + SIMPLEX_TOL)) {
            return Err(Error::Invalid(format!(
                "initial proportions must lie in [0, 1], got {:?}",
                self.x0
            )));
        }
        if self.x0.iter().sum::<f64>() > 1.0 + SIMPLEX_TOL {
            return Err(Error::Invalid("initial proportions sum above 1".into()));
        }
        Ok(())
    }
}

/// Full parameter `theta = (eta, p, tau)`.
///
/// `tau` holds measurement-error scales; the observation variance uses
/// `tau^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaFull {
    pub eta: EpidemicParams,
    pub p: Vec<f64>,
    pub tau: Vec<f64>,
}

impl ThetaFull {
    pub fn q(&self) -> usize {
        self.p.len()
    }

    pub fn tau2(&self) -> Vec<f64> {
        self.tau.iter().map(|t| t * t).collect()
    }

    pub fn validate(&self, model: &CompartmentalModel) -> Result<()> {
        self.eta.validate(model)?;
        if self.p.len() != self.tau.len() {
            return Err(Error::Invalid(
                "reporting rates and error scales differ in length".into(),
            ));
        }
        if self.p.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::Invalid(format!("reporting rates must be in (0,1]: {:?}", self.p)));
        }
        if self.tau.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::Invalid(format!("error scales must be >= 0: {:?}", self.tau)));
        }
        Ok(())
    }

    /// Canonical parameter names: rates, initial proportions, `p`, `tau`.
    ///
    /// With several observed coordinates the observation parameters are
    /// suffixed by the observed compartment label (`p_I`, `tau_I`, ...).
    pub fn names(model: &CompartmentalModel, observed: &[usize]) -> Vec<String> {
        let mut names: Vec<String> = model.rate_names().iter().map(|s| s.to_string()).collect();
        names.extend(model.init_names());
        if observed.len() == 1 {
            names.push("p".into());
            names.push("tau".into());
        } else {
            for &c in observed {
                names.push(format!("p_{}", model.labels()[c]));
            }
            for &c in observed {
                names.push(format!("tau_{}", model.labels()[c]));
            }
        }
        names
    }

    /// Flat vector in [`ThetaFull::names`] order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.eta.zeta.clone();
        v.extend(&self.eta.x0);
        v.extend(&self.p);
        v.extend(&self.tau);
        v
    }

    pub fn from_vec(model: &CompartmentalModel, q: usize, v: &[f64]) -> Result<Self> {
        let r = model.rate_names().len();
        let d = model.dim();
        if v.len() != r + d + 2 * q {
            return Err(Error::Invalid(format!(
                "parameter vector has length {}, expected {}",
                v.len(),
                r + d + 2 * q
            )));
        }
        Ok(ThetaFull {
            eta: EpidemicParams {
                zeta: v[..r].to_vec(),
                x0: v[r..r + d].to_vec(),
            },
            p: v[r + d..r + d + q].to_vec(),
            tau: v[r + d + q..].to_vec(),
        })
    }

    pub fn to_named(&self, model: &CompartmentalModel, observed: &[usize]) -> BTreeMap<String, f64> {
        Self::names(model, observed)
            .into_iter()
            .zip(self.to_vec())
            .collect()
    }

    /// Builds a parameter from named values.
    ///
    /// Missing `s0` is completed as `1 - (other initial proportions)`;
    /// missing `tau` defaults to 0 and missing `p` to 1.
    pub fn from_named(
        model: &CompartmentalModel,
        observed: &[usize],
        values: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        let names = Self::names(model, observed);
        if let Some(unknown) = values.keys().find(|k| !names.contains(k)) {
            return Err(Error::Invalid(format!(
                "unknown parameter `{unknown}` (expected one of {names:?})"
            )));
        }
        let r = model.rate_names().len();
        let d = model.dim();
        let q = observed.len();
        let mut v = vec![f64::NAN; names.len()];
        for (slot, name) in v.iter_mut().zip(&names) {
            if let Some(val) = values.get(name) {
                *slot = *val;
            }
        }
        if v[r].is_nan() {
            let rest: f64 = v[r + 1..r + d].iter().sum();
            v[r] = 1.0 - rest;
        }
        for slot in &mut v[r + d..r + d + q] {
            if slot.is_nan() {
                *slot = 1.0;
            }
        }
        for slot in &mut v[r + d + q..] {
            if slot.is_nan() {
                *slot = 0.0;
            }
        }
        if let Some((name, _)) = names.iter().zip(&v).find(|(_, x)| x.is_nan()) {
            return Err(Error::Invalid(format!("missing parameter `{name}`")));
        }
        let theta = Self::from_vec(model, q, &v)?;
        theta.validate(model)?;
        Ok(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const SIR_ZETA: [f64; 2] = [1.0, 1.0 / 3.0];

    #[test]
    fn sir_drift_reference_point() {
        let m = sir_model();
        let b = m.drift(&SIR_ZETA, &[0.99, 0.01]).unwrap();
        assert_abs_diff_eq!(b[0], -0.0099, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1], 0.0099 - 0.01 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1], 0.0065667, epsilon = 1e-7);
    }

    #[test]
    fn no_infected_means_no_motion() {
        let m = sir_model();
        let x = [0.7, 0.0];
        assert_eq!(m.drift(&SIR_ZETA, &x).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(m.diffusion_matrix(&SIR_ZETA, &x).unwrap().iter().all(|v| *v == 0.0));
        assert!(m.diffusion_factor(&SIR_ZETA, &x).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn seir_drift_matches_jump_sum() {
        let m = seir_model();
        let zeta = [1.2, 0.4, 0.5];
        let x = [0.9, 0.05, 0.05];
        // S->E: 1.2*0.9*0.05 = 0.054; E->I: 0.5*0.05 = 0.025; I->R: 0.4*0.05 = 0.02
        let expected = [-0.054, 0.054 - 0.025, 0.025 - 0.02];
        let b = m.drift(&zeta, &x).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(b[i], expected[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn sir_diffusion_reference_point() {
        let m = sir_model();
        let s = m.diffusion_matrix(&SIR_ZETA, &[0.99, 0.01]).unwrap();
        assert_abs_diff_eq!(s[(0, 0)], 0.0099, epsilon = 1e-15);
        assert_abs_diff_eq!(s[(0, 1)], -0.0099, epsilon = 1e-15);
        assert_abs_diff_eq!(s[(1, 0)], -0.0099, epsilon = 1e-15);
        assert_abs_diff_eq!(s[(1, 1)], 0.0099 + 0.01 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn sir_factor_closed_form() {
        let m = sir_model();
        let f = m.diffusion_factor(&SIR_ZETA, &[0.99, 0.01]).unwrap();
        assert_abs_diff_eq!(f[(0, 0)], 0.0099f64.sqrt(), epsilon = 1e-14);
        assert_eq!(f[(0, 1)], 0.0);
        assert_abs_diff_eq!(f[(1, 0)], -0.0099f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(f[(1, 1)], (0.01f64 / 3.0).sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn sir_jacobian_reference_points() {
        let m = sir_model();
        let j = m.drift_jacobian(&SIR_ZETA, &[0.99, 0.01]).unwrap();
        let expected = [[-0.01, -0.99], [0.01, 0.99 - 1.0 / 3.0]];
        for r in 0..2 {
            for c in 0..2 {
                assert_abs_diff_eq!(j[(r, c)], expected[r][c], epsilon = 1e-15);
            }
        }
        let j0 = m.drift_jacobian(&SIR_ZETA, &[0.0, 0.0]).unwrap();
        assert_eq!(j0[(0, 0)], 0.0);
        assert_eq!(j0[(0, 1)], 0.0);
        assert_eq!(j0[(1, 0)], 0.0);
        assert_abs_diff_eq!(j0[(1, 1)], -1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn model_shapes() {
        assert_eq!(sir_model().dim(), 2);
        assert_eq!(sir_model().jumps().len(), 2);
        assert_eq!(seir_model().dim(), 3);
        assert_eq!(seir_model().jumps().len(), 3);
        assert_eq!("SEIR".parse::<ModelKind>().unwrap(), ModelKind::Seir);
        assert!("sis".parse::<ModelKind>().is_err());
    }

    #[test]
    fn outside_simplex_is_rejected() {
        let m = sir_model();
        assert!(matches!(m.drift(&SIR_ZETA, &[0.8, 0.3]), Err(Error::Domain(_))));
        assert!(matches!(m.drift(&SIR_ZETA, &[-1e-6, 0.3]), Err(Error::Domain(_))));
        // round-off overshoot within tolerance is fine
        assert!(m.drift(&SIR_ZETA, &[0.5 + 5e-10, 0.5]).is_ok());
    }

    #[test]
    fn indefinite_matrix_has_no_factor() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(semidefinite_cholesky(&a), Err(Error::Numeric(_))));
    }

    #[test]
    fn named_parameters_complete_s0() {
        let m = sir_model();
        let mut named = BTreeMap::new();
        named.insert("lambda".to_string(), 1.0);
        named.insert("gamma".to_string(), 0.5);
        named.insert("i0".to_string(), 0.01);
        named.insert("p".to_string(), 0.8);
        let theta = ThetaFull::from_named(&m, &[1], &named).unwrap();
        assert_abs_diff_eq!(theta.eta.x0[0], 0.99, epsilon = 1e-15);
        assert_eq!(theta.tau, vec![0.0]);
        named.insert("beta".to_string(), 1.0);
        assert!(ThetaFull::from_named(&m, &[1], &named).is_err());
    }
}
