//! Discrete-time Gaussian state-space approximation of a jump epidemic.
//!
//! Between consecutive observation times the fluctuations around the ODE
//! solution follow a linear SDE, which integrates exactly to
//!
//! ```text
//! X_k = F_k + A_{k-1} X_{k-1} + U_k,   U_k ~ N(0, T_k)
//! Y_k = B(theta) X_k + V_k,            V_k ~ N(0, Q_k)
//! ```
//!
//! with `A_{k-1} = Phi(t_k, t_{k-1})` the resolvent of the linearized
//! drift, `F_k = x(t_k) - A_{k-1} x(t_{k-1})`, and
//! `T_k = N^{-1} int Phi(t_k, s) Sigma(x(s)) Phi(t_k, s)^T ds`.
//!
//! The resolvent is integrated as a variational equation alongside the ODE
//! (RK4), or, optionally, as the first-order product
//! `prod_j (I + (a_{j+1} - a_j) grad b(x(a_j)))` on the same sub-grid.
//! `T_k` uses composite Simpson on the ODE nodes of the interval.

mod flat;
pub mod ode;

use flat::{Kernel, Matrix, Vector};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{floor_psd, symmetrize};
use crate::model::{CompartmentalModel, ThetaFull};
pub use ode::{panels_for, solve_ode, solve_ode_on, OdeSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolventMethod {
    /// RK4 on `dPhi/dt = grad b(x(t)) Phi`.
    #[default]
    Variational,
    /// Ordered product of first-order factors on the sub-grid.
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approximation {
    /// Resolvent and quadrature on a refined grid.
    #[default]
    Exact,
    /// First-order expansion in the sampling interval.
    SmallDelta,
}

/// Numerical settings for building a [`DiscreteSystem`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemOptions {
    /// Nominal ODE step; each observation interval uses panels of at most `h / 2`.
    pub h: f64,
    pub resolvent: ResolventMethod,
    pub approximation: Approximation,
    /// Lower bound on the diagonal of every `Q_k`.
    pub q_floor: f64,
    /// Initial filter covariance is `init_cov * I`.
    pub init_cov: f64,
}

impl Default for SystemOptions {
    fn default() -> Self {
        SystemOptions {
            h: 0.01,
            resolvent: ResolventMethod::Variational,
            approximation: Approximation::Exact,
            q_floor: 1e-12,
            init_cov: 1e-6,
        }
    }
}

/// Coefficients of the linear Gaussian state-space system.
///
/// Transition vectors are indexed from 0 for the step `k = 1`: `f[k-1]`,
/// `a[k-1]`, `t[k-1]` map `X_{k-1}` to `X_k`. Observation covariances
/// `q[k]` cover `k = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSystem {
    pub times: Vec<f64>,
    /// ODE solution at each observation time.
    pub x: Vec<DVector<f64>>,
    pub f: Vec<DVector<f64>>,
    pub a: Vec<DMatrix<f64>>,
    pub t: Vec<DMatrix<f64>>,
    /// `B(theta) = P(theta) B`, `q x d`.
    pub b: DMatrix<f64>,
    pub q: Vec<DMatrix<f64>>,
    pub xi0: DVector<f64>,
    pub t0: DMatrix<f64>,
}

impl DiscreteSystem {
    pub fn dim(&self) -> usize {
        self.xi0.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.b.nrows()
    }

    /// Number of transitions `n`.
    pub fn n_steps(&self) -> usize {
        self.f.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, q, n) = (self.dim(), self.obs_dim(), self.n_steps());
        let ok = self.a.len() == n
            && self.t.len() == n
            && self.q.len() == n + 1
            && self.f.iter().all(|f| f.len() == d)
            && self.a.iter().all(|a| a.shape() == (d, d))
            && self.t.iter().all(|t| t.shape() == (d, d))
            && self.q.iter().all(|m| m.shape() == (q, q))
            && self.b.ncols() == d
            && self.t0.shape() == (d, d);
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid("inconsistent discrete system dimensions".into()))
        }
    }

    /// JSON dump for inspection.
    pub fn to_json(&self) -> serde_json::Value {
        fn mat(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().copied().collect()).collect()
        }
        fn vec(v: &DVector<f64>) -> Vec<f64> {
            v.iter().copied().collect()
        }
        serde_json::json!({
            "times": self.times,
            "x": self.x.iter().map(vec).collect::<Vec<_>>(),
            "F": self.f.iter().map(vec).collect::<Vec<_>>(),
            "A": self.a.iter().map(mat).collect::<Vec<_>>(),
            "T": self.t.iter().map(mat).collect::<Vec<_>>(),
            "B": mat(&self.b),
            "Q": self.q.iter().map(mat).collect::<Vec<_>>(),
            "xi0": vec(&self.xi0),
            "T0": mat(&self.t0),
        })
    }
}

/// State transition coefficients `(F_k, A_{k-1}, T_k)` for `k = 1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transitions {
    pub f: Vec<DVector<f64>>,
    pub a: Vec<DMatrix<f64>>,
    pub t: Vec<DMatrix<f64>>,
}

/// ODE states and resolvents `Phi(s_j, s_0)` at the nodes of one interval.
struct Pass<const D: usize> {
    h: f64,
    xs: Vec<Vector<D>>,
    phis: Vec<Matrix<D>>,
}

#[inline]
fn shifted<const D: usize>(x: &Vector<D>, step: f64, k: &Vector<D>) -> Vector<D> {
    std::array::from_fn(|c| x[c] + step * k[c])
}

#[inline]
fn shifted_matrix<const D: usize>(p: &Matrix<D>, step: f64, k: &Matrix<D>) -> Matrix<D> {
    std::array::from_fn(|i| std::array::from_fn(|j| p[i][j] + step * k[i][j]))
}

fn propagate<const D: usize>(
    kernel: &Kernel<D>,
    x_start: &Vector<D>,
    t_start: f64,
    len: f64,
    panels: usize,
    method: ResolventMethod,
) -> Result<Pass<D>> {
    let h = len / panels as f64;
    let mut pass = Pass {
        h,
        xs: Vec::with_capacity(panels + 1),
        phis: Vec::with_capacity(panels + 1),
    };
    let mut x = *x_start;
    let mut phi = flat::identity::<D>();
    pass.xs.push(x);
    pass.phis.push(phi);
    let stage = |x: &Vector<D>, phi: &Matrix<D>| (kernel.drift(x), flat::matmul(&kernel.jacobian(x), phi));
    for step in 1..=panels {
        match method {
            ResolventMethod::Variational => {
                let (k1x, k1p) = stage(&x, &phi);
                let (k2x, k2p) = stage(&shifted(&x, 0.5 * h, &k1x), &shifted_matrix(&phi, 0.5 * h, &k1p));
                let (k3x, k3p) = stage(&shifted(&x, 0.5 * h, &k2x), &shifted_matrix(&phi, 0.5 * h, &k2p));
                let (k4x, k4p) = stage(&shifted(&x, h, &k3x), &shifted_matrix(&phi, h, &k3p));
                for c in 0..D {
                    x[c] += h / 6.0 * (k1x[c] + 2.0 * k2x[c] + 2.0 * k3x[c] + k4x[c]);
                }
                for i in 0..D {
                    for j in 0..D {
                        phi[i][j] += h / 6.0 * (k1p[i][j] + 2.0 * k2p[i][j] + 2.0 * k3p[i][j] + k4p[i][j]);
                    }
                }
            }
            ResolventMethod::Product => {
                let mut factor = kernel.jacobian(&x);
                for (i, row) in factor.iter_mut().enumerate() {
                    row.iter_mut().for_each(|v| *v *= h);
                    row[i] += 1.0;
                }
                phi = flat::matmul(&factor, &phi);
                let k1 = kernel.drift(&x);
                let k2 = kernel.drift(&shifted(&x, 0.5 * h, &k1));
                let k3 = kernel.drift(&shifted(&x, 0.5 * h, &k2));
                let k4 = kernel.drift(&shifted(&x, h, &k3));
                for c in 0..D {
                    x[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
                }
            }
        }
        ode::check_box(t_start + step as f64 * h, &x)?;
        pass.xs.push(x);
        pass.phis.push(phi);
    }
    Ok(pass)
}

/// `N^{-1} int Phi(t_end, s) Sigma(x(s)) Phi(t_end, s)^T ds` by composite Simpson on the pass nodes.
fn noise_covariance<const D: usize>(kernel: &Kernel<D>, pass: &Pass<D>, n_pop: f64) -> Result<DMatrix<f64>> {
    let panels = pass.xs.len() - 1;
    debug_assert!(panels.is_multiple_of(2));
    let a = &pass.phis[panels];
    let mut acc = [[0.0; D]; D];
    for (j, (x, phi)) in pass.xs.iter().zip(&pass.phis).enumerate() {
        let w = if j == 0 || j == panels {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let inv = flat::inverse(phi).ok_or_else(|| Error::Singular("resolvent is not invertible".into()))?;
        let term = flat::sandwich(&flat::matmul(a, &inv), &kernel.diffusion(x));
        for i in 0..D {
            for k in 0..D {
                acc[i][k] += w * term[i][k];
            }
        }
    }
    let t = DMatrix::from_row_slice(D, D, &flat::to_row_major(&acc)) * (pass.h / 3.0 / n_pop);
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite noise covariance".into()));
    }
    Ok(floor_psd(&t))
}

/// End state, resolvent and (when `n_pop` is given) noise covariance of one interval.
struct Interval {
    x_end: Vec<f64>,
    a: DMatrix<f64>,
    t: Option<DMatrix<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn interval_fixed<const D: usize>(
    model: &CompartmentalModel,
    zeta: &[f64],
    x_start: &[f64],
    t_start: f64,
    len: f64,
    panels: usize,
    method: ResolventMethod,
    n_pop: Option<f64>,
) -> Result<Interval> {
    let kernel = Kernel::<D>::new(model, zeta)
        .ok_or_else(|| Error::Invalid("intensities must be mass-action with at most two factors".into()))?;
    let x0: Vector<D> = x_start
        .try_into()
        .map_err(|_| Error::Invalid(format!("state must have {D} coordinates")))?;
    let pass = propagate(&kernel, &x0, t_start, len, panels, method)?;
    let t = n_pop.map(|n| noise_covariance(&kernel, &pass, n)).transpose()?;
    Ok(Interval {
        x_end: pass.xs[panels].to_vec(),
        a: DMatrix::from_row_slice(D, D, &flat::to_row_major(&pass.phis[panels])),
        t,
    })
}

#[allow(clippy::too_many_arguments)]
fn interval(
    model: &CompartmentalModel,
    zeta: &[f64],
    x_start: &[f64],
    t_start: f64,
    len: f64,
    panels: usize,
    method: ResolventMethod,
    n_pop: Option<f64>,
) -> Result<Interval> {
    match model.dim() {
        2 => interval_fixed::<2>(model, zeta, x_start, t_start, len, panels, method, n_pop),
        3 => interval_fixed::<3>(model, zeta, x_start, t_start, len, panels, method, n_pop),
        d => Err(Error::Invalid(format!("unsupported model dimension {d}"))),
    }
}

fn panels_between(ode: &OdeSolution, s: f64, t: f64) -> usize {
    match (ode.node_index(s), ode.node_index(t)) {
        (Some(i), Some(j)) if j > i && (j - i) % 2 == 0 => j - i,
        _ => panels_for(t - s, 2.0 * ode.step.max(f64::MIN_POSITIVE)),
    }
}

/// Resolvent `Phi(t, s)` of the linearized drift along the ODE solution, on `substeps` panels.
pub fn resolvent(
    model: &CompartmentalModel,
    zeta: &[f64],
    ode: &OdeSolution,
    s: f64,
    t: f64,
    substeps: usize,
    method: ResolventMethod,
) -> Result<DMatrix<f64>> {
    if t < s {
        return Err(Error::Invalid(format!("resolvent needs s <= t (s={s}, t={t})")));
    }
    let d = model.dim();
    if t == s {
        return Ok(DMatrix::identity(d, d));
    }
    let x_s = ode.at(s)?;
    Ok(interval(model, zeta, &x_s, s, t - s, substeps.max(1), method, None)?.a)
}

fn check_times(ode: &OdeSolution, times: &[f64]) -> Result<()> {
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("times must be non-empty and strictly increasing".into()));
    }
    if times[0] < 0.0 || *times.last().unwrap() > ode.end() * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::Invalid("times fall outside the ODE grid".into()));
    }
    Ok(())
}

/// Exact-route transitions `(F_k, A_{k-1}, T_k)` for consecutive `times`.
pub fn build_transitions(
    model: &CompartmentalModel,
    zeta: &[f64],
    ode: &OdeSolution,
    times: &[f64],
    n_pop: f64,
    method: ResolventMethod,
) -> Result<Transitions> {
    check_times(ode, times)?;
    if !(n_pop >= 1.0) {
        return Err(Error::Invalid(format!("population size must be >= 1, got {n_pop}")));
    }
    let n = times.len() - 1;
    let mut out = Transitions {
        f: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        t: Vec::with_capacity(n),
    };
    let mut x_prev = ode.at(times[0])?;
    for w in times.windows(2) {
        let panels = panels_between(ode, w[0], w[1]);
        let step = interval(model, zeta, &x_prev, w[0], w[1] - w[0], panels, method, Some(n_pop))?;
        let x_next = ode.at(w[1])?;
        let f = DVector::from_column_slice(&x_next) - &step.a * DVector::from_column_slice(&x_prev);
        out.t.push(step.t.expect("requested"));
        out.f.push(f);
        out.a.push(step.a);
        x_prev = x_next;
    }
    Ok(out)
}

/// Exact-route transitions integrated directly from `x0` at time 0, returning
/// the ODE states at `times` alongside. Matches [`solve_ode_on`] followed by
/// [`build_transitions`] without the separate ODE pass.
fn transitions_from(
    model: &CompartmentalModel,
    zeta: &[f64],
    x0: &[f64],
    times: &[f64],
    n_pop: f64,
    h: f64,
    method: ResolventMethod,
) -> Result<(Vec<DVector<f64>>, Transitions)> {
    if times.is_empty() || times[0] < 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("times must be non-negative and strictly increasing".into()));
    }
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("step must be positive, got {h}")));
    }
    let n = times.len() - 1;
    let mut x_prev = if times[0] > 0.0 {
        solve_ode_on(model, zeta, x0, &times[..1], h)?.at(times[0])?
    } else {
        x0.to_vec()
    };
    let mut xs = Vec::with_capacity(n + 1);
    xs.push(DVector::from_column_slice(&x_prev));
    let mut out = Transitions {
        f: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        t: Vec::with_capacity(n),
    };
    for w in times.windows(2) {
        let len = w[1] - w[0];
        let step = interval(model, zeta, &x_prev, w[0], len, panels_for(len, h), method, Some(n_pop))?;
        let x_next = step.x_end;
        let f = DVector::from_column_slice(&x_next) - &step.a * DVector::from_column_slice(&x_prev);
        out.t.push(step.t.expect("requested"));
        out.f.push(f);
        out.a.push(step.a);
        xs.push(DVector::from_column_slice(&x_next));
        x_prev = x_next;
    }
    Ok((xs, out))
}

type FaPair = (Vec<DVector<f64>>, Vec<DMatrix<f64>>);

/// `F_k` and `A_{k-1}` for consecutive `times`.
pub fn build_fa(
    model: &CompartmentalModel,
    zeta: &[f64],
    ode: &OdeSolution,
    times: &[f64],
    method: ResolventMethod,
) -> Result<FaPair> {
    let tr = build_transitions(model, zeta, ode, times, 1.0, method)?;
    Ok((tr.f, tr.a))
}

/// Noise covariances `T_k` for consecutive `times`.
pub fn build_t(
    model: &CompartmentalModel,
    zeta: &[f64],
    ode: &OdeSolution,
    times: &[f64],
    n_pop: f64,
    method: ResolventMethod,
) -> Result<Vec<DMatrix<f64>>> {
    Ok(build_transitions(model, zeta, ode, times, n_pop, method)?.t)
}

/// One first-order step of length `delta` from ODE state `x`.
pub fn small_delta_step(
    model: &CompartmentalModel,
    zeta: &[f64],
    x: &[f64],
    delta: f64,
    n_pop: f64,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let d = model.dim();
    let b = model.drift(zeta, x)?;
    let jac = model.drift_jacobian(zeta, x)?;
    let sigma = model.diffusion_matrix(zeta, x)?;
    let xv = DVector::from_column_slice(x);
    let f = (b - &jac * xv) * delta;
    let a = DMatrix::identity(d, d) + jac * delta;
    let t = sigma * (delta / n_pop);
    Ok((f, a, t))
}

/// First-order (small sampling interval) transitions.
pub fn build_small_delta(
    model: &CompartmentalModel,
    zeta: &[f64],
    ode: &OdeSolution,
    times: &[f64],
    n_pop: f64,
) -> Result<Transitions> {
    check_times(ode, times)?;
    let n = times.len() - 1;
    let mut out = Transitions {
        f: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        t: Vec::with_capacity(n),
    };
    for w in times.windows(2) {
        let x = ode.at(w[0])?;
        let (f, a, t) = small_delta_step(model, zeta, &x, w[1] - w[0], n_pop)?;
        out.f.push(f);
        out.a.push(a);
        out.t.push(t);
    }
    Ok(out)
}

/// Observation matrices: `B(theta) = diag(p) B` and
/// `Q_k = N^{-1} diag((p_i (1 - p_i) + tau_i^2) (B x(t_k))_i)`, floored at `q_floor`.
pub fn build_obs(
    model: &CompartmentalModel,
    theta: &ThetaFull,
    observed: &[usize],
    xs: &[DVector<f64>],
    n_pop: f64,
    q_floor: f64,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let d = model.dim();
    let q = observed.len();
    if theta.p.len() != q || theta.tau.len() != q {
        return Err(Error::Invalid("reporting parameters do not match the observed coordinates".into()));
    }
    if let Some(&c) = observed.iter().find(|&&c| c >= d) {
        return Err(Error::Invalid(format!("observed coordinate {c} outside model dimension {d}")));
    }
    let mut b = DMatrix::zeros(q, d);
    for (row, &c) in observed.iter().enumerate() {
        b[(row, c)] = theta.p[row];
    }
    let tau2 = theta.tau2();
    let qs = xs
        .iter()
        .map(|x| {
            DMatrix::from_fn(q, q, |i, j| {
                if i != j {
                    return 0.0;
                }
                let p = theta.p[i];
                let v = (p * (1.0 - p) + tau2[i]) * x[observed[i]] / n_pop;
                v.max(q_floor)
            })
        })
        .collect();
    Ok((b, qs))
}

/// Full state-space system at `theta` for observations at `times`.
pub fn build_system(
    model: &CompartmentalModel,
    theta: &ThetaFull,
    observed: &[usize],
    times: &[f64],
    n_pop: f64,
    opts: &SystemOptions,
) -> Result<DiscreteSystem> {
    theta.validate(model)?;
    if !(n_pop >= 1.0) {
        return Err(Error::Invalid(format!("population size must be >= 1, got {n_pop}")));
    }
    let zeta = &theta.eta.zeta;
    let (xs, tr) = match opts.approximation {
        Approximation::Exact => transitions_from(model, zeta, &theta.eta.x0, times, n_pop, opts.h, opts.resolvent)?,
        Approximation::SmallDelta => {
            let ode = solve_ode_on(model, zeta, &theta.eta.x0, times, opts.h)?;
            let xs = times
                .iter()
                .map(|&t| ode.at(t).map(DVector::from_vec))
                .collect::<Result<Vec<_>>>()?;
            (xs, build_small_delta(model, zeta, &ode, times, n_pop)?)
        }
    };
    let (b, q) = build_obs(model, theta, observed, &xs, n_pop, opts.q_floor)?;
    let d = model.dim();
    let mut t0 = DMatrix::identity(d, d) * opts.init_cov;
    symmetrize(&mut t0);
    Ok(DiscreteSystem {
        times: times.to_vec(),
        xi0: xs[0].clone(),
        x: xs,
        f: tr.f,
        a: tr.a,
        t: tr.t,
        b,
        q,
        t0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, min_eigenvalue};
    use crate::model::{sir_model, EpidemicParams};

    const ZETA: [f64; 2] = [1.0, 1.0 / 3.0];

    fn grid(delta: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|k| k as f64 * delta).collect()
    }

    #[test]
    fn resolvent_at_equal_times_is_identity() {
        let m = sir_model();
        let ode = solve_ode(&m, &ZETA, &[0.99, 0.01], 10.0, 0.01).unwrap();
        let phi = resolvent(&m, &ZETA, &ode, 3.0, 3.0, 8, ResolventMethod::Variational).unwrap();
        assert_eq!(phi, DMatrix::identity(2, 2));
    }

    #[test]
    fn semigroup_property() {
        let m = sir_model();
        let ode = solve_ode(&m, &ZETA, &[0.99, 0.01], 20.0, 0.01).unwrap();
        for &(s, u, t) in &[(0.0, 1.3, 2.0), (4.1, 6.0, 9.7), (10.0, 10.5, 15.25)] {
            let steps = |a: f64, b: f64| panels_for(b - a, 0.01);
            let v = ResolventMethod::Variational;
            let full = resolvent(&m, &ZETA, &ode, s, t, steps(s, t), v).unwrap();
            let left = resolvent(&m, &ZETA, &ode, u, t, steps(u, t), v).unwrap();
            let right = resolvent(&m, &ZETA, &ode, s, u, steps(s, u), v).unwrap();
            assert!(max_abs_diff(&full, &(left * right)) < 1e-6);
        }
    }

    #[test]
    fn frozen_dynamics_match_matrix_exponential() {
        // i0 = 0: the Jacobian is constant [[0, -l s0], [0, l s0 - g]]
        let m = sir_model();
        let s0 = 0.9;
        let ode = solve_ode(&m, &ZETA, &[s0, 0.0], 5.0, 0.01).unwrap();
        let delta = 0.7;
        let (f, a) = build_fa(&m, &ZETA, &ode, &[1.0, 1.0 + delta], ResolventMethod::Variational).unwrap();
        // exp of upper-triangular [[0, c], [0, r]] with c = -l s0, r = l s0 - g
        let c = -ZETA[0] * s0;
        let r = ZETA[0] * s0 - ZETA[1];
        let er = (r * delta).exp();
        let exact = DMatrix::from_row_slice(2, 2, &[1.0, c * (er - 1.0) / r, 0.0, er]);
        assert!(max_abs_diff(&a[0], &exact) < 1e-9);
        let x0 = DVector::from_column_slice(&[s0, 0.0]);
        let f_exact = (DMatrix::identity(2, 2) - &exact) * &x0;
        assert!((&f[0] - f_exact).amax() < 1e-9);
    }

    #[test]
    fn f_and_a_reproduce_the_ode() {
        let m = sir_model();
        let times = grid(0.4, 60);
        let ode = solve_ode_on(&m, &ZETA, &[0.99, 0.01], &times, 0.01).unwrap();
        let (f, a) = build_fa(&m, &ZETA, &ode, &times, ResolventMethod::Variational).unwrap();
        for k in 1..times.len() {
            let prev = DVector::from_vec(ode.at(times[k - 1]).unwrap());
            let next = DVector::from_vec(ode.at(times[k]).unwrap());
            assert!((&f[k - 1] + &a[k - 1] * prev - next).amax() < 1e-6);
        }
    }

    #[test]
    fn zero_diffusion_gives_zero_noise() {
        let m = sir_model();
        let times = grid(0.5, 10);
        let ode = solve_ode_on(&m, &ZETA, &[0.95, 0.0], &times, 0.01).unwrap();
        let t = build_t(&m, &ZETA, &ode, &times, 1000.0, ResolventMethod::Variational).unwrap();
        assert!(t.iter().all(|tk| tk.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn noise_scales_with_population() {
        let m = sir_model();
        let times = grid(0.5, 40);
        let ode = solve_ode_on(&m, &ZETA, &[0.99, 0.01], &times, 0.01).unwrap();
        let t1 = build_t(&m, &ZETA, &ode, &times, 1000.0, ResolventMethod::Variational).unwrap();
        let t2 = build_t(&m, &ZETA, &ode, &times, 2000.0, ResolventMethod::Variational).unwrap();
        for (a, b) in t1.iter().zip(&t2) {
            assert!(max_abs_diff(&(a * 0.5), b) <= 1e-15 * a.amax());
            assert!(min_eigenvalue(a) >= -1e-18);
            assert_eq!(a, &a.transpose());
        }
    }

    #[test]
    fn small_delta_degenerate_interval() {
        let m = sir_model();
        let (f, a, t) = small_delta_step(&m, &ZETA, &[0.99, 0.01], 0.0, 100.0).unwrap();
        assert!(f.iter().all(|v| *v == 0.0));
        assert_eq!(a, DMatrix::identity(2, 2));
        assert!(t.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn small_delta_matches_truncated_exponential_when_frozen() {
        let m = sir_model();
        let s0 = 0.6;
        let delta = 0.01;
        let (_, a, _) = small_delta_step(&m, &ZETA, &[s0, 0.0], delta, 100.0).unwrap();
        let c = -ZETA[0] * s0;
        let r = ZETA[0] * s0 - ZETA[1];
        // first-order truncation of exp(delta * J)
        let trunc = DMatrix::from_row_slice(2, 2, &[1.0, c * delta, 0.0, 1.0 + r * delta]);
        assert!(max_abs_diff(&a, &trunc) < 1e-15);
    }

    #[test]
    fn observation_matrices() {
        let m = sir_model();
        let theta = ThetaFull {
            eta: EpidemicParams { zeta: ZETA.to_vec(), x0: vec![0.5, 0.5] },
            p: vec![1.0],
            tau: vec![0.0],
        };
        let xs = vec![DVector::from_column_slice(&[0.5, 0.5])];
        let (b, q) = build_obs(&m, &theta, &[1], &xs, 100.0, 1e-12).unwrap();
        assert_eq!(b.as_slice(), &[0.0, 1.0]);
        assert_eq!(q[0][(0, 0)], 1e-12);

        let theta = ThetaFull { p: vec![0.8], tau: vec![0.5], ..theta };
        let xs = vec![DVector::from_column_slice(&[0.5, 0.1])];
        let (b, q) = build_obs(&m, &theta, &[1], &xs, 1000.0, 1e-12).unwrap();
        assert_eq!(b.as_slice(), &[0.0, 0.8]);
        assert!((q[0][(0, 0)] - 4.1e-5).abs() < 1e-18);
    }

    #[test]
    fn system_dimensions_and_initial_moments() {
        let m = sir_model();
        let theta = ThetaFull {
            eta: EpidemicParams { zeta: ZETA.to_vec(), x0: vec![0.99, 0.01] },
            p: vec![0.8],
            tau: vec![0.0],
        };
        let times = grid(1.0, 30);
        let sys = build_system(&m, &theta, &[1], &times, 1000.0, &SystemOptions::default()).unwrap();
        sys.validate().unwrap();
        assert_eq!(sys.n_steps(), 30);
        assert_eq!(sys.xi0.as_slice(), &[0.99, 0.01]);
        assert_eq!(sys.t0, DMatrix::identity(2, 2) * 1e-6);
        let json = sys.to_json();
        assert_eq!(json["A"].as_array().unwrap().len(), 30);
    }

    #[test]
    fn single_pass_matches_ode_then_transitions() {
        let m = sir_model();
        let times: Vec<f64> = (0..=20).map(|k| 0.7 + 0.37 * k as f64).collect();
        let (xs, tr) =
            transitions_from(&m, &ZETA, &[0.99, 0.01], &times, 500.0, 0.01, ResolventMethod::Variational).unwrap();
        let ode = solve_ode_on(&m, &ZETA, &[0.99, 0.01], &times, 0.01).unwrap();
        let reference = build_transitions(&m, &ZETA, &ode, &times, 500.0, ResolventMethod::Variational).unwrap();
        for (x, &t) in xs.iter().zip(&times) {
            assert!((x - DVector::from_vec(ode.at(t).unwrap())).amax() < 1e-15);
        }
        for k in 0..20 {
            assert!(max_abs_diff(&tr.a[k], &reference.a[k]) < 1e-15);
            assert!(max_abs_diff(&tr.t[k], &reference.t[k]) < 1e-18);
            assert!((&tr.f[k] - &reference.f[k]).amax() < 1e-15);
        }
    }

    #[test]
    fn product_route_is_close_to_variational() {
        let m = sir_model();
        let times = grid(0.25, 40);
        let ode = solve_ode_on(&m, &ZETA, &[0.99, 0.01], &times, 0.001).unwrap();
        let (_, av) = build_fa(&m, &ZETA, &ode, &times, ResolventMethod::Variational).unwrap();
        let (_, ap) = build_fa(&m, &ZETA, &ode, &times, ResolventMethod::Product).unwrap();
        for (v, p) in av.iter().zip(&ap) {
            assert!(max_abs_diff(v, p) < 2e-3);
        }
    }
}
