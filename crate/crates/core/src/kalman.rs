//! Kalman filtering on a [`DiscreteSystem`] and the approximate log-likelihood.
//!
//! Two recursions are provided. [`filter`] alternates explicit prediction
//! and conditioning steps; [`filter_innovation_form`] propagates only the
//! one-step predictions through the innovation, its covariance and the
//! gain. They are algebraically identical and the tests hold them to each
//! other. The likelihood uses the innovation form.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian_approx::DiscreteSystem;
use crate::linalg::{condition_number, symmetrize};
use crate::simulate::ObservationSeries;

/// Largest tolerated condition number of an innovation covariance.
pub const MAX_CONDITION: f64 = 1e14;

/// Log-likelihood reported when the recursion breaks down.
pub const DEGENERATE_LOGLIK: f64 = -1e12;

/// Filter moments at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub k: usize,
    /// Predicted mean and covariance of `X_k` given `y_0..y_{k-1}`.
    pub x_hat: DVector<f64>,
    pub xi_hat: DMatrix<f64>,
    /// Updated mean and covariance of `X_k` given `y_0..y_k`.
    pub x_bar: DVector<f64>,
    pub t_bar: DMatrix<f64>,
    /// Predictive moments of `Y_k`.
    pub m_hat: DVector<f64>,
    pub omega_hat: DMatrix<f64>,
}

/// One step of the innovation-form recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationStep {
    pub k: usize,
    pub x_hat: DVector<f64>,
    pub xi_hat: DMatrix<f64>,
    pub m_hat: DVector<f64>,
    /// Innovation covariance `Gamma_k`, equal to the predictive `Omega_k`.
    pub gamma: DMatrix<f64>,
    pub innovation: DVector<f64>,
    /// Gain `H_k` feeding `epsilon_k` into `X_hat_{k+1}`; `None` at the last step.
    pub gain: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LikelihoodStatus {
    Ok,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogLikResult {
    /// `-1/2 sum_{k>=1} [log|Omega_k| + eps_k^T Omega_k^{-1} eps_k]`, constants dropped.
    pub loglik: f64,
    pub per_step: Vec<InnovationStep>,
    pub status: LikelihoodStatus,
}

/// Cholesky factor of an innovation covariance, rejecting near-singular ones.
fn factor(s: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite innovation covariance".into()));
    }
    let cond = if s.nrows() == 1 {
        if s[(0, 0)] > 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        condition_number(s)
    };
    if cond > MAX_CONDITION {
        return Err(Error::Singular(format!("condition number {cond:e}")));
    }
    s.clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("innovation covariance is not positive definite".into()))
}

/// Posterior of `X ~ N(xi, T)` given `Y = y`, where `Y | X ~ N(B X, Q)`.
///
/// `Q` may be singular (even zero) as long as `B T B^T + Q` is invertible.
pub fn gaussian_condition(
    xi: &DVector<f64>,
    t: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let bt = b * t;
    let mut s = &bt * b.transpose() + q;
    symmetrize(&mut s);
    let chol = factor(&s)?;
    let resid = y - b * xi;
    let xi_bar = xi + bt.transpose() * chol.solve(&resid);
    let mut t_bar = t - bt.transpose() * chol.solve(&bt);
    symmetrize(&mut t_bar);
    Ok((xi_bar, t_bar))
}

fn observation(series: &ObservationSeries, k: usize) -> DVector<f64> {
    DVector::from_column_slice(&series.values[k])
}

fn check_alignment(sys: &DiscreteSystem, series: &ObservationSeries) -> Result<()> {
    sys.validate()?;
    if series.times.len() != sys.times.len() || series.q() != sys.obs_dim() {
        return Err(Error::Invalid(format!(
            "series ({} points, q={}) does not match system ({} points, q={})",
            series.times.len(),
            series.q(),
            sys.times.len(),
            sys.obs_dim()
        )));
    }
    let misaligned = series
        .times
        .iter()
        .zip(&sys.times)
        .any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0));
    if misaligned {
        return Err(Error::Invalid("series and system times differ".into()));
    }
    Ok(())
}

/// Prediction, marginal and update at step `k`; `prev` is the state at `k - 1`.
pub fn filter_step(
    prev: Option<&FilterState>,
    sys: &DiscreteSystem,
    k: usize,
    y: &DVector<f64>,
) -> Result<FilterState> {
    let (x_hat, mut xi_hat) = match (k, prev) {
        (0, _) => (sys.xi0.clone(), sys.t0.clone()),
        (_, Some(p)) => {
            let a = &sys.a[k - 1];
            (&sys.f[k - 1] + a * &p.x_bar, a * &p.t_bar * a.transpose() + &sys.t[k - 1])
        }
        (_, None) => return Err(Error::Invalid(format!("step {k} needs the previous state"))),
    };
    symmetrize(&mut xi_hat);
    let b = &sys.b;
    let m_hat = b * &x_hat;
    let mut omega_hat = b * &xi_hat * b.transpose() + &sys.q[k];
    symmetrize(&mut omega_hat);
    let (x_bar, t_bar) = gaussian_condition(&x_hat, &xi_hat, b, &sys.q[k], y)?;
    Ok(FilterState {
        k,
        x_hat,
        xi_hat,
        x_bar,
        t_bar,
        m_hat,
        omega_hat,
    })
}

/// Predict/update recursion over the whole series.
pub fn filter(sys: &DiscreteSystem, series: &ObservationSeries) -> Result<Vec<FilterState>> {
    check_alignment(sys, series)?;
    let mut states: Vec<FilterState> = Vec::with_capacity(series.times.len());
    for k in 0..series.times.len() {
        let state = filter_step(states.last(), sys, k, &observation(series, k))?;
        states.push(state);
    }
    Ok(states)
}

/// Innovation-form recursion over the whole series.
pub fn filter_innovation_form(sys: &DiscreteSystem, series: &ObservationSeries) -> Result<Vec<InnovationStep>> {
    check_alignment(sys, series)?;
    let b = &sys.b;
    let n = sys.n_steps();
    let mut x_hat = sys.xi0.clone();
    let mut xi_hat = sys.t0.clone();
    let mut steps = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let m_hat = b * &x_hat;
        let innovation = observation(series, k) - &m_hat;
        let mut gamma = b * &xi_hat * b.transpose() + &sys.q[k];
        symmetrize(&mut gamma);
        let chol = factor(&gamma)?;
        let mut next = None;
        let gain = if k < n {
            let a = &sys.a[k];
            // H = A Xi B^T Gamma^{-1}, computed as (Gamma^{-1} B Xi A^T)^T
            let gain = chol.solve(&(b * &xi_hat * a.transpose())).transpose();
            let next_x = &sys.f[k] + a * &x_hat + &gain * &innovation;
            let mut next_xi = (a - &gain * b) * &xi_hat * a.transpose() + &sys.t[k];
            symmetrize(&mut next_xi);
            next = Some((next_x, next_xi));
            Some(gain)
        } else {
            None
        };
        steps.push(InnovationStep {
            k,
            x_hat: x_hat.clone(),
            xi_hat: xi_hat.clone(),
            m_hat,
            gamma,
            innovation,
            gain,
        });
        if let Some((nx, nxi)) = next {
            x_hat = nx;
            xi_hat = nxi;
        }
    }
    Ok(steps)
}

/// Gaussian log-density terms of `y_1..y_n` given their predecessors.
///
/// `y_0` only conditions the recursion; its own density is not included.
pub fn log_likelihood(sys: &DiscreteSystem, series: &ObservationSeries) -> LogLikResult {
    let degenerate = |per_step| LogLikResult {
        loglik: DEGENERATE_LOGLIK,
        per_step,
        status: LikelihoodStatus::Degenerate,
    };
    if series.n_steps() < 1 {
        return degenerate(Vec::new());
    }
    let steps = match filter_innovation_form(sys, series) {
        Ok(s) => s,
        Err(_) => return degenerate(Vec::new()),
    };
    let mut total = 0.0;
    for step in &steps[1..] {
        let Ok(chol) = factor(&step.gamma) else {
            return degenerate(steps);
        };
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let quad = step.innovation.dot(&chol.solve(&step.innovation));
        total += log_det + quad;
    }
    let loglik = -0.5 * total;
    if loglik.is_finite() {
        LogLikResult {
            loglik,
            per_step: steps,
            status: LikelihoodStatus::Ok,
        }
    } else {
        degenerate(steps)
    }
}

/// Per-step diagnostics as CSV: `k,t,innovation..,gamma..,x_hat..`.
pub fn steps_to_csv(sys: &DiscreteSystem, steps: &[InnovationStep]) -> String {
    let q = sys.obs_dim();
    let d = sys.dim();
    let mut out = String::from("k,t");
    for i in 0..q {
        out.push_str(&format!(",eps{}", i + 1));
    }
    for i in 0..q {
        for j in 0..q {
            out.push_str(&format!(",gamma{}{}", i + 1, j + 1));
        }
    }
    for i in 0..d {
        out.push_str(&format!(",xhat{}", i + 1));
    }
    out.push('\n');
    for s in steps {
        out.push_str(&format!("{},{}", s.k, sys.times[s.k]));
        for v in s.innovation.iter().chain(s.gamma.transpose().iter()).chain(s.x_hat.iter()) {
            out.push_str(&format!(",{v:e}"));
        }
        out.push('\n');
    }
    out
}
