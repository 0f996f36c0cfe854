//! Fixed-step RK4 for the limiting ODE `dx/dt = b(x)`, with cubic Hermite
//! dense output.

use crate::error::{Error, Result};
use crate::model::CompartmentalModel;

/// Coordinates may leave `[0, 1]` by this much before the solve is aborted.
pub const BLOWUP_TOL: f64 = 1e-6;

/// Solution of the limiting ODE on a node grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    dim: usize,
    /// Node times, strictly increasing, starting at 0.
    pub t: Vec<f64>,
    /// Node states, `dim` entries per node.
    pub x: Vec<f64>,
    /// Drift at each node, for Hermite interpolation.
    pub dx: Vec<f64>,
    /// Largest step used.
    pub step: f64,
    pub zeta: Vec<f64>,
}

impl OdeSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn end(&self) -> f64 {
        *self.t.last().unwrap_or(&0.0)
    }

    /// Index of the node at `t` (relative tolerance 1e-12), if any.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * t.abs().max(1.0);
        let i = self.t.partition_point(|&s| s < t - tol);
        (i < self.t.len() && (self.t[i] - t).abs() <= tol).then_some(i)
    }

    /// Dense output at `t`; exact at nodes, cubic Hermite in between.
    pub fn at(&self, t: f64) -> Result<Vec<f64>> {
        let end = self.end();
        if t < -1e-12 || t > end + 1e-9 * end.max(1.0) {
            return Err(Error::Invalid(format!("t = {t} outside the ODE grid [0, {end}]")));
        }
        if let Some(i) = self.node_index(t) {
            return Ok(self.node(i).to_vec());
        }
        let i = self.t.partition_point(|&s| s <= t).clamp(1, self.t.len() - 1) - 1;
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let u = (t - t0) / h;
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        let d = self.dim;
        Ok((0..d)
            .map(|c| {
                h00 * self.x[i * d + c]
                    + h10 * h * self.dx[i * d + c]
                    + h01 * self.x[(i + 1) * d + c]
                    + h11 * h * self.dx[(i + 1) * d + c]
            })
            .collect())
    }
}

/// One classical RK4 step of size `h` on `dx/dt = b(x)`.
pub(crate) fn rk4_step(model: &CompartmentalModel, zeta: &[f64], x: &mut [f64], h: f64, buf: &mut [Vec<f64>; 5]) {
    let [k1, k2, k3, k4, tmp] = buf;
    let d = x.len();
    model.drift_into(zeta, x, k1);
    for c in 0..d {
        tmp[c] = x[c] + 0.5 * h * k1[c];
    }
    model.drift_into(zeta, tmp, k2);
    for c in 0..d {
        tmp[c] = x[c] + 0.5 * h * k2[c];
    }
    model.drift_into(zeta, tmp, k3);
    for c in 0..d {
        tmp[c] = x[c] + h * k3[c];
    }
    model.drift_into(zeta, tmp, k4);
    for c in 0..d {
        x[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
    }
}

pub(crate) fn check_box(t: f64, x: &[f64]) -> Result<()> {
    if x
        .iter()
        .all(|v| v.is_finite() && *v >= -BLOWUP_TOL && *v <= 1.0 + BLOWUP_TOL)
    {
        Ok(())
    } else {
        Err(Error::BlowUp { t, state: x.to_vec() })
    }
}

/// Number of RK4 panels used on an interval of length `len` with nominal step `h`:
/// even, at least 4, with panel width at most `h / 2`.
pub fn panels_for(len: f64, h: f64) -> usize {
    let h = h.min(len);
    (2 * (len / h - 1e-9).ceil().max(1.0) as usize).max(4)
}

struct Builder<'a> {
    model: &'a CompartmentalModel,
    zeta: &'a [f64],
    sol: OdeSolution,
    state: Vec<f64>,
    buf: [Vec<f64>; 5],
}

impl<'a> Builder<'a> {
    fn new(model: &'a CompartmentalModel, zeta: &'a [f64], x0: &[f64]) -> Result<Self> {
        model.check_simplex(x0)?;
        let d = model.dim();
        let mut dx = vec![0.0; d];
        model.drift_into(zeta, x0, &mut dx);
        Ok(Builder {
            model,
            zeta,
            sol: OdeSolution {
                dim: d,
                t: vec![0.0],
                x: x0.to_vec(),
                dx,
                step: 0.0,
                zeta: zeta.to_vec(),
            },
            state: x0.to_vec(),
            buf: std::array::from_fn(|_| vec![0.0; d]),
        })
    }

    fn advance(&mut self, t_to: f64, panels: usize) -> Result<()> {
        let t_from = self.sol.end();
        let h = (t_to - t_from) / panels as f64;
        self.sol.step = self.sol.step.max(h);
        for j in 1..=panels {
            rk4_step(self.model, self.zeta, &mut self.state, h, &mut self.buf);
            let t = if j == panels { t_to } else { t_from + j as f64 * h };
            check_box(t, &self.state)?;
            self.sol.t.push(t);
            self.sol.x.extend_from_slice(&self.state);
            let mut dx = vec![0.0; self.state.len()];
            self.model.drift_into(self.zeta, &self.state, &mut dx);
            self.sol.dx.extend(dx);
        }
        Ok(())
    }
}

/// Uniform-step RK4 from `x0` at time 0 to `t_end` with step at most `h`.
pub fn solve_ode(
    model: &CompartmentalModel,
    zeta: &[f64],
    x0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<OdeSolution> {
    if !(h > 0.0) || !(t_end >= 0.0) {
        return Err(Error::Invalid(format!("need h > 0 and t_end >= 0 (h={h}, t_end={t_end})")));
    }
    let mut b = Builder::new(model, zeta, x0)?;
    if t_end > 0.0 {
        let steps = (t_end / h - 1e-9).ceil().max(1.0) as usize;
        b.advance(t_end, steps)?;
    }
    Ok(b.sol)
}

/// RK4 on a grid that contains every observation time.
///
/// Each interval `[t_{k-1}, t_k]` is split into [`panels_for`] equal panels,
/// so the node set doubles as a Simpson grid.
pub fn solve_ode_on(
    model: &CompartmentalModel,
    zeta: &[f64],
    x0: &[f64],
    times: &[f64],
    h: f64,
) -> Result<OdeSolution> {
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("step must be positive, got {h}")));
    }
    if times.first().is_some_and(|t| *t < 0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("times must be non-negative and increasing".into()));
    }
    let mut b = Builder::new(model, zeta, x0)?;
    for &t in times {
        let from = b.sol.end();
        if t > from {
            b.advance(t, panels_for(t - from, h))?;
        }
    }
    Ok(b.sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sir_model;

    const ZETA: [f64; 2] = [1.0, 1.0 / 3.0];

    #[test]
    fn equilibrium_without_infected() {
        let m = sir_model();
        let sol = solve_ode(&m, &ZETA, &[0.8, 0.0], 20.0, 0.01).unwrap();
        for i in 0..sol.len() {
            assert_eq!(sol.node(i), &[0.8, 0.0]);
        }
    }

    #[test]
    fn sir_curve_shape() {
        let m = sir_model();
        let sol = solve_ode(&m, &ZETA, &[0.99, 0.01], 40.0, 0.01).unwrap();
        let mut peak_seen = false;
        for i in 1..sol.len() {
            let (p, c) = (sol.node(i - 1), sol.node(i));
            assert!(c[0] + c[1] < p[0] + p[1]);
            if c[1] < p[1] {
                peak_seen = true;
            } else {
                assert!(!peak_seen, "infected rose again after the peak");
            }
            assert!(1.0 - c[0] - c[1] >= -1e-9);
        }
        assert!(peak_seen);
        assert!(sol.node(sol.len() - 1)[1] < 0.01);
    }

    #[test]
    fn halving_step_changes_little() {
        let m = sir_model();
        let a = solve_ode(&m, &ZETA, &[0.99, 0.01], 30.0, 0.01).unwrap();
        let b = solve_ode(&m, &ZETA, &[0.99, 0.01], 30.0, 0.005).unwrap();
        let (xa, xb) = (a.node(a.len() - 1), b.node(b.len() - 1));
        for c in 0..2 {
            assert!((xa[c] - xb[c]).abs() < 1e-8);
        }
    }

    #[test]
    fn dense_output_is_accurate() {
        let m = sir_model();
        let coarse = solve_ode(&m, &ZETA, &[0.99, 0.01], 10.0, 0.05).unwrap();
        let fine = solve_ode(&m, &ZETA, &[0.99, 0.01], 10.0, 0.001).unwrap();
        for &t in &[0.123, 3.3333, 7.77, 9.999] {
            let (a, b) = (coarse.at(t).unwrap(), fine.at(t).unwrap());
            for c in 0..2 {
                assert!((a[c] - b[c]).abs() < 1e-7, "t={t}");
            }
        }
        assert!(coarse.at(10.5).is_err());
    }

    #[test]
    fn aligned_grid_hits_observation_times() {
        let m = sir_model();
        let times = [0.0, 0.3, 0.7, 2.0, 2.05];
        let sol = solve_ode_on(&m, &ZETA, &[0.99, 0.01], &times, 0.01).unwrap();
        for t in times {
            assert!(sol.node_index(t).is_some());
        }
        assert_eq!(panels_for(0.3, 0.01), 60);
        assert_eq!(panels_for(0.05, 0.01), 10);
        assert_eq!(panels_for(0.001, 0.01), 4);
    }

    #[test]
    fn leaving_the_box_is_reported() {
        let m = sir_model();
        // absurd rates with a huge step overshoot immediately
        let res = solve_ode(&m, &[500.0, 1.0], &[0.5, 0.5], 1.0, 0.5);
        assert!(matches!(res, Err(Error::BlowUp { .. })));
    }
}
