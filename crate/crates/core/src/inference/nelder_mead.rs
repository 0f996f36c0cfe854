//! Derivative-free simplex minimization.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NelderMeadOptions {
    /// Relative spread of simplex values at which a run stops.
    pub ftol: f64,
    /// Evaluation budget per parameter; total budget is `max_evals_per_dim * dim`.
    pub max_evals_per_dim: usize,
    /// Initial simplex edge is `step * max(1, |mu_i|)` along each axis.
    pub step: f64,
    /// Fresh simplices built around the incumbent after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            ftol: 1e-8,
            max_evals_per_dim: 2000,
            step: 0.1,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub evaluations: usize,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Minimizes `objective` from `x0`.
///
/// Non-finite objective values are treated as `+inf` so the simplex
/// retreats from them. `converged` is false when the budget ran out.
pub fn nelder_mead<F>(objective: F, x0: &[f64], options: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut f = Counted { f: objective, evals: 0 };
    if n == 0 {
        let value = f.call(x0);
        return NelderMeadResult { x: Vec::new(), value, converged: true, evaluations: 1 };
    }
    let budget = options.max_evals_per_dim * n;
    let mut best = x0.to_vec();
    let mut best_value = f.call(x0);
    let mut converged = false;
    for round in 0..=options.restarts {
        let (x, value, ok) = run(&mut f, &best, best_value, options, budget);
        let improved = value < best_value - options.ftol * (best_value.abs() + options.ftol);
        if value <= best_value {
            best = x;
            best_value = value;
        }
        converged = ok;
        if !ok || (round > 0 && !improved) {
            break;
        }
    }
    NelderMeadResult {
        x: best,
        value: best_value,
        converged,
        evaluations: f.evals,
    }
}

fn run<F: FnMut(&[f64]) -> f64>(
    f: &mut Counted<F>,
    x0: &[f64],
    f0: f64,
    options: &NelderMeadOptions,
    budget: usize,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    values.push(f0);
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += options.step * x0[i].abs().max(1.0);
        values.push(f.call(&v));
        simplex.push(v);
    }
    let mut order: Vec<usize> = (0..=n).collect();
    let mut centroid = vec![0.0; n];
    loop {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let (lo, hi, second) = (order[0], order[n], order[n - 1]);
        let spread = (values[hi] - values[lo]).abs();
        if values[lo].is_finite() && spread <= options.ftol * (values[lo].abs() + options.ftol) {
            return (simplex[lo].clone(), values[lo], true);
        }
        if f.evals >= budget {
            return (simplex[lo].clone(), values[lo], false);
        }
        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&simplex[i]) {
                *c += v / n as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[hi])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };
        let xr = along(REFLECT);
        let fr = f.call(&xr);
        if fr < values[lo] {
            let xe = along(EXPAND);
            let fe = f.call(&xe);
            if fe < fr {
                simplex[hi] = xe;
                values[hi] = fe;
            } else {
                simplex[hi] = xr;
                values[hi] = fr;
            }
            continue;
        }
        if fr < values[second] {
            simplex[hi] = xr;
            values[hi] = fr;
            continue;
        }
        // contraction: outside if the reflection helped at all, inside otherwise
        let (xc, fc) = if fr < values[hi] {
            let xc = along(CONTRACT * REFLECT);
            let fc = f.call(&xc);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = f.call(&xc);
            (xc, fc)
        };
        if fc < values[hi].min(fr) {
            simplex[hi] = xc;
            values[hi] = fc;
            continue;
        }
        let anchor = simplex[lo].clone();
        for &i in &order[1..] {
            for (v, a) in simplex[i].iter_mut().zip(&anchor) {
                *v = a + SHRINK * (*v - a);
            }
            values[i] = f.call(&simplex[i]);
        }
    }
}
