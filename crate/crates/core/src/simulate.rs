//! Exact stochastic simulation and synthetic observations.
//!
//! Trajectories come from the direct-method SSA on integer counts. Each
//! replicate draws from its own ChaCha stream (`seed`, `stream`), so runs
//! are reproducible whatever the thread layout.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CompartmentalModel;

/// Deterministic RNG for replicate `stream` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A piecewise-constant SSA sample path.
///
/// `states` stores the tracked counts after each event, row-major with
/// `dim` entries per event; the removed compartment is `n - sum(state)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: u64,
    pub dim: usize,
    pub init: Vec<i64>,
    pub times: Vec<f64>,
    pub jumps: Vec<u32>,
    pub states: Vec<i64>,
    /// Time at which simulation stopped (absorption or horizon).
    pub t_end: f64,
    /// True when the path hit a state with all rates zero.
    pub absorbed: bool,
    pub seed: u64,
    pub infected: Vec<usize>,
}

impl Trajectory {
    pub fn n_events(&self) -> usize {
        self.times.len()
    }

    /// Tracked counts after event `e`.
    pub fn state_after(&self, e: usize) -> &[i64] {
        &self.states[e * self.dim..(e + 1) * self.dim]
    }

    /// Tracked counts at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> &[i64] {
        let after = self.times.partition_point(|&s| s <= t);
        if after == 0 {
            &self.init
        } else {
            self.state_after(after - 1)
        }
    }

    pub fn final_state(&self) -> &[i64] {
        if self.times.is_empty() {
            &self.init
        } else {
            self.state_after(self.times.len() - 1)
        }
    }

    fn infected_count(&self, state: &[i64]) -> i64 {
        self.infected.iter().map(|&c| state[c]).sum()
    }

    /// First time at which no infected individual remains.
    pub fn extinction_time(&self) -> Option<f64> {
        if self.infected_count(&self.init) == 0 {
            return Some(0.0);
        }
        (0..self.n_events())
            .find(|&e| self.infected_count(self.state_after(e)) == 0)
            .map(|e| self.times[e])
    }

    /// Individuals ever infected: initially infected plus susceptible depletion.
    pub fn final_size(&self) -> i64 {
        self.infected_count(&self.init) + self.init[0] - self.final_state()[0]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SsaOptions {
    /// Maximum number of events; `None` means `10 * N * jumps`.
    pub event_cap: Option<usize>,
}

/// Direct-method SSA from integer tracked counts `init` until `t_max` or absorption.
pub fn gillespie<R: Rng + ?Sized>(
    model: &CompartmentalModel,
    zeta: &[f64],
    n: u64,
    init: &[i64],
    t_max: f64,
    options: SsaOptions,
    rng: &mut R,
) -> Result<Trajectory> {
    let d = model.dim();
    if init.len() != d {
        return Err(Error::Invalid(format!("initial state needs {d} counts")));
    }
    if init.iter().any(|&c| c < 0) || init.iter().sum::<i64>() > n as i64 {
        return Err(Error::Invalid(format!(
            "initial counts {init:?} incompatible with N = {n}"
        )));
    }
    if zeta.len() != model.rate_names().len() || zeta.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::Invalid(format!("invalid rates {zeta:?}")));
    }
    let jumps = model.jumps();
    let cap = options
        .event_cap
        .unwrap_or(10 * n as usize * jumps.len());
    let nf = n as f64;
    let mut state = init.to_vec();
    let mut props = vec![0.0; jumps.len()];
    let mut traj = Trajectory {
        n,
        dim: d,
        init: init.to_vec(),
        times: Vec::new(),
        jumps: Vec::new(),
        states: Vec::new(),
        t_end: t_max,
        absorbed: false,
        seed: 0,
        infected: model.infected().to_vec(),
    };
    let mut t = 0.0;
    loop {
        let mut total = 0.0;
        for (j, a) in props.iter_mut().enumerate() {
            *a = model.propensity(j, zeta, &state, nf);
            total += *a;
        }
        if total <= 0.0 {
            traj.absorbed = true;
            traj.t_end = t;
            break;
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / total;
        if t > t_max {
            traj.t_end = t_max;
            break;
        }
        if traj.times.len() >= cap {
            return Err(Error::Overflow(cap));
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = jumps.len() - 1;
        for (j, a) in props.iter().enumerate() {
            acc += a;
            if target < acc && *a > 0.0 {
                chosen = j;
                break;
            }
        }
        // round-off can leave `target` at the very top; fall back to the last live jump
        if props[chosen] <= 0.0 {
            chosen = props.iter().rposition(|a| *a > 0.0).unwrap_or(chosen);
        }
        for (s, l) in state.iter_mut().zip(&jumps[chosen].delta) {
            *s += l;
        }
        traj.times.push(t);
        traj.jumps.push(chosen as u32);
        traj.states.extend_from_slice(&state);
    }
    Ok(traj)
}

/// Same as [`gillespie`] on the replicate stream `(seed, stream)`.
pub fn gillespie_seeded(
    model: &CompartmentalModel,
    zeta: &[f64],
    n: u64,
    init: &[i64],
    t_max: f64,
    seed: u64,
    stream: u64,
) -> Result<Trajectory> {
    let mut rng = stream_rng(seed, stream);
    let mut traj = gillespie(model, zeta, n, init, t_max, SsaOptions::default(), &mut rng)?;
    traj.seed = seed;
    Ok(traj)
}

/// Major-outbreak classifier: the final size must exceed
/// `max(initial_factor * I0, population_fraction * N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtinctionRule {
    pub initial_factor: f64,
    pub population_fraction: f64,
}

impl Default for ExtinctionRule {
    fn default() -> Self {
        ExtinctionRule {
            initial_factor: 10.0,
            population_fraction: 0.05,
        }
    }
}

pub fn is_nonextinct(traj: &Trajectory, rule: &ExtinctionRule) -> bool {
    let initially_infected = traj.infected_count(&traj.init) as f64;
    let threshold = (rule.initial_factor * initially_infected)
        .max(rule.population_fraction * traj.n as f64);
    traj.final_size() as f64 > threshold
}

/// Branching-process probability of a major outbreak, `max(0, 1 - (gamma/lambda)^I0)`.
pub fn nonextinction_probability(lambda: f64, gamma: f64, initial_infected: u32) -> f64 {
    (1.0 - (gamma / lambda).powi(initial_infected as i32)).max(0.0)
}

/// Simulates until a non-extinct path is found; returns it and the attempt count.
#[allow(clippy::too_many_arguments)]
pub fn simulate_nonextinct<R: Rng + ?Sized>(
    model: &CompartmentalModel,
    zeta: &[f64],
    n: u64,
    init: &[i64],
    t_max: f64,
    rule: &ExtinctionRule,
    max_attempts: usize,
    rng: &mut R,
) -> Result<(Trajectory, usize)> {
    for attempt in 1..=max_attempts {
        let traj = gillespie(model, zeta, n, init, t_max, SsaOptions::default(), rng)?;
        if is_nonextinct(&traj, rule) {
            return Ok((traj, attempt));
        }
    }
    Err(Error::Degenerate(format!(
        "no major outbreak in {max_attempts} attempts"
    )))
}

/// Discrete observations of a subset of compartments, normalized by `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub times: Vec<f64>,
    /// One `q`-vector per time.
    pub values: Vec<Vec<f64>>,
    /// Population size `N`.
    pub n_pop: f64,
    /// Observed tracked coordinates (rows of the projection `B`).
    pub observed: Vec<usize>,
}

impl ObservationSeries {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>, n_pop: f64, observed: Vec<usize>) -> Result<Self> {
        let s = ObservationSeries {
            times,
            values,
            n_pop,
            observed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::Invalid("empty observation series".into()));
        }
        if self.times.len() != self.values.len() {
            return Err(Error::Invalid("times and values differ in length".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("observation times must be strictly increasing".into()));
        }
        if self.observed.is_empty() {
            return Err(Error::Invalid("no observed coordinate".into()));
        }
        let q = self.observed.len();
        if self.values.iter().any(|v| v.len() != q || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Invalid(format!("every observation must be a finite {q}-vector")));
        }
        if !(self.n_pop >= 1.0) {
            return Err(Error::Invalid(format!("population size {} < 1", self.n_pop)));
        }
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.observed.len()
    }

    /// Number of transitions `n` (the series holds `n + 1` points).
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Binomial thinning plus count-proportional Gaussian error at each time.
///
/// For observed coordinate `i` with count `C`: `Binomial(C, p_i) + N(0, tau_i^2 C)`,
/// divided by `N`.
pub fn observe<R: Rng + ?Sized>(
    traj: &Trajectory,
    observed: &[usize],
    p: &[f64],
    tau: &[f64],
    times: &[f64],
    rng: &mut R,
) -> Result<ObservationSeries> {
    if p.len() != observed.len() || tau.len() != observed.len() {
        return Err(Error::Invalid("p and tau must match the observed coordinates".into()));
    }
    if p.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) || tau.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Invalid(format!("invalid observation noise p={p:?} tau={tau:?}")));
    }
    let nf = traj.n as f64;
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        let state = traj.state_at(t);
        let mut row = Vec::with_capacity(observed.len());
        for ((&c, &pi), &ti) in observed.iter().zip(p).zip(tau) {
            let count = state[c].max(0) as u64;
            let thinned = if pi >= 1.0 {
                count
            } else {
                Binomial::new(count, pi)
                    .map_err(|e| Error::Numeric(e.to_string()))?
                    .sample(rng)
            };
            let mut o = thinned as f64;
            if ti > 0.0 && count > 0 {
                let z: f64 = StandardNormal.sample(rng);
                o += ti * (count as f64).sqrt() * z;
            }
            row.push(o / nf);
        }
        values.push(row);
    }
    ObservationSeries::new(times.to_vec(), values, nf, observed.to_vec())
}

/// Common sampling step `Delta = mean(extinction time) / n_target` and the
/// per-trajectory grids `k * Delta`, `k = 0..=floor(T_j / Delta)`.
pub fn design_grid(trajectories: &[Trajectory], n_target: usize) -> Result<(f64, Vec<Vec<f64>>)> {
    if trajectories.is_empty() {
        return Err(Error::Degenerate("no trajectories".into()));
    }
    if n_target == 0 {
        return Err(Error::Invalid("target number of observations must be positive".into()));
    }
    let durations = trajectories
        .iter()
        .enumerate()
        .map(|(j, t)| {
            t.extinction_time().ok_or_else(|| {
                Error::Degenerate(format!("trajectory {j} never reaches extinction"))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let delta = durations.iter().sum::<f64>() / durations.len() as f64 / n_target as f64;
    if !(delta > 0.0) {
        return Err(Error::Degenerate("mean epidemic duration is zero".into()));
    }
    Ok((delta, durations.iter().map(|&t| regular_grid(delta, t)).collect()))
}

/// `k * delta` for `k = 0..=floor(t_end / delta)`, tolerant to round-off at the end point.
pub fn regular_grid(delta: f64, t_end: f64) -> Vec<f64> {
    let k_max = (t_end / delta + 1e-9).floor() as usize;
    (0..=k_max).map(|k| k as f64 * delta).collect()
}
