//! Fixtures shared by the benchmarks.

use epikal::model::{sir_model, EpidemicParams};
use epikal::simulate::{observe, regular_grid, simulate_nonextinct, stream_rng, ExtinctionRule};
use epikal::{CompartmentalModel, ObservationSeries, ThetaFull};

pub fn truth() -> ThetaFull {
    ThetaFull {
        eta: EpidemicParams {
            zeta: vec![1.0, 1.0 / 3.0],
            x0: vec![0.99, 0.01],
        },
        p: vec![0.8],
        tau: vec![0.0],
    }
}

/// One simulated SIR series with about `n_points` observations.
pub fn simulated_series(n_pop: u64, n_points: usize, seed: u64) -> (CompartmentalModel, ThetaFull, ObservationSeries) {
    let model = sir_model();
    let theta = truth();
    let init = [(0.99 * n_pop as f64).round() as i64, (0.01 * n_pop as f64).round() as i64];
    let mut rng = stream_rng(seed, 0);
    let (traj, _) = simulate_nonextinct(
        &model,
        &theta.eta.zeta,
        n_pop,
        &init,
        f64::INFINITY,
        &ExtinctionRule::default(),
        1000,
        &mut rng,
    )
    .expect("simulation");
    let t_end = traj.extinction_time().expect("absorbed");
    let times = regular_grid(t_end / n_points as f64, t_end);
    let series = observe(&traj, &[1], &theta.p, &theta.tau, &times, &mut rng).expect("observation");
    (model, theta, series)
}
