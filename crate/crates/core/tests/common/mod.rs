//! Independent reference computations and random instance generators.
#![allow(dead_code, clippy::needless_range_loop)]

use epikal::gaussian_approx::DiscreteSystem;
use epikal::model::{sir_model, EpidemicParams};
use epikal::simulate::{observe, regular_grid, simulate_nonextinct, stream_rng, ExtinctionRule};
use epikal::{ObservationSeries, ThetaFull};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, 0)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * normal(rng))
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * normal(rng))
}

/// `L L^T + ridge I` with Gaussian `L`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64, ridge: f64) -> DMatrix<f64> {
    let l = random_matrix(rng, n, n, scale);
    let mut s = &l * l.transpose() + DMatrix::identity(n, n) * ridge;
    s = (&s + s.transpose()) * 0.5;
    s
}

/// A random linear Gaussian system with `d` states, `q` observations and
/// `n` transitions, plus a matching random observation series.
pub fn random_system(rng: &mut ChaCha8Rng, d: usize, q: usize, n: usize) -> (DiscreteSystem, ObservationSeries) {
    let times: Vec<f64> = (0..=n).map(|k| k as f64).collect();
    let sys = DiscreteSystem {
        times: times.clone(),
        x: (0..=n).map(|_| random_vector(rng, d, 1.0)).collect(),
        f: (0..n).map(|_| random_vector(rng, d, 0.5)).collect(),
        a: (0..n)
            .map(|_| DMatrix::identity(d, d) * 0.6 + random_matrix(rng, d, d, 0.3))
            .collect(),
        t: (0..n).map(|_| random_spd(rng, d, 0.4, 0.05)).collect(),
        b: random_matrix(rng, q, d, 1.0),
        q: (0..=n).map(|_| random_spd(rng, q, 0.3, 0.05)).collect(),
        xi0: random_vector(rng, d, 1.0),
        t0: random_spd(rng, d, 0.5, 0.1),
    };
    let values = (0..=n)
        .map(|_| (0..q).map(|_| normal(rng)).collect())
        .collect();
    let series = ObservationSeries::new(times, values, 1.0, (0..q).collect()).unwrap();
    (sys, series)
}

/// Log density (without `2 pi` constants) of a Gaussian vector at `r = y - mean`.
pub fn gaussian_log_density(cov: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("oracle covariance must be positive definite");
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (log_det + r.dot(&chol.solve(r)))
}

/// `log p(y_1..y_n | y_0)` from the joint law of all observations, built by
/// propagating state means and cross-covariances through the system.
pub fn joint_gaussian_loglik(sys: &DiscreteSystem, series: &ObservationSeries) -> f64 {
    let d = sys.xi0.len();
    let q = sys.b.nrows();
    let n = sys.f.len();
    let mut means = vec![sys.xi0.clone()];
    let mut marg = vec![sys.t0.clone()];
    for k in 1..=n {
        means.push(&sys.f[k - 1] + &sys.a[k - 1] * &means[k - 1]);
        marg.push(&sys.a[k - 1] * &marg[k - 1] * sys.a[k - 1].transpose() + &sys.t[k - 1]);
    }
    // state covariance Cov(X_i, X_j) = A_{i-1} ... A_j P_j for i >= j
    let mut sx = DMatrix::zeros((n + 1) * d, (n + 1) * d);
    for j in 0..=n {
        let mut c = marg[j].clone();
        for i in j..=n {
            if i > j {
                c = &sys.a[i - 1] * c;
            }
            sx.view_mut((i * d, j * d), (d, d)).copy_from(&c);
            sx.view_mut((j * d, i * d), (d, d)).copy_from(&c.transpose());
        }
    }
    let mut bb = DMatrix::zeros((n + 1) * q, (n + 1) * d);
    for k in 0..=n {
        bb.view_mut((k * q, k * d), (q, d)).copy_from(&sys.b);
    }
    let mut sy = &bb * sx * bb.transpose();
    for k in 0..=n {
        let mut block = sy.view_mut((k * q, k * q), (q, q));
        block += &sys.q[k];
    }
    let r = DVector::from_iterator(
        (n + 1) * q,
        (0..=n).flat_map(|k| {
            let m = &sys.b * &means[k];
            series.values[k].iter().zip(m.iter()).map(|(y, m)| y - m).collect::<Vec<_>>()
        }),
    );
    let sy = (&sy + sy.transpose()) * 0.5;
    let all = gaussian_log_density(&sy, &r);
    let first = gaussian_log_density(&sy.view((0, 0), (q, q)).into_owned(), &r.rows(0, q).into_owned());
    all - first
}

/// Conditional law of `X` given `B X + V = y` from the block Schur complement
/// of the joint covariance of `(X, B X + V)`, solved by LU.
pub fn schur_condition(
    xi: &DVector<f64>,
    t: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let d = xi.len();
    let m = b.nrows();
    // [I; B] T [I; B]^T + diag(0, Q)
    let mut lift = DMatrix::zeros(d + m, d);
    lift.view_mut((0, 0), (d, d)).fill_with_identity();
    lift.view_mut((d, 0), (m, d)).copy_from(b);
    let mut joint = &lift * t * lift.transpose();
    let mut qq = joint.view_mut((d, d), (m, m));
    qq += q;
    let sxx = joint.view((0, 0), (d, d)).into_owned();
    let sxy = joint.view((0, d), (d, m)).into_owned();
    let syy = joint.view((d, d), (m, m)).into_owned();
    let mean_y = b * xi;
    let lu = syy.lu();
    let w = lu.solve(&(y - mean_y)).expect("oracle: singular observation covariance");
    let k = lu.solve(&sxy.transpose()).expect("oracle: singular observation covariance");
    (xi + &sxy * w, sxx - sxy * k)
}

pub fn sir_truth(lambda: f64, gamma: f64, i0: f64, p: f64, tau: f64) -> ThetaFull {
    ThetaFull {
        eta: EpidemicParams {
            zeta: vec![lambda, gamma],
            x0: vec![1.0 - i0, i0],
        },
        p: vec![p],
        tau: vec![tau],
    }
}

/// One observed non-extinct SIR path on a grid with step `delta` up to extinction.
pub fn sir_series(theta: &ThetaFull, n_pop: u64, delta: f64, seed: u64) -> ObservationSeries {
    let model = sir_model();
    let i0 = (theta.eta.x0[1] * n_pop as f64).round() as i64;
    let init = [n_pop as i64 - i0, i0];
    let mut r = stream_rng(seed, 0);
    let (traj, _) = simulate_nonextinct(
        &model,
        &theta.eta.zeta,
        n_pop,
        &init,
        f64::INFINITY,
        &ExtinctionRule::default(),
        1000,
        &mut r,
    )
    .unwrap();
    let times = regular_grid(delta, traj.extinction_time().unwrap());
    observe(&traj, &[1], &theta.p, &theta.tau, &times, &mut r).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}
