use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use epikal::data::{boarding_school, observations_to_csv, read_observations, trajectory_to_csv};
use epikal::gaussian_approx::build_system;
use epikal::inference::{default_grid, fit, post_predictive, profile_ci, FitResult, Parameterization};
use epikal::kalman::{filter_innovation_form, steps_to_csv};
use epikal::study::{run_replication, simulate_replicate, simulate_study, Scenario};
use epikal::{CompartmentalModel, ObservationSeries, ThetaFull};
use serde::Serialize;

use crate::config::*;
use crate::Failure;

pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn new(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
        text.push('\n');
        self.write(name, &text)
    }

    pub fn manifest<C: Serialize>(&self, command: &str, config: &C) -> Result<(), Failure> {
        self.json(
            "manifest.json",
            &Manifest {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config,
            },
        )
    }
}

fn observed_coords(model: &CompartmentalModel, labels: &[String]) -> Result<Vec<usize>, Failure> {
    if labels.is_empty() {
        return Ok(vec![*model.infected().last().expect("models have an infected compartment")]);
    }
    labels
        .iter()
        .map(|l| model.coordinate(l).ok_or_else(|| Failure::Config(format!("unknown compartment `{l}`"))))
        .collect()
}

fn theta_from(model: &CompartmentalModel, observed: &[usize], named: &BTreeMap<String, f64>) -> Result<ThetaFull, Failure> {
    let theta = ThetaFull::from_named(model, observed, named).map_err(Failure::config)?;
    theta.validate(model).map_err(Failure::config)?;
    Ok(theta)
}

fn load_data(model: &CompartmentalModel, data: Option<&Path>, n_pop: Option<f64>) -> Result<ObservationSeries, Failure> {
    let path = data.ok_or_else(|| Failure::Config("no observation data given (`--data` or `data`)".into()))?;
    let series = if path == Path::new("boarding-school") {
        boarding_school()
    } else {
        read_observations(path, model, n_pop)
    };
    series.map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn default_free(model: &CompartmentalModel, free: &[String]) -> Vec<String> {
    if !free.is_empty() {
        return free.to_vec();
    }
    let mut names: Vec<String> = model.rate_names().iter().map(|s| s.to_string()).collect();
    names.extend(["p".to_string(), "tau".to_string()]);
    names
}

fn setup_fit(
    model: &CompartmentalModel,
    series: &ObservationSeries,
    guess: &BTreeMap<String, f64>,
    free: &[String],
) -> Result<Parameterization, Failure> {
    let mut guess = guess.clone();
    let init_names = model.init_names();
    for (j, &c) in series.observed.iter().enumerate() {
        guess.entry(init_names[c].clone()).or_insert(series.values[0][j]);
    }
    let base = theta_from(model, &series.observed, &guess)?;
    let free: Vec<&str> = free.iter().map(String::as_str).collect();
    Parameterization::new(model, &series.observed, &base, &free).map_err(Failure::config)
}

fn fit_summary(res: &FitResult) -> String {
    let mut out = format!("log-likelihood {:.6}\n", res.loglik);
    for name in &res.free {
        writeln!(out, "{name} = {:.6}", res.estimates[name]).unwrap();
    }
    if !res.boundary.is_empty() {
        writeln!(out, "at boundary: {}", res.boundary.join(", ")).unwrap();
    }
    out
}

pub fn simulate(cfg: &SimulateConfig, out: &Output) -> Result<String, Failure> {
    let model = cfg.model.build();
    let observed = observed_coords(&model, &cfg.observed)?;
    let truth = theta_from(&model, &observed, &cfg.theta)?;
    if cfg.n_target == 0 {
        return Err(Failure::Config("n_target must be positive".into()));
    }
    let sc = Scenario {
        truth,
        observed,
        n_pop: cfg.n_pop,
        n_target: cfg.n_target,
        replicates: cfg.replicates,
        free: Vec::new(),
        seed: cfg.seed,
        rule: cfg.rule,
        max_attempts: cfg.max_attempts,
    };
    let data = simulate_study(&model, &sc).map_err(Failure::Simulation)?;
    let mut summary = format!("{} replicate(s), delta = {}\n", cfg.replicates, data.delta);
    for (r, series) in data.series.iter().enumerate() {
        out.write(&format!("obs_{r:04}.csv"), &observations_to_csv(series, &model))?;
        if cfg.trajectories {
            let (traj, _) = simulate_replicate(&model, &sc, r).map_err(Failure::Simulation)?;
            out.write(&format!("traj_{r:04}.csv"), &trajectory_to_csv(&traj, &model))?;
        }
        writeln!(summary, "replicate {r}: {} points, {} attempt(s)", series.times.len(), data.attempts[r]).unwrap();
    }
    out.json(
        "simulate.json",
        &serde_json::json!({
            "theta": sc.truth.to_named(&model, &sc.observed),
            "n_pop": cfg.n_pop,
            "delta": if data.delta.is_finite() { Some(data.delta) } else { None },
            "seed": cfg.seed,
            "attempts": data.attempts,
            "n_points": data.series.iter().map(|s| s.times.len()).collect::<Vec<_>>(),
        }),
    )?;
    Ok(summary)
}

pub fn fit_cmd(cfg: &FitConfig, out: &Output) -> Result<String, Failure> {
    let model = cfg.model.build();
    let series = load_data(&model, cfg.data.as_deref(), cfg.n_pop)?;
    let param = setup_fit(&model, &series, &cfg.guess, &default_free(&model, &cfg.free))?;
    let res = fit(&model, &series, &param, &cfg.options).map_err(Failure::Inference)?;
    out.json("fit.json", &res)?;
    if cfg.dump_system {
        let sys = build_system(&model, &res.theta_hat, &series.observed, &series.times, series.n_pop, &cfg.options.system)
            .map_err(Failure::Inference)?;
        let steps = filter_innovation_form(&sys, &series).map_err(Failure::Inference)?;
        out.json("system.json", &sys.to_json())?;
        out.write("filter.csv", &steps_to_csv(&sys, &steps))?;
    }
    let summary = fit_summary(&res);
    out.write("summary.txt", &summary)?;
    Ok(summary)
}

pub fn profile_cmd(cfg: &ProfileConfig, out: &Output) -> Result<String, Failure> {
    let model = cfg.model.build();
    let series = load_data(&model, cfg.data.as_deref(), cfg.n_pop)?;
    let free = default_free(&model, &cfg.free);
    if !free.contains(&cfg.param) {
        return Err(Failure::Config(format!("`{}` is not among the free parameters {free:?}", cfg.param)));
    }
    let param = setup_fit(&model, &series, &cfg.guess, &free)?;
    let res = fit(&model, &series, &param, &cfg.options).map_err(Failure::Inference)?;
    let grid = match &cfg.grid {
        Some(g) => g.clone(),
        None => {
            let kind = param.kinds()[param.index_of(&cfg.param).expect("free names are valid")];
            default_grid(res.estimates[&cfg.param], kind, cfg.points)
        }
    };
    let prof = profile_ci(&model, &series, &param, &res, &cfg.param, &grid, &cfg.options).map_err(Failure::Inference)?;
    out.json("fit.json", &res)?;
    out.json("profile.json", &prof)?;
    let mut csv = format!("{},loglik\n", cfg.param);
    for (v, ll) in prof.grid.iter().zip(&prof.logliks) {
        writeln!(csv, "{v},{ll}").unwrap();
    }
    out.write("profile.csv", &csv)?;
    let bound = |v: f64, ok: bool| if ok { format!("{v:.6}") } else { format!("<{v:.6} (open)") };
    let mut summary = fit_summary(&res);
    writeln!(
        summary,
        "{} 95% CI [{}, {}]",
        cfg.param,
        bound(prof.lower, prof.lower_bounded),
        bound(prof.upper, prof.upper_bounded)
    )
    .unwrap();
    out.write("summary.txt", &summary)?;
    Ok(summary)
}

pub fn ppcheck(cfg: &PpcheckConfig, out: &Output) -> Result<String, Failure> {
    let model = cfg.model.build();
    let series = load_data(&model, cfg.data.as_deref(), cfg.n_pop)?;
    let mut named = BTreeMap::new();
    if let Some(path) = &cfg.fit {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        named = serde_json::from_value(v["estimates"].clone())
            .map_err(|e| Failure::Config(format!("{}: no estimates ({e})", path.display())))?;
    }
    named.extend(cfg.theta.clone());
    let theta = theta_from(&model, &series.observed, &named)?;
    let n_pop = series.n_pop.round();
    if n_pop.is_nan() || n_pop < 1.0 {
        return Err(Failure::Config(format!("population size {} is not a positive integer", series.n_pop)));
    }
    let rows = post_predictive(
        &model,
        &theta,
        &series.observed,
        n_pop as u64,
        &series.times,
        cfg.n_sims,
        cfg.seed,
        &cfg.rule,
    )
    .map_err(Failure::Simulation)?;
    let mut csv = String::from("t,mean,p05,p50,p95\n");
    let mut inside = 0;
    for (row, y) in rows.iter().zip(&series.values) {
        writeln!(csv, "{},{},{},{},{}", row.t, row.mean, row.p05, row.p50, row.p95).unwrap();
        if row.p05 <= y[0] && y[0] <= row.p95 {
            inside += 1;
        }
    }
    out.write("ppcheck.csv", &csv)?;
    let summary = format!("{inside} of {} observations inside the 5-95% band\n", rows.len());
    out.write("summary.txt", &summary)?;
    Ok(summary)
}

pub fn bench(cfg: &BenchConfig, out: &Output) -> Result<String, Failure> {
    let model = cfg.model.build();
    let observed = observed_coords(&model, &cfg.observed)?;
    let truth = theta_from(&model, &observed, &cfg.theta)?;
    if cfg.n_target == 0 {
        return Err(Failure::Config("n_target must be positive".into()));
    }
    let sc = Scenario {
        truth,
        observed,
        n_pop: cfg.n_pop,
        n_target: cfg.n_target,
        replicates: cfg.replicates,
        free: cfg.free.clone(),
        seed: cfg.seed,
        rule: cfg.rule,
        max_attempts: cfg.max_attempts,
    };
    let report = run_replication(&model, &sc, &cfg.options).map_err(|e| match e {
        epikal::Error::Invalid(_) => Failure::config(e),
        e => Failure::Simulation(e),
    })?;
    out.json("report.json", &report)?;
    let mut csv = String::from("param,mean,sd,min,max\n");
    let mut summary = format!(
        "{} replicate(s), {} fitted, {} failed\n",
        report.replicates,
        report.fits.len(),
        report.failures.len()
    );
    if let Some(n) = &report.n_points {
        writeln!(summary, "n = {:.0} ({:.0}, {:.0})", n.mean, n.min, n.max).unwrap();
    }
    for (name, s) in &report.estimates {
        writeln!(csv, "{name},{},{},{},{}", s.mean, s.sd, s.min, s.max).unwrap();
        writeln!(summary, "{name}: {:.4} ({:.4})", s.mean, s.sd).unwrap();
    }
    out.write("report.csv", &csv)?;
    out.write("summary.txt", &summary)?;
    Ok(summary)
}
