//! Observation and trajectory CSV, plus the bundled boarding-school outbreak.
//!
//! Observation files carry a `t,y1[,y2...]` header with values normalized by
//! the population size. Lines starting with `#` are comments; two of them are
//! read as metadata:
//!
//! ```text
//! # n_pop: 763
//! # observed: I
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::CompartmentalModel;
use crate::simulate::{ObservationSeries, Trajectory};

const BOARDING_SCHOOL: &str = include_str!("../data/boarding_school.csv");

/// Boarding-school population.
pub const BOARDING_SCHOOL_N: f64 = 763.0;

fn metadata<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|line| {
        let rest = line.trim().strip_prefix('#')?.trim();
        let (k, v) = rest.split_once(':')?;
        (k.trim() == key).then(|| v.trim())
    })
}

fn parse_records(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("row {}: `{f}` is not a number", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Reads an observation CSV.
///
/// `n_pop` overrides the `n_pop` metadata; the observed compartments come
/// from the `observed` metadata (labels, comma separated) and default to
/// the model's last infected compartment.
pub fn parse_observations(
    text: &str,
    model: &CompartmentalModel,
    n_pop: Option<f64>,
) -> Result<ObservationSeries> {
    let n_pop = match n_pop {
        Some(n) => n,
        None => metadata(text, "n_pop")
            .ok_or_else(|| Error::Parse("population size missing (`# n_pop: N`)".into()))?
            .parse()
            .map_err(|_| Error::Parse("`n_pop` metadata is not a number".into()))?,
    };
    let observed = match metadata(text, "observed") {
        Some(labels) => labels
            .split(',')
            .map(|l| {
                model
                    .coordinate(l.trim())
                    .ok_or_else(|| Error::Parse(format!("unknown compartment `{}`", l.trim())))
            })
            .collect::<Result<Vec<usize>>>()?,
        None => vec![*model.infected().last().expect("models have an infected compartment")],
    };
    let (header, rows) = parse_records(text)?;
    if header.first().map(String::as_str) != Some("t") || header.len() != observed.len() + 1 {
        return Err(Error::Parse(format!(
            "expected header `t` plus {} observation column(s), got {header:?}",
            observed.len()
        )));
    }
    let times = rows.iter().map(|r| r[0]).collect();
    let values = rows.into_iter().map(|r| r[1..].to_vec()).collect();
    ObservationSeries::new(times, values, n_pop, observed)
}

pub fn read_observations(
    path: &std::path::Path,
    model: &CompartmentalModel,
    n_pop: Option<f64>,
) -> Result<ObservationSeries> {
    parse_observations(&std::fs::read_to_string(path)?, model, n_pop)
}

/// Writes an observation CSV with shortest round-trip decimal values.
pub fn observations_to_csv(series: &ObservationSeries, model: &CompartmentalModel) -> String {
    let labels: Vec<&str> = series.observed.iter().map(|&c| model.labels()[c]).collect();
    let mut out = format!("# n_pop: {}\n# observed: {}\nt", series.n_pop, labels.join(","));
    for i in 1..=series.q() {
        write!(out, ",y{i}").unwrap();
    }
    out.push('\n');
    for (t, row) in series.times.iter().zip(&series.values) {
        write!(out, "{t}").unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Event list `t,jump,<compartment counts>`; the first row is the initial
/// state with an empty jump field.
pub fn trajectory_to_csv(traj: &Trajectory, model: &CompartmentalModel) -> String {
    let mut out = format!("t,jump,{}\n", model.labels().join(","));
    let counts = |s: &[i64]| s.iter().map(i64::to_string).collect::<Vec<_>>().join(",");
    writeln!(out, "0,,{}", counts(&traj.init)).unwrap();
    for e in 0..traj.n_events() {
        writeln!(out, "{},{},{}", traj.times[e], traj.jumps[e], counts(traj.state_after(e))).unwrap();
    }
    out
}

/// Daily counts of the bundled boarding-school outbreak, `(day, count)`.
pub fn boarding_school_counts() -> Result<Vec<(f64, f64)>> {
    let (header, rows) = parse_records(BOARDING_SCHOOL)?;
    if header != ["day", "in_bed"] {
        return Err(Error::Parse(format!("unexpected boarding-school header {header:?}")));
    }
    let counts: Vec<(f64, f64)> = rows.into_iter().map(|r| (r[0], r[1])).collect();
    if counts.len() != 14 {
        return Err(Error::Parse(format!("expected 14 daily counts, found {}", counts.len())));
    }
    Ok(counts)
}

/// The boarding-school outbreak as a normalized series of the infected
/// compartment: one case at day 0 followed by the 14 daily counts.
pub fn boarding_school() -> Result<ObservationSeries> {
    let counts = boarding_school_counts()?;
    let mut times = vec![0.0];
    let mut values = vec![vec![1.0 / BOARDING_SCHOOL_N]];
    for (day, c) in counts {
        times.push(day);
        values.push(vec![c / BOARDING_SCHOOL_N]);
    }
    ObservationSeries::new(times, values, BOARDING_SCHOOL_N, vec![1])
}
