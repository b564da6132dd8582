//! Sweeps over one experiment axis, t-interval summaries and plot series.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::config::ExperimentConfig;
use super::run::{load_datasets, run_on, RunResult};
use crate::{Error, Result};

pub const SUMMARY_HEADER: &str = "axis,value,method,metric,n,mean,ci_low,ci_high";
const CONFIDENCE: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    KCutoff,
    EtaTrue,
    NoiseEps,
    NSessions,
    EtaHat,
}

impl Axis {
    pub fn key(self) -> &'static str {
        match self {
            Axis::KCutoff => "k_cutoff",
            Axis::EtaTrue => "eta_true",
            Axis::NoiseEps => "noise_eps",
            Axis::NSessions => "n_sessions",
            Axis::EtaHat => "eta_hat",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Axis::KCutoff, Axis::EtaTrue, Axis::NoiseEps, Axis::NSessions, Axis::EtaHat]
            .into_iter()
            .find(|a| a.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: Axis,
    /// Axis values as given, paired with the runs at that value.
    pub points: Vec<(String, Vec<RunResult>)>,
}

/// One experiment per axis value, on datasets loaded once.
pub fn sweep(config: &ExperimentConfig, axis: Axis, values: &[String]) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Config("a sweep needs at least one value".into()));
    }
    config.validate()?;
    let (train, test) = load_datasets(config)?;
    let mut points = Vec::with_capacity(values.len());
    for v in values {
        let mut cfg = config.clone();
        cfg.set(axis.key(), v)?;
        cfg.validate()?;
        points.push((v.clone(), run_on(&cfg, &train, &test)?));
    }
    Ok(SweepResult { axis, points })
}

impl SweepResult {
    pub fn runs(&self) -> impl Iterator<Item = &RunResult> + '_ {
        self.points.iter().flat_map(|(_, r)| r)
    }

    pub fn raw_csv(&self) -> String {
        let all: Vec<RunResult> = self.runs().cloned().collect();
        super::run::results_csv(&all)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut out = Vec::new();
        for (value, runs) in &self.points {
            let mut methods = Vec::new();
            for r in runs {
                if !methods.contains(&r.method) {
                    methods.push(r.method);
                }
            }
            for m in methods {
                let of = |f: fn(&RunResult) -> f64| -> Vec<f64> { runs.iter().filter(|r| r.method == m).map(f).collect() };
                for (metric, xs) in [("ndcg1", of(RunResult::ndcg1)), ("ndcg3", of(RunResult::ndcg3)), ("map", of(RunResult::map))] {
                    let (n, mean, lo, hi) = t_interval(&xs, CONFIDENCE);
                    out.push(SummaryRow {
                        axis: self.axis.key().to_string(),
                        value: value.clone(),
                        method: m.to_string(),
                        metric: metric.to_string(),
                        n,
                        mean,
                        ci_low: lo,
                        ci_high: hi,
                    });
                }
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        summary_csv(&self.summary())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub axis: String,
    pub value: String,
    pub method: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.axis, r.value, r.method, r.metric, r.n, r.mean, r.ci_low, r.ci_high
        ));
    }
    out
}

/// Two-sided quantile of Student's t for the given confidence level.
pub fn t_quantile(confidence: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").inverse_cdf(0.5 + confidence / 2.0)
}

/// Mean and t-interval of the finite values of `xs`. With fewer than two
/// values the interval collapses to the mean.
pub fn t_interval(xs: &[f64], confidence: f64) -> (usize, f64, f64, f64) {
    let v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    let n = v.len();
    if n == 0 {
        return (0, f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (n, mean, mean, mean);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let half = t_quantile(confidence, (n - 1) as f64) * (var / n as f64).sqrt();
    (n, mean, mean - half, mean + half)
}

/// Split a summary CSV into one series per (metric, method), written as
/// `<metric>_<method>.csv` with columns `x,mean,ci_low,ci_high`. Returns the
/// written paths in order.
pub fn emit_plot_data(summary: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut lines = summary.lines();
    if lines.next().map(str::trim) != Some(SUMMARY_HEADER) {
        return Err(Error::Parse { line: 1, msg: format!("expected header {SUMMARY_HEADER:?}") });
    }
    let mut series: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Parse { line: i + 2, msg: format!("expected 8 fields, found {}", f.len()) });
        }
        for (j, name) in [(5, "mean"), (6, "ci_low"), (7, "ci_high")] {
            f[j].parse::<f64>().map_err(|_| Error::Parse { line: i + 2, msg: format!("bad {name} {:?}", f[j]) })?;
        }
        series.entry((f[3].to_string(), f[2].to_string())).or_default().push(format!("{},{},{},{}", f[1], f[5], f[6], f[7]));
    }
    if series.is_empty() {
        return Err(Error::Validation("summary has no rows".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::with_capacity(series.len());
    for ((metric, method), rows) in series {
        let path = out_dir.join(format!("{metric}_{method}.csv"));
        let mut text = String::from("x,mean,ci_low,ci_high\n");
        for r in rows {
            text.push_str(&r);
            text.push('\n');
        }
        std::fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}
