//! One experiment: datasets, logging policy, simulated log, estimators,
//! evaluation.

use std::fs::File;
use std::io::BufReader;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{DatasetSource, ExperimentConfig};
use crate::clicksim::{build_click_log, misspecified_table, ClickLog, PropensityTable};
use crate::dataset::{generate_synthetic_ltr, parse_letor, Dataset, Split, Standardizer};
use crate::estimators::{train_method, Method, TrainConfig};
use crate::metrics::{evaluate, MetricsReport};
use crate::policy::{train_logging_policy, LoggingPolicy};
use crate::{Error, Result};

pub const RESULTS_HEADER: &str = "method,seed,k_cutoff,eta_true,eta_hat,noise,sessions,ndcg1,ndcg3,map,seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub k_cutoff: usize,
    pub eta_true: f64,
    pub eta_hat: f64,
    pub noise: f64,
    pub sessions: usize,
    /// `Err` holds the diagnostic of a failed cell.
    pub outcome: std::result::Result<MetricsReport, String>,
    pub seconds: Option<f64>,
}

impl RunResult {
    pub fn ndcg1(&self) -> f64 {
        self.outcome.as_ref().map(|r| r.ndcg_at_1).unwrap_or(f64::NAN)
    }

    pub fn ndcg3(&self) -> f64 {
        self.outcome.as_ref().map(|r| r.ndcg_at_3).unwrap_or(f64::NAN)
    }

    pub fn map(&self) -> f64 {
        self.outcome.as_ref().map(|r| r.map).unwrap_or(f64::NAN)
    }

    pub fn csv_row(&self) -> String {
        let secs = self.seconds.map(|s| format!("{s:.3}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.seed,
            self.k_cutoff,
            self.eta_true,
            self.eta_hat,
            self.noise,
            self.sessions,
            self.ndcg1(),
            self.ndcg3(),
            self.map(),
            secs
        )
    }
}

pub fn results_csv(results: &[RunResult]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Seed of one pipeline stage, derived from the run seed.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stage.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

const STAGE_POLICY: u64 = 1;
const STAGE_CLICKS: u64 = 2;
const STAGE_TRAIN: u64 = 3;

/// Standardized train and test splits.
pub fn load_datasets(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (mut train, mut test) = match &config.dataset {
        DatasetSource::Synthetic { train_queries, test_queries, docs_per_query, feature_dim, label_noise, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            // Unit-norm relevance direction, so label_noise is relative to the signal.
            let mut beta: Vec<f64> = (0..*feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
            beta.iter_mut().for_each(|b| *b /= norm);
            let all = generate_synthetic_ltr(train_queries + test_queries, *docs_per_query, *feature_dim, &beta, *label_noise, *seed)?;
            all.split_off(*test_queries)?
        }
        DatasetSource::Files { train, test } => {
            let open = |p: &std::path::Path, split| -> Result<Dataset> {
                let f = File::open(p).map_err(|e| Error::Config(format!("cannot open {}: {e}", p.display())))?;
                parse_letor(BufReader::new(f), split)
            };
            let mut tr = open(train, Split::Train)?;
            let mut te = open(test, Split::Test)?;
            let dim = tr.feature_dim.max(te.feature_dim);
            for d in [&mut tr, &mut te] {
                pad_features(d, dim);
            }
            (tr, te)
        }
    };
    let std = Standardizer::fit(&train);
    std.apply(&mut train)?;
    std.apply(&mut test)?;
    Ok((train, test))
}

fn pad_features(d: &mut Dataset, dim: usize) {
    for g in &mut d.groups {
        for doc in &mut g.docs {
            doc.features.resize(dim, 0.0);
        }
    }
    d.feature_dim = dim;
}

/// The logging policy and the click log of one run seed, with propensities
/// replaced by those of `eta_hat`.
pub fn simulate_for_seed(config: &ExperimentConfig, train: &Dataset, seed: u64) -> Result<(LoggingPolicy, ClickLog)> {
    let policy = train_logging_policy(train, config.policy_fraction, stage_seed(seed, STAGE_POLICY))?;
    let table = PropensityTable::new(config.eta_true, config.k_cutoff)?;
    let log = build_click_log(&policy, train, &table, config.n_sessions, config.noise_eps, stage_seed(seed, STAGE_CLICKS))?;
    let hat = misspecified_table(&table, config.eta_hat())?;
    Ok((policy, log.with_propensities(&hat)?))
}

pub fn train_config_for_seed(config: &ExperimentConfig, method: Method, seed: u64) -> TrainConfig {
    TrainConfig { seed: stage_seed(seed, STAGE_TRAIN), ..config.train_config_for(method) }
}

/// Run every (method, seed) cell. A failing cell yields a result with the
/// diagnostic and NaN metrics; the other cells are unaffected. Results are
/// ordered by method (in config order), then seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunResult>> {
    config.validate()?;
    let (train, test) = load_datasets(config)?;
    run_on(config, &train, &test)
}

pub fn run_on(config: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<Vec<RunResult>> {
    config.validate()?;
    let mut results = Vec::with_capacity(config.methods.len() * config.seeds.len());
    for &seed in &config.seeds {
        let simulated = simulate_for_seed(config, train, seed);
        for &method in &config.methods {
            let start = Instant::now();
            let outcome = match &simulated {
                Err(e) => Err(format!("simulation failed: {e}")),
                Ok((_, log)) => train_method(method, log, train, &train_config_for_seed(config, method, seed))
                    .and_then(|m| evaluate(&m, test, config.graded_eval))
                    .map_err(|e| e.to_string()),
            };
            if let Err(e) = &outcome {
                eprintln!("warning: {method} with seed {seed} failed: {e}");
            }
            results.push(RunResult {
                method,
                seed,
                k_cutoff: config.k_cutoff,
                eta_true: config.eta_true,
                eta_hat: config.eta_hat(),
                noise: config.noise_eps,
                sessions: config.n_sessions,
                outcome,
                seconds: config.record_timing.then(|| start.elapsed().as_secs_f64()),
            });
        }
    }
    let method_rank = |m: Method| config.methods.iter().position(|&x| x == m);
    let seed_rank = |s: u64| config.seeds.iter().position(|&x| x == s);
    results.sort_by_key(|r| (method_rank(r.method), seed_rank(r.seed)));
    Ok(results)
}
