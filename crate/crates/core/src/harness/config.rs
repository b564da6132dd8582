//! Experiment configuration: a flat `key = value` text file.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::estimators::{Method, SelectionComplement, TrainConfig};
use crate::{Error, Result};

/// Documented keys with their defaults, in the order `to_text` writes them.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "synthetic, or the path of a LETOR training file"),
    ("test_dataset", "LETOR test file, required when dataset is a path"),
    ("synthetic.train_queries", "training queries of the synthetic benchmark"),
    ("synthetic.test_queries", "test queries of the synthetic benchmark"),
    ("synthetic.docs_per_query", "documents per synthetic query"),
    ("synthetic.feature_dim", "synthetic feature dimension"),
    ("synthetic.label_noise", "sd of the noise added to the synthetic latent relevance"),
    ("synthetic.seed", "seed of the synthetic dataset"),
    ("k_cutoff", "number of displayed documents per query"),
    ("eta_true", "position-bias severity used to simulate clicks"),
    ("eta_hat", "severity of the propensities handed to the estimators (default eta_true)"),
    ("noise_eps", "click probability of an examined irrelevant document"),
    ("n_sessions", "simulated sessions per seed"),
    ("methods", "comma-separated estimators"),
    ("seeds", "comma-separated run seeds"),
    ("policy_fraction", "fraction of training queries used to fit the logging policy"),
    ("epochs", "training epochs"),
    ("learning_rate", "optimizer step size"),
    ("l2", "decoupled weight decay on weights"),
    ("gamma", "error correlation of the pointwise estimator"),
    ("batch_size", "minibatch size"),
    ("dropout", "dropout rate of the feed-forward rankers"),
    ("hidden", "comma-separated hidden layer sizes"),
    ("selection_complement", "literal or bce"),
    ("graded_eval", "evaluate NDCG on graded labels instead of binary ones"),
    ("record_timing", "fill the seconds column of result files"),
    ("<method>.learning_rate", "step size for one method, overriding learning_rate"),
    ("<method>.l2", "weight decay for one method, overriding l2"),
];

/// Per-method training overrides. Unset fields fall back to the shared
/// training settings.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MethodOverrides {
    pub learning_rate: Option<f64>,
    pub l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic { train_queries: usize, test_queries: usize, docs_per_query: usize, feature_dim: usize, label_noise: f64, seed: u64 },
    Files { train: PathBuf, test: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub k_cutoff: usize,
    pub eta_true: f64,
    /// `None` means "same as `eta_true`".
    pub eta_hat: Option<f64>,
    pub noise_eps: f64,
    pub n_sessions: usize,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub policy_fraction: f64,
    pub train: TrainConfig,
    pub graded_eval: bool,
    pub record_timing: bool,
    pub overrides: BTreeMap<Method, MethodOverrides>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic {
                train_queries: 1000,
                test_queries: 300,
                docs_per_query: 25,
                feature_dim: 20,
                label_noise: 1.0,
                seed: 2024,
            },
            k_cutoff: 5,
            eta_true: 1.0,
            eta_hat: None,
            noise_eps: 0.1,
            n_sessions: 100_000,
            methods: vec![Method::Naive, Method::Ips, Method::Heckman, Method::RankAgg, Method::Cld, Method::CldPair, Method::Oracle],
            seeds: vec![1, 2, 3, 4, 5],
            policy_fraction: 0.01,
            train: TrainConfig::default(),
            graded_eval: false,
            record_timing: false,
            overrides: BTreeMap::from([
                (Method::Oracle, MethodOverrides { learning_rate: Some(2e-3), l2: None }),
                (Method::CldPair, MethodOverrides { learning_rate: Some(2e-3), l2: None }),
            ]),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl ExperimentConfig {
    /// Parse a config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut test_path = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key = value, got {line:?}") })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "test_dataset" {
                test_path = Some(PathBuf::from(value));
            } else {
                cfg.set(key, value)?;
            }
        }
        if let Some(t) = test_path {
            match &mut cfg.dataset {
                DatasetSource::Files { test, .. } => *test = t,
                DatasetSource::Synthetic { .. } => return Err(Error::Config("test_dataset needs dataset to be a file path".into())),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one key. `test_dataset` is only accepted after `dataset` names a file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let synth = Self::synthetic_mut;
        match key {
            "dataset" => {
                self.dataset = if value == "synthetic" {
                    ExperimentConfig::default().dataset
                } else {
                    DatasetSource::Files { train: PathBuf::from(value), test: PathBuf::new() }
                }
            }
            "test_dataset" => match &mut self.dataset {
                DatasetSource::Files { test, .. } => *test = PathBuf::from(value),
                DatasetSource::Synthetic { .. } => return Err(Error::Config("test_dataset needs dataset to be a file path".into())),
            },
            "synthetic.train_queries" => *synth(self)?.0 = parse(key, value)?,
            "synthetic.test_queries" => *synth(self)?.1 = parse(key, value)?,
            "synthetic.docs_per_query" => *synth(self)?.2 = parse(key, value)?,
            "synthetic.feature_dim" => *synth(self)?.3 = parse(key, value)?,
            "synthetic.label_noise" => *synth(self)?.4 = parse(key, value)?,
            "synthetic.seed" => *synth(self)?.5 = parse(key, value)?,
            "k_cutoff" => self.k_cutoff = parse(key, value)?,
            "eta_true" => self.eta_true = parse(key, value)?,
            "eta_hat" => self.eta_hat = Some(parse(key, value)?),
            "noise_eps" => self.noise_eps = parse(key, value)?,
            "n_sessions" => self.n_sessions = parse(key, value)?,
            "methods" => self.methods = parse_list(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "policy_fraction" => self.policy_fraction = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "l2" => self.train.l2 = parse(key, value)?,
            "gamma" => self.train.gamma = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "dropout" => self.train.dropout = parse(key, value)?,
            "hidden" => self.train.hidden = parse_list(key, value)?,
            "selection_complement" => self.train.selection_complement = value.parse::<SelectionComplement>()?,
            "graded_eval" => self.graded_eval = parse_bool(key, value)?,
            "record_timing" => self.record_timing = parse_bool(key, value)?,
            _ => {
                let unknown = || Error::Config(format!("unknown config key {key:?}"));
                let (method, field) = key.split_once('.').ok_or_else(unknown)?;
                let method: Method = method.parse().map_err(|_| unknown())?;
                let entry = self.overrides.entry(method).or_default();
                match field {
                    "learning_rate" => entry.learning_rate = Some(parse(key, value)?),
                    "l2" => entry.l2 = Some(parse(key, value)?),
                    _ => return Err(unknown()),
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn synthetic_mut(&mut self) -> Result<(&mut usize, &mut usize, &mut usize, &mut usize, &mut f64, &mut u64)> {
        match &mut self.dataset {
            DatasetSource::Synthetic { train_queries, test_queries, docs_per_query, feature_dim, label_noise, seed } => {
                Ok((train_queries, test_queries, docs_per_query, feature_dim, label_noise, seed))
            }
            DatasetSource::Files { .. } => Err(Error::Config("synthetic.* keys need dataset = synthetic".into())),
        }
    }

    pub fn eta_hat(&self) -> f64 {
        self.eta_hat.unwrap_or(self.eta_true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_cutoff == 0 {
            return Err(Error::Config("k_cutoff must be at least 1".into()));
        }
        for (name, v) in [("eta_true", self.eta_true), ("eta_hat", self.eta_hat())] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.noise_eps) {
            return Err(Error::Config(format!("noise_eps must lie in [0, 1), got {}", self.noise_eps)));
        }
        if self.n_sessions == 0 {
            return Err(Error::Config("n_sessions must be at least 1".into()));
        }
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("methods and seeds must be non-empty".into()));
        }
        if !(self.policy_fraction > 0.0 && self.policy_fraction <= 1.0) {
            return Err(Error::Config(format!("policy_fraction must lie in (0, 1], got {}", self.policy_fraction)));
        }
        match &self.dataset {
            DatasetSource::Synthetic { train_queries, test_queries, docs_per_query, feature_dim, label_noise, .. } => {
                if *train_queries == 0 || *test_queries == 0 || *docs_per_query == 0 || *feature_dim == 0 {
                    return Err(Error::Config("synthetic dataset sizes must be positive".into()));
                }
                if !(*label_noise >= 0.0) {
                    return Err(Error::Config("synthetic.label_noise must be non-negative".into()));
                }
            }
            DatasetSource::Files { test, .. } => {
                if test.as_os_str().is_empty() {
                    return Err(Error::Config("a file dataset needs test_dataset".into()));
                }
            }
        }
        for m in self.overrides.keys() {
            self.train_config_for(*m).validate()?;
        }
        self.train.validate()
    }

    /// Shared training settings with the overrides of `method` applied.
    pub fn train_config_for(&self, method: Method) -> TrainConfig {
        let mut tc = self.train.clone();
        if let Some(o) = self.overrides.get(&method) {
            tc.learning_rate = o.learning_rate.unwrap_or(tc.learning_rate);
            tc.l2 = o.l2.unwrap_or(tc.l2);
        }
        tc
    }

    /// The full configuration as parseable text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        match &self.dataset {
            DatasetSource::Synthetic { train_queries, test_queries, docs_per_query, feature_dim, label_noise, seed } => {
                kv("dataset", "synthetic".into());
                kv("synthetic.train_queries", train_queries.to_string());
                kv("synthetic.test_queries", test_queries.to_string());
                kv("synthetic.docs_per_query", docs_per_query.to_string());
                kv("synthetic.feature_dim", feature_dim.to_string());
                kv("synthetic.label_noise", label_noise.to_string());
                kv("synthetic.seed", seed.to_string());
            }
            DatasetSource::Files { train, test } => {
                kv("dataset", train.display().to_string());
                kv("test_dataset", test.display().to_string());
            }
        }
        let join = |v: Vec<String>| v.join(",");
        kv("k_cutoff", self.k_cutoff.to_string());
        kv("eta_true", self.eta_true.to_string());
        kv("eta_hat", self.eta_hat().to_string());
        kv("noise_eps", self.noise_eps.to_string());
        kv("n_sessions", self.n_sessions.to_string());
        kv("methods", join(self.methods.iter().map(|m| m.to_string()).collect()));
        kv("seeds", join(self.seeds.iter().map(|s| s.to_string()).collect()));
        kv("policy_fraction", self.policy_fraction.to_string());
        kv("epochs", self.train.epochs.to_string());
        kv("learning_rate", self.train.learning_rate.to_string());
        kv("l2", self.train.l2.to_string());
        kv("gamma", self.train.gamma.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("dropout", self.train.dropout.to_string());
        kv("hidden", join(self.train.hidden.iter().map(|h| h.to_string()).collect()));
        kv("selection_complement", self.train.selection_complement.to_string());
        kv("graded_eval", self.graded_eval.to_string());
        kv("record_timing", self.record_timing.to_string());
        for (m, o) in &self.overrides {
            if let Some(lr) = o.learning_rate {
                kv(&format!("{m}.learning_rate"), lr.to_string());
            }
            if let Some(l2) = o.l2 {
                kv(&format!("{m}.l2"), l2.to_string());
            }
        }
        out
    }
}
