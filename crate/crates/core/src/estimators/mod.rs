//! Ranker estimators trained from a click log: Naive, IPS, Heckman two-stage,
//! RankAgg, the pointwise and pairwise selection-aware estimators (CLD and
//! CLD-pair), and the full-information Oracle.

mod cld;
mod heckman;
mod pairwise;
mod regression;

pub use cld::{cld_pointwise_loss, cld_scalar_loss, fit_cld, train_cld, CldFit, CldSample, CldTerms};
pub use heckman::{heckman_from_rows, train_heckman, HeckmanFit};
pub use pairwise::{build_pairs, cld_pair_objective, train_cld_pair, PairTerms, PreferencePair};
pub use regression::{train_ips, train_naive, train_oracle};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clicksim::ClickLog;
use crate::dataset::{Dataset, Document, QueryGroup};
use crate::metrics::{order_by_score, Ranker};
use crate::models::{Checkpoint, LinearModel, MlpModel, Scorer, DEFAULT_HIDDEN};
use crate::{Error, Result};

/// Inverse-propensity reweighting of a click, `c / rho`.
pub fn ips_reweight(c: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Validation(format!("propensity must be positive to reweight a click, got {rho}")));
    }
    Ok(c / rho)
}

/// How the pairwise objective scores an unselected document's selection logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionComplement {
    /// `log sigmoid(1 - f)`.
    Literal,
    /// `log(1 - sigmoid(f)) = log sigmoid(-f)`.
    Bce,
}

impl FromStr for SelectionComplement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(SelectionComplement::Literal),
            "bce" => Ok(SelectionComplement::Bce),
            _ => Err(Error::Config(format!("selection_complement must be literal or bce, got {s:?}"))),
        }
    }
}

impl fmt::Display for SelectionComplement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionComplement::Literal => "literal",
            SelectionComplement::Bce => "bce",
        })
    }
}

/// Hyperparameters shared by all trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Correlation between selection and relevance noise, `|gamma| < 1`.
    pub gamma: f64,
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout: f64,
    pub hidden: Vec<usize>,
    pub selection_complement: SelectionComplement,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.2,
            learning_rate: 1e-3,
            l2: 1e-3,
            epochs: 12,
            batch_size: 64,
            seed: 0,
            dropout: 0.5,
            hidden: DEFAULT_HIDDEN.to_vec(),
            selection_complement: SelectionComplement::Literal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.abs() < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (-1, 1), got {}", self.gamma)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.l2 >= 0.0) || !self.l2.is_finite() {
            return Err(Error::Config(format!("l2 must be non-negative, got {}", self.l2)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// RNG for initialization and shuffling.
    pub(crate) fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Separate stream for dropout masks.
    pub(crate) fn dropout_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        rng
    }

    pub(crate) fn mlp(&self, dim: usize, rng: &mut ChaCha8Rng) -> Result<Scorer> {
        Ok(Scorer::Mlp(MlpModel::new(dim, &self.hidden, self.dropout, rng)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Naive,
    Ips,
    Heckman,
    RankAgg,
    Cld,
    CldPair,
    Oracle,
    /// Pointwise estimator with a feed-forward ranking network.
    CldN,
    /// Pairwise estimator with a linear ranking model.
    CldPairL,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Naive,
        Method::Ips,
        Method::Heckman,
        Method::RankAgg,
        Method::Cld,
        Method::CldPair,
        Method::Oracle,
        Method::CldN,
        Method::CldPairL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Ips => "ips",
            Method::Heckman => "heckman",
            Method::RankAgg => "rankagg",
            Method::Cld => "cld",
            Method::CldPair => "cld_pair",
            Method::Oracle => "oracle",
            Method::CldN => "cld_n",
            Method::CldPairL => "cld_pair_l",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// A trained scoring function. `omega` is the selection model, kept for
/// diagnostics by the estimators that learn one.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRanker {
    pub method: Method,
    pub beta: Scorer,
    pub omega: Option<LinearModel>,
    /// Mean training loss per epoch.
    pub trace: Vec<f64>,
}

impl TrainedRanker {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.beta.score(x)
    }

    fn scores(&self, group: &QueryGroup) -> Result<Vec<f64>> {
        group.docs.iter().map(|d| self.score(&d.features)).collect()
    }

    fn write_into(&self, prefix: &str, ck: &mut Checkpoint) {
        ck.meta(&join(prefix, "method"), self.method.name());
        self.beta.write_blocks(&join(prefix, "beta"), ck);
        if let Some(omega) = &self.omega {
            Scorer::Linear(omega.clone()).write_blocks(&join(prefix, "omega"), ck);
        }
    }

    fn read_from(prefix: &str, ck: &Checkpoint) -> Result<Self> {
        let method: Method = ck.get_meta(&join(prefix, "method"))?.parse()?;
        let beta = Scorer::read_blocks(&join(prefix, "beta"), ck)?;
        let omega = match Scorer::read_blocks(&join(prefix, "omega"), ck) {
            Ok(Scorer::Linear(m)) => Some(m),
            _ => None,
        };
        Ok(TrainedRanker { method, beta, omega, trace: Vec::new() })
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Ranker for TrainedRanker {
    fn rank(&self, group: &QueryGroup) -> Result<Vec<usize>> {
        Ok(order_by_score(group, &self.scores(group)?))
    }
}

/// Borda fusion of two rankers: a document at position `p` of a `K`-document
/// list earns `K - p + 1` points from each ranker. Ties go to the higher
/// score under ranker `a`, then to the lower doc id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankAgg {
    pub a: TrainedRanker,
    pub b: TrainedRanker,
}

pub fn rank_agg(ranker_a: &dyn Ranker, ranker_b: &dyn Ranker, a_scores: &[f64], group: &QueryGroup) -> Result<Vec<usize>> {
    let k = group.docs.len();
    let mut borda = vec![0usize; k];
    for order in [ranker_a.rank(group)?, ranker_b.rank(group)?] {
        for (pos, &d) in order.iter().enumerate() {
            borda[d] += k - pos;
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| {
        borda[y]
            .cmp(&borda[x])
            .then(a_scores[y].total_cmp(&a_scores[x]))
            .then(group.docs[x].doc_id.cmp(&group.docs[y].doc_id))
    });
    Ok(order)
}

impl Ranker for RankAgg {
    fn rank(&self, group: &QueryGroup) -> Result<Vec<usize>> {
        rank_agg(&self.a, &self.b, &self.a.scores(group)?, group)
    }
}

/// Any trained model the harness can evaluate or save.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Single(TrainedRanker),
    Agg(RankAgg),
}

impl TrainedModel {
    pub fn method(&self) -> Method {
        match self {
            TrainedModel::Single(r) => r.method,
            TrainedModel::Agg(_) => Method::RankAgg,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TrainedModel::Single(r) => r.beta.input_dim(),
            TrainedModel::Agg(a) => a.a.beta.input_dim(),
        }
    }

    pub fn trace(&self) -> &[f64] {
        match self {
            TrainedModel::Single(r) => &r.trace,
            TrainedModel::Agg(_) => &[],
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta("model", self.method().name());
        match self {
            TrainedModel::Single(r) => r.write_into("", &mut ck),
            TrainedModel::Agg(a) => {
                a.a.write_into("a", &mut ck);
                a.b.write_into("b", &mut ck);
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let method: Method = ck.get_meta("model")?.parse()?;
        Ok(match method {
            Method::RankAgg => {
                TrainedModel::Agg(RankAgg { a: TrainedRanker::read_from("a", ck)?, b: TrainedRanker::read_from("b", ck)? })
            }
            _ => TrainedModel::Single(TrainedRanker::read_from("", ck)?),
        })
    }
}

impl Ranker for TrainedModel {
    fn rank(&self, group: &QueryGroup) -> Result<Vec<usize>> {
        match self {
            TrainedModel::Single(r) => r.rank(group),
            TrainedModel::Agg(a) => a.rank(group),
        }
    }
}

/// Write a training trace as `epoch,loss` CSV.
pub fn write_trace<W: Write>(trace: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "epoch,loss")?;
    for (i, l) in trace.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, l)?;
    }
    Ok(())
}

/// The training dataset restricted to the documents the log shows above the
/// cutoff, which is what the full-information baseline is allowed to see.
pub fn selected_subset(log: &ClickLog, dataset: &Dataset) -> Result<Dataset> {
    let shown = log.selected_docs_by_query();
    let groups = shown
        .iter()
        .map(|(&q, docs)| QueryGroup {
            query_id: dataset.groups[q].query_id.clone(),
            docs: docs
                .iter()
                .enumerate()
                .map(|(k, &d)| Document { doc_id: k, ..dataset.groups[q].docs[d].clone() })
                .collect(),
        })
        .collect();
    Dataset::new(groups, dataset.feature_dim, dataset.split)
}

/// Train `method` on `log` over the training `dataset`.
pub fn train_method(method: Method, log: &ClickLog, dataset: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let single = |r: TrainedRanker| Ok(TrainedModel::Single(r));
    match method {
        Method::Naive => single(train_naive(log, dataset, config)?),
        Method::Ips => single(train_ips(log, dataset, config)?),
        Method::Heckman => single(train_heckman(log, dataset, config)?),
        Method::RankAgg => Ok(TrainedModel::Agg(RankAgg {
            a: train_ips(log, dataset, config)?,
            b: train_heckman(log, dataset, config)?,
        })),
        Method::Cld => single(train_cld(log, dataset, config, false)?),
        Method::CldN => single(train_cld(log, dataset, config, true)?),
        Method::CldPair => single(train_cld_pair(log, dataset, config, true)?),
        Method::CldPairL => single(train_cld_pair(log, dataset, config, false)?),
        Method::Oracle => single(train_oracle(&selected_subset(log, dataset)?, config)?),
    }
}

/// All document features of a dataset stacked into one matrix, with the row
/// offset of each query.
pub(crate) struct FeatureTable {
    pub x: Array2<f64>,
    offsets: Vec<usize>,
}

impl FeatureTable {
    pub fn new(dataset: &Dataset) -> Self {
        let mut offsets = Vec::with_capacity(dataset.groups.len());
        let mut data = Vec::with_capacity(dataset.n_docs() * dataset.feature_dim);
        let mut n = 0;
        for g in &dataset.groups {
            offsets.push(n);
            for d in &g.docs {
                data.extend_from_slice(&d.features);
            }
            n += g.docs.len();
        }
        let x = Array2::from_shape_vec((n, dataset.feature_dim), data).expect("validated dataset");
        FeatureTable { x, offsets }
    }

    pub fn row(&self, query: usize, doc: usize) -> usize {
        self.offsets[query] + doc
    }

    /// Gather the given rows into a new matrix.
    pub fn gather(&self, rows: &[usize]) -> Array2<f64> {
        self.x.select(ndarray::Axis(0), rows)
    }
}

pub(crate) fn check_log(log: &ClickLog, dataset: &Dataset) -> Result<()> {
    if log.records.is_empty() {
        return Err(Error::Validation("click log is empty".into()));
    }
    for r in &log.records {
        if r.query >= dataset.groups.len() || r.doc >= dataset.groups[r.query].docs.len() {
            return Err(Error::Validation("click log refers to a document outside the dataset".into()));
        }
    }
    Ok(())
}
