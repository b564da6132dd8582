//! LETOR-format learning-to-rank data and synthetic generators.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Grades at or above this value count as relevant.
pub const RELEVANT_GRADE: u8 = 3;
pub const MAX_GRADE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    /// Position of the document in its query group, in file order.
    pub doc_id: usize,
    pub features: Vec<f64>,
    pub grade: u8,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub query_id: String,
    pub docs: Vec<Document>,
}

impl QueryGroup {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.docs.iter().map(|d| d.label).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub groups: Vec<QueryGroup>,
    pub feature_dim: usize,
    pub split: Split,
}

fn binary_label(grade: u8) -> u8 {
    u8::from(grade >= RELEVANT_GRADE)
}

impl Dataset {
    pub fn new(groups: Vec<QueryGroup>, feature_dim: usize, split: Split) -> Result<Self> {
        let ds = Dataset { groups, feature_dim, split };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Validation("dataset has no query groups".into()));
        }
        for g in &self.groups {
            if g.docs.is_empty() {
                return Err(Error::Validation(format!("query {} has no documents", g.query_id)));
            }
            for (i, d) in g.docs.iter().enumerate() {
                if d.doc_id != i {
                    return Err(Error::Validation(format!("query {}: doc ids must be 0..n in order", g.query_id)));
                }
                if d.features.len() != self.feature_dim {
                    return Err(Error::DimensionMismatch { expected: self.feature_dim, got: d.features.len() });
                }
                if d.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("features of query {} doc {i}", g.query_id)));
                }
                if d.grade > MAX_GRADE {
                    return Err(Error::Validation(format!("grade {} outside 0..=4", d.grade)));
                }
            }
        }
        Ok(())
    }

    pub fn n_docs(&self) -> usize {
        self.groups.iter().map(|g| g.docs.len()).sum()
    }

    pub fn features(&self, query: usize, doc: usize) -> &[f64] {
        &self.groups[query].docs[doc].features
    }

    /// Index of each query id.
    pub fn query_index(&self) -> HashMap<&str, usize> {
        self.groups.iter().enumerate().map(|(i, g)| (g.query_id.as_str(), i)).collect()
    }

    /// Split off the last `n_test` groups as a test set.
    pub fn split_off(mut self, n_test: usize) -> Result<(Dataset, Dataset)> {
        if n_test == 0 || n_test >= self.groups.len() {
            return Err(Error::Validation(format!(
                "cannot split {n_test} test queries from {} groups",
                self.groups.len()
            )));
        }
        let test_groups = self.groups.split_off(self.groups.len() - n_test);
        let dim = self.feature_dim;
        Ok((
            Dataset { groups: self.groups, feature_dim: dim, split: Split::Train },
            Dataset { groups: test_groups, feature_dim: dim, split: Split::Test },
        ))
    }

    /// Serialize in LETOR text format with every feature written out.
    pub fn to_letor(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            for d in &g.docs {
                let _ = write!(out, "{} qid:{}", d.grade, g.query_id);
                for (j, v) in d.features.iter().enumerate() {
                    let _ = write!(out, " {}:{}", j + 1, v);
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write_letor<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_letor().as_bytes())?;
        Ok(())
    }
}

/// Parse `<grade> qid:<id> <fid>:<val> ... [# comment]` lines.
///
/// Documents are grouped by qid in order of first appearance. Feature ids
/// that never appear for a document are filled with 0.0 and the feature
/// dimension is the largest id seen.
pub fn parse_letor<R: BufRead>(reader: R, split: Split) -> Result<Dataset> {
    struct Row {
        grade: u8,
        sparse: Vec<(usize, f64)>,
    }
    let mut order: Vec<(String, Vec<Row>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut dim = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: lineno, msg };
        let mut tokens = body.split_whitespace();
        let grade_tok = tokens.next().ok_or_else(|| parse_err("missing grade".into()))?;
        let grade: i64 = grade_tok
            .parse::<f64>()
            .ok()
            .filter(|g| g.fract() == 0.0)
            .map(|g| g as i64)
            .ok_or_else(|| parse_err(format!("bad grade {grade_tok:?}")))?;
        if !(0..=MAX_GRADE as i64).contains(&grade) {
            return Err(Error::Validation(format!("line {lineno}: grade {grade} outside 0..=4")));
        }
        let qid = tokens
            .next()
            .and_then(|t| t.strip_prefix("qid:"))
            .filter(|q| !q.is_empty())
            .ok_or_else(|| parse_err("expected qid:<id>".into()))?;
        let mut sparse = Vec::new();
        for tok in tokens {
            let (fid, val) = tok.split_once(':').ok_or_else(|| parse_err(format!("bad feature {tok:?}")))?;
            let fid: usize = fid
                .parse()
                .ok()
                .filter(|&f| f > 0)
                .ok_or_else(|| parse_err(format!("feature id must be a positive integer in {tok:?}")))?;
            let val: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(format!("bad feature value in {tok:?}")))?;
            dim = dim.max(fid);
            sparse.push((fid, val));
        }
        let slot = *index.entry(qid.to_string()).or_insert_with(|| {
            order.push((qid.to_string(), Vec::new()));
            order.len() - 1
        });
        order[slot].1.push(Row { grade: grade as u8, sparse });
    }

    if order.is_empty() {
        return Err(Error::Validation("empty LETOR stream".into()));
    }
    let groups = order
        .into_iter()
        .map(|(query_id, rows)| QueryGroup {
            query_id,
            docs: rows
                .into_iter()
                .enumerate()
                .map(|(doc_id, row)| {
                    let mut features = vec![0.0; dim];
                    for (fid, v) in row.sparse {
                        features[fid - 1] = v;
                    }
                    Document { doc_id, features, grade: row.grade, label: binary_label(row.grade) }
                })
                .collect(),
        })
        .collect();
    Dataset::new(groups, dim, split)
}

/// Recompute binary labels: 1 for grades 3 and 4, else 0.
pub fn binarize_grades(mut dataset: Dataset) -> Dataset {
    for g in &mut dataset.groups {
        for d in &mut g.docs {
            d.label = binary_label(d.grade);
        }
    }
    dataset
}

/// Synthetic dataset with a linear latent relevance.
///
/// Features are standard normal, the latent score is `x . true_beta` plus
/// Gaussian noise, and grades 0..=4 are the per-query quintiles of the latent
/// score.
pub fn generate_synthetic_ltr(
    n_queries: usize,
    docs_per_query: usize,
    feature_dim: usize,
    true_beta: &[f64],
    label_noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_queries == 0 || docs_per_query == 0 || feature_dim == 0 {
        return Err(Error::Validation("synthetic dataset dimensions must be positive".into()));
    }
    if true_beta.len() != feature_dim {
        return Err(Error::DimensionMismatch { expected: feature_dim, got: true_beta.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::with_capacity(n_queries);
    for q in 0..n_queries {
        let mut feats = Vec::with_capacity(docs_per_query);
        let mut latent = Vec::with_capacity(docs_per_query);
        for _ in 0..docs_per_query {
            let x: Vec<f64> = (0..feature_dim).map(|_| rng.sample(StandardNormal)).collect();
            let noise: f64 = rng.sample(StandardNormal);
            latent.push(dot(&x, true_beta) + label_noise_sd * noise);
            feats.push(x);
        }
        let grades = quintile_grades(&latent);
        let docs = feats
            .into_iter()
            .zip(grades)
            .enumerate()
            .map(|(doc_id, (features, grade))| Document { doc_id, features, grade, label: binary_label(grade) })
            .collect();
        groups.push(QueryGroup { query_id: (q + 1).to_string(), docs });
    }
    Dataset::new(groups, feature_dim, Split::Train)
}

fn quintile_grades(latent: &[f64]) -> Vec<u8> {
    let m = latent.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| latent[a].total_cmp(&latent[b]).then(a.cmp(&b)));
    let mut grades = vec![0u8; m];
    for (rank, &i) in idx.iter().enumerate() {
        grades[i] = ((rank * 5) / m) as u8;
    }
    grades
}

/// One-dimensional regression data: `x ~ U[0, 1]`, `r = slope x + intercept + noise`.
pub fn generate_fig2_data(n_points: usize, slope: f64, intercept: f64, noise_sd: f64, seed: u64) -> Result<Vec<(f64, f64)>> {
    if n_points < 2 {
        return Err(Error::Validation("need at least two points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_points)
        .map(|_| {
            let x: f64 = rng.random();
            let e: f64 = rng.sample(StandardNormal);
            (x, slope * x + intercept + noise_sd * e)
        })
        .collect())
}

/// Per-feature standardization fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(dataset: &Dataset) -> Self {
        let n = dataset.feature_dim;
        let count = dataset.n_docs() as f64;
        let mut mean = vec![0.0; n];
        for g in &dataset.groups {
            for d in &g.docs {
                for (m, v) in mean.iter_mut().zip(&d.features) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; n];
        for g in &dataset.groups {
            for d in &g.docs {
                for j in 0..n {
                    let c = d.features[j] - mean[j];
                    var[j] += c * c;
                }
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / count).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, dataset: &mut Dataset) -> Result<()> {
        if dataset.feature_dim != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), got: dataset.feature_dim });
        }
        for g in &mut dataset.groups {
            for d in &mut g.docs {
                for j in 0..d.features.len() {
                    d.features[j] = (d.features[j] - self.mean[j]) / self.scale[j];
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
