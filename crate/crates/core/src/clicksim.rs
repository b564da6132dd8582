//! Position-based click simulation with a top-k cutoff.
//!
//! Each session draws one query uniformly, shows the logging policy's
//! ranking, and for every document decides examination with probability
//! `rho[position]` and a click given examination (always for relevant
//! documents, with probability `noise_eps` for irrelevant ones). Documents
//! below the cutoff are never examined and are logged with `selected = false`.
//!
//! Session `i` draws all of its randomness from ChaCha stream `i` under the
//! log seed, so logs do not depend on evaluation order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, QueryGroup};
use crate::policy::{rank_query, LoggingPolicy, RankedList};
use crate::{Error, Result};

pub const CLICK_LOG_HEADER: &str = "query_id,doc_index,position,selected,clicked,propensity";

/// Examination probability `(1/position)^eta` above the cutoff, 0 below it.
pub fn examination_probability(position: usize, eta: f64, k_cutoff: usize) -> f64 {
    if position == 0 || position > k_cutoff {
        0.0
    } else {
        (1.0 / position as f64).powf(eta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityTable {
    pub eta: f64,
    pub k_cutoff: usize,
    /// `rho[p - 1]` for positions `p = 1..=k_cutoff`.
    pub rho: Vec<f64>,
}

impl PropensityTable {
    pub fn new(eta: f64, k_cutoff: usize) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::Validation(format!("eta must be a finite value >= 0, got {eta}")));
        }
        if k_cutoff == 0 {
            return Err(Error::Validation("k_cutoff must be at least 1".into()));
        }
        let rho = (1..=k_cutoff).map(|p| examination_probability(p, eta, k_cutoff)).collect();
        Ok(PropensityTable { eta, k_cutoff, rho })
    }

    pub fn rho(&self, position: usize) -> f64 {
        if position == 0 || position > self.k_cutoff {
            0.0
        } else {
            self.rho[position - 1]
        }
    }
}

/// A table with the same cutoff as `true_table` but severity `eta_hat`.
pub fn misspecified_table(true_table: &PropensityTable, eta_hat: f64) -> Result<PropensityTable> {
    PropensityTable::new(eta_hat, true_table.k_cutoff)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickRecord {
    /// Index of the query group in the dataset.
    pub query: usize,
    pub doc: usize,
    pub position: usize,
    pub selected: bool,
    pub clicked: bool,
    /// Examination propensity of the record's position; 0 for unselected records.
    pub propensity: f64,
}

impl ClickRecord {
    /// `c / rho` for a selected record.
    pub fn reweighted_click(&self) -> Result<f64> {
        crate::estimators::ips_reweight(f64::from(u8::from(self.clicked)), self.propensity)
    }
}

/// Records of all sessions, concatenated in session order. Within a session
/// records are in display order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickLog {
    pub records: Vec<ClickRecord>,
    sessions: Vec<Range<usize>>,
}

impl ClickLog {
    pub fn from_sessions(sessions: Vec<Vec<ClickRecord>>) -> Self {
        let mut records = Vec::with_capacity(sessions.iter().map(Vec::len).sum());
        let mut ranges = Vec::with_capacity(sessions.len());
        for s in sessions {
            let start = records.len();
            records.extend(s);
            ranges.push(start..records.len());
        }
        ClickLog { records, sessions: ranges }
    }

    pub fn n_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn sessions(&self) -> impl Iterator<Item = &[ClickRecord]> + '_ {
        self.sessions.iter().map(move |r| &self.records[r.clone()])
    }

    pub fn session_ranges(&self) -> &[Range<usize>] {
        &self.sessions
    }

    /// The selected part `D_s`.
    pub fn selected(&self) -> impl Iterator<Item = &ClickRecord> + '_ {
        self.records.iter().filter(|r| r.selected)
    }

    /// The unselected part `D_u`.
    pub fn unselected(&self) -> impl Iterator<Item = &ClickRecord> + '_ {
        self.records.iter().filter(|r| !r.selected)
    }

    /// Replace the stored propensities of selected records with those of
    /// `table`. Estimators only ever see the propensities stored on records.
    pub fn with_propensities(&self, table: &PropensityTable) -> Result<ClickLog> {
        let mut log = self.clone();
        for r in &mut log.records {
            if r.selected {
                let rho = table.rho(r.position);
                if rho <= 0.0 {
                    return Err(Error::Validation(format!(
                        "selected record at position {} lies beyond the table cutoff {}",
                        r.position, table.k_cutoff
                    )));
                }
                r.propensity = rho;
            }
        }
        Ok(log)
    }

    /// Distinct documents shown above the cutoff, per query index.
    pub fn selected_docs_by_query(&self) -> BTreeMap<usize, BTreeSet<usize>> {
        let mut out: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for r in self.selected() {
            out.entry(r.query).or_default().insert(r.doc);
        }
        out
    }

    pub fn to_csv(&self, dataset: &Dataset) -> String {
        let mut out = String::with_capacity(self.records.len() * 24);
        out.push_str(CLICK_LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                dataset.groups[r.query].query_id,
                r.doc,
                r.position,
                u8::from(r.selected),
                u8::from(r.clicked),
                r.propensity
            );
        }
        out
    }

    pub fn write_csv<W: Write>(&self, dataset: &Dataset, mut w: W) -> Result<()> {
        w.write_all(self.to_csv(dataset).as_bytes())?;
        Ok(())
    }

    /// Read a click-log file. Sessions are recovered from the record order:
    /// each session is written in display order, so position 1 opens a new one.
    pub fn read_csv<R: BufRead>(reader: R, dataset: &Dataset) -> Result<ClickLog> {
        let index = dataset.query_index();
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != CLICK_LOG_HEADER {
            return Err(Error::Parse { line: 1, msg: format!("expected header {CLICK_LOG_HEADER:?}") });
        }
        let mut sessions: Vec<Vec<ClickRecord>> = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: lineno, msg };
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", fields.len())));
            }
            let query = *index.get(fields[0]).ok_or_else(|| err(format!("unknown query id {:?}", fields[0])))?;
            let doc: usize = fields[1].parse().map_err(|_| err("bad doc_index".into()))?;
            if doc >= dataset.groups[query].docs.len() {
                return Err(err(format!("doc_index {doc} out of range for query {}", fields[0])));
            }
            let position: usize = fields[2].parse().map_err(|_| err("bad position".into()))?;
            let flag = |s: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(err(format!("expected 0 or 1, found {s:?}"))),
            };
            let selected = flag(fields[3])?;
            let clicked = flag(fields[4])?;
            let propensity: f64 = fields[5].parse().map_err(|_| err("bad propensity".into()))?;
            if clicked && !selected {
                return Err(err("unselected record cannot be clicked".into()));
            }
            if selected && !(propensity > 0.0) {
                return Err(err("selected record needs a positive propensity".into()));
            }
            let rec = ClickRecord { query, doc, position, selected, clicked, propensity };
            match sessions.last_mut() {
                Some(s) if position != 1 && s[0].query == query => s.push(rec),
                _ if position == 1 => sessions.push(vec![rec]),
                _ => return Err(err("session does not start at position 1".into())),
            }
        }
        if sessions.is_empty() {
            return Err(Error::Validation("click log has no records".into()));
        }
        Ok(ClickLog::from_sessions(sessions))
    }
}

fn simulate_ranked<R: Rng>(
    ranked: &RankedList,
    group: &QueryGroup,
    query: usize,
    table: &PropensityTable,
    noise_eps: f64,
    rng: &mut R,
) -> Vec<ClickRecord> {
    ranked
        .order
        .iter()
        .enumerate()
        .map(|(i, &doc)| {
            let position = i + 1;
            let selected = ranked.selected[doc];
            let rho = if selected { table.rho(position) } else { 0.0 };
            // Two draws per document regardless of outcome.
            let u_exam: f64 = rng.random();
            let u_click: f64 = rng.random();
            let examined = u_exam < rho;
            let p_click = if group.docs[doc].label == 1 { 1.0 } else { noise_eps };
            ClickRecord { query, doc, position, selected, clicked: examined && u_click < p_click, propensity: rho }
        })
        .collect()
}

/// One session over `group`, which must be the dataset's query `query`.
pub fn simulate_session<R: Rng>(
    policy: &LoggingPolicy,
    group: &QueryGroup,
    query: usize,
    table: &PropensityTable,
    noise_eps: f64,
    rng: &mut R,
) -> Result<Vec<ClickRecord>> {
    check_noise(noise_eps)?;
    let ranked = rank_query(policy, group, table.k_cutoff)?;
    Ok(simulate_ranked(&ranked, group, query, table, noise_eps, rng))
}

fn check_noise(noise_eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&noise_eps) {
        return Err(Error::Validation(format!("click noise must lie in [0, 1), got {noise_eps}")));
    }
    Ok(())
}

pub fn session_rng(seed: u64, session: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(session);
    rng
}

/// Simulate `n_sessions` sessions, each on a uniformly drawn query.
pub fn build_click_log(
    policy: &LoggingPolicy,
    dataset: &Dataset,
    table: &PropensityTable,
    n_sessions: usize,
    noise_eps: f64,
    seed: u64,
) -> Result<ClickLog> {
    if n_sessions == 0 {
        return Err(Error::Validation("n_sessions must be at least 1".into()));
    }
    check_noise(noise_eps)?;
    let rankings = dataset
        .groups
        .iter()
        .map(|g| rank_query(policy, g, table.k_cutoff))
        .collect::<Result<Vec<_>>>()?;
    let n_queries = dataset.groups.len();
    let sessions = (0..n_sessions)
        .map(|s| {
            let mut rng = session_rng(seed, s as u64);
            let q = rng.random_range(0..n_queries);
            simulate_ranked(&rankings[q], &dataset.groups[q], q, table, noise_eps, &mut rng)
        })
        .collect();
    Ok(ClickLog::from_sessions(sessions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic_ltr;

    fn fixture() -> (LoggingPolicy, Dataset) {
        let beta = vec![1.0, 0.5, -0.5];
        let ds = generate_synthetic_ltr(8, 10, 3, &beta, 0.5, 21).unwrap();
        (LoggingPolicy { weights: beta }, ds)
    }

    #[test]
    fn examination_values() {
        assert_eq!(examination_probability(1, 1.0, 5), 1.0);
        assert_eq!(examination_probability(2, 1.0, 5), 0.5);
        assert_eq!(examination_probability(6, 1.0, 5), 0.0);
    }

    #[test]
    fn table_invariants() {
        for eta in [0.0, 0.5, 1.0, 2.0] {
            let t = PropensityTable::new(eta, 7).unwrap();
            assert_eq!(t.rho(1), 1.0);
            assert!(t.rho.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(t.rho(8), 0.0);
        }
        assert!(PropensityTable::new(-1.0, 3).is_err());
        assert!(PropensityTable::new(1.0, 0).is_err());
    }

    #[test]
    fn misspecification() {
        let t = PropensityTable::new(1.0, 5).unwrap();
        assert_eq!(misspecified_table(&t, 1.0).unwrap().rho, t.rho);
        assert!(misspecified_table(&t, 0.0).unwrap().rho.iter().all(|&r| r == 1.0));
        let hat = misspecified_table(&t, 2.0).unwrap();
        assert_eq!((hat.rho(2), t.rho(2)), (0.25, 0.5));
    }

    #[test]
    fn no_clicks_without_relevance_or_noise() {
        let (p, mut ds) = fixture();
        for g in &mut ds.groups {
            for d in &mut g.docs {
                d.label = 0;
            }
        }
        let t = PropensityTable::new(0.0, 10).unwrap();
        let log = build_click_log(&p, &ds, &t, 200, 0.0, 1).unwrap();
        assert!(log.records.iter().all(|r| !r.clicked));
    }

    #[test]
    fn full_examination_clicks_equal_labels() {
        let (p, ds) = fixture();
        let t = PropensityTable::new(0.0, 10).unwrap();
        let mut rng = session_rng(3, 0);
        let recs = simulate_session(&p, &ds.groups[2], 2, &t, 0.0, &mut rng).unwrap();
        for r in recs {
            assert!(r.selected);
            assert_eq!(u8::from(r.clicked), ds.groups[2].docs[r.doc].label);
        }
    }

    #[test]
    fn unselected_records_never_clicked() {
        let (p, ds) = fixture();
        let t = PropensityTable::new(0.5, 3).unwrap();
        let log = build_click_log(&p, &ds, &t, 500, 0.3, 2).unwrap();
        for r in &log.records {
            assert!(r.selected || (!r.clicked && r.propensity == 0.0));
            assert_eq!(r.selected, r.position <= 3);
            if r.selected {
                assert!(r.propensity > 0.0);
            }
        }
        assert_eq!(log.selected().count() + log.unselected().count(), log.records.len());
    }

    #[test]
    fn single_session_and_determinism() {
        let (p, ds) = fixture();
        let t = PropensityTable::new(1.0, 4).unwrap();
        let log = build_click_log(&p, &ds, &t, 1, 0.1, 5).unwrap();
        assert_eq!(log.records.len(), 10);
        assert_eq!(log.n_sessions(), 1);
        let a = build_click_log(&p, &ds, &t, 300, 0.1, 5).unwrap();
        let b = build_click_log(&p, &ds, &t, 300, 0.1, 5).unwrap();
        assert_eq!(a, b);
        assert!(build_click_log(&p, &ds, &t, 0, 0.1, 5).is_err());
        assert!(build_click_log(&p, &ds, &t, 3, 1.0, 5).is_err());
    }

    #[test]
    fn sessions_prefix_stable() {
        // Session i depends only on (seed, i).
        let (p, ds) = fixture();
        let t = PropensityTable::new(1.0, 4).unwrap();
        let short = build_click_log(&p, &ds, &t, 20, 0.1, 9).unwrap();
        let long = build_click_log(&p, &ds, &t, 40, 0.1, 9).unwrap();
        assert_eq!(short.records[..], long.records[..short.records.len()]);
    }

    #[test]
    fn csv_round_trip() {
        let (p, ds) = fixture();
        let t = PropensityTable::new(1.0, 4).unwrap();
        let log = build_click_log(&p, &ds, &t, 50, 0.1, 5).unwrap();
        let text = log.to_csv(&ds);
        assert!(text.starts_with(CLICK_LOG_HEADER));
        let back = ClickLog::read_csv(text.as_bytes(), &ds).unwrap();
        assert_eq!(back, log);
        assert!(ClickLog::read_csv("bad\n".as_bytes(), &ds).is_err());
        let bad = format!("{CLICK_LOG_HEADER}\n1,0,1,0,1,0\n");
        assert!(ClickLog::read_csv(bad.as_bytes(), &ds).is_err());
    }

    #[test]
    fn reweighting_table() {
        let (p, ds) = fixture();
        let t = PropensityTable::new(1.0, 4).unwrap();
        let log = build_click_log(&p, &ds, &t, 50, 0.1, 5).unwrap();
        let hat = log.with_propensities(&PropensityTable::new(2.0, 4).unwrap()).unwrap();
        for (a, b) in log.records.iter().zip(&hat.records) {
            if a.selected {
                assert_eq!(b.propensity, a.propensity * a.propensity);
            } else {
                assert_eq!(b.propensity, 0.0);
            }
        }
    }
}
