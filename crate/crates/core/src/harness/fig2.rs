//! The one-dimensional study of how position bias and top-k selection
//! distort a least-squares fit, separately and together.
//!
//! Points are grouped into queries of `docs_per_query` consecutive points and
//! ranked by feature value, highest first. Position bias scales the observed
//! target of the document at position `p` by `(1/p)^eta`; selection keeps only
//! the top `top_k` of each query.

use crate::dataset::generate_fig2_data;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Config {
    pub n_points: usize,
    pub slope: f64,
    pub intercept: f64,
    pub noise_sd: f64,
    pub docs_per_query: usize,
    pub top_k: usize,
    pub eta: f64,
    pub seed: u64,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Fig2Config { n_points: 2000, slope: 1.0, intercept: 0.5, noise_sd: 0.3, docs_per_query: 10, top_k: 3, eta: 1.0, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineFit {
    pub name: &'static str,
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares line through `(x, y)` points.
pub fn ols_line(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::Validation("a line fit needs at least two points".into()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Validation("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fits on clean data, position-biased data, selected data, and both.
pub fn fig2_study(cfg: &Fig2Config) -> Result<Vec<LineFit>> {
    if cfg.docs_per_query == 0 || cfg.top_k == 0 || cfg.top_k > cfg.docs_per_query {
        return Err(Error::Validation("need 1 <= top_k <= docs_per_query".into()));
    }
    let data = generate_fig2_data(cfg.n_points, cfg.slope, cfg.intercept, cfg.noise_sd, cfg.seed)?;
    let mut clean = Vec::with_capacity(data.len());
    let mut position = Vec::with_capacity(data.len());
    let mut selection = Vec::new();
    let mut both = Vec::new();
    for chunk in data.chunks(cfg.docs_per_query) {
        let mut order: Vec<usize> = (0..chunk.len()).collect();
        order.sort_by(|&a, &b| chunk[b].0.total_cmp(&chunk[a].0).then(a.cmp(&b)));
        for (i, &d) in order.iter().enumerate() {
            let (x, r) = chunk[d];
            let biased = (1.0 / (i + 1) as f64).powf(cfg.eta) * r;
            clean.push((x, r));
            position.push((x, biased));
            if i < cfg.top_k {
                selection.push((x, r));
                both.push((x, biased));
            }
        }
    }
    let mut fits = Vec::with_capacity(4);
    for (name, pts) in [("clean", clean), ("position", position), ("selection", selection), ("both", both)] {
        let (slope, intercept) = ols_line(&pts)?;
        fits.push(LineFit { name, slope, intercept });
    }
    Ok(fits)
}

pub fn fig2_csv(fits: &[LineFit]) -> String {
    let mut out = String::from("fit,slope,intercept\n");
    for f in fits {
        out.push_str(&format!("{},{},{}\n", f.name, f.slope, f.intercept));
    }
    out
}

/// Whether the combined bias moves the slope at least as far as either bias alone.
pub fn biases_compound(fits: &[LineFit]) -> bool {
    let get = |n: &str| fits.iter().find(|f| f.name == n).map(|f| f.slope);
    match (get("clean"), get("position"), get("selection"), get("both")) {
        (Some(c), Some(p), Some(s), Some(b)) => (b - c).abs() >= (p - c).abs().max((s - c).abs()),
        _ => false,
    }
}
