//! Acceptance suite. Prints one PASS/FAIL line per criterion and a count of
//! failures; with `ACCEPTANCE_STRICT=1` any failure also makes the process
//! exit non-zero. `ACCEPTANCE_ONLY=1,5` restricts the run to the
//! listed criteria; `ACCEPTANCE_SEEDS=101,102,103,104,105` runs the benchmark
//! criteria on other seeds, e.g. for tuning on seeds the verdict never sees,
//! and `ACCEPTANCE_SET=key=value;key=value` overrides benchmark config keys.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cld_rank::clicksim::{build_click_log, examination_probability, PropensityTable};
use cld_rank::dataset::{Dataset, Document, QueryGroup, Split};
use cld_rank::estimators::{cld_pair_objective, cld_pointwise_loss, fit_cld, CldSample, Method, SelectionComplement, TrainConfig};
use cld_rank::harness::{biases_compound, fig2_study, load_datasets, run_on, ExperimentConfig, Fig2Config};
use cld_rank::metrics::{average_precision, ndcg_at_k};
use cld_rank::models::{LinearModel, Scorer};
use cld_rank::numerics::{grad_check, inverse_mills, log_phi_cdf, phi_cdf};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = Result<String, String>;

fn pass_if(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn numerics() -> Check {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/normal_oracle.csv"))
        .map_err(|e| e.to_string())?;
    let (mut cdf_abs, mut log_rel, mut mills_rel) = (0.0f64, 0.0f64, 0.0f64);
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let z = v[0];
        if z.abs() <= 8.0 {
            cdf_abs = cdf_abs.max((phi_cdf(z) - v[1]).abs());
        }
        log_rel = log_rel.max(((log_phi_cdf(z) - v[2]) / v[2]).abs());
        mills_rel = mills_rel.max(((inverse_mills(z) - v[3]) / v[3]).abs());
    }
    let detail = format!("max |Phi err| {cdf_abs:.1e}, max rel log Phi err {log_rel:.1e}, max rel Mills err {mills_rel:.1e}");
    pass_if(cdf_abs <= 1e-12 && log_rel <= 1e-10 && mills_rel <= 1e-10, detail)
}

// ---------------------------------------------------------------- 2

fn gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let dim = 4;
    let mut worst_point = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let params: Vec<f64> = (0..2 * dim + 2).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let selected = rng.random_bool(0.6);
        let target = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(1.0..4.0) };
        let gamma = rng.random_range(-0.8..0.8);
        let split = |p: &[f64]| {
            (
                LinearModel { weights: p[..dim].to_vec(), bias: p[dim] },
                LinearModel { weights: p[dim + 1..2 * dim + 1].to_vec(), bias: p[2 * dim + 1] },
            )
        };
        let r = grad_check(
            |p| {
                let (beta, omega) = split(p);
                let (loss, gb, go) = cld_pointwise_loss(&x, selected, target, &beta, &omega, gamma).unwrap();
                let mut g = gb.weights;
                g.push(gb.bias);
                g.extend(go.weights);
                g.push(go.bias);
                (loss, g)
            },
            &params,
            1e-5,
        )
        .map_err(|e| e.to_string())?;
        worst_point = worst_point.max(r.max_relative_error);
    }
    let mut worst_pair = 0.0f64;
    for n in 0..100 {
        let (s_i, s_j) = (rng.random_bool(0.5), rng.random_bool(0.5));
        let complement = if n % 2 == 0 { SelectionComplement::Literal } else { SelectionComplement::Bce };
        let params: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let r = grad_check(
            |p| {
                let t = cld_pair_objective(s_i, s_j, p[0], p[1], p[2], p[3], complement);
                (t.loss, vec![t.d_beta_i, t.d_beta_j, t.d_omega_i, t.d_omega_j])
            },
            &params,
            1e-6,
        )
        .map_err(|e| e.to_string())?;
        worst_pair = worst_pair.max(r.max_relative_error);
    }
    let detail = format!("max rel err pointwise {worst_point:.1e}, pairwise {worst_pair:.1e}");
    pass_if(worst_point < 1e-4 && worst_pair < 1e-4, detail)
}

// ---------------------------------------------------------------- 3

fn simulator() -> Check {
    // Every document relevant and no click noise, so a click happens exactly
    // when the document is examined.
    let docs_per_query = 10;
    let groups = (0..20)
        .map(|q| QueryGroup {
            query_id: format!("{}", q + 1),
            docs: (0..docs_per_query).map(|d| Document { doc_id: d, features: vec![d as f64], grade: 4, label: 1 }).collect(),
        })
        .collect();
    let ds = Dataset::new(groups, 1, Split::Train).map_err(|e| e.to_string())?;
    let policy = cld_rank::policy::LoggingPolicy { weights: vec![1.0] };
    let eta = 1.0;
    let table = PropensityTable::new(eta, docs_per_query).map_err(|e| e.to_string())?;
    let n_sessions = 100_000;
    let log = build_click_log(&policy, &ds, &table, n_sessions, 0.0, 99).map_err(|e| e.to_string())?;
    let mut shown = vec![0usize; docs_per_query + 1];
    let mut clicked = vec![0usize; docs_per_query + 1];
    for r in &log.records {
        shown[r.position] += 1;
        clicked[r.position] += usize::from(r.clicked);
    }
    let mut worst = 0.0f64;
    for k in 1..=docs_per_query {
        let rho = examination_probability(k, eta, docs_per_query);
        let n = shown[k] as f64;
        let sd = (rho * (1.0 - rho) / n).sqrt().max(1e-12);
        let z = (clicked[k] as f64 / n - rho).abs() / sd;
        worst = worst.max(z);
    }
    let total: usize = shown.iter().sum();
    pass_if(worst <= 3.0 && total == 1_000_000, format!("{total} impressions, worst deviation {worst:.2} sd"))
}

// ---------------------------------------------------------------- 4

fn tobit_cosine(n: usize, seed: u64) -> Result<f64, String> {
    let dim = 5;
    let gamma = 0.2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let omega: Vec<f64> = (0..dim).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut x = Array2::<f64>::zeros((n, dim));
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..dim {
            x[[i, j]] = rng.sample(StandardNormal);
        }
        let row = x.row(i);
        let e1: f64 = rng.sample(StandardNormal);
        let v: f64 = rng.sample(StandardNormal);
        let e2 = gamma * e1 + (1.0 - gamma * gamma).sqrt() * v;
        let y = row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + e1;
        let selected = row.iter().zip(&omega).map(|(a, b)| a * b).sum::<f64>() + e2 > 0.0;
        samples.push(CldSample { row: i, selected, target: if selected { y } else { 0.0 }, weight: 1.0 });
    }
    let config = TrainConfig { gamma, seed, ..TrainConfig::default() };
    let fit = fit_cld(&x, &samples, Scorer::Linear(LinearModel::zeros(dim)), &config).map_err(|e| e.to_string())?;
    let Scorer::Linear(learned) = fit.beta else { return Err("expected a linear ranker".into()) };
    let dot: f64 = learned.weights.iter().zip(&beta).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(dot / (norm(&learned.weights) * norm(&beta)).max(1e-300))
}

fn tobit_recovery() -> Check {
    let mut means = Vec::new();
    for n in [1_000, 10_000, 100_000] {
        let mut sum = 0.0;
        for seed in 1..=5 {
            sum += tobit_cosine(n, seed)?;
        }
        means.push(sum / 5.0);
    }
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    pass_if(monotone && means[2] >= 0.95, format!("mean cosine at 1e3/1e4/1e5 records: {:.4} / {:.4} / {:.4}", means[0], means[1], means[2]))
}

// ---------------------------------------------------------------- 5-8

/// Five-seed mean test NDCG@1 per (setting, method), computed on demand and
/// shared between criteria.
struct Bench {
    base: ExperimentConfig,
    train: Dataset,
    test: Dataset,
    cache: BTreeMap<(String, Method), f64>,
}

#[derive(Clone, Copy)]
struct Setting {
    k: usize,
    eta: f64,
    eta_hat: f64,
    noise: f64,
}

const DEFAULT: Setting = Setting { k: 5, eta: 1.0, eta_hat: 1.0, noise: 0.1 };

impl Bench {
    fn new() -> Result<Self, String> {
        let mut base = ExperimentConfig::default();
        if let Ok(seeds) = std::env::var("ACCEPTANCE_SEEDS") {
            base.set("seeds", &seeds).map_err(|e| e.to_string())?;
        }
        if let Ok(sets) = std::env::var("ACCEPTANCE_SET") {
            for kv in sets.split(';').filter(|t| !t.trim().is_empty()) {
                let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad override {kv:?}"))?;
                base.set(k.trim(), v.trim()).map_err(|e| e.to_string())?;
            }
        }
        let (train, test) = load_datasets(&base).map_err(|e| e.to_string())?;
        Ok(Bench { base, train, test, cache: BTreeMap::new() })
    }

    fn ndcg1(&mut self, s: Setting, methods: &[Method]) -> Result<Vec<f64>, String> {
        let key = format!("k={} eta={} eta_hat={} noise={}", s.k, s.eta, s.eta_hat, s.noise);
        let missing: Vec<Method> = methods.iter().copied().filter(|m| !self.cache.contains_key(&(key.clone(), *m))).collect();
        if !missing.is_empty() {
            let mut cfg = self.base.clone();
            cfg.k_cutoff = s.k;
            cfg.eta_true = s.eta;
            cfg.eta_hat = Some(s.eta_hat);
            cfg.noise_eps = s.noise;
            cfg.methods = missing.clone();
            let results = run_on(&cfg, &self.train, &self.test).map_err(|e| e.to_string())?;
            for m in missing {
                let v: Vec<f64> = results.iter().filter(|r| r.method == m).map(|r| r.ndcg1()).collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                if !mean.is_finite() {
                    return Err(format!("{m} failed at {key}"));
                }
                eprintln!("  [{key}] {m}: {mean:.4}");
                self.cache.insert((key.clone(), m), mean);
            }
        }
        Ok(methods.iter().map(|m| self.cache[&(key.clone(), *m)]).collect())
    }
}

fn method_ordering(b: &mut Bench) -> Check {
    use Method::*;
    let methods = [Naive, Ips, Heckman, RankAgg, Cld, CldPair, Oracle];
    let v = b.ndcg1(DEFAULT, &methods)?;
    let m: BTreeMap<Method, f64> = methods.iter().copied().zip(v).collect();
    let ok = m[&Oracle] >= m[&CldPair] && m[&Cld] >= m[&Ips] && m[&Ips] >= m[&Naive] && m[&Cld] >= m[&Heckman];
    let detail = methods.iter().map(|k| format!("{k} {:.4}", m[k])).collect::<Vec<_>>().join(", ");
    pass_if(ok, detail)
}

fn cutoff_and_severity_trends(b: &mut Bench) -> Check {
    let ks = [2, 5, 10, 20];
    let mut gaps = Vec::new();
    for k in ks {
        let v = b.ndcg1(Setting { k, ..DEFAULT }, &[Method::Cld, Method::Ips])?;
        gaps.push(v[0] - v[1]);
    }
    let gaps_ok = gaps.windows(2).all(|w| w[1] <= w[0]);
    let at0 = b.ndcg1(Setting { eta: 0.0, eta_hat: 0.0, ..DEFAULT }, &[Method::Heckman, Method::Cld])?;
    let at2 = b.ndcg1(Setting { eta: 2.0, eta_hat: 2.0, ..DEFAULT }, &[Method::Heckman, Method::Cld])?;
    let drop_heckman = at0[0] - at2[0];
    let drop_cld = at0[1] - at2[1];
    let eta_ok = drop_heckman > 0.0 && drop_cld < drop_heckman;
    let gap_text = ks.iter().zip(&gaps).map(|(k, g)| format!("k={k}: {g:+.4}")).collect::<Vec<_>>().join(" ");
    pass_if(gaps_ok && eta_ok, format!("CLD-IPS gap {gap_text}; eta 0->2 drop heckman {drop_heckman:.4}, cld {drop_cld:.4}"))
}

fn noise_robustness(b: &mut Bench) -> Check {
    let clean = b.ndcg1(Setting { noise: 0.0, ..DEFAULT }, &[Method::Cld, Method::CldPair])?;
    let noisy = b.ndcg1(Setting { noise: 0.5, ..DEFAULT }, &[Method::Cld, Method::CldPair])?;
    let (d_cld, d_pair) = (clean[0] - noisy[0], clean[1] - noisy[1]);
    pass_if(d_cld <= d_pair, format!("noise 0->0.5 drop cld {d_cld:.4}, cld_pair {d_pair:.4}"))
}

fn misspecification(b: &mut Bench) -> Check {
    let methods = [Method::Ips, Method::RankAgg, Method::Cld, Method::CldPair];
    let exact = b.ndcg1(DEFAULT, &methods)?;
    // Mean degradation over the over- and underestimating halves of [0, 2].
    let mut mean_drop = |hats: [f64; 2]| -> Result<Vec<f64>, String> {
        let mut drop = vec![0.0; methods.len()];
        for eta_hat in hats {
            let v = b.ndcg1(Setting { eta_hat, ..DEFAULT }, &methods)?;
            for (d, (e, x)) in drop.iter_mut().zip(exact.iter().zip(v)) {
                *d += (e - x) / hats.len() as f64;
            }
        }
        Ok(drop)
    };
    let over = mean_drop([0.0, 0.5])?;
    let under = mean_drop([1.5, 2.0])?;
    let at2 = b.ndcg1(Setting { eta_hat: 2.0, ..DEFAULT }, &methods)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, m) in methods.iter().enumerate() {
        ok &= over[i] < under[i];
        parts.push(format!("{m} {:+.4}/{:+.4}", over[i], under[i]));
    }
    let (d_ips, d_cld) = (exact[0] - at2[0], exact[2] - at2[2]);
    ok &= d_cld < d_ips;
    pass_if(ok, format!("mean degradation eta_hat<1 / eta_hat>1: {}; at eta_hat 2 ips {d_ips:.4}, cld {d_cld:.4}", parts.join(", ")))
}

// ---------------------------------------------------------------- 9

fn fig2() -> Check {
    let fits = fig2_study(&Fig2Config::default()).map_err(|e| e.to_string())?;
    let detail = fits.iter().map(|f| format!("{} {:.4}", f.name, f.slope)).collect::<Vec<_>>().join(", ");
    pass_if(biases_compound(&fits), format!("slopes {detail}"))
}

// ---------------------------------------------------------------- 10

fn brute_dcg(labels: &[u8], k: usize) -> f64 {
    labels.iter().take(k).enumerate().map(|(i, &l)| (f64::from(1u32 << l) - 1.0) * std::f64::consts::LN_2 / ((i + 2) as f64).ln()).sum()
}

fn permutations(items: &[u8]) -> Vec<Vec<u8>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn metrics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = rng.random_range(1..=7);
        let labels: Vec<u8> = (0..len).map(|_| rng.random_range(0..=4)).collect();
        let perms = permutations(&labels);
        for k in 1..=len {
            let ideal = perms.iter().map(|p| brute_dcg(p, k)).fold(0.0, f64::max);
            let expect = if ideal == 0.0 { 0.0 } else { brute_dcg(&labels, k) / ideal };
            worst = worst.max((ndcg_at_k(&labels, k) - expect).abs());
        }
    }
    let cases: [(&[u8], f64); 4] = [(&[1, 0, 0], 1.0), (&[0, 0, 1], 1.0 / 3.0), (&[1, 0, 1, 0], (1.0 + 2.0 / 3.0) / 2.0), (&[0, 0, 0], 0.0)];
    let mut map_ok = true;
    for (labels, expect) in cases {
        map_ok &= (average_precision(labels).map_err(|e| e.to_string())? - expect).abs() < 1e-12;
    }
    pass_if(worst < 1e-12 && map_ok, format!("max NDCG deviation {worst:.1e}; MAP examples {}", if map_ok { "match" } else { "differ" }))
}

// ---------------------------------------------------------------- 11

const CLI_SETTINGS: &[&str] = &[
    "synthetic.train_queries=40",
    "synthetic.test_queries=15",
    "synthetic.docs_per_query=8",
    "synthetic.feature_dim=4",
    "n_sessions=1500",
    "policy_fraction=0.25",
    "epochs=2",
    "hidden=8,4",
    "seeds=1,2",
    "k_cutoff=3",
];

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cldrank"));
    cmd.current_dir(dir).args(args);
    if args[0] != "fig2" {
        for s in CLI_SETTINGS {
            cmd.args(["--set", s]);
        }
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("cldrank {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn cli_session(dir: &Path) -> Result<(), String> {
    cli(dir, &["generate", "--train-out", "train.txt", "--test-out", "test.txt"])?;
    cli(dir, &["simulate", "--seed", "3", "--out", "log.csv", "--policy-out", "policy.txt"])?;
    for m in Method::ALL {
        let name = m.name();
        cli(dir, &["train", "--log", "log.csv", "--method", name, "--seed", "3", "--out", &format!("{name}.ckpt"), "--trace", &format!("{name}.trace")])?;
        cli(dir, &["evaluate", "--model", &format!("{name}.ckpt"), "--out", &format!("{name}.eval")])?;
    }
    cli(dir, &["run", "--out", "run.csv"])?;
    cli(
        dir,
        &["sweep", "--axis", "k_cutoff", "--values", "2,4", "--out", "sweep.csv", "--summary", "summary.csv", "--plot-dir", "plots", "--set", "methods=naive,cld"],
    )?;
    cli(dir, &["fig2", "--out", "fig2.csv"])?;
    Ok(())
}

fn list_files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(list_files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    cli_session(a.path())?;
    cli_session(b.path())?;
    let fa = list_files(a.path());
    let fb = list_files(b.path());
    let rel = |d: &Path, v: &[std::path::PathBuf]| v.iter().map(|p| p.strip_prefix(d).unwrap().to_path_buf()).collect::<Vec<_>>();
    if rel(a.path(), &fa) != rel(b.path(), &fb) {
        return Err("the two runs wrote different file sets".into());
    }
    let mut differing = Vec::new();
    for (x, y) in fa.iter().zip(&fb) {
        if std::fs::read(x).unwrap() != std::fs::read(y).unwrap() {
            differing.push(x.strip_prefix(a.path()).unwrap().display().to_string());
        }
    }
    pass_if(differing.is_empty(), format!("{} files compared, differing: {differing:?}", fa.len()))
}

// ----------------------------------------------------------------

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|v| v.contains(&n));
    let mut bench: Option<Bench> = None;
    let mut bench_check = |f: fn(&mut Bench) -> Check| -> Check {
        if bench.is_none() {
            bench = Some(Bench::new()?);
        }
        f(bench.as_mut().unwrap())
    };

    type Budget = Option<Duration>;
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    let mut failed = 0;
    let mut report = |n: usize, name: &str, budget: Budget, run: &mut dyn FnMut() -> Check| {
        if !wanted(n) {
            return;
        }
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let over = budget.is_some_and(|b| took > b);
        let (ok, detail) = match outcome {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} budget", budget.unwrap())),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!("criterion {n:>2} {name}: {} ({detail}) [{:.1}s]", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
    };

    report(1, "numerical kernels", Some(Duration::from_secs(1)), &mut numerics);
    report(2, "gradient correctness", Some(Duration::from_secs(10)), &mut gradients);
    report(3, "simulator fidelity", Some(Duration::from_secs(30)), &mut simulator);
    report(4, "tobit recovery", min(5), &mut tobit_recovery);
    report(5, "method ordering", min(15), &mut || bench_check(method_ordering));
    report(6, "cutoff and bias-severity trends", min(30), &mut || bench_check(cutoff_and_severity_trends));
    report(7, "click-noise robustness", min(20), &mut || bench_check(noise_robustness));
    report(8, "propensity misspecification", min(20), &mut || bench_check(misspecification));
    report(9, "bias compounding study", Some(Duration::from_secs(5)), &mut fig2);
    report(10, "metrics oracle", Some(Duration::from_secs(10)), &mut metrics_oracle);
    report(11, "cli determinism", None, &mut determinism);

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        // Unmet criteria are reported, not hidden; a strict run also turns
        // them into a failing exit status.
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    } else {
        println!("all acceptance criteria passed");
    }
}
