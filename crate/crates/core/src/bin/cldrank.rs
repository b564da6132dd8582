//! Command-line entry point for simulation, training, evaluation and sweeps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cld_rank::clicksim::{misspecified_table, ClickLog, PropensityTable};
use cld_rank::estimators::{train_method, write_trace, Method, TrainedModel};
use cld_rank::harness::{
    biases_compound, emit_plot_data, fig2_csv, fig2_study, load_datasets, results_csv, run_experiment, simulate_for_seed,
    sweep, train_config_for_seed, Axis, ExperimentConfig, Fig2Config,
};
use cld_rank::metrics::evaluate;
use cld_rank::models::Checkpoint;
use cld_rank::{Error, Result};

#[derive(Parser)]
#[command(name = "cldrank", version, about = "Unbiased learning to rank from simulated click logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Experiment config file (key = value lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set k_cutoff=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::parse(&std::fs::read_to_string(p)?)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the train and test splits of the configured dataset as LETOR files.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Fit the logging policy and simulate a click log.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run seed (defaults to the first configured seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the logging policy weights.
        #[arg(long)]
        policy_out: Option<PathBuf>,
    },
    /// Train one estimator on a click log and write a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Training trace CSV (`epoch,loss`).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the configured test split.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        /// Write `ndcg1,ndcg3,map,n_queries` here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured method and seed.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat the experiment over values of one axis.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// k_cutoff, eta_true, noise_eps, n_sessions or eta_hat.
        #[arg(long)]
        axis: Axis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Per-run results.
        #[arg(long)]
        out: PathBuf,
        /// Mean and 90% t-interval per (value, method, metric).
        #[arg(long)]
        summary: PathBuf,
        /// Also write one series file per (metric, method) here.
        #[arg(long)]
        plot_dir: Option<PathBuf>,
    },
    /// Fit lines to clean and biased one-dimensional data.
    Fig2 {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = Fig2Config::default().n_points)]
        n_points: usize,
        #[arg(long, default_value_t = Fig2Config::default().eta)]
        eta: f64,
        #[arg(long, default_value_t = Fig2Config::default().top_k)]
        top_k: usize,
        #[arg(long, default_value_t = Fig2Config::default().noise_sd)]
        noise_sd: f64,
        #[arg(long, default_value_t = Fig2Config::default().seed)]
        seed: u64,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Config(format!("cannot create {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))
}

fn first_seed(cfg: &ExperimentConfig, seed: Option<u64>) -> u64 {
    seed.unwrap_or(cfg.seeds[0])
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { cfg, train_out, test_out } => {
            let cfg = cfg.load()?;
            let (train, test) = load_datasets(&cfg)?;
            train.write_letor(create(&train_out)?)?;
            test.write_letor(create(&test_out)?)?;
        }
        Command::Simulate { cfg, seed, out, policy_out } => {
            let cfg = cfg.load()?;
            let (train, _) = load_datasets(&cfg)?;
            // Write the true propensities; `train` applies eta_hat itself.
            let exact = ExperimentConfig { eta_hat: None, ..cfg.clone() };
            let (policy, log) = simulate_for_seed(&exact, &train, first_seed(&cfg, seed))?;
            let mut w = create(&out)?;
            log.write_csv(&train, &mut w)?;
            w.flush()?;
            if let Some(p) = policy_out {
                policy.write(create(&p)?)?;
            }
        }
        Command::Train { cfg, log, method, seed, out, trace } => {
            let cfg = cfg.load()?;
            let (train, _) = load_datasets(&cfg)?;
            let log = ClickLog::read_csv(open(&log)?, &train)?;
            let table = misspecified_table(&PropensityTable::new(cfg.eta_true, cfg.k_cutoff)?, cfg.eta_hat())?;
            let log = log.with_propensities(&table)?;
            let model = train_method(method, &log, &train, &train_config_for_seed(&cfg, method, first_seed(&cfg, seed)))?;
            let mut w = create(&out)?;
            model.to_checkpoint().write(&mut w)?;
            w.flush()?;
            if let Some(p) = trace {
                let mut w = create(&p)?;
                write_trace(model.trace(), &mut w)?;
                w.flush()?;
            }
        }
        Command::Evaluate { cfg, model, out } => {
            let cfg = cfg.load()?;
            let (_, test) = load_datasets(&cfg)?;
            let model = TrainedModel::from_checkpoint(&Checkpoint::read(open(&model)?)?)?;
            if model.input_dim() != test.feature_dim {
                return Err(Error::DimensionMismatch { expected: model.input_dim(), got: test.feature_dim });
            }
            let r = evaluate(&model, &test, cfg.graded_eval)?;
            let text = format!("ndcg1,ndcg3,map,n_queries\n{},{},{},{}\n", r.ndcg_at_1, r.ndcg_at_3, r.map, r.n_queries);
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Command::Run { cfg, out } => {
            let results = run_experiment(&cfg.load()?)?;
            std::fs::write(out, results_csv(&results))?;
        }
        Command::Sweep { cfg, axis, values, out, summary, plot_dir } => {
            let result = sweep(&cfg.load()?, axis, &values)?;
            std::fs::write(out, result.raw_csv())?;
            let text = result.summary_csv();
            std::fs::write(summary, &text)?;
            if let Some(dir) = plot_dir {
                emit_plot_data(&text, &dir)?;
            }
        }
        Command::Fig2 { out, n_points, eta, top_k, noise_sd, seed } => {
            let cfg = Fig2Config { n_points, eta, top_k, noise_sd, seed, ..Fig2Config::default() };
            let fits = fig2_study(&cfg)?;
            std::fs::write(out, fig2_csv(&fits))?;
            if !biases_compound(&fits) {
                eprintln!("note: the combined bias does not exceed either bias alone for this configuration");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
