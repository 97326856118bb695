//! `behavclust`: fit, cluster and score behavioural credit accounts.

use std::path::PathBuf;
use std::process::ExitCode;

use behavclust::metrics::EvaluationReport;
use behavclust::pipeline::{self, PipelineConfig};
use behavclust::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "behavclust", version, about = "Uncertainty-aware clustering and default scoring of credit-account behaviour")]
struct Cli {
    /// Log progress (repeat for debug output). RUST_LOG overrides this.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage: fit, dissim, cluster, score, evaluate.
    Pipeline(Flags),
    /// Ingest accounts, split train/test and fit VAR(1) models.
    Fit(Flags),
    /// Pairwise dissimilarity matrix of the training fits.
    Dissim(Flags),
    /// k-medoids clustering and test-set assignment.
    Cluster(Flags),
    /// Logistic default models for every design.
    Score(Flags),
    /// AUC, KS, Gini and H-measure of the scored models.
    Evaluate(Flags),
    /// Write a synthetic portfolio (accounts.csv, truth.csv).
    Simulate(Flags),
}

/// Shared by every subcommand. Precedence: flag, then environment
/// (BEHAV_OUT_DIR, BEHAV_THREADS), then --config file, then defaults.
#[derive(Args)]
struct Flags {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Long-format account CSV.
    #[arg(long, value_name = "FILE")]
    input: Option<String>,
    /// Synthetic portfolio spec file, or `default`.
    #[arg(long, value_name = "SPEC")]
    synthetic: Option<String>,
    /// Significance level of the confidence ellipsoids.
    #[arg(long)]
    alpha: Option<String>,
    /// Number of clusters.
    #[arg(long)]
    k: Option<String>,
    /// ellipsoid or euclidean.
    #[arg(long)]
    measure: Option<String>,
    /// Monte Carlo samples per ellipsoid pair.
    #[arg(long)]
    n_samples: Option<String>,
    /// Root seed for every random stream.
    #[arg(long)]
    seed: Option<String>,
    /// Share of accounts used for training.
    #[arg(long)]
    train_fraction: Option<String>,
    /// uniform or stratified.
    #[arg(long)]
    split: Option<String>,
    /// predict, forecast or both.
    #[arg(long)]
    experiment: Option<String>,
    /// Comma-separated subset of cluster_dummies, aggregate, combined.
    #[arg(long)]
    designs: Option<String>,
    /// Shortest series that gets a VAR fit.
    #[arg(long)]
    min_length: Option<String>,
    /// kronecker or block_diagonal.
    #[arg(long)]
    covariance: Option<String>,
    /// squared or sqrt reading of the F-scaled radius.
    #[arg(long)]
    radius: Option<String>,
    /// L2 penalty for the logistic fits (`none` to disable).
    #[arg(long)]
    ridge: Option<String>,
    /// Output directory for artifacts.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<String>,
}

impl Flags {
    fn resolve(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_env()?;
        // a source given on the command line replaces the file's source
        if self.input.is_some() || self.synthetic.is_some() {
            cfg.input = None;
            cfg.synthetic = None;
        }
        let flags = [
            ("input", &self.input),
            ("synthetic", &self.synthetic),
            ("alpha", &self.alpha),
            ("k", &self.k),
            ("measure", &self.measure),
            ("n_samples", &self.n_samples),
            ("seed", &self.seed),
            ("train_fraction", &self.train_fraction),
            ("split", &self.split),
            ("experiment", &self.experiment),
            ("designs", &self.designs),
            ("min_length", &self.min_length),
            ("covariance", &self.covariance),
            ("radius", &self.radius),
            ("ridge", &self.ridge),
            ("out_dir", &self.out_dir),
            ("threads", &self.threads),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

fn print_reports(reports: &[EvaluationReport]) {
    println!("{:<36} {:>9} {:>9} {:>9} {:>9}", "model", "h_measure", "ks", "gini", "auc");
    for r in reports {
        println!(
            "{:<36} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            r.model, r.h_measure, r.ks, r.gini, r.auc
        );
    }
}

fn run(command: Command) -> Result<(), Error> {
    let (name, flags) = match &command {
        Command::Pipeline(f) => ("pipeline", f),
        Command::Fit(f) => ("fit", f),
        Command::Dissim(f) => ("dissim", f),
        Command::Cluster(f) => ("cluster", f),
        Command::Score(f) => ("score", f),
        Command::Evaluate(f) => ("evaluate", f),
        Command::Simulate(f) => ("simulate", f),
    };
    let mut cfg = flags.resolve()?;
    if name == "simulate" && cfg.input.is_none() && cfg.synthetic.is_none() {
        cfg.synthetic = Some("default".into());
    }
    cfg.validate()?;
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }

    let out = cfg.out_dir.display().to_string();
    pipeline::with_failure_marker(&cfg, name, || match command {
        Command::Pipeline(_) => {
            let reports = pipeline::run_pipeline(&cfg)?;
            print_reports(&reports);
            Ok(())
        }
        Command::Fit(_) => pipeline::run_fit(&cfg),
        Command::Dissim(_) => pipeline::run_dissim(&cfg),
        Command::Cluster(_) => pipeline::run_cluster(&cfg),
        Command::Score(_) => pipeline::run_score(&cfg),
        Command::Evaluate(_) => {
            let reports = pipeline::run_evaluate(&cfg)?;
            print_reports(&reports);
            Ok(())
        }
        Command::Simulate(_) => {
            let n = pipeline::run_simulate(&cfg)?;
            println!("wrote {n} accounts to {out}");
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
