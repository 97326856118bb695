//! File-based orchestration: each stage reads the artifacts of the stages
//! before it from the output directory and writes its own, so running the
//! stages one by one gives exactly the files of a one-shot run.

mod config;

pub use config::{ExperimentChoice, PipelineConfig, DEFAULT_SEED, DEFAULT_TRAIN_FRACTION, ENV_OUT_DIR, ENV_THREADS};

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::clustering::{
    adjusted_rand_index, assign_test_accounts, k_medoids, read_assignments_csv, write_assignments_csv,
};
use crate::data::{
    generate_synthetic, load_accounts, read_accounts, split_indices, split_indices_stratified, write_accounts,
    write_truth, AccountProfile, ColumnMapping, SplitStrategy, SyntheticPortfolio, SyntheticSpec,
};
use crate::dissimilarity::{
    build_matrix, fit_digest, load_cache, read_matrix_csv, save_cache, write_matrix_csv, CacheKey,
    DissimilarityMatrix, DissimilarityOptions, Measure,
};
use crate::error::{Error, Result};
use crate::metrics::{pca_project, write_reports_csv, EvaluationReport, Severity};
use crate::scoring::{
    build_design, experiment_windows, fit_logistic, predict_proba, write_coefficients_csv, Design, Experiment,
    LogisticOptions,
};
use crate::seed::substream;
use crate::var_model::{fit_accounts, read_fits_csv, write_excluded_csv, write_fits_csv, AccountFit, VarOptions};

pub const ACCOUNTS_FILE: &str = "accounts.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const EVALUATION_JSON: &str = "evaluation.json";
pub const EVALUATION_CSV: &str = "evaluation.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_MARKER: &str = "FAILED";
pub const CACHE_DIR: &str = "cache";

/// Number of principal components exported for plotting.
const PCA_COMPONENTS: usize = 3;

/// Conventions worth knowing when comparing results with other tools.
const NOTES: &[&str] = &[
    "ellipsoid shape matrix is p * F(p, T - p - 1; 1 - alpha) * Psi, read as a squared radius",
    "ellipsoid volume is V_p * sqrt(det(shape)) with V_p the unit-ball volume",
    "Monte Carlo overlap samples the smaller ellipsoid; each pair's stream is seeded from the mc seed and both account ids",
    "month t is a default when delinquency rose in each of the last 3 months and is at least 3",
    "forecast models use the first floor(2T/3) months; labels come from the remaining months",
    "test accounts join the cluster of the nearest training medoid",
    "cluster labels are ordered by decreasing training-cluster size; C1 is the baseline dummy",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub root: u64,
    pub split: u64,
    pub mc: u64,
    pub synthetic: u64,
}

impl Seeds {
    pub fn from_root(root: u64) -> Self {
        Self {
            root,
            split: substream(root, "split"),
            mc: substream(root, "mc"),
            synthetic: substream(root, "synthetic"),
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: String,
    seeds: Seeds,
    notes: &'a [&'a str],
    /// SHA-256 of every artifact present when the manifest was written.
    artifacts: BTreeMap<String, String>,
}

fn fits_file(e: Experiment) -> String {
    format!("fits_{e}.csv")
}
fn excluded_file(e: Experiment) -> String {
    format!("excluded_{e}.csv")
}
fn matrix_file(e: Experiment) -> String {
    format!("matrix_{e}.csv")
}
fn clusters_file(e: Experiment) -> String {
    format!("clusters_{e}.csv")
}
fn clusters_summary_file(e: Experiment) -> String {
    format!("clusters_{e}.json")
}
fn pca_file(e: Experiment) -> String {
    format!("pca_{e}.csv")
}
fn coefficients_file(e: Experiment, d: Design) -> String {
    format!("coefficients_{e}_{d}.csv")
}
fn scores_file(e: Experiment, d: Design) -> String {
    format!("scores_{e}_{d}.csv")
}

fn artifact(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn create(cfg: &PipelineConfig, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let path = artifact(cfg, name);
    File::create(&path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(cfg: &PipelineConfig, name: &str) -> Result<BufReader<File>> {
    let path = artifact(cfg, name);
    File::open(&path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, name: &str) -> Result<()> {
    w.flush().map_err(|e| Error::io(name, e))
}

fn write_json<T: Serialize>(cfg: &PipelineConfig, name: &str, value: &T) -> Result<()> {
    let mut w = create(cfg, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(name, e))?;
    finish(w, name)
}

pub fn dissimilarity_options(cfg: &PipelineConfig) -> DissimilarityOptions {
    DissimilarityOptions {
        measure: cfg.measure,
        alpha: cfg.alpha,
        n_samples: cfg.n_samples,
        seed: Seeds::from_root(cfg.seed).mc,
        convention: cfg.radius,
    }
}

fn var_options(cfg: &PipelineConfig) -> VarOptions {
    VarOptions { min_length: cfg.min_length, covariance: cfg.covariance }
}

/// The synthetic spec named by the configuration, seeded from the root seed.
pub fn synthetic_spec(cfg: &PipelineConfig) -> Result<SyntheticSpec> {
    let name = cfg
        .synthetic
        .as_deref()
        .ok_or_else(|| Error::Config("no synthetic spec configured".into()))?;
    let mut spec = if name == "default" {
        SyntheticSpec::default()
    } else {
        let path = Path::new(name);
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SyntheticSpec::parse(&text)?
    };
    spec.seed = Seeds::from_root(cfg.seed).synthetic;
    Ok(spec)
}

fn load_source(cfg: &PipelineConfig) -> Result<(Vec<AccountProfile>, Option<SyntheticPortfolio>)> {
    if let Some(path) = &cfg.input {
        return Ok((load_accounts(path, &cfg.columns)?, None));
    }
    let portfolio = generate_synthetic(&synthetic_spec(cfg)?)?;
    Ok((portfolio.accounts.clone(), Some(portfolio)))
}

fn read_stage_accounts(cfg: &PipelineConfig) -> Result<Vec<AccountProfile>> {
    read_accounts(open(cfg, ACCOUNTS_FILE)?, &ColumnMapping::default())
}

/// Account id → true if in the training part.
fn read_split(cfg: &PipelineConfig) -> Result<HashMap<String, bool>> {
    let mut rdr = csv::Reader::from_reader(open(cfg, SPLIT_FILE)?);
    let mut out = HashMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let train = match rec.get(1) {
            Some("train") => true,
            Some("test") => false,
            other => {
                return Err(Error::Parse {
                    row: r + 2,
                    message: format!("unknown set {other:?} in {SPLIT_FILE}"),
                })
            }
        };
        out.insert(rec[0].to_string(), train);
    }
    Ok(out)
}

fn read_fits(cfg: &PipelineConfig, e: Experiment) -> Result<Vec<AccountFit>> {
    read_fits_csv(open(cfg, &fits_file(e))?)
}

fn partition_fits(fits: Vec<AccountFit>, split: &HashMap<String, bool>) -> (Vec<AccountFit>, Vec<AccountFit>) {
    fits.into_iter().partition(|f| split.get(&f.id).copied().unwrap_or(false))
}

/// Writes the manifest describing the current contents of the output
/// directory.
pub fn write_manifest(cfg: &PipelineConfig) -> Result<()> {
    let mut artifacts = BTreeMap::new();
    if cfg.out_dir.is_dir() {
        for entry in fs::read_dir(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))? {
            let entry = entry.map_err(|e| Error::io(&cfg.out_dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name == MANIFEST_FILE || name == FAILED_MARKER || !entry.path().is_file() {
                continue;
            }
            let bytes = fs::read(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
            artifacts.insert(name, hex);
        }
    }
    let manifest = Manifest {
        tool: "behavclust",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.reproducible_text(),
        seeds: Seeds::from_root(cfg.seed),
        notes: NOTES,
        artifacts,
    };
    write_json(cfg, MANIFEST_FILE, &manifest)
}

/// Generates the configured synthetic portfolio into `accounts.csv` and
/// `truth.csv`.
pub fn run_simulate(cfg: &PipelineConfig) -> Result<usize> {
    let portfolio = generate_synthetic(&synthetic_spec(cfg)?)?;
    let mut w = create(cfg, ACCOUNTS_FILE)?;
    write_accounts(&mut w, &portfolio.accounts)?;
    finish(w, ACCOUNTS_FILE)?;
    let mut w = create(cfg, TRUTH_FILE)?;
    write_truth(&mut w, &portfolio)?;
    finish(w, TRUTH_FILE)?;
    Ok(portfolio.accounts.len())
}

/// Ingest, train/test split and VAR fits for every experiment.
pub fn run_fit(cfg: &PipelineConfig) -> Result<()> {
    let (accounts, portfolio) = load_source(cfg)?;
    let mut w = create(cfg, ACCOUNTS_FILE)?;
    write_accounts(&mut w, &accounts)?;
    finish(w, ACCOUNTS_FILE)?;
    match &portfolio {
        Some(p) => {
            let mut w = create(cfg, TRUTH_FILE)?;
            write_truth(&mut w, p)?;
            finish(w, TRUTH_FILE)?;
        }
        None => {
            let _ = fs::remove_file(artifact(cfg, TRUTH_FILE));
        }
    }
    // later stages see exactly what was written
    let accounts = read_stage_accounts(cfg)?;

    let split_seed = Seeds::from_root(cfg.seed).split;
    let (train, _) = match cfg.split {
        SplitStrategy::Uniform => split_indices(accounts.len(), cfg.train_fraction, split_seed)?,
        SplitStrategy::StratifiedByDefault => {
            let labels: Vec<u8> = accounts.iter().map(AccountProfile::ever_default).collect();
            split_indices_stratified(&labels, cfg.train_fraction, split_seed)?
        }
    };
    let mut in_train = vec![false; accounts.len()];
    for i in train {
        in_train[i] = true;
    }
    let mut w = csv::Writer::from_writer(create(cfg, SPLIT_FILE)?);
    w.write_record(["account_id", "set"])?;
    for (acc, &t) in accounts.iter().zip(&in_train) {
        w.write_record([acc.id(), if t { "train" } else { "test" }])?;
    }
    w.flush().map_err(|e| Error::io(SPLIT_FILE, e))?;
    drop(w);

    for e in cfg.experiment.experiments() {
        let (windows, _, mut excluded) = experiment_windows(&accounts, e);
        let (fits, fit_excluded) = fit_accounts(&windows, &var_options(cfg));
        excluded.extend(fit_excluded);
        log::info!("{e}: fitted {} accounts, excluded {}", fits.len(), excluded.len());
        let mut w = create(cfg, &fits_file(e))?;
        write_fits_csv(&mut w, &fits)?;
        finish(w, &fits_file(e))?;
        let mut w = create(cfg, &excluded_file(e))?;
        write_excluded_csv(&mut w, &excluded)?;
        finish(w, &excluded_file(e))?;
    }
    write_manifest(cfg)
}

fn matrix_provenance(cfg: &PipelineConfig) -> (Measure, f64, usize, u64) {
    let o = dissimilarity_options(cfg);
    let mc = match o.measure {
        Measure::Ellipsoid => o.n_samples,
        Measure::Euclidean => 0,
    };
    (o.measure, o.alpha, mc, o.seed)
}

/// Dissimilarity matrix over the training accounts, served from the cache
/// when the same fits and settings were seen before.
pub fn run_dissim(cfg: &PipelineConfig) -> Result<()> {
    let split = read_split(cfg)?;
    let opts = dissimilarity_options(cfg);
    for e in cfg.experiment.experiments() {
        let (train, _) = partition_fits(read_fits(cfg, e)?, &split);
        let key = CacheKey {
            measure: opts.measure,
            alpha: opts.alpha,
            n_samples: opts.n_samples,
            seed: opts.seed,
            convention: opts.convention,
            fit_digest: fit_digest(&train),
        };
        let cache_dir = artifact(cfg, CACHE_DIR);
        let matrix = match load_cache(&cache_dir, &key)? {
            Some(m) => {
                log::info!("{e}: dissimilarity matrix from cache");
                m
            }
            None => {
                log::info!("{e}: computing {} pairwise dissimilarities", train.len() * train.len().saturating_sub(1) / 2);
                let m = build_matrix(&train, &opts)?;
                save_cache(&cache_dir, &key, &m)?;
                m
            }
        };
        let mut w = create(cfg, &matrix_file(e))?;
        write_matrix_csv(&mut w, &matrix)?;
        finish(w, &matrix_file(e))?;
    }
    write_manifest(cfg)
}

fn read_matrix(cfg: &PipelineConfig, e: Experiment) -> Result<DissimilarityMatrix> {
    let (measure, alpha, mc, seed) = matrix_provenance(cfg);
    read_matrix_csv(open(cfg, &matrix_file(e))?, measure, alpha, mc, seed)
}

#[derive(Debug, Serialize)]
struct ClusterReport {
    experiment: String,
    k: usize,
    measure: Measure,
    medoid_ids: Vec<String>,
    train_sizes: Vec<usize>,
    test_sizes: Vec<usize>,
    total_cost: f64,
    swap_iterations: usize,
    /// Agreement of the training partition with the generating clusters,
    /// when they are known.
    adjusted_rand_index: Option<f64>,
    pca_explained_ratio: Vec<f64>,
}

/// k-medoids on the training matrix, nearest-medoid assignment of the test
/// accounts, and a PCA export of the training coefficients.
pub fn run_cluster(cfg: &PipelineConfig) -> Result<()> {
    let split = read_split(cfg)?;
    let opts = dissimilarity_options(cfg);
    let truth: Option<HashMap<String, usize>> = match open(cfg, TRUTH_FILE) {
        Ok(r) => Some(
            csv::Reader::from_reader(r)
                .records()
                .map(|rec| {
                    let rec = rec?;
                    let c: usize = rec[1].parse().map_err(|_| Error::Parse {
                        row: 0,
                        message: format!("bad cluster in {TRUTH_FILE}"),
                    })?;
                    Ok((rec[0].to_string(), c))
                })
                .collect::<Result<_>>()?,
        ),
        Err(_) => None,
    };
    for e in cfg.experiment.experiments() {
        let matrix = read_matrix(cfg, e)?;
        let result = k_medoids(&matrix, cfg.k, cfg.seed)?;
        let (train, test) = partition_fits(read_fits(cfg, e)?, &split);
        let by_id: HashMap<&str, &AccountFit> = train.iter().map(|f| (f.id.as_str(), f)).collect();
        let medoids: Vec<AccountFit> = result
            .medoid_ids()
            .iter()
            .map(|id| {
                by_id.get(id.as_str()).map(|f| (*f).clone()).ok_or_else(|| {
                    Error::InvalidArgument(format!("medoid {id} has no fit in {}", fits_file(e)))
                })
            })
            .collect::<Result<_>>()?;
        let test_z = assign_test_accounts(&test, &medoids, &opts)?;
        let test_labels: Vec<usize> = test_z.iter().map(|z| z.iter().position(|&v| v == 1).unwrap()).collect();

        let train_labels = result.labels();
        let mut ids: Vec<String> = matrix.account_ids().to_vec();
        ids.extend(test.iter().map(|f| f.id.clone()));
        let mut labels = train_labels.clone();
        labels.extend(&test_labels);
        let mut w = create(cfg, &clusters_file(e))?;
        write_assignments_csv(&mut w, &ids, &labels)?;
        finish(w, &clusters_file(e))?;

        let thetas: Vec<Vec<f64>> = matrix
            .account_ids()
            .iter()
            .map(|id| by_id[id.as_str()].fit.theta.to_vec())
            .collect();
        let pca = pca_project(&thetas, PCA_COMPONENTS)?;
        let mut w = csv::Writer::from_writer(create(cfg, &pca_file(e))?);
        w.write_record(["account_id", "cluster", "pc1", "pc2", "pc3"])?;
        for ((id, l), c) in matrix.account_ids().iter().zip(&train_labels).zip(&pca.coordinates) {
            let mut rec = vec![id.clone(), (l + 1).to_string()];
            rec.extend(c.iter().map(f64::to_string));
            w.write_record(rec)?;
        }
        w.flush().map_err(|err| Error::io(pca_file(e), err))?;
        drop(w);

        let ari = match &truth {
            Some(t) => {
                let known: Vec<(usize, usize)> = matrix
                    .account_ids()
                    .iter()
                    .zip(&train_labels)
                    .filter_map(|(id, &l)| t.get(id).map(|&c| (c, l)))
                    .collect();
                let (a, b): (Vec<usize>, Vec<usize>) = known.into_iter().map(|(c, l)| (c - 1, l)).unzip();
                Some(adjusted_rand_index(&a, &b)?)
            }
            None => None,
        };
        let mut test_sizes = vec![0; cfg.k];
        for &l in &test_labels {
            test_sizes[l] += 1;
        }
        let s = result.summary();
        write_json(
            cfg,
            &clusters_summary_file(e),
            &ClusterReport {
                experiment: e.to_string(),
                k: s.k,
                measure: s.measure,
                medoid_ids: s.medoid_ids,
                train_sizes: s.sizes,
                test_sizes,
                total_cost: s.total_cost,
                swap_iterations: s.swap_iterations,
                adjusted_rand_index: ari,
                pca_explained_ratio: pca.explained_ratio,
            },
        )?;
        log::info!("{e}: clustered {} training and {} test accounts", train_labels.len(), test_labels.len());
    }
    write_manifest(cfg)
}

struct ScoringSide {
    accounts: Vec<AccountProfile>,
    labels: Vec<u8>,
    z: Vec<Vec<u8>>,
}

fn scoring_sides(cfg: &PipelineConfig, e: Experiment, accounts: &[AccountProfile]) -> Result<(ScoringSide, ScoringSide)> {
    let split = read_split(cfg)?;
    let clusters: HashMap<String, usize> = read_assignments_csv(open(cfg, &clusters_file(e))?)?.into_iter().collect();
    let (windows, labels, _) = experiment_windows(accounts, e);
    let empty = || ScoringSide { accounts: Vec::new(), labels: Vec::new(), z: Vec::new() };
    let (mut train, mut test) = (empty(), empty());
    for (w, y) in windows.into_iter().zip(labels) {
        // accounts without a cluster were excluded at the fit stage
        let Some(&c) = clusters.get(w.id()) else { continue };
        if c >= cfg.k {
            return Err(Error::InvalidArgument(format!("cluster {} of {} exceeds k = {}", c + 1, w.id(), cfg.k)));
        }
        let side = if split.get(w.id()).copied().unwrap_or(false) { &mut train } else { &mut test };
        let mut z = vec![0u8; cfg.k];
        z[c] = 1;
        side.accounts.push(w);
        side.labels.push(y);
        side.z.push(z);
    }
    Ok((train, test))
}

/// Logistic fits on the training accounts and test-set default
/// probabilities for every configured design.
pub fn run_score(cfg: &PipelineConfig) -> Result<()> {
    let accounts = read_stage_accounts(cfg)?;
    let logistic = LogisticOptions { ridge: cfg.ridge, ..LogisticOptions::default() };
    for e in cfg.experiment.experiments() {
        let (train, test) = scoring_sides(cfg, e, &accounts)?;
        for &d in &cfg.designs {
            let x = build_design(&train.accounts, Some(&train.z), d)?;
            let mut model = fit_logistic(&x, &train.labels, &logistic)
                .inspect_err(|err| log::error!("{e}/{d}: {err}"))?;
            model.design = Some(d);
            if model.separation_flag {
                log::warn!("{e}/{d}: separation suspected, see {}", coefficients_file(e, d));
            }
            let mut w = create(cfg, &coefficients_file(e, d))?;
            write_coefficients_csv(&mut w, &model)?;
            finish(w, &coefficients_file(e, d))?;

            let xt = build_design(&test.accounts, Some(&test.z), d)?;
            let scores = predict_proba(&model, &xt.x)?;
            let mut w = csv::Writer::from_writer(create(cfg, &scores_file(e, d))?);
            w.write_record(["account_id", "label", "score"])?;
            for ((acc, y), s) in test.accounts.iter().zip(&test.labels).zip(&scores) {
                w.write_record([acc.id().to_string(), y.to_string(), s.to_string()])?;
            }
            w.flush().map_err(|err| Error::io(scores_file(e, d), err))?;
        }
    }
    write_manifest(cfg)
}

/// AUC, KS, Gini and H-measure of every scored model.
pub fn run_evaluate(cfg: &PipelineConfig) -> Result<Vec<EvaluationReport>> {
    let mut reports = Vec::new();
    for e in cfg.experiment.experiments() {
        for &d in &cfg.designs {
            let name = scores_file(e, d);
            let mut rdr = csv::Reader::from_reader(open(cfg, &name)?);
            let (mut labels, mut scores) = (Vec::new(), Vec::new());
            for (r, rec) in rdr.records().enumerate() {
                let rec = rec?;
                let bad = || Error::Parse { row: r + 2, message: format!("bad value in {name}") };
                labels.push(rec[1].parse::<u8>().map_err(|_| bad())?);
                scores.push(rec[2].parse::<f64>().map_err(|_| bad())?);
            }
            let measure = if d.uses_clusters() { cfg.measure.to_string() } else { "none".into() };
            let report = EvaluationReport::compute(&scores, &labels, Severity::default(), &e.to_string(), &d.to_string(), &measure)
                .inspect_err(|err| log::error!("{e}/{d}: {err}"))?;
            reports.push(report);
        }
    }
    write_json(cfg, EVALUATION_JSON, &reports)?;
    let mut w = create(cfg, EVALUATION_CSV)?;
    write_reports_csv(&mut w, &reports)?;
    finish(w, EVALUATION_CSV)?;
    write_manifest(cfg)?;
    Ok(reports)
}

/// Every stage in order.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<EvaluationReport>> {
    run_fit(cfg)?;
    run_dissim(cfg)?;
    run_cluster(cfg)?;
    run_score(cfg)?;
    run_evaluate(cfg)
}

/// Runs `f`, leaving a `FAILED` marker with the error in the output
/// directory if it fails and clearing a stale one if it succeeds.
pub fn with_failure_marker<T>(cfg: &PipelineConfig, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let marker = artifact(cfg, FAILED_MARKER);
    match f() {
        Ok(v) => {
            let _ = fs::remove_file(&marker);
            Ok(v)
        }
        Err(e) => {
            if fs::create_dir_all(&cfg.out_dir).is_ok() {
                let _ = fs::write(&marker, format!("stage: {stage}\nerror: {e}\n"));
            }
            Err(e)
        }
    }
}
