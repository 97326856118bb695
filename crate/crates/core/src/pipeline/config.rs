//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{ColumnMapping, SplitStrategy};
use crate::dissimilarity::{Measure, RadiusConvention, DEFAULT_ALPHA, DEFAULT_MC_SAMPLES, MIN_MC_SAMPLES};
use crate::error::{Error, Result};
use crate::scoring::{Design, Experiment};
use crate::var_model::{CovarianceForm, DEFAULT_MIN_LENGTH};

pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.6;

/// Environment variables that override the output directory and the
/// worker count.
pub const ENV_OUT_DIR: &str = "BEHAV_OUT_DIR";
pub const ENV_THREADS: &str = "BEHAV_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentChoice {
    Predict,
    Forecast,
    Both,
}

impl ExperimentChoice {
    pub fn experiments(self) -> Vec<Experiment> {
        match self {
            ExperimentChoice::Predict => vec![Experiment::Predict],
            ExperimentChoice::Forecast => vec![Experiment::Forecast],
            ExperimentChoice::Both => vec![Experiment::Predict, Experiment::Forecast],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Long-format account CSV.
    pub input: Option<PathBuf>,
    /// Synthetic portfolio spec file, or `default` for the built-in one.
    pub synthetic: Option<String>,
    pub columns: ColumnMapping,
    pub alpha: f64,
    pub k: usize,
    pub measure: Measure,
    pub n_samples: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub split: SplitStrategy,
    pub experiment: ExperimentChoice,
    pub designs: Vec<Design>,
    pub min_length: usize,
    pub covariance: CovarianceForm,
    pub radius: RadiusConvention,
    pub ridge: Option<f64>,
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            synthetic: None,
            columns: ColumnMapping::default(),
            alpha: DEFAULT_ALPHA,
            k: 3,
            measure: Measure::Ellipsoid,
            n_samples: DEFAULT_MC_SAMPLES,
            seed: DEFAULT_SEED,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            split: SplitStrategy::Uniform,
            experiment: ExperimentChoice::Both,
            designs: Design::ALL.to_vec(),
            min_length: DEFAULT_MIN_LENGTH,
            covariance: CovarianceForm::Kronecker,
            radius: RadiusConvention::Squared,
            ridge: None,
            out_dir: PathBuf::from("out"),
            threads: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

impl PipelineConfig {
    /// Applies one setting. Keys use the long flag names with `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "input" => self.input = Some(PathBuf::from(value)),
            "synthetic" => self.synthetic = Some(value.to_string()),
            "alpha" => self.alpha = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "measure" => self.measure = value.parse()?,
            "n_samples" => self.n_samples = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "split" => {
                self.split = match value {
                    "uniform" => SplitStrategy::Uniform,
                    "stratified" => SplitStrategy::StratifiedByDefault,
                    _ => return Err(Error::Config(format!("unknown split '{value}'"))),
                }
            }
            "experiment" => {
                self.experiment = match value {
                    "predict" => ExperimentChoice::Predict,
                    "forecast" => ExperimentChoice::Forecast,
                    "both" => ExperimentChoice::Both,
                    _ => return Err(Error::Config(format!("unknown experiment '{value}'"))),
                }
            }
            "designs" => {
                let mut designs = Vec::new();
                for d in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let d: Design = d.parse()?;
                    if !designs.contains(&d) {
                        designs.push(d);
                    }
                }
                self.designs = designs;
            }
            "min_length" => self.min_length = parse(key, value)?,
            "covariance" => {
                self.covariance = match value {
                    "kronecker" => CovarianceForm::Kronecker,
                    "block_diagonal" => CovarianceForm::BlockDiagonal,
                    _ => return Err(Error::Config(format!("unknown covariance '{value}'"))),
                }
            }
            "radius" => {
                self.radius = match value {
                    "squared" => RadiusConvention::Squared,
                    "sqrt" => RadiusConvention::Sqrt,
                    _ => return Err(Error::Config(format!("unknown radius convention '{value}'"))),
                }
            }
            "ridge" => {
                self.ridge = match value {
                    "none" | "off" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            "threads" => self.threads = Some(parse(key, value)?),
            "column_account_id" => self.columns.account_id = value.into(),
            "column_month" => self.columns.month = value.into(),
            "column_repay" => self.columns.repay = value.into(),
            "column_balance" => self.columns.balance = value.into(),
            "column_credit_limit" => self.columns.credit_limit = value.into(),
            "column_delinquency" => self.columns.delinquency = value.into(),
            other => return Err(Error::Config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", ln + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies `BEHAV_OUT_DIR` and `BEHAV_THREADS` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(ENV_OUT_DIR) {
            self.set("out_dir", &v)?;
        }
        if let Ok(v) = std::env::var(ENV_THREADS) {
            self.set("threads", &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (&self.input, &self.synthetic) {
            (None, None) => return bad("either an input file or a synthetic spec is required".into()),
            (Some(_), Some(_)) => return bad("input and synthetic are mutually exclusive".into()),
            _ => {}
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} must lie in (0, 1)", self.alpha));
        }
        if self.k < 2 {
            return bad(format!("k = {} must be at least 2", self.k));
        }
        if self.measure == Measure::Ellipsoid && self.n_samples < MIN_MC_SAMPLES {
            return bad(format!("n_samples {} is below the minimum {MIN_MC_SAMPLES}", self.n_samples));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} must lie in (0, 1)", self.train_fraction));
        }
        if self.designs.is_empty() {
            return bad("at least one design is required".into());
        }
        if self.min_length < 6 {
            return bad(format!("min_length {} must be at least 6", self.min_length));
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return bad(format!("ridge {r} must be a non-negative number"));
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        Ok(())
    }

    /// The settings that determine the results, as `key = value` text that
    /// [`PipelineConfig::apply_text`] reads back. The output directory and
    /// thread count are left out because they do not affect any artifact.
    pub fn reproducible_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(p) = &self.input {
            line("input", p.display().to_string());
        }
        if let Some(p) = &self.synthetic {
            line("synthetic", p.clone());
        }
        let d = ColumnMapping::default();
        let c = &self.columns;
        for (key, v, dv) in [
            ("column_account_id", &c.account_id, &d.account_id),
            ("column_month", &c.month, &d.month),
            ("column_repay", &c.repay, &d.repay),
            ("column_balance", &c.balance, &d.balance),
            ("column_credit_limit", &c.credit_limit, &d.credit_limit),
            ("column_delinquency", &c.delinquency, &d.delinquency),
        ] {
            if v != dv {
                line(key, v.clone());
            }
        }
        line("alpha", self.alpha.to_string());
        line("k", self.k.to_string());
        line("measure", self.measure.to_string());
        line("n_samples", self.n_samples.to_string());
        line("seed", self.seed.to_string());
        line("train_fraction", self.train_fraction.to_string());
        line(
            "split",
            match self.split {
                SplitStrategy::Uniform => "uniform",
                SplitStrategy::StratifiedByDefault => "stratified",
            }
            .into(),
        );
        line(
            "experiment",
            match self.experiment {
                ExperimentChoice::Predict => "predict",
                ExperimentChoice::Forecast => "forecast",
                ExperimentChoice::Both => "both",
            }
            .into(),
        );
        line(
            "designs",
            self.designs.iter().map(Design::to_string).collect::<Vec<_>>().join(","),
        );
        line("min_length", self.min_length.to_string());
        line(
            "covariance",
            match self.covariance {
                CovarianceForm::Kronecker => "kronecker",
                CovarianceForm::BlockDiagonal => "block_diagonal",
            }
            .into(),
        );
        line(
            "radius",
            match self.radius {
                RadiusConvention::Squared => "squared",
                RadiusConvention::Sqrt => "sqrt",
            }
            .into(),
        );
        line("ridge", self.ridge.map_or("none".into(), |r| r.to_string()));
        s
    }
}
