//! Logistic default models on cluster membership and/or aggregate
//! behaviour, and the prediction and forecast experiments built on them.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::clustering::{assign_test_accounts, k_medoids, ClusteringResult};
use crate::data::{split_observation_forecast, AccountProfile};
use crate::dissimilarity::{build_matrix, DissimilarityOptions};
use crate::error::{Error, Result};
use crate::metrics::{EvaluationReport, Severity};
use crate::var_model::{fit_accounts, AccountFit, Excluded, VarOptions};

/// Coefficients beyond this magnitude at stopping indicate separation.
pub const SEPARATION_THRESHOLD: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    ClusterDummies,
    Aggregate,
    Combined,
}

impl Design {
    pub const ALL: [Design; 3] = [Design::ClusterDummies, Design::Aggregate, Design::Combined];

    pub fn uses_clusters(self) -> bool {
        self != Design::Aggregate
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::ClusterDummies => "cluster_dummies",
            Design::Aggregate => "aggregate",
            Design::Combined => "combined",
        })
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cluster_dummies" | "clusters" => Ok(Design::ClusterDummies),
            "aggregate" => Ok(Design::Aggregate),
            "combined" => Ok(Design::Combined),
            other => Err(Error::Config(format!("unknown design '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Default at any time over the full profile.
    Predict,
    /// Model on the first two thirds, default in the final third.
    Forecast,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::Predict => "predict",
            Experiment::Forecast => "forecast",
        })
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predict" | "prediction" => Ok(Experiment::Predict),
            "forecast" => Ok(Experiment::Forecast),
            other => Err(Error::Config(format!("unknown experiment '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateFeatures {
    pub mean_repay: f64,
    pub mean_utilisation: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Means of the repayment and utilisation series over the given profile.
pub fn aggregate_features(account: &AccountProfile) -> AggregateFeatures {
    AggregateFeatures {
        mean_repay: mean(account.repay()),
        mean_utilisation: mean(account.utilisation()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub columns: Vec<String>,
}

/// Intercept, then cluster dummies `C2..Ck` (C1 is the baseline) and/or
/// the two aggregate means.
pub fn build_design(
    accounts: &[AccountProfile],
    z: Option<&[Vec<u8>]>,
    design: Design,
) -> Result<DesignMatrix> {
    let mut columns = vec!["(Intercept)".to_string()];
    let k = if design.uses_clusters() {
        let z = z.ok_or_else(|| {
            Error::InvalidArgument(format!("the {design} design needs cluster assignments"))
        })?;
        if z.len() != accounts.len() {
            return Err(Error::DimensionMismatch {
                expected: accounts.len(),
                got: z.len(),
            });
        }
        let k = z.first().map_or(0, Vec::len);
        if k < 2 || z.iter().any(|zs| zs.len() != k) {
            return Err(Error::InvalidArgument("inconsistent cluster allocation vectors".into()));
        }
        columns.extend((2..=k).map(|l| format!("C{l}")));
        k
    } else {
        0
    };
    if design != Design::ClusterDummies {
        columns.push("mean_repay".into());
        columns.push("mean_utilisation".into());
    }

    let mut x = DMatrix::zeros(accounts.len(), columns.len());
    for (i, acc) in accounts.iter().enumerate() {
        x[(i, 0)] = 1.0;
        let mut c = 1;
        if let Some(z) = z.filter(|_| design.uses_clusters()) {
            for &v in &z[i][1..k] {
                x[(i, c)] = v as f64;
                c += 1;
            }
        }
        if design != Design::ClusterDummies {
            let g = aggregate_features(acc);
            x[(i, c)] = g.mean_repay;
            x[(i, c + 1)] = g.mean_utilisation;
        }
    }
    Ok(DesignMatrix { x, columns })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Optional L2 penalty on the non-intercept coefficients.
    pub ridge: Option<f64>,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-8,
            ridge: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub design: Option<Design>,
    pub terms: Vec<String>,
    pub beta: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub converged: bool,
    pub separation_flag: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood at the start and after every accepted step.
    pub log_likelihood_trace: Vec<f64>,
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_likelihood(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = x * beta;
    let ll: f64 = eta.iter().zip(y).map(|(&e, &yi)| yi * e - softplus(e)).sum();
    ll - 0.5 * ridge * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
}

/// Columns that are linear combinations of earlier ones, each reported
/// with the earlier columns it depends on.
fn collinear_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut r = col.clone();
        for q in &basis {
            let proj = q.dot(&r);
            r -= q * proj;
        }
        if r.norm() > 1e-10 * norm.max(1.0) {
            basis.push(&r / r.norm());
            kept.push(j);
            continue;
        }
        let mut involved = vec![names[j].clone()];
        if !kept.is_empty() {
            let sub = x.select_columns(&kept);
            if let Ok(coef) = sub.clone().svd(true, true).solve(&col, 1e-12) {
                for (&c, &k) in coef.iter().zip(&kept) {
                    if c.abs() > 1e-8 {
                        involved.push(names[k].clone());
                    }
                }
            }
        }
        for name in involved {
            if !bad.contains(&name) {
                bad.push(name);
            }
        }
    }
    bad
}

/// Maximum-likelihood logistic regression by IRLS with step-halving.
/// Standard errors come from the inverse Fisher information at the
/// final coefficients.
pub fn fit_logistic(design: &DesignMatrix, labels: &[u8], opts: &LogisticOptions) -> Result<LogisticModel> {
    let x = &design.x;
    let (n, p) = x.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
    }
    if design.columns.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: design.columns.len() });
    }
    let n1 = labels.iter().filter(|&&l| l != 0).count();
    if n1 == 0 || n1 == n {
        return Err(Error::OneClass(n));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("design matrix has non-finite entries".into()));
    }
    let bad = collinear_columns(x, &design.columns);
    if !bad.is_empty() {
        return Err(Error::RankDeficient(bad));
    }
    let ridge = opts.ridge.unwrap_or(0.0);
    let y: Vec<f64> = labels.iter().map(|&l| (l != 0) as u8 as f64).collect();

    let information = |beta: &DVector<f64>| {
        let eta = x * beta;
        let w: Vec<f64> = eta.iter().map(|&e| {
            let m = sigmoid(e);
            m * (1.0 - m)
        }).collect();
        let mut h = DMatrix::from_fn(p, p, |a, b| (0..n).map(|i| w[i] * x[(i, a)] * x[(i, b)]).sum());
        for j in 1..p {
            h[(j, j)] += ridge;
        }
        (eta, h)
    };

    let mut beta = DVector::zeros(p);
    let mut ll = log_likelihood(x, &y, &beta, ridge);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (eta, h) = information(&beta);
        let mut grad = DVector::from_fn(p, |j, _| {
            (0..n).map(|i| (y[i] - sigmoid(eta[i])) * x[(i, j)]).sum::<f64>()
        });
        for j in 1..p {
            grad[j] -= ridge * beta[j];
        }
        let Some(chol) = h.cholesky() else {
            log::warn!("information matrix lost positive definiteness after {iterations} iterations");
            break;
        };
        let step = chol.solve(&grad);
        if step.amax() < opts.tolerance {
            beta += &step;
            ll = log_likelihood(x, &y, &beta, ridge).max(ll);
            trace.push(ll);
            converged = true;
            break;
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step * scale;
            let cand_ll = log_likelihood(x, &y, &cand, ridge);
            if cand_ll >= ll {
                beta = cand;
                ll = cand_ll;
                trace.push(ll);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            log::warn!("step-halving failed to increase the likelihood; stopping");
            break;
        }
    }

    let (_, h) = information(&beta);
    let std_errors: Vec<f64> = match h.clone().cholesky() {
        Some(c) => c.inverse().diagonal().iter().map(|v| v.max(0.0).sqrt()).collect(),
        None => match h.try_inverse() {
            Some(inv) => inv.diagonal().iter().map(|v| v.abs().sqrt()).collect(),
            None => vec![f64::INFINITY; p],
        },
    };
    let z_values: Vec<f64> = beta
        .iter()
        .zip(&std_errors)
        .map(|(b, s)| if *s > 0.0 && s.is_finite() { b / s } else { 0.0 })
        .collect();
    let p_values = z_values.iter().map(|z| erfc(z.abs() / std::f64::consts::SQRT_2)).collect();
    let separation_flag = beta.iter().any(|b| b.abs() > SEPARATION_THRESHOLD);
    if separation_flag {
        log::warn!("coefficient magnitude above {SEPARATION_THRESHOLD}: likely separation");
    }
    Ok(LogisticModel {
        design: None,
        terms: design.columns.clone(),
        beta: beta.iter().copied().collect(),
        std_errors,
        z_values,
        p_values,
        converged,
        separation_flag,
        iterations,
        log_likelihood: ll,
        log_likelihood_trace: trace,
    })
}

/// `σ(x·β)` for every row.
pub fn predict_proba(model: &LogisticModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.beta.len() {
        return Err(Error::DimensionMismatch { expected: model.beta.len(), got: x.ncols() });
    }
    let beta = DVector::from_column_slice(&model.beta);
    Ok((x * beta).iter().map(|&e| sigmoid(e)).collect())
}

/// Coefficient table with columns `term,estimate,std_error,z_value,p_value`.
pub fn write_coefficients_csv<W: Write>(writer: W, model: &LogisticModel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["term", "estimate", "std_error", "z_value", "p_value"])?;
    for j in 0..model.beta.len() {
        w.write_record([
            model.terms[j].clone(),
            model.beta[j].to_string(),
            model.std_errors[j].to_string(),
            model.z_values[j].to_string(),
            model.p_values[j].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<coefficient csv>", e))?;
    Ok(())
}

/// The modelled part of each account and its default label: the full
/// profile and ever-default for prediction, the observation prefix and
/// the forecast-window default for forecasting.
pub fn experiment_windows(
    accounts: &[AccountProfile],
    experiment: Experiment,
) -> (Vec<AccountProfile>, Vec<u8>, Vec<Excluded>) {
    let mut windows = Vec::with_capacity(accounts.len());
    let mut labels = Vec::with_capacity(accounts.len());
    let mut excluded = Vec::new();
    for acc in accounts {
        match experiment {
            Experiment::Predict => {
                windows.push(acc.clone());
                labels.push(acc.ever_default());
            }
            Experiment::Forecast => match split_observation_forecast(acc) {
                Ok((prefix, label)) => {
                    windows.push(prefix);
                    labels.push(label);
                }
                Err(e) => excluded.push(Excluded { id: acc.id().to_string(), reason: e.to_string() }),
            },
        }
    }
    (windows, labels, excluded)
}

/// Settings shared by the clustering steps of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSettings {
    pub k: usize,
    pub var: VarOptions,
    pub dissimilarity: DissimilarityOptions,
}

/// One side (train or test) of an experiment after windowing and fitting.
#[derive(Debug, Clone)]
pub struct ExperimentSet {
    pub accounts: Vec<AccountProfile>,
    pub labels: Vec<u8>,
    pub fits: Vec<AccountFit>,
    /// One-hot cluster allocation per account.
    pub z: Vec<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub experiment: Experiment,
    pub train: ExperimentSet,
    pub test: ExperimentSet,
    pub clustering: ClusteringResult,
    pub excluded: Vec<Excluded>,
}

fn windowed_fits(
    accounts: &[AccountProfile],
    experiment: Experiment,
    var: &VarOptions,
    excluded: &mut Vec<Excluded>,
) -> (Vec<AccountProfile>, Vec<u8>, Vec<AccountFit>) {
    let (windows, labels, mut ex) = experiment_windows(accounts, experiment);
    let (fits, fit_ex) = fit_accounts(&windows, var);
    ex.extend(fit_ex);
    let keep: Vec<bool> = windows.iter().map(|w| !ex.iter().any(|e| e.id == w.id())).collect();
    excluded.extend(ex);
    let (mut acc, mut lab) = (Vec::new(), Vec::new());
    for ((w, l), k) in windows.into_iter().zip(labels).zip(keep) {
        if k {
            acc.push(w);
            lab.push(l);
        }
    }
    (acc, lab, fits)
}

/// Windows, fits, clusters the training accounts and assigns the test
/// accounts to the training medoids. Accounts whose window cannot be fitted
/// are dropped and listed in `excluded`.
pub fn prepare_experiment(
    experiment: Experiment,
    train: &[AccountProfile],
    test: &[AccountProfile],
    settings: &ClusterSettings,
) -> Result<PreparedExperiment> {
    let mut excluded = Vec::new();
    let (tr_acc, tr_lab, tr_fits) = windowed_fits(train, experiment, &settings.var, &mut excluded);
    let (te_acc, te_lab, te_fits) = windowed_fits(test, experiment, &settings.var, &mut excluded);
    let matrix = build_matrix(&tr_fits, &settings.dissimilarity)?;
    let clustering = k_medoids(&matrix, settings.k, settings.dissimilarity.seed)?;
    let medoids: Vec<AccountFit> = clustering.medoid_indices.iter().map(|&m| tr_fits[m].clone()).collect();
    let te_z = assign_test_accounts(&te_fits, &medoids, &settings.dissimilarity)?;
    Ok(PreparedExperiment {
        experiment,
        train: ExperimentSet { accounts: tr_acc, labels: tr_lab, fits: tr_fits, z: clustering.assignment.clone() },
        test: ExperimentSet { accounts: te_acc, labels: te_lab, fits: te_fits, z: te_z },
        clustering,
        excluded,
    })
}

#[derive(Debug, Clone)]
pub struct ScoredModel {
    pub model: LogisticModel,
    pub test_scores: Vec<f64>,
    pub report: EvaluationReport,
}

/// Fits one design on the training side and evaluates it on the test side.
pub fn score_design(
    prepared: &PreparedExperiment,
    design: Design,
    logistic: &LogisticOptions,
    severity: Severity,
) -> Result<ScoredModel> {
    fit_and_evaluate(
        prepared.experiment,
        design,
        (&prepared.train.accounts, &prepared.train.z, &prepared.train.labels),
        (&prepared.test.accounts, &prepared.test.z, &prepared.test.labels),
        &prepared.clustering.measure.to_string(),
        logistic,
        severity,
    )
}

type Side<'a> = (&'a [AccountProfile], &'a [Vec<u8>], &'a [u8]);

/// Logistic fit on `train` and the four metrics on `test`.
pub fn fit_and_evaluate(
    experiment: Experiment,
    design: Design,
    train: Side<'_>,
    test: Side<'_>,
    measure: &str,
    logistic: &LogisticOptions,
    severity: Severity,
) -> Result<ScoredModel> {
    let x_train = build_design(train.0, Some(train.1), design)?;
    let mut model = fit_logistic(&x_train, train.2, logistic)?;
    model.design = Some(design);
    let x_test = build_design(test.0, Some(test.1), design)?;
    let test_scores = predict_proba(&model, &x_test.x)?;
    let measure = if design.uses_clusters() { measure } else { "none" };
    let report = EvaluationReport::compute(
        &test_scores,
        test.2,
        severity,
        &experiment.to_string(),
        &design.to_string(),
        measure,
    )?;
    Ok(ScoredModel { model, test_scores, report })
}

/// Default prediction over full profiles: cluster, fit on `train`,
/// evaluate on `test`.
pub fn run_prediction_experiment(
    train: &[AccountProfile],
    test: &[AccountProfile],
    settings: &ClusterSettings,
    design: Design,
) -> Result<ScoredModel> {
    let prepared = prepare_experiment(Experiment::Predict, train, test, settings)?;
    score_design(&prepared, design, &LogisticOptions::default(), Severity::default())
}

/// Default forecasting: everything is computed from observation prefixes
/// and evaluated against defaults in the forecast window.
pub fn run_forecast_experiment(
    train: &[AccountProfile],
    test: &[AccountProfile],
    settings: &ClusterSettings,
    design: Design,
) -> Result<ScoredModel> {
    let prepared = prepare_experiment(Experiment::Forecast, train, test, settings)?;
    score_design(&prepared, design, &LogisticOptions::default(), Severity::default())
}
