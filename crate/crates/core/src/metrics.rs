//! Scorecard metrics (AUC, KS, Gini, H-measure) and a PCA projection of
//! coefficient vectors for plotting.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite score {s}")));
    }
    let n1 = labels.iter().filter(|&&l| l != 0).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::OneClass(labels.len()));
    }
    Ok((n0, n1))
}

/// Indices sorted by score, with ties kept in input order.
fn order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    idx
}

/// Runs of tied scores in ascending order: (negatives, positives) per run.
fn tie_groups(scores: &[f64], labels: &[u8]) -> Vec<(usize, usize)> {
    let idx = order(scores);
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last = f64::NAN;
    for i in idx {
        if groups.is_empty() || scores[i] != last {
            groups.push((0, 0));
            last = scores[i];
        }
        let g = groups.last_mut().unwrap();
        if labels[i] != 0 {
            g.1 += 1;
        } else {
            g.0 += 1;
        }
    }
    groups
}

/// Area under the ROC curve (probability a positive outscores a negative,
/// ties counted as one half) and its Hanley–McNeil standard error.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    let (n0, n1) = class_counts(scores, labels)?;
    let mut below = 0usize; // negatives strictly below the current group
    let mut wins = 0.0;
    for (neg, pos) in tie_groups(scores, labels) {
        wins += pos as f64 * (below as f64 + 0.5 * neg as f64);
        below += neg;
    }
    let (n0f, n1f) = (n0 as f64, n1 as f64);
    let a = wins / (n0f * n1f);
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    let var = (a * (1.0 - a) + (n1f - 1.0) * (q1 - a * a) + (n0f - 1.0) * (q2 - a * a)) / (n0f * n1f);
    Ok((a, var.max(0.0).sqrt()))
}

/// Largest gap between the class-conditional empirical score CDFs.
pub fn ks_statistic(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n0, n1) = class_counts(scores, labels)?;
    let (mut c0, mut c1) = (0usize, 0usize);
    let mut best = 0.0f64;
    for (neg, pos) in tie_groups(scores, labels) {
        c0 += neg;
        c1 += pos;
        best = best.max((c1 as f64 / n1 as f64 - c0 as f64 / n0 as f64).abs());
    }
    Ok(best)
}

pub fn gini(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(2.0 * auc(scores, labels)?.0 - 1.0)
}

/// Prior over the normalised cost ratio used by the H-measure.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// Beta(1 + π₁, 1 + π₀) with π the class priors of the sample.
    #[default]
    ClassPrior,
    Beta { a: f64, b: f64 },
}

impl Severity {
    pub fn parameters(&self, pi0: f64, pi1: f64) -> Result<(f64, f64)> {
        let (a, b) = match *self {
            Severity::ClassPrior => (1.0 + pi1, 1.0 + pi0),
            Severity::Beta { a, b } => (a, b),
        };
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid severity Beta({a}, {b})")));
        }
        Ok((a, b))
    }
}

/// Lower convex hull of the points (false-positive rate, false-negative
/// rate) traced by sweeping the threshold, from (0, 1) to (1, 0).
fn loss_hull(scores: &[f64], labels: &[u8], n0: usize, n1: usize) -> Vec<(f64, f64)> {
    let groups = tie_groups(scores, labels);
    // Everything at or above the threshold is called positive; sweep from
    // the highest score down.
    let mut pts = vec![(0.0, 1.0)];
    let (mut fp, mut tp) = (0usize, 0usize);
    for &(neg, pos) in groups.iter().rev() {
        fp += neg;
        tp += pos;
        pts.push((fp as f64 / n0 as f64, 1.0 - tp as f64 / n1 as f64));
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// Hand's H-measure: one minus the expected minimum misclassification
/// loss, normalised by that of the better trivial classifier.
///
/// Scores with AUC below one half are reversed first, so a perfectly
/// inverted scorecard counts as perfect.
pub fn h_measure(scores: &[f64], labels: &[u8], severity: Severity) -> Result<f64> {
    let (n0, n1) = class_counts(scores, labels)?;
    let flipped: Vec<f64>;
    let scores = if auc(scores, labels)?.0 < 0.5 {
        flipped = scores.iter().map(|s| -s).collect();
        &flipped
    } else {
        scores
    };
    let n = (n0 + n1) as f64;
    let (pi0, pi1) = (n0 as f64 / n, n1 as f64 / n);
    let (a, b) = severity.parameters(pi0, pi1)?;
    // ∫ c w(c) dc and ∫ (1 − c) w(c) dc over [lo, hi]
    let ic = |lo: f64, hi: f64| a / (a + b) * (beta_reg(a + 1.0, b, hi) - beta_reg(a + 1.0, b, lo));
    let ic1 = |lo: f64, hi: f64| b / (a + b) * (beta_reg(a, b + 1.0, hi) - beta_reg(a, b + 1.0, lo));

    let hull = loss_hull(scores, labels, n0, n1);
    // Vertex i is optimal for c between the switch points with its
    // neighbours; switch points fall as the false-positive rate rises.
    let switch = |p: (f64, f64), q: (f64, f64)| {
        let (da, db) = (q.0 - p.0, q.1 - p.1);
        (-pi1 * db / (pi0 * da - pi1 * db)).clamp(0.0, 1.0)
    };
    let mut loss = 0.0;
    let mut upper = 1.0;
    for i in 0..hull.len() {
        let lower = if i + 1 < hull.len() {
            switch(hull[i], hull[i + 1]).min(upper)
        } else {
            0.0
        };
        let (fpr, fnr) = hull[i];
        loss += pi0 * fpr * ic(lower, upper) + pi1 * fnr * ic1(lower, upper);
        upper = lower;
    }
    let loss_max = pi0 * ic(0.0, pi1) + pi1 * ic1(pi1, 1.0);
    Ok((1.0 - loss / loss_max).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub experiment: String,
    pub design: String,
    pub measure: String,
    pub h_measure: f64,
    pub ks: f64,
    pub gini: f64,
    pub auc: f64,
    pub auc_std_error: f64,
    pub n_test: usize,
    pub n_positive: usize,
}

impl EvaluationReport {
    /// All four metrics for `scores` against `labels`.
    pub fn compute(
        scores: &[f64],
        labels: &[u8],
        severity: Severity,
        experiment: &str,
        design: &str,
        measure: &str,
    ) -> Result<Self> {
        let (a, se) = auc(scores, labels)?;
        Ok(Self {
            model: format!("{experiment}/{design}/{measure}"),
            experiment: experiment.into(),
            design: design.into(),
            measure: measure.into(),
            h_measure: h_measure(scores, labels, severity)?,
            ks: ks_statistic(scores, labels)?,
            gini: 2.0 * a - 1.0,
            auc: a,
            auc_std_error: se,
            n_test: labels.len(),
            n_positive: labels.iter().filter(|&&l| l != 0).count(),
        })
    }
}

/// CSV rows `model,h_measure,ks,gini,auc`.
pub fn write_reports_csv<W: Write>(writer: W, reports: &[EvaluationReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "h_measure", "ks", "gini", "auc"])?;
    for r in reports {
        w.write_record([
            r.model.clone(),
            r.h_measure.to_string(),
            r.ks.to_string(),
            r.gini.to_string(),
            r.auc.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<report csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Unit loading vectors, one per component.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the sample covariance for the kept components.
    pub explained_variance: Vec<f64>,
    /// Share of the total variance per kept component.
    pub explained_ratio: Vec<f64>,
    /// Projected coordinates, one row per input vector.
    pub coordinates: Vec<Vec<f64>>,
}

impl PcaProjection {
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, comp) in coords.iter().zip(&self.components) {
            for (xi, vi) in x.iter_mut().zip(comp) {
                *xi += c * vi;
            }
        }
        x
    }
}

/// Projects `points` onto their top principal components. Each component's
/// largest-magnitude loading is made positive.
pub fn pca_project(points: &[Vec<f64>], n_components: usize) -> Result<PcaProjection> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 points, got {n}")));
    }
    let p = points[0].len();
    if let Some(bad) = points.iter().find(|x| x.len() != p) {
        return Err(Error::DimensionMismatch { expected: p, got: bad.len() });
    }
    if n_components == 0 || n_components > p {
        return Err(Error::InvalidArgument(format!(
            "n_components = {n_components} must lie in 1..={p}"
        )));
    }
    let x = DMatrix::from_fn(n, p, |i, j| points[i][j]);
    let mean: DVector<f64> = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(n_components);
    let mut variance = Vec::with_capacity(n_components);
    for &k in idx.iter().take(n_components) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        variance.push(eig.eigenvalues[k].max(0.0));
    }
    let coordinates = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|v| (0..p).map(|j| centered[(i, j)] * v[j]).sum())
                .collect()
        })
        .collect();
    let explained_ratio = variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(PcaProjection {
        mean: mean.iter().copied().collect(),
        components,
        explained_variance: variance,
        explained_ratio,
        coordinates,
    })
}
