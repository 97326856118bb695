//! Confidence ellipsoids of VAR coefficient vectors and Monte Carlo
//! estimates of their overlap.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::fdist::f_quantile;
use crate::error::{Error, Result};
use crate::seed;
use crate::var_model::{VarFit, P};

/// Relative ridge added to a near-singular shape matrix.
pub const RIDGE_DELTA: f64 = 1e-8;

/// Smallest Monte Carlo sample accepted for an overlap estimate.
pub const MIN_MC_SAMPLES: usize = 1_000;

/// How the F-quantile scales the coefficient covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RadiusConvention {
    /// `shape = p·F·Ψ̂`: `p·F` is the squared radius of the Wald region.
    #[default]
    Squared,
    /// `shape = √(p·F)·Ψ̂`.
    Sqrt,
}

/// `{x : (x − center)ᵀ shape⁻¹ (x − center) ≤ 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceEllipsoid {
    center: DVector<f64>,
    shape: DMatrix<f64>,
    /// Lower Cholesky factor of `shape`.
    chol: DMatrix<f64>,
    alpha: Option<f64>,
    volume: f64,
    max_semi_axis: f64,
    regularized: bool,
}

/// Volume of the unit ball in `p` dimensions, `π^{p/2} / Γ(p/2 + 1)`,
/// through `V_p = 2π/p · V_{p−2}`.
pub fn unit_ball_volume(p: usize) -> f64 {
    match p {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / p as f64 * unit_ball_volume(p - 2),
    }
}

impl ConfidenceEllipsoid {
    /// Builds the ellipsoid, ridge-regularising `shape` when it is not
    /// comfortably positive definite.
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>) -> Result<Self> {
        let p = center.len();
        if p == 0 {
            return Err(Error::InvalidArgument("zero-dimensional ellipsoid".into()));
        }
        if shape.nrows() != p || shape.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: shape.nrows(),
            });
        }
        if center.iter().chain(shape.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite ellipsoid parameters".into()));
        }
        let mut shape = (&shape + shape.transpose()) * 0.5;
        let trace = shape.trace();
        if !(trace > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "shape matrix has trace {trace}"
            )));
        }
        let ridge = RIDGE_DELTA * trace / p as f64;
        let min_eig = shape.clone().symmetric_eigenvalues().min();
        let mut regularized = false;
        if min_eig <= ridge {
            log::debug!("regularising shape (min eigenvalue {min_eig:e}, ridge {ridge:e})");
            for i in 0..p {
                shape[(i, i)] += ridge;
            }
            regularized = true;
        }
        let chol = shape
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorisation failed".into()))?
            .l();
        let eig = shape.clone().symmetric_eigenvalues();
        let max_semi_axis = eig.max().max(0.0).sqrt();
        let sqrt_det: f64 = chol.diagonal().iter().product();
        let volume = unit_ball_volume(p) * sqrt_det;
        Ok(Self {
            center,
            shape,
            chol,
            alpha: None,
            volume,
            max_semi_axis,
            regularized,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    /// Significance level the region was built for, if any.
    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn max_semi_axis(&self) -> f64 {
        self.max_semi_axis
    }

    pub fn was_regularized(&self) -> bool {
        self.regularized
    }

    /// `(x − center)ᵀ shape⁻¹ (x − center)`.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.center;
        let w = self
            .chol
            .solve_lower_triangular(&d)
            .expect("Cholesky factor has a positive diagonal");
        w.norm_squared()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.mahalanobis_sq(x) <= 1.0
    }
}

/// The `(1 − alpha)` confidence ellipsoid of a fit's coefficient vector.
pub fn build_ellipsoid(
    fit: &VarFit,
    alpha: f64,
    convention: RadiusConvention,
) -> Result<ConfidenceEllipsoid> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "significance level {alpha} outside (0, 1)"
        )));
    }
    let p = P as u64;
    let t_len = fit.t_len as u64;
    if t_len < p + 2 {
        return Err(Error::InvalidArgument(format!(
            "series length {t_len} leaves no denominator degrees of freedom (need ≥ {})",
            p + 2
        )));
    }
    let df2 = t_len - p - 1;
    let pf = P as f64 * f_quantile(p, df2, 1.0 - alpha)?;
    let c = match convention {
        RadiusConvention::Squared => pf,
        RadiusConvention::Sqrt => pf.sqrt(),
    };
    let center = DVector::from_row_slice(&fit.theta);
    let shape = DMatrix::from_fn(P, P, |i, j| c * fit.psi[(i, j)]);
    let mut e = ConfidenceEllipsoid::new(center, shape)?;
    e.alpha = Some(alpha);
    Ok(e)
}

/// Closed-form hyper-volume `π^{p/2}·|shape|^{1/2} / Γ(p/2 + 1)`.
pub fn ellipsoid_volume(e: &ConfidenceEllipsoid) -> f64 {
    e.volume
}

/// A Monte Carlo volume estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub volume: f64,
    pub std_error: f64,
    /// Fraction of points drawn in the smaller ellipsoid that fell inside
    /// the other one.
    pub fraction: f64,
    /// Points actually drawn (0 when a shortcut applied).
    pub samples: usize,
}

impl McEstimate {
    fn exact(volume: f64, fraction: f64) -> Self {
        Self {
            volume,
            std_error: 0.0,
            fraction,
            samples: 0,
        }
    }
}

/// Volume of `e_r ∩ e_s`: points are drawn uniformly in the smaller
/// ellipsoid and tested against the other.
pub fn overlap_volume_mc(
    e_r: &ConfidenceEllipsoid,
    e_s: &ConfidenceEllipsoid,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let p = e_r.dim();
    if e_s.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: e_s.dim(),
        });
    }
    if n_samples < MIN_MC_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "n_samples {n_samples} below the minimum {MIN_MC_SAMPLES}"
        )));
    }
    let (small, big) = if e_r.volume <= e_s.volume {
        (e_r, e_s)
    } else {
        (e_s, e_r)
    };
    if e_r.center == e_s.center && e_r.shape == e_s.shape {
        return Ok(McEstimate::exact(small.volume, 1.0));
    }
    let gap = (&e_r.center - &e_s.center).norm();
    if gap > e_r.max_semi_axis + e_s.max_semi_axis {
        return Ok(McEstimate::exact(0.0, 0.0));
    }

    // x = c_small + L_small·u lies in `big` iff ‖w + M·u‖ ≤ 1 with
    // w = L_big⁻¹(c_small − c_big) and M = L_big⁻¹·L_small (lower triangular).
    let w = big
        .chol
        .solve_lower_triangular(&(&small.center - &big.center))
        .expect("positive Cholesky diagonal");
    let m = big
        .chol
        .solve_lower_triangular(&small.chol)
        .expect("positive Cholesky diagonal");
    let w: Vec<f64> = w.iter().copied().collect();
    let m_rows: Vec<f64> = (0..p)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .map(|(i, j)| if j <= i { m[(i, j)] } else { 0.0 })
        .collect();

    let mut rng = seed::rng(seed);
    let inv_p = 1.0 / p as f64;
    let mut g = vec![0.0f64; p];
    let mut hits = 0usize;
    for _ in 0..n_samples {
        let mut norm_sq = 0.0;
        for gi in g.iter_mut() {
            *gi = rng.sample(StandardNormal);
            norm_sq += *gi * *gi;
        }
        let radius: f64 = rng.random::<f64>().powf(inv_p);
        let scale = radius / norm_sq.sqrt();
        let mut q = 0.0;
        for i in 0..p {
            let row = &m_rows[i * p..i * p + i + 1];
            let mut v = w[i];
            for (mij, gj) in row.iter().zip(&g) {
                v += mij * gj * scale;
            }
            q += v * v;
        }
        if q <= 1.0 {
            hits += 1;
        }
    }
    let n = n_samples as f64;
    let f = hits as f64 / n;
    Ok(McEstimate {
        volume: small.volume * f,
        std_error: small.volume * (f * (1.0 - f) / n).sqrt(),
        fraction: f,
        samples: n_samples,
    })
}

/// Overlap ratio (intersection over union) and its Monte Carlo detail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub ratio: f64,
    /// Delta-method standard error of `ratio`.
    pub ratio_std_error: f64,
    pub intersection: McEstimate,
    /// Set when the raw ratio fell outside [0, 1] and was clamped.
    pub clamped: bool,
}

pub fn overlap(
    e_r: &ConfidenceEllipsoid,
    e_s: &ConfidenceEllipsoid,
    n_samples: usize,
    seed: u64,
) -> Result<Overlap> {
    for e in [e_r, e_s] {
        if !(e.volume > 0.0 && e.volume.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ellipsoid volume {} must be positive",
                e.volume
            )));
        }
    }
    let inter = overlap_volume_mc(e_r, e_s, n_samples, seed)?;
    let total = e_r.volume + e_s.volume;
    let union = total - inter.volume;
    let raw = inter.volume / union;
    let ratio = raw.clamp(0.0, 1.0);
    let clamped = ratio != raw;
    if clamped {
        log::debug!("overlap ratio {raw} clamped to {ratio}");
    }
    Ok(Overlap {
        ratio,
        ratio_std_error: inter.std_error * total / (union * union),
        intersection: inter,
        clamped,
    })
}

/// `V∩ / (V_r + V_s − V∩)`, clamped to [0, 1].
pub fn overlap_ratio(
    e_r: &ConfidenceEllipsoid,
    e_s: &ConfidenceEllipsoid,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    overlap(e_r, e_s, n_samples, seed).map(|o| o.ratio)
}

/// `1 − overlap_ratio`.
pub fn ellipsoid_dissimilarity(
    e_r: &ConfidenceEllipsoid,
    e_s: &ConfidenceEllipsoid,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    overlap_ratio(e_r, e_s, n_samples, seed).map(|r| 1.0 - r)
}
