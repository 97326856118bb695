//! Bivariate VAR(1) fitting for (repayment, utilisation).
//!
//! Each equation is regressed by least squares on the lagged pair with no
//! intercept. The coefficient vector is the row-major coefficient matrix
//! `(a11, a12, a21, a22)`, so `a1j` drive repayment and `a2j` utilisation.
//! Its covariance is `Σ̂ ⊗ (ZᵀZ)⁻¹` in the same order.

use std::io::{Read, Write};

use nalgebra::{Matrix2, Matrix4};
use rayon::prelude::*;

use crate::data::AccountProfile;
use crate::error::{Error, Result};

/// Number of VAR(1) coefficients.
pub const P: usize = 4;

/// Shortest series accepted by [`fit_var1`] unless overridden.
pub const DEFAULT_MIN_LENGTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceForm {
    /// Full `Σ̂ ⊗ (ZᵀZ)⁻¹`, including cross-equation terms.
    #[default]
    Kronecker,
    /// Cross-equation blocks set to zero.
    BlockDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarOptions {
    pub min_length: usize,
    pub covariance: CovarianceForm,
}

impl Default for VarOptions {
    fn default() -> Self {
        Self {
            min_length: DEFAULT_MIN_LENGTH,
            covariance: CovarianceForm::Kronecker,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarFit {
    pub theta: [f64; P],
    pub psi: Matrix4<f64>,
    /// Residual covariance. Not part of the exported fit table, so `None`
    /// for fits read back from it.
    pub sigma_u: Option<Matrix2<f64>>,
    pub t_len: usize,
    pub n_eff: usize,
}

impl VarFit {
    pub fn coefficient_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.theta[0], self.theta[1], self.theta[2], self.theta[3])
    }

    /// One-step prediction `A·y(t−1)`.
    pub fn predict(&self, prev: [f64; 2]) -> [f64; 2] {
        let t = &self.theta;
        [
            t[0] * prev[0] + t[1] * prev[1],
            t[2] * prev[0] + t[3] * prev[1],
        ]
    }
}

/// A fit together with the account it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountFit {
    pub id: String,
    pub fit: VarFit,
}

pub fn fit_var1(repay: &[f64], utilisation: &[f64], opts: &VarOptions) -> Result<VarFit> {
    let t_len = repay.len();
    if utilisation.len() != t_len {
        return Err(Error::DimensionMismatch {
            expected: t_len,
            got: utilisation.len(),
        });
    }
    let min = opts.min_length.max(4);
    if t_len < min {
        return Err(Error::TooShort { len: t_len, min });
    }
    if repay.iter().chain(utilisation).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in series".into()));
    }
    for (name, s) in [("repayment", repay), ("utilisation", utilisation)] {
        let lags = &s[..t_len - 1];
        if lags.iter().all(|&v| v == lags[0]) {
            return Err(Error::DegenerateSeries(format!("{name} series is constant")));
        }
    }

    let n_eff = t_len - 1;
    let mut ztz = Matrix2::<f64>::zeros();
    // columns: repay equation, utilisation equation
    let mut zty = Matrix2::<f64>::zeros();
    for t in 1..t_len {
        let z = [repay[t - 1], utilisation[t - 1]];
        let y = [repay[t], utilisation[t]];
        for i in 0..2 {
            for j in 0..2 {
                ztz[(i, j)] += z[i] * z[j];
                zty[(i, j)] += z[i] * y[j];
            }
        }
    }
    let det = ztz.determinant();
    let scale = ztz[(0, 0)] * ztz[(1, 1)];
    if !(det > 1e-12 * scale) {
        return Err(Error::DegenerateSeries(
            "lagged regressors are collinear".into(),
        ));
    }
    let ztz_inv = ztz
        .try_inverse()
        .ok_or_else(|| Error::DegenerateSeries("singular ZᵀZ".into()))?;
    // B = (ZᵀZ)⁻¹ZᵀY; the coefficient matrix is Bᵀ
    let b = ztz_inv * zty;
    let a = b.transpose();
    let theta = [a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]];

    let mut rss = Matrix2::<f64>::zeros();
    for t in 1..t_len {
        let fitted = [
            theta[0] * repay[t - 1] + theta[1] * utilisation[t - 1],
            theta[2] * repay[t - 1] + theta[3] * utilisation[t - 1],
        ];
        let u = [repay[t] - fitted[0], utilisation[t] - fitted[1]];
        for i in 0..2 {
            for j in 0..2 {
                rss[(i, j)] += u[i] * u[j];
            }
        }
    }
    let sigma_u = rss / (n_eff - 2) as f64;

    let mut psi = sigma_u.kronecker(&ztz_inv);
    if opts.covariance == CovarianceForm::BlockDiagonal {
        for i in 0..2 {
            for j in 2..4 {
                psi[(i, j)] = 0.0;
                psi[(j, i)] = 0.0;
            }
        }
    }
    psi = (psi + psi.transpose()) * 0.5;

    Ok(VarFit {
        theta,
        psi,
        sigma_u: Some(sigma_u),
        t_len,
        n_eff,
    })
}

pub fn fit_account(account: &AccountProfile, opts: &VarOptions) -> Result<VarFit> {
    fit_var1(account.repay(), account.utilisation(), opts)
}

/// An account left out of a batch fit and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Excluded {
    pub id: String,
    pub reason: String,
}

/// Fits every account in parallel. Accounts that are too short or
/// degenerate are reported rather than failing the batch; results keep
/// input order.
pub fn fit_accounts(
    accounts: &[AccountProfile],
    opts: &VarOptions,
) -> (Vec<AccountFit>, Vec<Excluded>) {
    let results: Vec<_> = accounts
        .par_iter()
        .map(|acc| (acc.id(), fit_account(acc, opts)))
        .collect();
    let mut fits = Vec::new();
    let mut excluded = Vec::new();
    for (id, r) in results {
        match r {
            Ok(fit) => fits.push(AccountFit {
                id: id.to_string(),
                fit,
            }),
            Err(e) => {
                log::info!("excluding account {id}: {e}");
                excluded.push(Excluded {
                    id: id.to_string(),
                    reason: e.to_string(),
                })
            }
        }
    }
    (fits, excluded)
}

/// Largest eigenvalue modulus of a 2×2 matrix.
pub fn spectral_radius(a: &[[f64; 2]; 2]) -> f64 {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        ((tr + s) / 2.0).abs().max(((tr - s) / 2.0).abs())
    } else {
        det.sqrt()
    }
}

pub fn is_stationary(fit: &VarFit) -> bool {
    let t = &fit.theta;
    spectral_radius(&[[t[0], t[1]], [t[2], t[3]]]) < 1.0
}

const FIT_COLUMNS: [&str; 23] = [
    "account_id", "t_len", "n_eff", "a11", "a12", "a21", "a22",
    "psi11", "psi12", "psi13", "psi14", "psi21", "psi22", "psi23", "psi24",
    "psi31", "psi32", "psi33", "psi34", "psi41", "psi42", "psi43", "psi44",
];

/// One row per account: id, lengths, θ̂ and the row-major Ψ̂.
pub fn write_fits_csv<W: Write>(writer: W, fits: &[AccountFit]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FIT_COLUMNS)?;
    for af in fits {
        let mut rec = vec![af.id.clone(), af.fit.t_len.to_string(), af.fit.n_eff.to_string()];
        rec.extend(af.fit.theta.iter().map(f64::to_string));
        for i in 0..P {
            rec.extend((0..P).map(|j| af.fit.psi[(i, j)].to_string()));
        }
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io("<fits csv>", e))?;
    Ok(())
}

/// Reads a table written by [`write_fits_csv`]. Values round-trip exactly;
/// the residual covariance is not stored and comes back as `None`.
pub fn read_fits_csv<R: Read>(reader: R) -> Result<Vec<AccountFit>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    for c in FIT_COLUMNS {
        if !headers.iter().any(|h| h == c) {
            return Err(Error::MissingColumn(c.into()));
        }
    }
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let idx: Vec<usize> = FIT_COLUMNS.iter().map(|c| col(c)).collect();
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |c: &str| Error::Parse { row: r + 2, message: format!("bad value in column '{c}'") };
        let num = |k: usize| rec[idx[k]].parse::<f64>().map_err(|_| bad(FIT_COLUMNS[k]));
        let int = |k: usize| rec[idx[k]].parse::<usize>().map_err(|_| bad(FIT_COLUMNS[k]));
        let mut theta = [0.0; P];
        for (j, t) in theta.iter_mut().enumerate() {
            *t = num(3 + j)?;
        }
        let mut psi = Matrix4::zeros();
        for i in 0..P {
            for j in 0..P {
                psi[(i, j)] = num(7 + i * P + j)?;
            }
        }
        out.push(AccountFit {
            id: rec[idx[0]].to_string(),
            fit: VarFit { theta, psi, sigma_u: None, t_len: int(1)?, n_eff: int(2)? },
        });
    }
    Ok(out)
}

/// `account_id,reason` rows.
pub fn write_excluded_csv<W: Write>(writer: W, excluded: &[Excluded]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["account_id", "reason"])?;
    for e in excluded {
        w.write_record([&e.id, &e.reason])?;
    }
    w.flush().map_err(|e| Error::io("<excluded csv>", e))?;
    Ok(())
}
