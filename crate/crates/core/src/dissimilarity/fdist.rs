//! F-distribution CDF and quantile through the regularized incomplete beta
//! function.

use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{Error, Result};

/// `P(F ≤ x)` for `F ~ F(df1, df2)`.
pub fn f_cdf(x: f64, df1: f64, df2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let z = df1 * x / (df1 * x + df2);
    beta_reg(df1 / 2.0, df2 / 2.0, z)
}

/// Inverse of `x ↦ I_x(a, b)`: safeguarded Newton inside a shrinking
/// bracket, falling back to bisection whenever a step leaves the bracket.
pub fn inverse_beta_reg(a: f64, b: f64, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let ln_b = ln_beta(a, b);
    let density = |x: f64| ((a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_b).exp();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = a / (a + b);
    for _ in 0..400 {
        let f = beta_reg(a, b, x) - p;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
        let d = density(x);
        let newton = x - f / d;
        x = if d.is_finite() && d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    x
}

/// Quantile of the F(df1, df2) distribution at probability `prob`.
pub fn f_quantile(df1: u64, df2: u64, prob: f64) -> Result<f64> {
    if df1 == 0 || df2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "degrees of freedom must be positive, got ({df1}, {df2})"
        )));
    }
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "probability {prob} outside (0, 1)"
        )));
    }
    let (d1, d2) = (df1 as f64, df2 as f64);
    let z = inverse_beta_reg(d1 / 2.0, d2 / 2.0, prob);
    if z >= 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(d2 * z / (d1 * (1.0 - z)))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// F(4, 20) density with exact normalisation: B(2, 10) = 1/110.
    fn f4_20_density(x: f64) -> f64 {
        110.0 * 0.2f64.powi(2) * x * (1.0 + 0.2 * x).powi(-12)
    }

    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn quantile_matches_integrated_density() {
        // bisection on the integrated density
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if simpson(&f4_20_density, 0.0, mid, 20_000) < 0.95 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((oracle - 2.866081).abs() < 1e-5, "{oracle}");
        let q = f_quantile(4, 20, 0.95).unwrap();
        assert!((q - oracle).abs() < 1e-6, "{q} vs {oracle}");
    }

    #[test]
    fn one_numerator_df_is_squared_t() {
        // t_5 quantile at 0.975 is 2.570581836...; F(1,5) at 0.95 is its square
        let q = f_quantile(1, 5, 0.95).unwrap();
        assert!((q - 2.570_581_835_636_3f64.powi(2)).abs() < 1e-8, "{q}");
    }

    #[test]
    fn symmetric_median_is_one() {
        for d in [1, 3, 10, 57] {
            let q = f_quantile(d, d, 0.5).unwrap();
            assert!((q - 1.0).abs() < 1e-10, "d={d}: {q}");
        }
    }

    #[test]
    fn large_df2_approaches_chi_square() {
        // χ²₄ CDF is 1 − e^{−x/2}(1 + x/2); bisect for the 0.95 point
        let cdf = |x: f64| 1.0 - (-x / 2.0).exp() * (1.0 + x / 2.0);
        let (mut lo, mut hi) = (0.0, 50.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < 0.95 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let chi2 = 0.5 * (lo + hi);
        assert!((chi2 - 9.487729).abs() < 1e-5);
        let scaled = 4.0 * f_quantile(4, 10_000_000, 0.95).unwrap();
        assert!((scaled - chi2).abs() < 1e-4, "{scaled} vs {chi2}");
    }

    #[test]
    fn cdf_roundtrip_on_grid() {
        for df1 in [1u64, 2, 4, 7, 12] {
            for df2 in [1u64, 3, 8, 30, 200] {
                for prob in [1e-4, 0.05, 0.5, 0.95, 0.9999] {
                    let q = f_quantile(df1, df2, prob).unwrap();
                    let back = f_cdf(q, df1 as f64, df2 as f64);
                    assert!((back - prob).abs() < 1e-10, "({df1},{df2},{prob}): {back}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_probability() {
        assert!(f_quantile(4, 20, 0.0).is_err());
        assert!(f_quantile(4, 20, 1.0).is_err());
        assert!(f_quantile(0, 20, 0.5).is_err());
    }
}
