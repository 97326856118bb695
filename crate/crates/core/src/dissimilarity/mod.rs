//! Pairwise dissimilarity between fitted accounts.
//!
//! Two measures are available: one minus the overlap ratio of the
//! accounts' coefficient confidence ellipsoids, and the Euclidean distance
//! between coefficient vectors. Matrices are built pair-parallel; each pair
//! draws from its own stream seeded by the root seed and the two account
//! ids, so the result does not depend on scheduling or thread count.

mod ellipsoid;
mod fdist;
mod io;

pub use ellipsoid::{
    build_ellipsoid, ellipsoid_dissimilarity, ellipsoid_volume, overlap, overlap_ratio,
    overlap_volume_mc, unit_ball_volume, ConfidenceEllipsoid, McEstimate, Overlap,
    RadiusConvention, MIN_MC_SAMPLES, RIDGE_DELTA,
};
pub use fdist::{f_cdf, f_quantile, inverse_beta_reg};
pub use io::{
    cache_path, fit_digest, load_cache, read_matrix_csv, save_cache, write_matrix_csv, CacheKey,
};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::var_model::AccountFit;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_MC_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    #[default]
    Ellipsoid,
    Euclidean,
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::Ellipsoid => "ellipsoid",
            Measure::Euclidean => "euclidean",
        })
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipsoid" | "ell" => Ok(Measure::Ellipsoid),
            "euclidean" | "euc" => Ok(Measure::Euclidean),
            other => Err(Error::Config(format!("unknown measure '{other}'"))),
        }
    }
}

pub fn euclidean_distance(theta_r: &[f64], theta_s: &[f64]) -> Result<f64> {
    if theta_r.len() != theta_s.len() {
        return Err(Error::DimensionMismatch {
            expected: theta_r.len(),
            got: theta_s.len(),
        });
    }
    Ok(theta_r
        .iter()
        .zip(theta_s)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissimilarityOptions {
    pub measure: Measure,
    pub alpha: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub convention: RadiusConvention,
}

impl Default for DissimilarityOptions {
    fn default() -> Self {
        Self {
            measure: Measure::Ellipsoid,
            alpha: DEFAULT_ALPHA,
            n_samples: DEFAULT_MC_SAMPLES,
            seed: 0,
            convention: RadiusConvention::Squared,
        }
    }
}

/// An account ready for pairwise comparison.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub theta: [f64; 4],
    pub ellipsoid: Option<ConfidenceEllipsoid>,
}

/// Builds the per-account objects the chosen measure needs.
pub fn prepare(fits: &[AccountFit], opts: &DissimilarityOptions) -> Result<Vec<Prepared>> {
    fits.par_iter()
        .map(|af| {
            let ellipsoid = match opts.measure {
                Measure::Ellipsoid => Some(
                    build_ellipsoid(&af.fit, opts.alpha, opts.convention)
                        .map_err(|e| e.for_account(&af.id))?,
                ),
                Measure::Euclidean => None,
            };
            Ok(Prepared {
                id: af.id.clone(),
                theta: af.fit.theta,
                ellipsoid,
            })
        })
        .collect()
}

/// Dissimilarity of one pair. Symmetric: the pair is put in id order
/// before sampling.
pub fn pair_dissimilarity(a: &Prepared, b: &Prepared, opts: &DissimilarityOptions) -> Result<f64> {
    match opts.measure {
        Measure::Euclidean => euclidean_distance(&a.theta, &b.theta),
        Measure::Ellipsoid => {
            let (lo, hi) = if a.id <= b.id { (a, b) } else { (b, a) };
            let (Some(el), Some(eh)) = (&lo.ellipsoid, &hi.ellipsoid) else {
                return Err(Error::InvalidArgument(
                    "ellipsoid measure needs prepared ellipsoids".into(),
                ));
            };
            let s = seed::pair_seed(opts.seed, &lo.id, &hi.id);
            ellipsoid_dissimilarity(el, eh, opts.n_samples, s)
                .map_err(|e| e.for_account(format!("{}/{}", lo.id, hi.id)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    account_ids: Vec<String>,
    /// Row-major n×n.
    values: Vec<f64>,
    pub measure: Measure,
    pub alpha: f64,
    /// 0 for the Euclidean measure.
    pub mc_samples: usize,
    pub seed: u64,
}

impl DissimilarityMatrix {
    /// Checks shape, zero diagonal, symmetry and the measure's range.
    pub fn new(
        account_ids: Vec<String>,
        values: Vec<f64>,
        measure: Measure,
        alpha: f64,
        mc_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = account_ids.len();
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: values.len(),
            });
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "non-zero diagonal at {}",
                    account_ids[i]
                )));
            }
            for j in 0..i {
                let v = values[i * n + j];
                if v != values[j * n + i] {
                    return Err(Error::InvalidArgument(format!(
                        "asymmetric entry ({}, {})",
                        account_ids[i], account_ids[j]
                    )));
                }
                let ok = match measure {
                    Measure::Ellipsoid => (0.0..=1.0).contains(&v),
                    Measure::Euclidean => v >= 0.0 && v.is_finite(),
                };
                if !ok {
                    return Err(Error::InvalidArgument(format!(
                        "entry {v} out of range for the {measure} measure"
                    )));
                }
            }
        }
        Ok(Self {
            account_ids,
            values,
            measure,
            alpha,
            mc_samples,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.account_ids.len()
    }

    pub fn account_ids(&self) -> &[String] {
        &self.account_ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// All `n(n−1)/2` pairwise dissimilarities.
pub fn build_matrix(
    fits: &[AccountFit],
    opts: &DissimilarityOptions,
) -> Result<DissimilarityMatrix> {
    let n = fits.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 fits for a dissimilarity matrix, got {n}"
        )));
    }
    let prepared = prepare(fits, opts)?;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let dists: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| pair_dissimilarity(&prepared[i], &prepared[j], opts))
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; n * n];
    for (&(i, j), d) in pairs.iter().zip(dists) {
        values[i * n + j] = d;
        values[j * n + i] = d;
    }
    let mc_samples = match opts.measure {
        Measure::Ellipsoid => opts.n_samples,
        Measure::Euclidean => 0,
    };
    DissimilarityMatrix::new(
        fits.iter().map(|f| f.id.clone()).collect(),
        values,
        opts.measure,
        opts.alpha,
        mc_samples,
        opts.seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::var_model::{fit_accounts, VarOptions};

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean_distance(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4]).unwrap(), 1.0);
        let d = euclidean_distance(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert!((d - 30f64.sqrt()).abs() < 1e-15);
        assert!((d - 5.4772).abs() < 1e-4);
        assert!(euclidean_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn small_fits(n: usize) -> Vec<AccountFit> {
        let spec = SyntheticSpec {
            accounts_per_cluster: n.div_ceil(3),
            ..SyntheticSpec::default()
        };
        let p = generate_synthetic(&spec).unwrap();
        let (fits, _) = fit_accounts(&p.accounts, &VarOptions::default());
        fits.into_iter().take(n).collect()
    }

    #[test]
    fn identical_fits_give_zero_matrix() {
        let f = small_fits(1).remove(0);
        let g = AccountFit {
            id: "other".into(),
            fit: f.fit.clone(),
        };
        let m = build_matrix(&[f, g], &DissimilarityOptions::default()).unwrap();
        assert_eq!(m.values(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn euclidean_matrix_matches_pairwise_calls() {
        let fits = small_fits(3);
        let opts = DissimilarityOptions {
            measure: Measure::Euclidean,
            ..DissimilarityOptions::default()
        };
        let m = build_matrix(&fits, &opts).unwrap();
        assert_eq!(m.mc_samples, 0);
        for i in 0..3 {
            for j in 0..3 {
                let d = euclidean_distance(&fits[i].fit.theta, &fits[j].fit.theta).unwrap();
                assert_eq!(m.get(i, j), d);
            }
        }
    }

    #[test]
    fn ellipsoid_matrix_properties_and_thread_independence() {
        let fits = small_fits(12);
        let opts = DissimilarityOptions {
            n_samples: 2_000,
            seed: 99,
            ..DissimilarityOptions::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| build_matrix(&fits, &opts).unwrap())
        };
        let m1 = run(1);
        let m4 = run(4);
        assert_eq!(m1, m4);
        for i in 0..m1.n() {
            assert_eq!(m1.get(i, i), 0.0);
            for j in 0..m1.n() {
                assert!((0.0..=1.0).contains(&m1.get(i, j)));
                assert_eq!(m1.get(i, j), m1.get(j, i));
            }
        }
    }

    #[test]
    fn pair_value_independent_of_position() {
        let fits = small_fits(4);
        let opts = DissimilarityOptions {
            n_samples: 2_000,
            ..DissimilarityOptions::default()
        };
        let forward = build_matrix(&fits, &opts).unwrap();
        let reversed: Vec<AccountFit> = fits.iter().rev().cloned().collect();
        let backward = build_matrix(&reversed, &opts).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(forward.get(i, j), backward.get(3 - i, 3 - j));
            }
        }
    }

    #[test]
    fn matrix_rejects_bad_inputs() {
        assert!(build_matrix(&small_fits(1), &DissimilarityOptions::default()).is_err());
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(DissimilarityMatrix::new(ids.clone(), vec![0.0, 1.5, 1.5, 0.0], Measure::Ellipsoid, 0.05, 1000, 0).is_err());
        assert!(DissimilarityMatrix::new(ids.clone(), vec![0.0, 0.5, 0.4, 0.0], Measure::Ellipsoid, 0.05, 1000, 0).is_err());
        assert!(DissimilarityMatrix::new(ids, vec![0.0, 1.5, 1.5, 0.0], Measure::Euclidean, 0.05, 0, 0).is_ok());
    }

    #[test]
    fn measure_parses() {
        assert_eq!("ellipsoid".parse::<Measure>().unwrap(), Measure::Ellipsoid);
        assert_eq!("euclidean".parse::<Measure>().unwrap(), Measure::Euclidean);
        assert!("manhattan".parse::<Measure>().is_err());
    }
}
