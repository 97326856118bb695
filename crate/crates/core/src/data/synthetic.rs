//! Synthetic behavioural portfolios with known cluster structure.
//!
//! Each cluster owns a VAR(1) coefficient matrix, a noise covariance and a
//! default hazard. Repayment and utilisation follow the cluster's VAR(1)
//! from a zero state after a burn-in; balance is utilisation times a fixed
//! per-account credit limit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{AccountProfile, DEFAULT_CONSECUTIVE_MISSES, MAX_DELINQUENCY};
use crate::error::{Error, Result};
use crate::seed;
use crate::var_model::spectral_radius;

const BURN_IN: usize = 50;

/// Probability that an account of the cluster defaults, and the part of
/// the profile (as fractions of its length) in which the default occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardProfile {
    pub default_probability: f64,
    pub onset_window: (f64, f64),
}

impl HazardProfile {
    pub fn anytime(default_probability: f64) -> Self {
        Self {
            default_probability,
            onset_window: (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    /// Row-major VAR(1) coefficient matrix for (repay, utilisation).
    pub a: [[f64; 2]; 2],
    pub noise_cov: [[f64; 2]; 2],
    pub hazard: HazardProfile,
    /// Overrides `SyntheticSpec::accounts_per_cluster` for this cluster.
    pub size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub clusters: Vec<ClusterSpec>,
    pub accounts_per_cluster: usize,
    pub length_range: (usize, usize),
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPortfolio {
    pub accounts: Vec<AccountProfile>,
    /// Zero-based generating cluster of each account.
    pub truth: Vec<usize>,
}

impl Default for SyntheticSpec {
    /// Three well-separated behaviour regimes with low, medium and high
    /// default rates.
    fn default() -> Self {
        let noise = [[1.0, 0.2], [0.2, 1.0]];
        Self {
            clusters: vec![
                ClusterSpec {
                    a: [[0.8, 0.0], [0.0, 0.8]],
                    noise_cov: noise,
                    hazard: HazardProfile::anytime(0.05),
                    size: None,
                },
                ClusterSpec {
                    a: [[-0.6, 0.0], [0.0, -0.6]],
                    noise_cov: noise,
                    hazard: HazardProfile::anytime(0.15),
                    size: None,
                },
                ClusterSpec {
                    a: [[0.0, 0.7], [-0.7, 0.0]],
                    noise_cov: noise,
                    hazard: HazardProfile::anytime(0.6),
                    size: None,
                },
            ],
            accounts_per_cluster: 100,
            length_range: (20, 37),
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.clusters.is_empty() {
            return bad("synthetic spec has no clusters".into());
        }
        if self.accounts_per_cluster == 0 {
            return bad("accounts_per_cluster must be positive".into());
        }
        let (lo, hi) = self.length_range;
        if lo == 0 || lo > hi {
            return bad(format!("invalid length range ({lo}, {hi})"));
        }
        for (c, cl) in self.clusters.iter().enumerate() {
            let rho = spectral_radius(&cl.a);
            if !(rho < 1.0) {
                return bad(format!(
                    "cluster {}: spectral radius {rho:.4} is not below 1",
                    c + 1
                ));
            }
            let s = cl.noise_cov;
            let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
            if s[0][1] != s[1][0] || !(s[0][0] > 0.0) || !(det > 0.0) {
                return bad(format!(
                    "cluster {}: noise covariance is not symmetric positive definite",
                    c + 1
                ));
            }
            let h = cl.hazard;
            if !(0.0..=1.0).contains(&h.default_probability)
                || !(0.0 <= h.onset_window.0
                    && h.onset_window.0 <= h.onset_window.1
                    && h.onset_window.1 <= 1.0)
            {
                return bad(format!("cluster {}: invalid hazard profile", c + 1));
            }
            if cl.size == Some(0) {
                return bad(format!("cluster {}: size must be positive", c + 1));
            }
        }
        Ok(())
    }

    /// Parses the flat `key = value` form written by [`SyntheticSpec::to_text`].
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = |m: String| Error::Config(m);
        let mut global: BTreeMap<String, String> = BTreeMap::new();
        let mut per_cluster: BTreeMap<usize, BTreeMap<String, String>> = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg(format!("line {}: expected key = value", ln + 1)))?;
            let (key, value) = (key.trim(), value.trim().to_string());
            if let Some(rest) = key.strip_prefix("cluster") {
                let (num, field) = rest
                    .split_once('.')
                    .ok_or_else(|| cfg(format!("line {}: bad cluster key '{key}'", ln + 1)))?;
                let num: usize = num
                    .parse()
                    .map_err(|_| cfg(format!("line {}: bad cluster number in '{key}'", ln + 1)))?;
                per_cluster
                    .entry(num)
                    .or_default()
                    .insert(field.to_string(), value);
            } else {
                global.insert(key.to_string(), value);
            }
        }

        fn reals(key: &str, v: &str, n: usize) -> Result<Vec<f64>> {
            let vals: std::result::Result<Vec<f64>, _> = v
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::parse::<f64>)
                .collect();
            match vals {
                Ok(vals) if vals.len() == n => Ok(vals),
                _ => Err(Error::Config(format!("'{key}' needs {n} numbers, got '{v}'"))),
            }
        }
        fn int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("'{key}' needs an integer, got '{v}'")))
        }

        let mut spec = SyntheticSpec {
            clusters: Vec::new(),
            ..SyntheticSpec::default()
        };
        for (key, v) in &global {
            match key.as_str() {
                "accounts_per_cluster" => spec.accounts_per_cluster = int(key, v)?,
                "length_min" => spec.length_range.0 = int(key, v)?,
                "length_max" => spec.length_range.1 = int(key, v)?,
                "seed" => spec.seed = int(key, v)?,
                other => return Err(cfg(format!("unknown key '{other}'"))),
            }
        }
        for (expected, (num, fields)) in (1..).zip(&per_cluster) {
            if *num != expected {
                return Err(cfg(format!("clusters must be numbered 1..K, found {num}")));
            }
            let get = |f: &str| {
                fields
                    .get(f)
                    .ok_or_else(|| cfg(format!("cluster{num}.{f} is missing")))
            };
            let a = reals("a", get("a")?, 4)?;
            let s = reals("noise", get("noise")?, 4)?;
            let p = reals("default_probability", get("default_probability")?, 1)?[0];
            let onset = match fields.get("onset") {
                Some(v) => {
                    let o = reals("onset", v, 2)?;
                    (o[0], o[1])
                }
                None => (0.0, 1.0),
            };
            let size = fields.get("size").map(|v| int("size", v)).transpose()?;
            for f in fields.keys() {
                if !["a", "noise", "default_probability", "onset", "size"].contains(&f.as_str()) {
                    return Err(cfg(format!("unknown key 'cluster{num}.{f}'")));
                }
            }
            spec.clusters.push(ClusterSpec {
                a: [[a[0], a[1]], [a[2], a[3]]],
                noise_cov: [[s[0], s[1]], [s[2], s[3]]],
                hazard: HazardProfile {
                    default_probability: p,
                    onset_window: onset,
                },
                size,
            });
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "accounts_per_cluster = {}", self.accounts_per_cluster);
        let _ = writeln!(out, "length_min = {}", self.length_range.0);
        let _ = writeln!(out, "length_max = {}", self.length_range.1);
        let _ = writeln!(out, "seed = {}", self.seed);
        for (i, c) in self.clusters.iter().enumerate() {
            let n = i + 1;
            let _ = writeln!(
                out,
                "cluster{n}.a = {} {} {} {}",
                c.a[0][0], c.a[0][1], c.a[1][0], c.a[1][1]
            );
            let _ = writeln!(
                out,
                "cluster{n}.noise = {} {} {} {}",
                c.noise_cov[0][0], c.noise_cov[0][1], c.noise_cov[1][0], c.noise_cov[1][1]
            );
            let _ = writeln!(
                out,
                "cluster{n}.default_probability = {}",
                c.hazard.default_probability
            );
            let _ = writeln!(
                out,
                "cluster{n}.onset = {} {}",
                c.hazard.onset_window.0, c.hazard.onset_window.1
            );
            if let Some(size) = c.size {
                let _ = writeln!(out, "cluster{n}.size = {size}");
            }
        }
        out
    }
}

fn noise_factor(s: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let l11 = s[0][0].sqrt();
    let l21 = s[1][0] / l11;
    let l22 = (s[1][1] - l21 * l21).sqrt();
    [[l11, 0.0], [l21, l22]]
}

/// Simulates `len` steps of a zero-mean VAR(1) after discarding the burn-in.
pub fn simulate_var1<R: Rng>(
    a: &[[f64; 2]; 2],
    noise_cov: &[[f64; 2]; 2],
    len: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let l = noise_factor(noise_cov);
    let mut y = [0.0f64; 2];
    let mut first = Vec::with_capacity(len);
    let mut second = Vec::with_capacity(len);
    for step in 0..BURN_IN + len {
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        let u = [l[0][0] * e0, l[1][0] * e0 + l[1][1] * e1];
        y = [
            a[0][0] * y[0] + a[0][1] * y[1] + u[0],
            a[1][0] * y[0] + a[1][1] * y[1] + u[1],
        ];
        if step >= BURN_IN {
            first.push(y[0]);
            second.push(y[1]);
        }
    }
    (first, second)
}

fn delinquency_path<R: Rng>(hazard: &HazardProfile, len: usize, rng: &mut R) -> Vec<i64> {
    let m = DEFAULT_CONSECUTIVE_MISSES;
    let defaults = rng.random::<f64>() < hazard.default_probability;
    let mut path = vec![0i64; len];
    if !defaults || len <= m {
        return path;
    }
    let last = (len - 1) as f64;
    let lo = ((hazard.onset_window.0 * last).ceil() as usize).max(m);
    let hi = ((hazard.onset_window.1 * last).floor() as usize).min(len - 1);
    if lo > hi {
        return path;
    }
    // month in which the m-th consecutive miss lands
    let completion = rng.random_range(lo..=hi);
    let start = completion + 1 - m;
    for (t, d) in path.iter_mut().enumerate().skip(start) {
        *d = ((t - start + 1) as i64).min(MAX_DELINQUENCY);
    }
    path
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticPortfolio> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let total: usize = spec
        .clusters
        .iter()
        .map(|c| c.size.unwrap_or(spec.accounts_per_cluster))
        .sum();
    let width = total.to_string().len().max(4);
    let mut accounts = Vec::with_capacity(total);
    let mut truth = Vec::with_capacity(total);
    for (label, cluster) in spec.clusters.iter().enumerate() {
        for _ in 0..cluster.size.unwrap_or(spec.accounts_per_cluster) {
            let len = rng.random_range(spec.length_range.0..=spec.length_range.1);
            let limit = 100.0 * rng.random_range(10u32..=100) as f64;
            let (repay, ut) = simulate_var1(&cluster.a, &cluster.noise_cov, len, &mut rng);
            let delinquency = delinquency_path(&cluster.hazard, len, &mut rng);
            let balance: Vec<f64> = ut.iter().map(|u| u * limit).collect();
            let id = format!("S{:0width$}", accounts.len() + 1);
            accounts.push(AccountProfile::new(
                id,
                repay,
                balance,
                vec![limit; len],
                delinquency,
            )?);
            truth.push(label);
        }
    }
    Ok(SyntheticPortfolio { accounts, truth })
}

/// Sidecar table `account_id, true_cluster` (clusters numbered from 1).
pub fn write_truth<W: Write>(writer: W, portfolio: &SyntheticPortfolio) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["account_id", "true_cluster"])?;
    for (acc, &label) in portfolio.accounts.iter().zip(&portfolio.truth) {
        w.write_record([acc.id().to_string(), (label + 1).to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<truth csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;

    fn one_cluster(a: [[f64; 2]; 2]) -> SyntheticSpec {
        SyntheticSpec {
            clusters: vec![ClusterSpec {
                a,
                noise_cov: [[1.0, 0.0], [0.0, 1.0]],
                hazard: HazardProfile::anytime(0.0),
                size: None,
            }],
            accounts_per_cluster: 3,
            length_range: (10, 12),
            seed: 1,
        }
    }

    #[test]
    fn zero_matrix_gives_white_noise() {
        let a = [[0.0; 2]; 2];
        let mut rng = seed::rng(3);
        let (x, y) = simulate_var1(&a, &[[1.0, 0.0], [0.0, 1.0]], 20_000, &mut rng);
        let lag1 = |s: &[f64]| {
            let n = s.len() as f64;
            let var = s.iter().map(|v| v * v).sum::<f64>() / n;
            s.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / n / var
        };
        assert!(lag1(&x).abs() < 0.03);
        assert!(lag1(&y).abs() < 0.03);
        generate_synthetic(&one_cluster(a)).unwrap();
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = SyntheticSpec::default();
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = SyntheticSpec { seed: 8, ..spec.clone() };
        assert_ne!(generate_synthetic(&spec).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn rejects_non_stationary() {
        let spec = one_cluster([[1.05, 0.0], [0.0, 0.2]]);
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn spec_text_roundtrip() {
        let mut spec = SyntheticSpec::default();
        spec.clusters[1].size = Some(42);
        spec.clusters[2].hazard.onset_window = (0.7, 1.0);
        assert_eq!(SyntheticSpec::parse(&spec.to_text()).unwrap(), spec);
        assert!(SyntheticSpec::parse("bogus = 1").is_err());
    }

    #[test]
    fn utilisation_reproduced_and_defaults_follow_hazard() {
        let mut spec = SyntheticSpec::default();
        spec.clusters[0].hazard = HazardProfile::anytime(0.0);
        spec.clusters[2].hazard = HazardProfile::anytime(1.0);
        let p = generate_synthetic(&spec).unwrap();
        assert_eq!(p.accounts.len(), 300);
        for (acc, &c) in p.accounts.iter().zip(&p.truth) {
            assert!(acc.credit_limit().iter().all(|&l| l == acc.credit_limit()[0]));
            assert!(acc.len() >= 20 && acc.len() <= 37);
            match c {
                0 => assert_eq!(acc.ever_default(), 0),
                2 => assert_eq!(acc.ever_default(), 1),
                _ => {}
            }
        }
    }

    #[test]
    fn late_onset_defaults_land_in_window() {
        let mut rng = seed::rng(5);
        let hazard = HazardProfile {
            default_probability: 1.0,
            onset_window: (0.8, 1.0),
        };
        for _ in 0..200 {
            let path = delinquency_path(&hazard, 30, &mut rng);
            let (flags, ever) = crate::data::derive_default(&path, 3).unwrap();
            assert_eq!(ever, 1);
            let first = flags.iter().position(|&f| f == 1).unwrap();
            assert!(first >= 24, "{first}");
        }
    }

    /// Stationary covariance V = A V Aᵀ + Σ solved through vec(V).
    fn stationary_cov(a: &[[f64; 2]; 2], s: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
        let am = nalgebra::Matrix2::new(a[0][0], a[0][1], a[1][0], a[1][1]);
        let kron = am.kronecker(&am);
        let lhs = Matrix4::identity() - kron;
        // column-major vec
        let rhs = nalgebra::Vector4::new(s[0][0], s[1][0], s[0][1], s[1][1]);
        let v = lhs.lu().solve(&rhs).unwrap();
        [[v[0], v[2]], [v[1], v[3]]]
    }

    #[test]
    fn long_path_autocovariance_matches_stationary_solution() {
        let a = [[0.5, 0.2], [-0.3, 0.4]];
        let s = [[1.0, 0.3], [0.3, 0.5]];
        let v = stationary_cov(&a, &s);
        let mut rng = seed::rng(11);
        let (x, y) = simulate_var1(&a, &s, 10_000, &mut rng);
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let c = |p: &[f64], mp: f64, q: &[f64], mq: f64| {
            p.iter().zip(q).map(|(a, b)| (a - mp) * (b - mq)).sum::<f64>() / (n - 1.0)
        };
        let emp = [
            [c(&x, mx, &x, mx), c(&x, mx, &y, my)],
            [c(&y, my, &x, mx), c(&y, my, &y, my)],
        ];
        let diff: f64 = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| (emp[i][j] - v[i][j]).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = v.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff / norm < 0.05, "relative error {}", diff / norm);
    }
}
