//! Account profiles: validation, derived series and train/test partitioning.
//!
//! An [`AccountProfile`] holds one customer's monthly repayment, balance,
//! credit limit and cumulative delinquency count. Utilisation and the
//! per-month default flag are derived at construction and kept consistent
//! with the raw series.

mod csv_io;
mod synthetic;

pub use csv_io::{load_accounts, read_accounts, write_accounts, ColumnMapping};
pub use synthetic::{
    generate_synthetic, simulate_var1, write_truth, ClusterSpec, HazardProfile, SyntheticPortfolio,
    SyntheticSpec,
};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

/// Largest cumulative delinquency count the data can carry.
pub const MAX_DELINQUENCY: i64 = 12;

/// Consecutive missed payments that constitute a default.
pub const DEFAULT_CONSECUTIVE_MISSES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct AccountProfile {
    id: String,
    repay: Vec<f64>,
    balance: Vec<f64>,
    credit_limit: Vec<f64>,
    delinquency: Vec<u32>,
    utilisation: Vec<f64>,
    default_flag: Vec<u8>,
}

impl AccountProfile {
    /// Validates the raw series and derives utilisation and default flags.
    pub fn new(
        id: impl Into<String>,
        repay: Vec<f64>,
        balance: Vec<f64>,
        credit_limit: Vec<f64>,
        delinquency: Vec<i64>,
    ) -> Result<Self> {
        let id = id.into();
        let len = repay.len();
        if len == 0 {
            return Err(Error::validation(&id, "empty series"));
        }
        for (name, n) in [
            ("balance", balance.len()),
            ("credit_limit", credit_limit.len()),
            ("delinquency", delinquency.len()),
        ] {
            if n != len {
                return Err(Error::validation(
                    &id,
                    format!("{name} has length {n}, repay has length {len}"),
                ));
            }
        }
        for (name, series) in [
            ("repay", &repay),
            ("balance", &balance),
            ("credit_limit", &credit_limit),
        ] {
            if let Some(t) = series.iter().position(|v| !v.is_finite()) {
                return Err(Error::validation(
                    &id,
                    format!("non-finite {name} at month {}", t + 1),
                ));
            }
        }
        if let Some(t) = delinquency
            .iter()
            .position(|&d| !(0..=MAX_DELINQUENCY).contains(&d))
        {
            return Err(Error::validation(
                &id,
                format!(
                    "delinquency {} at month {} outside [0, {MAX_DELINQUENCY}]",
                    delinquency[t],
                    t + 1
                ),
            ));
        }
        let utilisation =
            compute_utilisation(&balance, &credit_limit).map_err(|e| match e {
                Error::InvalidArgument(msg) => Error::validation(&id, msg),
                other => other,
            })?;
        let (default_flag, _) = derive_default(&delinquency, DEFAULT_CONSECUTIVE_MISSES)
            .map_err(|e| e.for_account(&id))?;
        Ok(Self {
            id,
            repay,
            balance,
            credit_limit,
            delinquency: delinquency.into_iter().map(|d| d as u32).collect(),
            utilisation,
            default_flag,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Series length `T_s`.
    pub fn len(&self) -> usize {
        self.repay.len()
    }

    pub fn is_empty(&self) -> bool {
        self.repay.is_empty()
    }

    pub fn repay(&self) -> &[f64] {
        &self.repay
    }

    pub fn balance(&self) -> &[f64] {
        &self.balance
    }

    pub fn credit_limit(&self) -> &[f64] {
        &self.credit_limit
    }

    pub fn delinquency(&self) -> &[u32] {
        &self.delinquency
    }

    pub fn utilisation(&self) -> &[f64] {
        &self.utilisation
    }

    pub fn default_flag(&self) -> &[u8] {
        &self.default_flag
    }

    /// 1 if the account defaulted in any month.
    pub fn ever_default(&self) -> u8 {
        self.default_flag.iter().copied().max().unwrap_or(0)
    }

    /// The first `len` months. Default flags are causal, so the prefix's
    /// flags equal the leading flags of the full profile.
    pub fn prefix(&self, len: usize) -> Self {
        let len = len.min(self.len());
        Self {
            id: self.id.clone(),
            repay: self.repay[..len].to_vec(),
            balance: self.balance[..len].to_vec(),
            credit_limit: self.credit_limit[..len].to_vec(),
            delinquency: self.delinquency[..len].to_vec(),
            utilisation: self.utilisation[..len].to_vec(),
            default_flag: self.default_flag[..len].to_vec(),
        }
    }
}

/// Element-wise balance / credit limit. Values outside [0, 1] are kept.
pub fn compute_utilisation(balance: &[f64], credit_limit: &[f64]) -> Result<Vec<f64>> {
    if balance.len() != credit_limit.len() {
        return Err(Error::DimensionMismatch {
            expected: balance.len(),
            got: credit_limit.len(),
        });
    }
    balance
        .iter()
        .zip(credit_limit)
        .enumerate()
        .map(|(t, (&b, &cl))| {
            if cl <= 0.0 || !cl.is_finite() {
                Err(Error::InvalidArgument(format!(
                    "credit limit {cl} at month {} leaves utilisation undefined",
                    t + 1
                )))
            } else {
                Ok(b / cl)
            }
        })
        .collect()
}

/// Per-month default flags from a cumulative delinquency count.
///
/// Month `t` is flagged when the count rose in each of the last
/// `consecutive_misses` months (all observed) and has reached at least
/// `consecutive_misses`. Returns the flags and their maximum.
pub fn derive_default(delinquency: &[i64], consecutive_misses: usize) -> Result<(Vec<u8>, u8)> {
    if consecutive_misses == 0 {
        return Err(Error::InvalidArgument(
            "consecutive_misses must be positive".into(),
        ));
    }
    if let Some(t) = delinquency.iter().position(|&d| d < 0) {
        return Err(Error::InvalidArgument(format!(
            "negative delinquency {} at month {}",
            delinquency[t],
            t + 1
        )));
    }
    let m = consecutive_misses;
    let flags: Vec<u8> = (0..delinquency.len())
        .map(|t| {
            let rising = t >= m && (t + 1 - m..=t).all(|u| delinquency[u] > delinquency[u - 1]);
            u8::from(rising && delinquency[t] >= m as i64)
        })
        .collect();
    let ever = flags.iter().copied().max().unwrap_or(0);
    Ok((flags, ever))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitStrategy {
    #[default]
    Uniform,
    /// Keeps the share of ever-defaulted accounts equal in both parts.
    StratifiedByDefault,
}

fn train_size(n: usize, train_fraction: f64) -> Result<usize> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 accounts to split, got {n}"
        )));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} leaves an empty partition for {n} accounts"
        )));
    }
    Ok(n_train)
}

/// Random account-level partition of `0..n`; both halves are returned in
/// ascending index order.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = train_size(n, train_fraction)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Partition stratified on a binary label.
pub fn split_indices_stratified(
    labels: &[u8],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = labels.len();
    let n_train = train_size(n, train_fraction)?;
    let mut rng = seed::rng(seed);
    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] != 0).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let pos_train = ((train_fraction * pos.len() as f64).round() as usize)
        .min(n_train)
        .min(pos.len());
    let neg_train = (n_train - pos_train).min(neg.len());
    let pos_train = n_train - neg_train;
    let mut train: Vec<usize> = pos[..pos_train].iter().chain(&neg[..neg_train]).copied().collect();
    let mut test: Vec<usize> = pos[pos_train..].iter().chain(&neg[neg_train..]).copied().collect();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_train_test(
    accounts: &[AccountProfile],
    train_fraction: f64,
    seed: u64,
    strategy: SplitStrategy,
) -> Result<(Vec<AccountProfile>, Vec<AccountProfile>)> {
    let (train, test) = match strategy {
        SplitStrategy::Uniform => split_indices(accounts.len(), train_fraction, seed)?,
        SplitStrategy::StratifiedByDefault => {
            let labels: Vec<u8> = accounts.iter().map(AccountProfile::ever_default).collect();
            split_indices_stratified(&labels, train_fraction, seed)?
        }
    };
    let pick = |idx: &[usize]| idx.iter().map(|&i| accounts[i].clone()).collect();
    Ok((pick(&train), pick(&test)))
}

/// Number of months in the observation window of a profile of length `t_len`.
pub fn observation_length(t_len: usize) -> usize {
    2 * t_len / 3
}

/// Splits a profile into its observation prefix (first ⌊2T/3⌋ months) and
/// the default label of the remaining forecast window.
pub fn split_observation_forecast(account: &AccountProfile) -> Result<(AccountProfile, u8)> {
    let t_len = account.len();
    if t_len < 3 {
        return Err(Error::validation(
            account.id(),
            format!("length {t_len} leaves an empty forecast window (need at least 3)"),
        ));
    }
    let obs = observation_length(t_len);
    let label = account.default_flag[obs..].iter().copied().max().unwrap_or(0);
    Ok((account.prefix(obs), label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(id: &str, delinquency: Vec<i64>) -> AccountProfile {
        let n = delinquency.len();
        AccountProfile::new(id, vec![1.0; n], vec![50.0; n], vec![100.0; n], delinquency).unwrap()
    }

    #[test]
    fn utilisation_examples() {
        assert_eq!(
            compute_utilisation(&[50.0, 100.0], &[100.0, 100.0]).unwrap(),
            vec![0.5, 1.0]
        );
        assert_eq!(compute_utilisation(&[-10.0], &[100.0]).unwrap(), vec![-0.1]);
        assert_eq!(compute_utilisation(&[356.0], &[100.0]).unwrap(), vec![3.56]);
    }

    #[test]
    fn utilisation_rejects_zero_limit() {
        let err = compute_utilisation(&[1.0, 2.0], &[100.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("month 2"), "{err}");
    }

    #[test]
    fn default_examples() {
        assert_eq!(derive_default(&[0, 0, 0, 0], 3).unwrap(), (vec![0, 0, 0, 0], 0));
        assert_eq!(derive_default(&[0, 1, 2, 3], 3).unwrap(), (vec![0, 0, 0, 1], 1));
        assert_eq!(derive_default(&[0, 1, 2, 0, 1], 3).unwrap(), (vec![0; 5], 0));
    }

    #[test]
    fn default_rejects_negative() {
        assert!(derive_default(&[0, -1], 3).is_err());
    }

    #[test]
    fn account_rejects_delinquency_above_twelve() {
        let err = AccountProfile::new("x", vec![0.0], vec![0.0], vec![1.0], vec![13]).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn account_zero_limit_names_account() {
        let err =
            AccountProfile::new("acc-9", vec![0.0], vec![0.0], vec![0.0], vec![0]).unwrap_err();
        assert!(err.to_string().contains("acc-9"));
    }

    #[test]
    fn split_sizes_match_reported_sample() {
        let (train, test) = split_indices(494, 0.6, 1).unwrap();
        assert_eq!((train.len(), test.len()), (296, 198));
    }

    #[test]
    fn split_is_deterministic() {
        assert_eq!(split_indices(10, 0.6, 42).unwrap(), split_indices(10, 0.6, 42).unwrap());
        assert_ne!(split_indices(50, 0.6, 42).unwrap(), split_indices(50, 0.6, 43).unwrap());
    }

    #[test]
    fn split_rejects_bad_arguments() {
        assert!(split_indices(10, 1.0, 0).is_err());
        assert!(split_indices(10, 0.0, 0).is_err());
        assert!(split_indices(1, 0.5, 0).is_err());
    }

    #[test]
    fn stratified_split_balances_defaults() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i % 5 == 0)).collect();
        let (train, test) = split_indices_stratified(&labels, 0.6, 3).unwrap();
        assert_eq!(train.len(), 60);
        assert_eq!(test.len(), 40);
        assert_eq!(train.iter().filter(|&&i| labels[i] == 1).count(), 12);
    }

    #[test]
    fn observation_windows() {
        let acc = profile("a", vec![0; 36]);
        let (obs, label) = split_observation_forecast(&acc).unwrap();
        assert_eq!(obs.len(), 24);
        assert_eq!(label, 0);

        let acc = profile("b", vec![0; 4]);
        assert_eq!(split_observation_forecast(&acc).unwrap().0.len(), 2);

        let acc = profile("c", vec![0, 0, 0]);
        let (obs, label) = split_observation_forecast(&acc).unwrap();
        assert_eq!((obs.len(), label), (2, 0));

        assert!(split_observation_forecast(&profile("d", vec![0, 0])).is_err());
    }

    #[test]
    fn forecast_label_uses_tail_only() {
        // default completes at month 4, inside the forecast window of a 6-month profile
        let acc = profile("e", vec![0, 0, 0, 1, 2, 3]);
        let (obs, label) = split_observation_forecast(&acc).unwrap();
        assert_eq!(obs.len(), 4);
        assert_eq!(obs.ever_default(), 0);
        assert_eq!(label, 1);
    }

    proptest! {
        #[test]
        fn ever_default_is_max_of_flags(path in proptest::collection::vec(0i64..=12, 1..40), m in 1usize..5) {
            let (flags, ever) = derive_default(&path, m).unwrap();
            let brute = (0..path.len()).any(|t| {
                t >= m
                    && (1..=m).all(|back| path[t + 1 - back] > path[t - back])
                    && path[t] >= m as i64
            });
            prop_assert_eq!(ever, u8::from(brute));
            prop_assert_eq!(ever, flags.iter().copied().max().unwrap());
        }

        #[test]
        fn split_is_a_partition(n in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let n_train = (frac * n as f64).round() as usize;
            prop_assume!(n_train > 0 && n_train < n);
            let (train, test) = split_indices(n, frac, seed).unwrap();
            prop_assert_eq!(train.len(), n_train);
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn observation_plus_forecast_is_whole(t in 3usize..200) {
            let acc = profile("p", vec![0; t]);
            let (obs, _) = split_observation_forecast(&acc).unwrap();
            let forecast = t - obs.len();
            prop_assert!(forecast >= 1);
            prop_assert_eq!(obs.len() + forecast, t);
        }
    }
}
