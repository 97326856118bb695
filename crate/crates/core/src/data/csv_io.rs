use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::AccountProfile;
use crate::error::{Error, Result};

/// Column names of the long-format account table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMapping {
    pub account_id: String,
    pub month: String,
    pub repay: String,
    pub balance: String,
    pub credit_limit: String,
    pub delinquency: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            account_id: "account_id".into(),
            month: "month".into(),
            repay: "repay".into(),
            balance: "balance".into(),
            credit_limit: "credit_limit".into(),
            delinquency: "delinquency".into(),
        }
    }
}

#[derive(Default)]
struct RawAccount {
    months: Vec<i64>,
    repay: Vec<f64>,
    balance: Vec<f64>,
    credit_limit: Vec<f64>,
    delinquency: Vec<i64>,
}

pub fn load_accounts(path: &Path, mapping: &ColumnMapping) -> Result<Vec<AccountProfile>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_accounts(file, mapping)
}

/// Reads a long-format table. Accounts are returned in order of first
/// appearance; rows of one account may interleave with other accounts but
/// their months must run 1, 2, 3, ... in file order.
pub fn read_accounts<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<Vec<AccountProfile>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let c_id = col(&mapping.account_id)?;
    let c_month = col(&mapping.month)?;
    let c_repay = col(&mapping.repay)?;
    let c_bal = col(&mapping.balance)?;
    let c_cl = col(&mapping.credit_limit)?;
    let c_del = col(&mapping.delinquency)?;

    let mut order: Vec<String> = Vec::new();
    let mut raw: HashMap<String, RawAccount> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        // header is line 1
        let row = i + 2;
        let record = record?;
        let field = |c: usize, name: &str| -> Result<&str> {
            record.get(c).ok_or_else(|| Error::Parse {
                row,
                message: format!("missing value for '{name}'"),
            })
        };
        let real = |c: usize, name: &str| -> Result<f64> {
            let s = field(c, name)?;
            s.parse::<f64>().map_err(|_| Error::Parse {
                row,
                message: format!("'{name}' value '{s}' is not numeric"),
            })
        };
        let int = |c: usize, name: &str| -> Result<i64> {
            let s = field(c, name)?;
            s.parse::<i64>().map_err(|_| Error::Parse {
                row,
                message: format!("'{name}' value '{s}' is not an integer"),
            })
        };
        let id = field(c_id, &mapping.account_id)?.to_string();
        let month = int(c_month, &mapping.month)?;
        let entry = raw.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            RawAccount::default()
        });
        let expected = entry.months.len() as i64 + 1;
        if month != expected {
            let msg = if entry.months.contains(&month) {
                format!("duplicated month {month} (row {row})")
            } else {
                format!("month {month} out of sequence at row {row}, expected {expected}")
            };
            return Err(Error::validation(id, msg));
        }
        entry.months.push(month);
        entry.repay.push(real(c_repay, &mapping.repay)?);
        entry.balance.push(real(c_bal, &mapping.balance)?);
        entry.credit_limit.push(real(c_cl, &mapping.credit_limit)?);
        entry.delinquency.push(int(c_del, &mapping.delinquency)?);
    }

    order
        .into_iter()
        .map(|id| {
            let r = raw.remove(&id).expect("every ordered id has rows");
            AccountProfile::new(id, r.repay, r.balance, r.credit_limit, r.delinquency)
        })
        .collect()
}

/// Writes accounts in the default long format. Reals use the shortest
/// representation that parses back to the same value.
pub fn write_accounts<W: Write>(writer: W, accounts: &[AccountProfile]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "account_id",
        "month",
        "repay",
        "balance",
        "credit_limit",
        "delinquency",
    ])?;
    for acc in accounts {
        for t in 0..acc.len() {
            w.write_record([
                acc.id().to_string(),
                (t + 1).to_string(),
                acc.repay()[t].to_string(),
                acc.balance()[t].to_string(),
                acc.credit_limit()[t].to_string(),
                acc.delinquency()[t].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<accounts csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TWO: &str = "account_id,month,repay,balance,credit_limit,delinquency
a,1,10,50,100,0
b,1,5,20,200,0
a,2,20,60,100,0
a,3,30,70,100,1
b,2,5,30,200,0
b,3,0,40,200,1
";

    fn read(s: &str) -> Result<Vec<AccountProfile>> {
        read_accounts(s.as_bytes(), &ColumnMapping::default())
    }

    #[test]
    fn two_accounts_three_rows() {
        let accs = read(TWO).unwrap();
        assert_eq!(accs.len(), 2);
        assert_eq!(accs[0].id(), "a");
        assert!(accs.iter().all(|a| a.len() == 3));
        assert_eq!(accs[0].utilisation(), &[0.5, 0.6, 0.7]);
        assert_eq!(accs[1].repay(), &[5.0, 5.0, 0.0]);
    }

    #[test]
    fn missing_column_is_named() {
        let err = read("account_id,month,repay,balance,delinquency\n").unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "credit_limit"));
    }

    #[test]
    fn non_numeric_reports_row() {
        let err = read("account_id,month,repay,balance,credit_limit,delinquency\na,1,x,1,1,0\n")
            .unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
    }

    #[test]
    fn zero_limit_is_validation_error() {
        let err = read("account_id,month,repay,balance,credit_limit,delinquency\nq,1,1,1,0,0\n")
            .unwrap_err();
        assert!(matches!(err, Error::Validation { ref account, .. } if account == "q"));
    }

    #[test]
    fn delinquency_thirteen_rejected() {
        let err = read("account_id,month,repay,balance,credit_limit,delinquency\nq,1,1,1,10,13\n")
            .unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn duplicated_and_gapped_months_rejected() {
        let dup = "account_id,month,repay,balance,credit_limit,delinquency\na,1,1,1,1,0\na,1,1,1,1,0\n";
        assert!(read(dup).unwrap_err().to_string().contains("duplicated"));
        let gap = "account_id,month,repay,balance,credit_limit,delinquency\na,1,1,1,1,0\na,3,1,1,1,0\n";
        assert!(matches!(read(gap).unwrap_err(), Error::Validation { .. }));
        let backwards = "account_id,month,repay,balance,credit_limit,delinquency\na,2,1,1,1,0\na,1,1,1,1,0\n";
        assert!(read(backwards).is_err());
    }

    #[test]
    fn custom_mapping() {
        let csv = "id,m,r,b,l,d\nz,1,1,2,4,0\n";
        let mapping = ColumnMapping {
            account_id: "id".into(),
            month: "m".into(),
            repay: "r".into(),
            balance: "b".into(),
            credit_limit: "l".into(),
            delinquency: "d".into(),
        };
        let accs = read_accounts(csv.as_bytes(), &mapping).unwrap();
        assert_eq!(accs[0].utilisation(), &[0.5]);
    }

    proptest! {
        #[test]
        fn write_then_load_roundtrips(
            rows in proptest::collection::vec(
                (-1e6f64..1e6, -1e6f64..1e6, 1e-3f64..1e6, 0i64..=12), 1..30),
            n_accounts in 1usize..4,
        ) {
            let accounts: Vec<AccountProfile> = (0..n_accounts)
                .map(|k| {
                    AccountProfile::new(
                        format!("acc{k}"),
                        rows.iter().map(|r| r.0 * (k + 1) as f64).collect(),
                        rows.iter().map(|r| r.1).collect(),
                        rows.iter().map(|r| r.2).collect(),
                        rows.iter().map(|r| r.3).collect(),
                    )
                    .unwrap()
                })
                .collect();
            let mut buf = Vec::new();
            write_accounts(&mut buf, &accounts).unwrap();
            let back = read_accounts(buf.as_slice(), &ColumnMapping::default()).unwrap();
            prop_assert_eq!(back, accounts);
        }
    }
}
