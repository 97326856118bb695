//! Matrix persistence: a square CSV (header = account ids) and a binary
//! cache keyed by the settings and a digest of the fits.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{DissimilarityMatrix, Measure, RadiusConvention};
use crate::error::{Error, Result};
use crate::var_model::AccountFit;

const MAGIC: &[u8; 5] = b"BCDM1";

pub fn write_matrix_csv<W: Write>(writer: W, m: &DissimilarityMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(m.account_ids())?;
    for i in 0..m.n() {
        w.write_record(m.row(i).iter().map(f64::to_string))?;
    }
    w.flush().map_err(|e| Error::io("<matrix csv>", e))?;
    Ok(())
}

/// Reads a square matrix CSV; provenance comes from the caller.
pub fn read_matrix_csv<R: Read>(
    reader: R,
    measure: Measure,
    alpha: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<DissimilarityMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let ids: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut values = Vec::with_capacity(ids.len() * ids.len());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != ids.len() {
            return Err(Error::Parse {
                row: i + 2,
                message: format!("expected {} values, found {}", ids.len(), rec.len()),
            });
        }
        for s in rec.iter() {
            values.push(s.parse::<f64>().map_err(|_| Error::Parse {
                row: i + 2,
                message: format!("'{s}' is not numeric"),
            })?);
        }
    }
    DissimilarityMatrix::new(ids, values, measure, alpha, mc_samples, seed)
}

/// SHA-256 over account ids, coefficients, covariances and lengths.
pub fn fit_digest(fits: &[AccountFit]) -> [u8; 32] {
    let mut h = Sha256::new();
    for af in fits {
        h.update((af.id.len() as u64).to_le_bytes());
        h.update(af.id.as_bytes());
        for v in af.fit.theta.iter().chain(af.fit.psi.iter()) {
            h.update(v.to_le_bytes());
        }
        h.update((af.fit.t_len as u64).to_le_bytes());
    }
    let out = h.finalize();
    let mut d = [0u8; 32];
    d.copy_from_slice(out.as_slice());
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheKey {
    pub measure: Measure,
    pub alpha: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub convention: RadiusConvention,
    pub fit_digest: [u8; 32],
}

impl CacheKey {
    fn bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64);
        b.push(match self.measure {
            Measure::Ellipsoid => 0,
            Measure::Euclidean => 1,
        });
        b.extend(self.alpha.to_le_bytes());
        b.extend((self.n_samples as u64).to_le_bytes());
        b.extend(self.seed.to_le_bytes());
        b.push(match self.convention {
            RadiusConvention::Squared => 0,
            RadiusConvention::Sqrt => 1,
        });
        b.extend(self.fit_digest);
        b
    }

    fn file_name(&self) -> String {
        let digest = Sha256::digest(self.bytes());
        let hex: String = digest.iter().take(12).map(|b| format!("{b:02x}")).collect();
        format!("dissim-{hex}.bin")
    }
}

pub fn cache_path(dir: &Path, key: &CacheKey) -> PathBuf {
    dir.join(key.file_name())
}

pub fn save_cache(dir: &Path, key: &CacheKey, m: &DissimilarityMatrix) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut buf = Vec::with_capacity(16 + m.values().len() * 8);
    buf.extend(MAGIC);
    buf.extend(key.bytes());
    buf.extend((m.n() as u64).to_le_bytes());
    for id in m.account_ids() {
        buf.extend((id.len() as u64).to_le_bytes());
        buf.extend(id.as_bytes());
    }
    for v in m.values() {
        buf.extend(v.to_le_bytes());
    }
    let path = cache_path(dir, key);
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

/// The cached matrix for `key`, or `None` if absent, stale or unreadable.
pub fn load_cache(dir: &Path, key: &CacheKey) -> Result<Option<DissimilarityMatrix>> {
    let path = cache_path(dir, key);
    let buf = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(&path, e)),
    };
    let parsed = (|| {
        let mut c = Cursor { buf: &buf, pos: 0 };
        if c.take(MAGIC.len())? != MAGIC || c.take(key.bytes().len())? != key.bytes().as_slice() {
            return None;
        }
        let n = c.u64()? as usize;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = c.u64()? as usize;
            ids.push(String::from_utf8(c.take(len)?.to_vec()).ok()?);
        }
        let values: Option<Vec<f64>> = (0..n * n)
            .map(|_| c.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        (c.pos == buf.len()).then_some((ids, values?))
    })();
    let Some((ids, values)) = parsed else {
        log::warn!("ignoring unreadable cache {}", path.display());
        return Ok(None);
    };
    let mc = match key.measure {
        Measure::Ellipsoid => key.n_samples,
        Measure::Euclidean => 0,
    };
    DissimilarityMatrix::new(ids, values, key.measure, key.alpha, mc, key.seed).map(Some)
}
