//! k-medoids (PAM) over a precomputed dissimilarity matrix, assignment of
//! new accounts to fitted medoids, and partition agreement scores.

use std::io::Write;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dissimilarity::{pair_dissimilarity, prepare, DissimilarityMatrix, DissimilarityOptions, Measure};
use crate::error::{Error, Result};
use crate::var_model::AccountFit;

pub const DEFAULT_K: usize = 3;
pub const MAX_SWAP_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub k: usize,
    /// Row indices into the matrix, ordered by cluster label.
    pub medoid_indices: Vec<usize>,
    /// One-hot allocation per account.
    pub assignment: Vec<Vec<u8>>,
    pub total_cost: f64,
    pub measure: Measure,
    /// Cost after BUILD and after every accepted swap.
    pub cost_trace: Vec<f64>,
    pub account_ids: Vec<String>,
}

impl ClusteringResult {
    /// 0-based cluster index of account `i`.
    pub fn cluster_of(&self, i: usize) -> usize {
        hot_index(&self.assignment[i])
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.assignment.len()).map(|i| self.cluster_of(i)).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for i in 0..self.assignment.len() {
            s[self.cluster_of(i)] += 1;
        }
        s
    }

    pub fn medoid_ids(&self) -> Vec<String> {
        self.medoid_indices.iter().map(|&m| self.account_ids[m].clone()).collect()
    }

    pub fn summary(&self) -> ClusterSummary {
        ClusterSummary {
            k: self.k,
            measure: self.measure,
            medoid_ids: self.medoid_ids(),
            sizes: self.sizes(),
            total_cost: self.total_cost,
            swap_iterations: self.cost_trace.len().saturating_sub(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub measure: Measure,
    pub medoid_ids: Vec<String>,
    pub sizes: Vec<usize>,
    pub total_cost: f64,
    pub swap_iterations: usize,
}

fn hot_index(z: &[u8]) -> usize {
    z.iter().position(|&v| v == 1).expect("one-hot vector")
}

fn one_hot(k: usize, l: usize) -> Vec<u8> {
    let mut z = vec![0; k];
    z[l] = 1;
    z
}

/// One-hot vector at the smallest dissimilarity; ties go to the lowest index.
pub fn assign_to_medoids(d_to_medoids: &[f64]) -> Result<Vec<u8>> {
    if d_to_medoids.is_empty() {
        return Err(Error::InvalidArgument("no medoids to assign to".into()));
    }
    if let Some(v) = d_to_medoids.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite dissimilarity {v}")));
    }
    let mut best = 0;
    for (l, &v) in d_to_medoids.iter().enumerate() {
        if v < d_to_medoids[best] {
            best = l;
        }
    }
    Ok(one_hot(d_to_medoids.len(), best))
}

/// Sum over accounts of the dissimilarity to the nearest medoid.
pub fn medoid_cost(d: &DissimilarityMatrix, medoids: &[usize]) -> f64 {
    (0..d.n())
        .map(|j| medoids.iter().map(|&m| d.get(m, j)).fold(f64::INFINITY, f64::min))
        .sum()
}

fn build(d: &DissimilarityMatrix, k: usize) -> Vec<usize> {
    let n = d.n();
    let first = (0..n)
        .map(|i| (i, d.row(i).iter().sum::<f64>()))
        .fold((0, f64::INFINITY), |acc, (i, s)| if s < acc.1 { (i, s) } else { acc })
        .0;
    let mut medoids = vec![first];
    let mut nearest: Vec<f64> = d.row(first).to_vec();
    while medoids.len() < k {
        let gains: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .filter(|c| !medoids.contains(c))
            .map(|c| {
                let g = d.row(c).iter().zip(&nearest).map(|(dc, dn)| (dn - dc).max(0.0)).sum();
                (c, g)
            })
            .collect();
        let (best, _) = gains
            .into_iter()
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (c, g)| if g > acc.1 { (c, g) } else { acc });
        medoids.push(best);
        for (j, dn) in nearest.iter_mut().enumerate() {
            *dn = dn.min(d.get(best, j));
        }
    }
    medoids
}

/// Nearest and second-nearest medoid distances, and the slot of the nearest.
fn nearest_two(d: &DissimilarityMatrix, medoids: &[usize]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = d.n();
    let (mut slot, mut d1, mut d2) = (vec![0; n], vec![f64::INFINITY; n], vec![f64::INFINITY; n]);
    for j in 0..n {
        for (s, &m) in medoids.iter().enumerate() {
            let v = d.get(m, j);
            if v < d1[j] {
                d2[j] = d1[j];
                d1[j] = v;
                slot[j] = s;
            } else if v < d2[j] {
                d2[j] = v;
            }
        }
    }
    (slot, d1, d2)
}

/// PAM: greedy BUILD followed by best-improvement SWAP.
///
/// The algorithm is deterministic, so `seed` is accepted for interface
/// symmetry with the other stages and otherwise ignored.
pub fn k_medoids(d: &DissimilarityMatrix, k: usize, _seed: u64) -> Result<ClusteringResult> {
    let n = d.n();
    if k < 2 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must satisfy 2 <= k < n = {n}"
        )));
    }
    if let Some(v) = d.values().iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite dissimilarity {v}")));
    }

    let mut medoids = build(d, k);
    let mut cost = medoid_cost(d, &medoids);
    let mut trace = vec![cost];
    for _ in 0..MAX_SWAP_ITERATIONS {
        let (slot, d1, d2) = nearest_two(d, &medoids);
        // (delta, slot, candidate) for the best swap of each candidate
        let best = (0..n)
            .into_par_iter()
            .filter(|h| !medoids.contains(h))
            .map(|h| {
                let dh = d.row(h);
                let mut best = (f64::INFINITY, 0);
                for s in 0..k {
                    let delta: f64 = (0..n)
                        .map(|j| {
                            let keep = if slot[j] == s { d2[j] } else { d1[j] };
                            keep.min(dh[j]) - d1[j]
                        })
                        .sum();
                    if delta < best.0 {
                        best = (delta, s);
                    }
                }
                (best.0, best.1, h)
            })
            .reduce(
                || (f64::INFINITY, usize::MAX, usize::MAX),
                |a, b| {
                    // index-ordered ties keep the reduction order irrelevant
                    if b.0 < a.0 || (b.0 == a.0 && (b.2, b.1) < (a.2, a.1)) {
                        b
                    } else {
                        a
                    }
                },
            );
        let tol = 1e-12 * cost.abs().max(1.0);
        if !(best.0 < -tol) {
            break;
        }
        medoids[best.1] = best.2;
        let new_cost = medoid_cost(d, &medoids);
        if new_cost >= cost {
            break;
        }
        cost = new_cost;
        trace.push(cost);
    }

    let mut sizes = vec![0usize; k];
    for l in allocate(d, &medoids) {
        sizes[l] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&s| (std::cmp::Reverse(sizes[s]), medoids[s]));
    let medoids: Vec<usize> = order.iter().map(|&s| medoids[s]).collect();
    let assignment = allocate(d, &medoids).into_iter().map(|l| one_hot(k, l)).collect();

    Ok(ClusteringResult {
        k,
        total_cost: medoid_cost(d, &medoids),
        medoid_indices: medoids,
        assignment,
        measure: d.measure,
        cost_trace: trace,
        account_ids: d.account_ids().to_vec(),
    })
}

/// Nearest-medoid label per account; medoids always label themselves.
fn allocate(d: &DissimilarityMatrix, medoids: &[usize]) -> Vec<usize> {
    (0..d.n())
        .map(|j| {
            if let Some(s) = medoids.iter().position(|&m| m == j) {
                return s;
            }
            let mut best = 0;
            for s in 1..medoids.len() {
                if d.get(medoids[s], j) < d.get(medoids[best], j) {
                    best = s;
                }
            }
            best
        })
        .collect()
}

/// Assigns each test account to its closest medoid, computing only the
/// test-to-medoid dissimilarities. Pair seeds depend on account ids, so
/// the values agree with those a full matrix would hold.
pub fn assign_test_accounts(
    test_fits: &[AccountFit],
    medoid_fits: &[AccountFit],
    opts: &DissimilarityOptions,
) -> Result<Vec<Vec<u8>>> {
    test_medoid_dissimilarities(test_fits, medoid_fits, opts)?
        .iter()
        .map(|row| assign_to_medoids(row))
        .collect()
}

/// `n_test × k` dissimilarities between test accounts and medoids.
pub fn test_medoid_dissimilarities(
    test_fits: &[AccountFit],
    medoid_fits: &[AccountFit],
    opts: &DissimilarityOptions,
) -> Result<Vec<Vec<f64>>> {
    if medoid_fits.is_empty() {
        return Err(Error::InvalidArgument("no medoids to assign to".into()));
    }
    let tests = prepare(test_fits, opts)?;
    let meds = prepare(medoid_fits, opts)?;
    tests
        .par_iter()
        .map(|t| meds.iter().map(|m| pair_dissimilarity(t, m, opts)).collect())
        .collect()
}

/// CSV with columns `account_id,cluster`; clusters are 1-based.
pub fn write_assignments_csv<W: Write>(writer: W, ids: &[String], labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["account_id", "cluster"])?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &(l + 1).to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<assignment csv>", e))?;
    Ok(())
}

/// Reads `account_id,cluster` rows back as 0-based labels.
pub fn read_assignments_csv<R: std::io::Read>(reader: R) -> Result<Vec<(String, usize)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let (ci, cc) = (col("account_id")?, col("cluster")?);
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let c: usize = rec[cc].parse().ok().filter(|&c| c >= 1).ok_or_else(|| Error::Parse {
            row: r + 2,
            message: format!("bad cluster label '{}'", &rec[cc]),
        })?;
        out.push((rec[ci].to_string(), c - 1));
    }
    Ok(out)
}

fn choose2(x: usize) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| choose2(table.iter().map(|r| r[j]).sum())).sum();
    let total = choose2(n);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        // both partitions trivial
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Share of items whose predicted label differs from the truth under the
/// best one-to-one relabeling of the predicted clusters.
pub fn misassignment_rate(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: predicted.len() });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let kt = truth.iter().max().unwrap() + 1;
    let kp = predicted.iter().max().unwrap() + 1;
    let k = kt.max(kp);
    if k > 9 {
        return Err(Error::InvalidArgument(format!("{k} labels is too many to match exhaustively")));
    }
    let mut table = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        table[p][t] += 1;
    }
    let best = (0..k)
        .permutations(k)
        .map(|perm| (0..k).map(|p| table[p][perm[p]]).sum::<usize>())
        .max()
        .unwrap_or(0);
    Ok(1.0 - best as f64 / truth.len() as f64)
}
