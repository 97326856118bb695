//! Independent reference implementations shared by the integration tests
//! and the acceptance suite. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Solves `a·x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(r);
            for (x, &y) in lower[0][col..n].iter_mut().zip(&upper[col][col..n]) {
                *x -= f * y;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

pub fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| solve(a.to_vec(), (0..n).map(|i| f64::from(u8::from(i == j))).collect()))
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

pub struct NewtonFit {
    pub beta: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
}

fn logistic_ll(x: &[Vec<f64>], y: &[f64], beta: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(row, &yi)| {
            let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            yi * eta - (1.0 + eta.exp()).ln()
        })
        .sum()
}

/// Newton–Raphson on the logistic log-likelihood with a backtracking
/// (Armijo) line search, iterated until the gradient vanishes.
pub fn newton_logistic(x: &[Vec<f64>], y: &[f64]) -> NewtonFit {
    let p = x[0].len();
    let mut beta = vec![0.0; p];
    let hessian = |beta: &[f64]| {
        let mut h = vec![vec![0.0; p]; p];
        let mut g = vec![0.0; p];
        for (row, &yi) in x.iter().zip(y) {
            let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            let mu = 1.0 / (1.0 + (-eta).exp());
            for a in 0..p {
                g[a] += (yi - mu) * row[a];
                for b in 0..p {
                    h[a][b] += mu * (1.0 - mu) * row[a] * row[b];
                }
            }
        }
        (h, g)
    };
    for _ in 0..500 {
        let (h, g) = hessian(&beta);
        if g.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-13 {
            break;
        }
        let step = solve(h, g.clone());
        let slope: f64 = step.iter().zip(&g).map(|(s, gi)| s * gi).sum();
        let ll0 = logistic_ll(x, y, &beta);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            if logistic_ll(x, y, &cand) >= ll0 + 1e-4 * t * slope || t < 1e-10 {
                beta = cand;
                break;
            }
            t *= 0.5;
        }
    }
    let (h, _) = hessian(&beta);
    let inv = inverse(&h);
    let std_errors: Vec<f64> = (0..p).map(|j| inv[j][j].sqrt()).collect();
    let z: Vec<f64> = beta.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = z.iter().map(|zv| 2.0 * (1.0 - std_normal_cdf(zv.abs()))).collect();
    NewtonFit { beta, std_errors, z, p: p_values }
}

/// Φ(x) for x ≥ 0 by Simpson integration of the density over [0, x].
pub fn std_normal_cdf(x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(0.0) + f(x);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

/// A random logistic dataset: intercept column plus `p - 1` features
/// uniform on [−2, 2], labels drawn from coefficients in [−1, 1].
pub fn random_logistic_data(n: usize, p: usize, rng: &mut impl Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    loop {
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut row = vec![1.0];
                row.extend((1..p).map(|_| rng.random_range(-2.0..2.0)));
                row
            })
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|row| {
                let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
                f64::from(u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())))
            })
            .collect();
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        if ones >= 3 && ones + 3 <= n {
            return (x, y);
        }
    }
}

/// Area of the lens where two unit discs with centres `d` apart overlap.
pub fn unit_lens_area(d: f64) -> f64 {
    2.0 * (d / 2.0).acos() - 0.5 * d * (4.0 - d * d).sqrt()
}
