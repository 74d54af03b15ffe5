//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

/// Naive O(d²) DFT magnitudes for bins 1..=d/2.
pub fn dft_magnitudes(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (1..=d / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let w = -2.0 * std::f64::consts::PI * (k * t % d) as f64 / d as f64;
                re += v * w.cos();
                im += v * w.sin();
            }
            re.hypot(im)
        })
        .collect()
}

/// Cyclic Jacobi eigenvalue sweep on a symmetric matrix. Returns eigenpairs
/// sorted by descending eigenvalue; vectors are unit-norm columns.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> Vec<(f64, Vec<f64>)> {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let total: f64 = a.iter().flatten().map(|x| x * x).sum();
        if off <= 1e-30 * total.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|j| (a[j][j], v.iter().map(|row| row[j]).collect()))
        .collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    pairs
}

/// Random PSD matrix `BᵀB` with `B` an `rows × m` standard Gaussian matrix.
pub fn random_psd(m: usize, rows: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let b: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    triple_loop_gram(&b)
}

/// Random PSD matrix `Q diag(λ) Qᵀ`: `Q` is a Haar-random orthogonal basis
/// and every ratio `λ_{i+1}/λ_i` is drawn from `[0.5, 0.9]`, so consecutive
/// eigenvalues are separated by at least 10%.
pub fn random_separated_psd(m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    while q.len() < m {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(u) {
                *a -= d * b;
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            q.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    let mut lambda = Vec::with_capacity(m);
    let mut l = rng.random_range(10.0..1000.0);
    for _ in 0..m {
        lambda.push(l);
        l *= rng.random_range(0.5..0.9);
    }
    let mut c = vec![vec![0.0; m]; m];
    for (l, u) in lambda.iter().zip(&q) {
        for i in 0..m {
            for j in 0..m {
                c[i][j] += l * u[i] * u[j];
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            let avg = (c[i][j] + c[j][i]) / 2.0;
            c[i][j] = avg;
            c[j][i] = avg;
        }
    }
    c
}

/// `XᵀX` by the textbook triple loop.
pub fn triple_loop_gram(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = x[0].len();
    let mut c = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            for row in x {
                c[i][j] += row[i] * row[j];
            }
        }
    }
    c
}

/// Distance between two unit vectors up to sign.
pub fn vector_distance(a: &[f64], b: &[f64]) -> f64 {
    let plus: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let minus: f64 = a.iter().zip(b).map(|(x, y)| (x + y) * (x + y)).sum::<f64>().sqrt();
    plus.min(minus)
}

/// Shift-and-add multiply in GF(2^8) modulo x^8 + x^4 + x^3 + x^2 + 1.
pub fn gf_mul_bitwise(mut a: u8, mut b: u8) -> u8 {
    let mut p = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            p ^= a;
        }
        let carry = a & 0x80 != 0;
        a <<= 1;
        if carry {
            a ^= 0x1D;
        }
        b >>= 1;
    }
    p
}

pub fn gf_pow_bitwise(x: u8, e: usize) -> u8 {
    (0..e).fold(1u8, |acc, _| gf_mul_bitwise(acc, x))
}

/// `c(α^i)` for `i < nsym`, with `word[0]` the highest-degree coefficient.
pub fn syndromes_bitwise(word: &[u8], nsym: usize) -> Vec<u8> {
    (0..nsym)
        .map(|i| {
            let x = gf_pow_bitwise(2, i);
            word.iter().fold(0u8, |acc, &c| gf_mul_bitwise(acc, x) ^ c)
        })
        .collect()
}

/// Flip `positions` of `word` by nonzero values drawn from `rng`.
pub fn corrupt(word: &mut [u8], positions: &[usize], rng: &mut ChaCha20Rng) {
    for &p in positions {
        word[p] ^= rng.random_range(1..=255u8);
    }
}

/// `count` distinct positions in `0..n`.
pub fn distinct_positions(n: usize, count: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, n, count).into_vec()
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
