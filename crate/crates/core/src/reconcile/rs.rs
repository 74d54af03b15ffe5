//! Systematic Reed-Solomon codes over GF(256) with generator roots
//! `2^0 .. 2^(n-k-1)`. Lengths below 255 are the shortened codes obtained by
//! fixing the leading data symbols of the (255, 255 - 2t) code to zero.

use serde::{Deserialize, Serialize};

use super::gf256::{alpha_pow, div, inv, mul, poly_eval, poly_mul};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RsParams {
    n: usize,
    k: usize,
}

impl Default for RsParams {
    /// (255, 191): corrects 32 byte errors, 12.55% of the word.
    fn default() -> Self {
        Self { n: 255, k: 191 }
    }
}

impl RsParams {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n > 255 || k == 0 || k >= n || (n - k) % 2 != 0 {
            return Err(Error::Config(format!(
                "invalid Reed-Solomon parameters n={n} k={k}: need k < n <= 255 with n-k even"
            )));
        }
        Ok(Self { n, k })
    }

    /// Code that fits `bytes` bytes of symbols and corrects at least one
    /// eighth of them: `n = min(bytes, 255)`, `t = ceil(n / 8)`.
    pub fn fitted(bytes: usize) -> Result<Self> {
        let n = bytes.min(255);
        if n < 3 {
            return Err(Error::insufficient("symbol bytes", 3, bytes));
        }
        let t = n.div_ceil(8);
        Self::new(n, n - 2 * t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t(&self) -> usize {
        (self.n - self.k) / 2
    }

    pub fn parity(&self) -> usize {
        self.n - self.k
    }
}

fn generator(nsym: usize) -> Vec<u8> {
    (0..nsym).fold(vec![1u8], |g, i| poly_mul(&g, &[1, alpha_pow(i)]))
}

/// Systematic codeword `data ‖ parity`.
pub fn rs_encode(data: &[u8], params: RsParams) -> Result<Vec<u8>> {
    if data.len() != params.k() {
        return Err(Error::Dimension {
            expected: params.k(),
            actual: data.len(),
        });
    }
    let gen = generator(params.parity());
    // remainder of data(x) * x^(n-k) divided by gen(x)
    let mut work = data.to_vec();
    work.resize(params.n(), 0);
    for i in 0..params.k() {
        let coef = work[i];
        if coef != 0 {
            for (j, &g) in gen.iter().enumerate().skip(1) {
                work[i + j] ^= mul(g, coef);
            }
        }
    }
    let mut out = data.to_vec();
    out.extend_from_slice(&work[params.k()..]);
    Ok(out)
}

fn syndromes(word: &[u8], nsym: usize) -> Vec<u8> {
    (0..nsym).map(|i| poly_eval(word, alpha_pow(i))).collect()
}

/// Recover the data bytes when at most `t` bytes of `word` are wrong.
/// `Ok(None)` is a decoding failure: too many errors were detected.
pub fn rs_decode(word: &[u8], params: RsParams) -> Result<Option<Vec<u8>>> {
    if word.len() != params.n() {
        return Err(Error::Dimension {
            expected: params.n(),
            actual: word.len(),
        });
    }
    let n = params.n();
    let nsym = params.parity();
    let synd = syndromes(word, nsym);
    if synd.iter().all(|&s| s == 0) {
        return Ok(Some(word[..params.k()].to_vec()));
    }

    // Berlekamp-Massey; polynomials lowest degree first here
    let mut lambda = vec![1u8];
    let mut prev = vec![1u8];
    let mut l = 0usize;
    let mut m = 1usize;
    let mut b = 1u8;
    for r in 0..nsym {
        let mut delta = synd[r];
        for i in 1..=l.min(lambda.len() - 1) {
            delta ^= mul(lambda[i], synd[r - i]);
        }
        if delta == 0 {
            m += 1;
            continue;
        }
        let coef = div(delta, b);
        let mut next = lambda.clone();
        if next.len() < prev.len() + m {
            next.resize(prev.len() + m, 0);
        }
        for (i, &p) in prev.iter().enumerate() {
            next[i + m] ^= mul(coef, p);
        }
        if 2 * l <= r {
            prev = lambda;
            l = r + 1 - l;
            b = delta;
            m = 1;
        } else {
            m += 1;
        }
        lambda = next;
    }
    while lambda.len() > 1 && *lambda.last().unwrap() == 0 {
        lambda.pop();
    }
    let degree = lambda.len() - 1;
    if degree == 0 || degree > params.t() {
        return Ok(None);
    }

    // Chien search over the positions that exist in this (shortened) word
    let eval_low = |p: &[u8], x: u8| p.iter().rev().fold(0u8, |acc, &c| mul(acc, x) ^ c);
    let mut positions = Vec::with_capacity(degree);
    for j in 0..n {
        let power = n - 1 - j;
        if eval_low(&lambda, inv(alpha_pow(power))) == 0 {
            positions.push(j);
        }
    }
    if positions.len() != degree {
        return Ok(None);
    }

    // Forney: omega = S(x) lambda(x) mod x^nsym
    let mut omega = vec![0u8; nsym];
    for (i, &s) in synd.iter().enumerate() {
        for (j, &c) in lambda.iter().enumerate() {
            if i + j < nsym {
                omega[i + j] ^= mul(s, c);
            }
        }
    }
    // formal derivative: odd-degree terms survive in characteristic 2
    let dlambda: Vec<u8> = (1..lambda.len())
        .map(|i| if i % 2 == 1 { lambda[i] } else { 0 })
        .collect();

    let mut fixed = word.to_vec();
    for &j in &positions {
        let x = alpha_pow(n - 1 - j);
        let x_inv = inv(x);
        let denom = eval_low(&dlambda, x_inv);
        if denom == 0 {
            return Ok(None);
        }
        let magnitude = mul(x, div(eval_low(&omega, x_inv), denom));
        fixed[j] ^= magnitude;
    }
    if syndromes(&fixed, nsym).iter().any(|&s| s != 0) {
        return Ok(None);
    }
    Ok(Some(fixed[..params.k()].to_vec()))
}
