//! Five statistical tests from NIST SP 800-22 that remain meaningful on
//! short keys, and a suite runner that aggregates pass fractions.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, SQRT_2};
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::quantize::BitSequence;

pub const ALPHA: f64 = 0.01;
pub const MIN_BITS: usize = 100;
pub const DEFAULT_BLOCK: usize = 128;
pub const DEFAULT_APEN_M: usize = 2;
/// Fraction of keys that must pass each test for the suite to pass.
pub const SUITE_PASS_FRACTION: f64 = 0.8;

pub const TEST_NAMES: [&str; 5] = [
    "frequency",
    "block_frequency",
    "runs",
    "cumulative_sums",
    "approximate_entropy",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

impl TestOutcome {
    fn new(statistic: f64, p: f64) -> Self {
        let p_value = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        Self {
            statistic,
            p_value,
            pass: p_value >= ALPHA,
        }
    }
}

fn require(bits: &BitSequence, what: &str, min: usize) -> Result<()> {
    if bits.len() < min {
        return Err(Error::insufficient(format!("bits for the {what} test"), min, bits.len()));
    }
    Ok(())
}

/// Upper regularized incomplete gamma, with `Q(a, 0) = 1`.
fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(a, x)
    }
}

fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Monobit: `S = Σ(2ε−1)`, statistic `|S|/√n`, `p = erfc(stat/√2)`.
pub fn test_frequency(bits: &BitSequence) -> Result<TestOutcome> {
    require(bits, "frequency", MIN_BITS)?;
    let n = bits.len() as f64;
    let s: f64 = bits.iter().map(|b| if b { 1.0 } else { -1.0 }).sum();
    let stat = s.abs() / n.sqrt();
    Ok(TestOutcome::new(stat, erfc(stat / SQRT_2)))
}

/// Chi-square on the ones proportion of `n / block` non-overlapping blocks.
pub fn test_block_frequency(bits: &BitSequence, block: usize) -> Result<TestOutcome> {
    if block == 0 {
        return Err(Error::Config("block length must be positive".into()));
    }
    require(bits, "block frequency", MIN_BITS.max(block))?;
    let all: Vec<bool> = bits.iter().collect();
    let blocks = all.len() / block;
    let chi2: f64 = all
        .chunks_exact(block)
        .map(|c| {
            let pi = c.iter().filter(|&&b| b).count() as f64 / block as f64;
            (pi - 0.5).powi(2)
        })
        .sum::<f64>()
        * 4.0
        * block as f64;
    Ok(TestOutcome::new(chi2, igamc(blocks as f64 / 2.0, chi2 / 2.0)))
}

/// Total number of runs. Fails outright when the ones proportion is too far
/// from one half for the test to apply.
pub fn test_runs(bits: &BitSequence) -> Result<TestOutcome> {
    require(bits, "runs", MIN_BITS)?;
    let all: Vec<bool> = bits.iter().collect();
    let n = all.len() as f64;
    let pi = all.iter().filter(|&&b| b).count() as f64 / n;
    let v = 1 + all.windows(2).filter(|w| w[0] != w[1]).count();
    let v = v as f64;
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return Ok(TestOutcome::new(v, 0.0));
    }
    let num = (v - 2.0 * n * pi * (1.0 - pi)).abs();
    let den = 2.0 * (2.0 * n).sqrt() * pi * (1.0 - pi);
    Ok(TestOutcome::new(v, erfc(num / den)))
}

/// Forward cumulative sums: statistic is the largest excursion `z`.
pub fn test_cumulative_sums(bits: &BitSequence) -> Result<TestOutcome> {
    require(bits, "cumulative sums", MIN_BITS)?;
    let n = bits.len() as f64;
    let mut s = 0i64;
    let mut z = 0i64;
    for b in bits.iter() {
        s += if b { 1 } else { -1 };
        z = z.max(s.abs());
    }
    let z = z as f64;
    let sq = n.sqrt();
    let mut sum1 = 0.0;
    let mut k = ((-n / z + 1.0) / 4.0).floor() as i64;
    while k as f64 <= ((n / z - 1.0) / 4.0).floor() {
        let k4 = 4.0 * k as f64;
        sum1 += phi((k4 + 1.0) * z / sq) - phi((k4 - 1.0) * z / sq);
        k += 1;
    }
    let mut sum2 = 0.0;
    let mut k = ((-n / z - 3.0) / 4.0).floor() as i64;
    while k as f64 <= ((n / z - 1.0) / 4.0).floor() {
        let k4 = 4.0 * k as f64;
        sum2 += phi((k4 + 3.0) * z / sq) - phi((k4 + 1.0) * z / sq);
        k += 1;
    }
    Ok(TestOutcome::new(z, 1.0 - sum1 + sum2))
}

/// `Φ_m`: mean log frequency of the overlapping (wrapped) `m`-bit patterns.
fn pattern_entropy(all: &[bool], m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let n = all.len();
    let mut counts = vec![0usize; 1 << m];
    for i in 0..n {
        let idx = (0..m).fold(0usize, |acc, j| (acc << 1) | all[(i + j) % n] as usize);
        counts[idx] += 1;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            p * p.ln()
        })
        .sum()
}

/// Statistic `χ² = 2n(ln 2 − ApEn(m))`.
pub fn test_approximate_entropy(bits: &BitSequence, m: usize) -> Result<TestOutcome> {
    require(bits, "approximate entropy", MIN_BITS)?;
    if m == 0 || m > 16 {
        return Err(Error::Config(format!("approximate entropy pattern length {m} must be in 1..=16")));
    }
    let all: Vec<bool> = bits.iter().collect();
    let n = all.len() as f64;
    let apen = pattern_entropy(&all, m) - pattern_entropy(&all, m + 1);
    let chi2 = 2.0 * n * (LN_2 - apen);
    Ok(TestOutcome::new(chi2, igamc(2f64.powi(m as i32 - 1), chi2 / 2.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandTestReport {
    pub per_test: BTreeMap<String, TestOutcome>,
    pub bit_len: usize,
}

/// All five tests with default parameters.
pub fn test_all(bits: &BitSequence) -> Result<RandTestReport> {
    let mut per_test = BTreeMap::new();
    per_test.insert("frequency".to_string(), test_frequency(bits)?);
    per_test.insert("block_frequency".to_string(), test_block_frequency(bits, DEFAULT_BLOCK)?);
    per_test.insert("runs".to_string(), test_runs(bits)?);
    per_test.insert("cumulative_sums".to_string(), test_cumulative_sums(bits)?);
    per_test.insert("approximate_entropy".to_string(), test_approximate_entropy(bits, DEFAULT_APEN_M)?);
    Ok(RandTestReport {
        per_test,
        bit_len: bits.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub keys: usize,
    pub bit_len: usize,
    pub pass_fraction: BTreeMap<String, f64>,
    /// Every key was identical, so pass fractions are all-or-nothing.
    pub degenerate: bool,
    pub passed: bool,
    pub per_key: Vec<RandTestReport>,
}

pub fn run_suite(keys: &[BitSequence]) -> Result<SuiteReport> {
    let Some(first) = keys.first() else {
        return Err(Error::insufficient("keys", 1, 0));
    };
    let per_key = keys.iter().map(test_all).collect::<Result<Vec<_>>>()?;
    let pass_fraction: BTreeMap<String, f64> = TEST_NAMES
        .iter()
        .map(|&name| {
            let passes = per_key.iter().filter(|r| r.per_test[name].pass).count();
            (name.to_string(), passes as f64 / keys.len() as f64)
        })
        .collect();
    let passed = pass_fraction.values().all(|&f| f >= SUITE_PASS_FRACTION);
    Ok(SuiteReport {
        keys: keys.len(),
        bit_len: first.len(),
        degenerate: keys.len() > 1 && keys.iter().all(|k| k == first),
        pass_fraction,
        passed,
        per_key,
    })
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# {} keys x {} bits, alpha = {ALPHA}", self.keys, self.bit_len)?;
        if self.degenerate {
            writeln!(f, "# degenerate: all keys identical")?;
        }
        writeln!(f, "{:<22} {:>10} {:>6}", "test", "pass rate", "")?;
        for name in TEST_NAMES {
            let frac = self.pass_fraction[name];
            let mark = if frac >= SUITE_PASS_FRACTION { "✓" } else { "✗" };
            writeln!(f, "{name:<22} {:>10.2} {mark:>6}", frac)?;
        }
        let ok = self.pass_fraction.values().filter(|&&v| v >= SUITE_PASS_FRACTION).count();
        write!(f, "passed {ok}/{}", TEST_NAMES.len())
    }
}
