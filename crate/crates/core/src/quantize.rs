//! Symbol extraction: the eigenvector quantizer, two baseline quantizers
//! that work on raw samples or raw spectra, and the agreement metrics used to
//! compare devices.

use std::fmt;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::eigen::{covariance, extract_basis_default, EigenBasis};
use crate::error::{Error, Result};
use crate::ingest::SampleBuffer;
use crate::scalar::Scalar;
use crate::spectral::{build_observation_matrix, ObservationMatrix, SpectralConfig};

/// Number of eigenvectors used by the cosine diagnostic's principal-component
/// representation.
pub const COSINE_PC_COUNT: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Trevor,
    Means,
    SchurmannSigg,
}

impl Origin {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Origin::Trevor => 2,
            Origin::Means | Origin::SchurmannSigg => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Origin::Trevor => "trevor",
            Origin::Means => "means",
            Origin::SchurmannSigg => "ss",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolSequence {
    symbols: Vec<u8>,
    origin: Origin,
}

impl SymbolSequence {
    pub fn new(symbols: Vec<u8>, origin: Origin) -> Result<Self> {
        let limit = 1u8 << origin.bits_per_symbol();
        if let Some(i) = symbols.iter().position(|&s| s >= limit) {
            return Err(Error::Format(format!(
                "symbol {} at {i} out of range for {origin}",
                symbols[i]
            )));
        }
        Ok(Self { symbols, origin })
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Bits packed MSB-first into bytes; trailing bits of the last byte are zero.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BitSequence {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl BitSequence {
    pub fn from_bits(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut out = Self::default();
        for b in bits {
            out.push(b);
        }
        out
    }

    /// Every bit of `bytes`.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self {
            bytes: bytes.to_vec(),
            bit_len: bytes.len() * 8,
        }
    }

    pub fn push(&mut self, bit: bool) {
        if self.bit_len % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 0x80 >> (self.bit_len % 8);
        }
        self.bit_len += 1;
    }

    pub fn len(&self) -> usize {
        self.bit_len
    }

    pub fn is_empty(&self) -> bool {
        self.bit_len == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.bit_len, "bit {i} out of range");
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.bit_len).map(|i| self.bit(i))
    }

    /// Packed bytes; the last one is zero-padded when `len` is not a multiple of 8.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// The first `n` whole bytes.
    pub fn leading_bytes(&self, n: usize) -> Result<&[u8]> {
        if self.bit_len < 8 * n {
            return Err(Error::insufficient("bits", 8 * n, self.bit_len));
        }
        Ok(&self.bytes[..n])
    }

    pub fn truncated(&self, bits: usize) -> Self {
        Self::from_bits(self.iter().take(bits))
    }
}

impl fmt::Display for BitSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Concatenate the basis vectors into one array and map each component to
/// one of four equal-width bins over the array's range.
pub fn trevor_quantize<T: Scalar>(basis: &EigenBasis<T>) -> Result<SymbolSequence> {
    let p = basis.concatenated();
    if p.is_empty() {
        return Err(Error::EmptyInput("eigenbasis is empty".into()));
    }
    quantize_four_bins(&p)
}

/// The bin map on its own: edges `min + j (max - min) / 4`, right-open, with
/// the maximum in bin 3.
pub fn quantize_four_bins<T: Scalar>(p: &[T]) -> Result<SymbolSequence> {
    let (lo, hi) = p
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if !(hi > lo) {
        return Err(Error::Degenerate("all components are equal; nothing to quantize".into()));
    }
    let width = (hi - lo) / T::of(4.0);
    let edges = [lo + width, lo + width * T::of(2.0), lo + width * T::of(3.0)];
    let symbols = p
        .iter()
        .map(|&x| edges.iter().filter(|&&e| x >= e).count() as u8)
        .collect();
    SymbolSequence::new(symbols, Origin::Trevor)
}

/// One bit per `block` samples: 1 when the block mean exceeds the median of
/// all block means.
pub fn means_quantize<T: Scalar>(buf: &SampleBuffer<T>, block: usize) -> Result<SymbolSequence> {
    if block == 0 {
        return Err(Error::Config("block length must be positive".into()));
    }
    let means: Vec<T> = buf
        .samples()
        .chunks_exact(block)
        .map(|c| c.iter().fold(T::zero(), |a, &x| a + x) / T::of_usize(block))
        .collect();
    if means.len() < 2 {
        return Err(Error::insufficient("samples", 2 * block, buf.len()));
    }
    let mut sorted = means.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("samples are finite"));
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / T::of(2.0)
    } else {
        sorted[mid]
    };
    let bits = means.iter().map(|&m| u8::from(m > median)).collect();
    SymbolSequence::new(bits, Origin::Means)
}

/// Sign of the second difference of the spectrogram across time and
/// frequency, row-major over `i >= 1, j >= 1`.
pub fn schurmann_sigg_quantize<T: Scalar>(x: &ObservationMatrix<T>) -> Result<SymbolSequence> {
    if x.n_rows() < 2 {
        return Err(Error::insufficient("spectrogram rows", 2, x.n_rows()));
    }
    if x.n_bins() < 2 {
        return Err(Error::insufficient("spectrogram bins", 2, x.n_bins()));
    }
    let bits = schurmann_sigg_deltas(x).iter().map(|&d| u8::from(d > T::zero())).collect();
    SymbolSequence::new(bits, Origin::SchurmannSigg)
}

/// The double differences whose signs are the Schurmann-Sigg bits; their
/// magnitudes say how reliable each bit is. Caller checks dimensions.
pub fn schurmann_sigg_deltas<T: Scalar>(x: &ObservationMatrix<T>) -> Vec<T> {
    let rows = x.rows();
    let mut out = Vec::with_capacity(rows.len().saturating_sub(1) * x.n_bins().saturating_sub(1));
    for i in 1..rows.len() {
        for j in 1..x.n_bins() {
            out.push((rows[i][j] - rows[i][j - 1]) - (rows[i - 1][j] - rows[i - 1][j - 1]));
        }
    }
    out
}

/// Run one quantizer over a sample buffer end to end. `k` is the number of
/// eigenvectors for the trevor quantizer; the means quantizer uses blocks of
/// `spectral.block_len_d` samples.
pub fn quantize_buffer<T: Scalar>(
    buf: &SampleBuffer<T>,
    origin: Origin,
    spectral: &SpectralConfig,
    k: usize,
) -> Result<BitSequence> {
    let symbols = match origin {
        Origin::Trevor => {
            let x = build_observation_matrix(buf, spectral)?;
            trevor_quantize(&extract_basis_default(&covariance(&x), k)?)?
        }
        Origin::Means => means_quantize(buf, spectral.block_len_d)?,
        Origin::SchurmannSigg => schurmann_sigg_quantize(&build_observation_matrix(buf, spectral)?)?,
    };
    Ok(to_bits(&symbols))
}

/// Trevor symbols become two bits each (MSB first), baseline symbols one.
pub fn to_bits(sym: &SymbolSequence) -> BitSequence {
    let width = sym.origin().bits_per_symbol();
    BitSequence::from_bits(
        sym.symbols()
            .iter()
            .flat_map(|&s| (0..width).rev().map(move |b| (s >> b) & 1 == 1)),
    )
}

pub fn hamming_distance(a: &BitSequence, b: &BitSequence) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a.as_bytes()
        .iter()
        .zip(b.as_bytes())
        .map(|(x, y)| (x ^ y).count_ones() as usize)
        .sum())
}

/// Fraction of positions where `a` and `b` differ.
pub fn bit_error_rate(a: &BitSequence, b: &BitSequence) -> Result<f64> {
    let d = hamming_distance(a, b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(d as f64 / a.len() as f64)
}

/// Fraction of differing bytes among the first `n` of each sequence.
pub fn byte_error_rate(a: &BitSequence, b: &BitSequence, n: usize) -> Result<f64> {
    let (x, y) = (a.leading_bytes(n)?, b.leading_bytes(n)?);
    if n == 0 {
        return Ok(0.0);
    }
    Ok(x.iter().zip(y).filter(|(p, q)| p != q).count() as f64 / n as f64)
}

/// Signal representation compared by [`mean_cosine_distance`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Raw samples.
    Time,
    /// Magnitude spectrum of the whole window.
    Fft,
    /// Concatenated leading eigenvectors of the window's Gram matrix.
    TrevorPc,
}

impl Representation {
    pub const ALL: [Representation; 3] = [Representation::Time, Representation::Fft, Representation::TrevorPc];

    pub fn name(self) -> &'static str {
        match self {
            Representation::Time => "time",
            Representation::Fft => "fft",
            Representation::TrevorPc => "trevor_pc",
        }
    }

    pub fn compute(self, window: &[f64], rate: u32, spectral: &SpectralConfig) -> Result<Vec<f64>> {
        match self {
            Representation::Time => Ok(window.to_vec()),
            Representation::Fft => {
                let mut planner = FftPlanner::new();
                let fft = planner.plan_fft_forward(window.len());
                let mut buf: Vec<Complex<f64>> = window.iter().map(|&x| Complex::new(x, 0.0)).collect();
                fft.process(&mut buf);
                Ok(buf[1..=window.len() / 2].iter().map(|c| c.norm()).collect())
            }
            Representation::TrevorPc => {
                let buf = SampleBuffer::new(window.to_vec(), rate, "window")?;
                let x = build_observation_matrix(&buf, spectral)?;
                let basis = extract_basis_default(&covariance(&x), COSINE_PC_COUNT.min(spectral.n_bins))?;
                Ok(basis.concatenated())
            }
        }
    }
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("zero-norm representation".into()));
    }
    Ok((1.0 - dot / (na * nb)).max(0.0))
}

/// Average cosine distance between the representation of `reference`'s
/// leading window and that of `other` read `s` samples later, over
/// `s = 0, step, ..., max_shift`. Windows are `min(len) - max_shift` long.
pub fn mean_cosine_distance(
    reference: &SampleBuffer<f64>,
    other: &SampleBuffer<f64>,
    repr: Representation,
    max_shift: usize,
    step: usize,
    spectral: &SpectralConfig,
) -> Result<f64> {
    let len = reference.len().min(other.len());
    if len <= max_shift {
        return Err(Error::insufficient("samples", max_shift + 1, len));
    }
    let window = len - max_shift;
    let rate = reference.sample_rate_hz();
    let base = repr.compute(&reference.samples()[..window], rate, spectral)?;
    let step = step.max(1);
    let mut total = 0.0;
    let mut count = 0usize;
    for s in (0..=max_shift).step_by(step) {
        let shifted = repr.compute(&other.samples()[s..s + window], rate, spectral)?;
        total += cosine_distance(&base, &shifted)?;
        count += 1;
    }
    Ok(total / count as f64)
}
