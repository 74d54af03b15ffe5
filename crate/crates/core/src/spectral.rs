//! Block spectra: split a buffer into length-`d` blocks, take the magnitude
//! of each block's DFT (dropping DC), and sum neighbouring frequencies into a
//! few coarse bins. The binned spectra are the rows of the observation matrix.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SampleBuffer;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpectralConfig {
    /// Samples per block; a power of two.
    pub block_len_d: usize,
    /// Coarse bins kept per row.
    pub n_bins: usize,
    /// Minimum number of rows a matrix must have.
    pub min_rows: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            block_len_d: 2048,
            n_bins: 32,
            min_rows: 64,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.block_len_d.is_power_of_two() || self.block_len_d < 2 {
            return Err(Error::Config(format!(
                "block length {} is not a power of two",
                self.block_len_d
            )));
        }
        if self.n_bins == 0 || self.n_bins > self.block_len_d / 2 {
            return Err(Error::Config(format!(
                "{} bins cannot partition {} frequencies",
                self.n_bins,
                self.block_len_d / 2
            )));
        }
        if self.min_rows <= self.n_bins {
            return Err(Error::Config(format!(
                "min_rows ({}) must exceed n_bins ({})",
                self.min_rows, self.n_bins
            )));
        }
        Ok(())
    }

    /// Samples needed to fill `min_rows` blocks.
    pub fn required_samples(&self) -> usize {
        self.block_len_d * self.min_rows
    }
}

/// Rows of binned block-spectrum magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMatrix<T = f64> {
    rows: Vec<Vec<T>>,
    n_bins: usize,
    config: Option<SpectralConfig>,
}

impl<T: Scalar> ObservationMatrix<T> {
    /// Wrap precomputed rows. Rows must be nonempty, equally long and
    /// nonnegative.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n_bins = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::EmptyInput("observation matrix has no rows".into()))?;
        if n_bins == 0 {
            return Err(Error::EmptyInput("observation rows are empty".into()));
        }
        for row in &rows {
            if row.len() != n_bins {
                return Err(Error::Dimension {
                    expected: n_bins,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !(v.is_finite() && *v >= T::zero())) {
                return Err(Error::Format("observation entries must be finite and >= 0".into()));
            }
        }
        Ok(Self {
            rows,
            n_bins,
            config: None,
        })
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// The configuration the matrix was built with, if it came from a buffer.
    pub fn config(&self) -> Option<&SpectralConfig> {
        self.config.as_ref()
    }

    /// Row-major concatenation of all entries.
    pub fn flatten(&self) -> Vec<T> {
        self.rows.iter().flatten().copied().collect()
    }
}

/// Reusable FFT plan for one block length.
pub struct BlockSpectrum<T: Scalar> {
    len: usize,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Scalar> BlockSpectrum<T> {
    pub fn new(block_len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(block_len);
        Self { len: block_len, fft }
    }

    /// `|DFT(block)[k]|` for `k = 1..=d/2`; element `i` holds bin `i + 1`.
    pub fn magnitudes(&self, block: &[T]) -> Result<Vec<T>> {
        if block.len() != self.len {
            return Err(Error::Dimension {
                expected: self.len,
                actual: block.len(),
            });
        }
        let mut buf: Vec<Complex<T>> = block.iter().map(|&x| Complex::new(x, T::zero())).collect();
        self.fft.process(&mut buf);
        Ok(buf[1..=self.len / 2].iter().map(|c| c.norm()).collect())
    }
}

/// Magnitude spectrum of one block without its DC term; see
/// [`BlockSpectrum::magnitudes`].
pub fn block_fft_magnitude<T: Scalar>(block: &[T], block_len_d: usize) -> Result<Vec<T>> {
    BlockSpectrum::new(block_len_d).magnitudes(block)
}

/// Sum `mags` over `n_bins` contiguous ranges whose sizes differ by at most
/// one; the leading ranges take the remainder.
pub fn bin_spectrum<T: Scalar>(mags: &[T], n_bins: usize) -> Result<Vec<T>> {
    if n_bins == 0 || n_bins > mags.len() {
        return Err(Error::Config(format!(
            "{n_bins} bins cannot partition {} magnitudes",
            mags.len()
        )));
    }
    let base = mags.len() / n_bins;
    let extra = mags.len() % n_bins;
    let mut out = Vec::with_capacity(n_bins);
    let mut start = 0;
    for b in 0..n_bins {
        let width = base + usize::from(b < extra);
        out.push(mags[start..start + width].iter().fold(T::zero(), |a, &m| a + m));
        start += width;
    }
    Ok(out)
}

/// One row per complete block; a trailing partial block is dropped.
pub fn build_observation_matrix<T: Scalar>(
    buf: &SampleBuffer<T>,
    cfg: &SpectralConfig,
) -> Result<ObservationMatrix<T>> {
    cfg.validate()?;
    let d = cfg.block_len_d;
    if buf.len() < cfg.required_samples() {
        return Err(Error::insufficient(
            format!("observation matrix ({} rows of {d})", cfg.min_rows),
            cfg.required_samples(),
            buf.len(),
        ));
    }
    let spectrum = BlockSpectrum::new(d);
    let rows = buf
        .samples()
        .chunks_exact(d)
        .map(|block| spectrum.magnitudes(block).and_then(|m| bin_spectrum(&m, cfg.n_bins)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ObservationMatrix {
        rows,
        n_bins: cfg.n_bins,
        config: Some(*cfg),
    })
}
