use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Propagation path from the latent source to one device: gain, integer
/// delay, an FIR filter standing in for walls and media, and additive white
/// noise at `snr_db` relative to the filtered signal's power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub gain: f64,
    pub delay_samples: usize,
    pub fir_taps: Vec<f64>,
    pub snr_db: f64,
}

impl ChannelModel {
    /// Unit gain, no delay, pass-through filter.
    pub fn identity(snr_db: f64) -> Self {
        Self {
            gain: 1.0,
            delay_samples: 0,
            fir_taps: vec![1.0],
            snr_db,
        }
    }

    /// Hamming-windowed sinc lowpass with unit DC gain.
    pub fn windowed_sinc_lowpass(cutoff_hz: f64, sample_rate_hz: u32, taps: usize, snr_db: f64) -> Self {
        Self {
            fir_taps: windowed_sinc(cutoff_hz / sample_rate_hz as f64, taps),
            ..Self::identity(snr_db)
        }
    }

    /// Truncated impulse response of a one-pole lowpass at `cutoff_hz`: a
    /// gentle 6 dB/octave roll-off, the way a partition muffles sound.
    pub fn one_pole_lowpass(cutoff_hz: f64, sample_rate_hz: u32, taps: usize, snr_db: f64) -> Self {
        Self {
            fir_taps: one_pole(cutoff_hz / sample_rate_hz as f64, taps),
            ..Self::identity(snr_db)
        }
    }

    /// A muffling partition: one-pole lowpass plus early reflections, given
    /// as `(delay_samples, amplitude)` pairs, which carve a frequency-dependent
    /// ripple into the response.
    pub fn wall(
        cutoff_hz: f64,
        sample_rate_hz: u32,
        reflections: &[(usize, f64)],
        snr_db: f64,
    ) -> Self {
        let base = one_pole(cutoff_hz / sample_rate_hz as f64, 64);
        let len = base.len() + reflections.iter().map(|r| r.0).max().unwrap_or(0);
        let mut taps = vec![0.0; len];
        for (i, &b) in base.iter().enumerate() {
            taps[i] += b;
            for &(delay, amp) in reflections {
                taps[i + delay] += amp * b;
            }
        }
        Self {
            fir_taps: taps,
            ..Self::identity(snr_db)
        }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn with_delay(mut self, delay_samples: usize) -> Self {
        self.delay_samples = delay_samples;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.fir_taps.is_empty() || self.fir_taps.iter().all(|&t| t == 0.0) {
            return Err(Error::Config("fir_taps needs at least one nonzero tap".into()));
        }
        if !self.fir_taps.iter().all(|t| t.is_finite()) || !self.gain.is_finite() {
            return Err(Error::Config("channel gain and taps must be finite".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db must be a number".into()));
        }
        Ok(())
    }

    /// The noiseless part of the channel: filter, gain, then delay.
    pub fn propagate(&self, source: &[f64]) -> Vec<f64> {
        let n = source.len();
        let mut out = vec![0.0; n];
        for t in self.delay_samples..n {
            let u = t - self.delay_samples;
            let acc: f64 = self
                .fir_taps
                .iter()
                .take(u + 1)
                .enumerate()
                .map(|(k, h)| h * source[u - k])
                .sum();
            out[t] = self.gain * acc;
        }
        out
    }

    /// Propagate and add white Gaussian noise drawn from `rng`.
    pub fn apply<R: Rng>(&self, source: &[f64], rng: &mut R) -> Vec<f64> {
        let mut out = self.propagate(source);
        let power = out.iter().map(|x| x * x).sum::<f64>() / out.len().max(1) as f64;
        let sigma = (power / 10f64.powf(self.snr_db / 10.0)).sqrt();
        if sigma > 0.0 && sigma.is_finite() {
            for x in &mut out {
                let z: f64 = rng.sample(StandardNormal);
                *x += sigma * z;
            }
        }
        out
    }
}

/// Hamming-windowed sinc with normalized cutoff `fc` (cycles per sample).
pub(crate) fn windowed_sinc(fc: f64, taps: usize) -> Vec<f64> {
    let taps = taps.max(1);
    let mid = (taps - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let x = i as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let w = if taps == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * PI * i as f64 / (taps - 1) as f64).cos()
            };
            sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    for v in &mut h {
        *v /= dc;
    }
    h
}

fn one_pole(fc: f64, taps: usize) -> Vec<f64> {
    let a = (-2.0 * PI * fc).exp();
    let mut h: Vec<f64> = (0..taps.max(1)).map(|i| (1.0 - a) * a.powi(i as i32)).collect();
    let dc: f64 = h.iter().sum();
    for v in &mut h {
        *v /= dc;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn response(taps: &[f64], f_norm: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, h) in taps.iter().enumerate() {
            re += h * (2.0 * PI * f_norm * k as f64).cos();
            im -= h * (2.0 * PI * f_norm * k as f64).sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn lowpass_designs_pass_dc_and_attenuate_high_band() {
        let sinc = ChannelModel::windowed_sinc_lowpass(2000.0, 48_000, 101, 20.0);
        assert!((response(&sinc.fir_taps, 0.0) - 1.0).abs() < 1e-12);
        assert!(response(&sinc.fir_taps, 8000.0 / 48_000.0) < 0.01);

        let pole = ChannelModel::one_pole_lowpass(2000.0, 48_000, 64, 20.0);
        let at_cut = response(&pole.fir_taps, 2000.0 / 48_000.0);
        assert!((at_cut - 0.5f64.sqrt()).abs() < 0.1, "{at_cut}");
    }

    #[test]
    fn propagate_is_linear_and_delays() {
        let ch = ChannelModel {
            gain: 2.0,
            delay_samples: 3,
            fir_taps: vec![1.0, 0.5],
            snr_db: 100.0,
        };
        let y = ch.propagate(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(y, vec![0.0, 0.0, 0.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_all_zero_taps() {
        let mut ch = ChannelModel::identity(10.0);
        ch.fir_taps = vec![0.0, 0.0];
        assert!(ch.validate().is_err());
        ch.fir_taps.clear();
        assert!(ch.validate().is_err());
    }
}
