//! Latent source generators for the environment simulator.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::channel::windowed_sinc;

/// RMS level every generated source is normalized to.
const SOURCE_RMS: f64 = 0.1;

/// Kind of shared ambient signal the simulator renders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// White Gaussian noise through a 4 kHz lowpass.
    FilteredNoise,
    /// Music-like: eight harmonic tones whose timbre is modulated by a few
    /// repeating patterns, plus slow random-walk gain drift.
    HarmonicMixture,
    /// Conversation-like: order-4 autoregressive resonator driven by bursty,
    /// syllable-rate excitation.
    ArProcess,
}

impl SourceKind {
    pub fn generate<R: Rng>(self, n: usize, rate: u32, rng: &mut R) -> Vec<f64> {
        let mut x = match self {
            SourceKind::FilteredNoise => filtered_noise(n, rate, rng),
            SourceKind::HarmonicMixture => harmonic_mixture(n, rate, rng),
            SourceKind::ArProcess => ar_process(n, rate, rng),
        };
        normalize_rms(&mut x, SOURCE_RMS);
        x
    }
}

fn normalize_rms(x: &mut [f64], target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        for v in x.iter_mut() {
            *v *= target / rms;
        }
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn filtered_noise<R: Rng>(n: usize, rate: u32, rng: &mut R) -> Vec<f64> {
    let taps = windowed_sinc(4000.0 / rate as f64, 129);
    let white: Vec<f64> = (0..n + taps.len()).map(|_| gaussian(rng)).collect();
    (0..n)
        .map(|t| {
            taps.iter()
                .enumerate()
                .map(|(k, h)| h * white[t + taps.len() - 1 - k])
                .sum()
        })
        .collect()
}

const TONES: usize = 8;
const TABLE_LEN: usize = 4096;
/// Depths of the timbre modulations, strongest first.
const TIMBRE_DEPTHS: [f64; 3] = [0.9, 0.6, 0.4];
/// Rate bands (Hz) the timbre modulations are drawn from.
const TIMBRE_RATES: [(f64, f64); 3] = [(2.6, 3.4), (4.3, 5.1), (5.9, 6.7)];
/// Random-walk step of each tone's log gain per control tick.
const DRIFT_STEP: f64 = 0.015;
const CONTROL_HZ: f64 = 10.0;

/// One period of a harmonic tone, tabulated for interpolated lookup.
struct Wavetable(Vec<f64>);

impl Wavetable {
    /// Build from partial amplitudes (index 0 = fundamental) and phases.
    fn from_partials(amps: &[f64], phases: &[f64], planner: &mut FftPlanner<f64>) -> Self {
        let mut spec = vec![Complex::new(0.0, 0.0); TABLE_LEN];
        for (i, (&a, &p)) in amps.iter().zip(phases).enumerate() {
            let h = i + 1;
            if h >= TABLE_LEN / 2 {
                break;
            }
            // a*sin(theta + p) = a/2 * (e^{i(p - pi/2)} e^{i theta} + conj)
            let c = Complex::from_polar(a / 2.0, p - PI / 2.0);
            spec[h] += c;
            spec[TABLE_LEN - h] += c.conj();
        }
        planner.plan_fft_inverse(TABLE_LEN).process(&mut spec);
        Self(spec.into_iter().map(|c| c.re).collect())
    }

    fn at(&self, phase: f64) -> f64 {
        let pos = phase * TABLE_LEN as f64;
        let i = pos.floor() as usize % TABLE_LEN;
        let frac = pos - pos.floor();
        let j = (i + 1) % TABLE_LEN;
        self.0[i] + frac * (self.0[j] - self.0[i])
    }
}

fn harmonic_mixture<R: Rng>(n: usize, rate: u32, rng: &mut R) -> Vec<f64> {
    let fs = rate as f64;
    let top = (0.45 * fs).min(20_000.0);
    let mut planner = FftPlanner::new();

    // Spectral shapes shared by all tones: shape 0 is the static timbre, the
    // others are the directions the repeating patterns push the timbre in.
    let shape_phase: Vec<f64> = (0..TIMBRE_DEPTHS.len()).map(|_| rng.random_range(0.0..PI)).collect();
    let mod_rate: Vec<f64> = TIMBRE_RATES.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
    let mod_phase: Vec<f64> = (0..TIMBRE_DEPTHS.len()).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    struct Tone {
        f0: f64,
        phase0: f64,
        level: f64,
        tables: Vec<Wavetable>,
        drift: Vec<f64>,
    }

    let ticks = (n as f64 / fs * CONTROL_HZ).ceil() as usize + 2;
    let tones: Vec<Tone> = (0..TONES)
        .map(|_| {
            let f0 = (rng.random_range(100f64.ln()..1000f64.ln())).exp();
            let partials = ((top / f0).floor() as usize).max(1);
            let tilt = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let phases: Vec<f64> = (0..partials).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let base: Vec<f64> = (1..=partials)
                .map(|h| {
                    let f = h as f64 * f0;
                    let env = 1.0
                        + 0.3 * tilt[0] * (PI * f / top).cos()
                        + 0.3 * tilt[1] * (2.0 * PI * f / top).cos();
                    env.max(0.2) / (partials as f64).sqrt()
                })
                .collect();
            let mut tables = vec![Wavetable::from_partials(&base, &phases, &mut planner)];
            for (g, &sp) in shape_phase.iter().enumerate() {
                let amps: Vec<f64> = base
                    .iter()
                    .enumerate()
                    .map(|(i, b)| {
                        let f = (i + 1) as f64 * f0;
                        b * (PI * (g + 1) as f64 * f / top + sp).cos()
                    })
                    .collect();
                tables.push(Wavetable::from_partials(&amps, &phases, &mut planner));
            }
            let mut walk = 0.0;
            let drift = (0..ticks)
                .map(|_| {
                    let v = walk;
                    walk += DRIFT_STEP * gaussian(rng);
                    v
                })
                .collect();
            Tone {
                f0,
                phase0: rng.random_range(0.0..1.0),
                level: rng.random_range(0.5..1.0),
                tables,
                drift,
            }
        })
        .collect();

    let mut out = vec![0.0; n];
    let mut mods = vec![1.0; TIMBRE_DEPTHS.len() + 1];
    for (t, y) in out.iter_mut().enumerate() {
        let time = t as f64 / fs;
        for g in 0..TIMBRE_DEPTHS.len() {
            mods[g + 1] = TIMBRE_DEPTHS[g] * (2.0 * PI * mod_rate[g] * time + mod_phase[g]).cos();
        }
        let tick = time * CONTROL_HZ;
        let k = tick.floor() as usize;
        let frac = tick - k as f64;
        let mut acc = 0.0;
        for tone in &tones {
            let phase = (tone.phase0 + tone.f0 * time).fract();
            let d = tone.drift[k] + frac * (tone.drift[k + 1] - tone.drift[k]);
            let voiced: f64 = tone
                .tables
                .iter()
                .zip(&mods)
                .map(|(table, m)| m * table.at(phase))
                .sum();
            acc += tone.level * d.exp() * voiced;
        }
        *y = acc;
    }
    out
}

fn ar_process<R: Rng>(n: usize, rate: u32, rng: &mut R) -> Vec<f64> {
    let fs = rate as f64;
    let mut poly = vec![1.0];
    for band in [(300.0, 900.0), (1000.0, 2800.0)] {
        let f = rng.random_range(band.0..band.1);
        let r: f64 = rng.random_range(0.95..0.99);
        let w = 2.0 * PI * f / fs;
        let section = [1.0, -2.0 * r * w.cos(), r * r];
        let mut next = vec![0.0; poly.len() + 2];
        for (i, p) in poly.iter().enumerate() {
            for (j, s) in section.iter().enumerate() {
                next[i + j] += p * s;
            }
        }
        poly = next;
    }

    // Syllable-rate envelope: a mean-reverting walk clipped at zero, so speech
    // comes in bursts separated by pauses.
    let ticks = (n as f64 / fs * 100.0).ceil() as usize + 2;
    let decay = (-0.01f64 / 0.08).exp();
    let mut walk = 0.0;
    let envelope: Vec<f64> = (0..ticks)
        .map(|_| {
            walk = decay * walk + (1.0 - decay * decay).sqrt() * gaussian(rng);
            (0.4 + 0.6 * walk).max(0.0)
        })
        .collect();

    let mut y = vec![0.0; n];
    for t in 0..n {
        let tick = t as f64 / fs * 100.0;
        let k = tick.floor() as usize;
        let e = envelope[k] + (tick - k as f64) * (envelope[k + 1] - envelope[k]);
        let mut v = e * gaussian(rng);
        for (i, a) in poly.iter().enumerate().skip(1) {
            if t >= i {
                v -= a * y[t - i];
            }
        }
        y[t] = v;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn sources_are_finite_and_normalized() {
        for kind in [SourceKind::FilteredNoise, SourceKind::HarmonicMixture, SourceKind::ArProcess] {
            let mut rng = ChaCha20Rng::seed_from_u64(3);
            let x = kind.generate(24_000, 48_000, &mut rng);
            assert_eq!(x.len(), 24_000);
            assert!(x.iter().all(|v| v.is_finite()));
            let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
            assert!((rms - SOURCE_RMS).abs() < 1e-9, "{kind:?}");
        }
    }

    #[test]
    fn wavetable_reproduces_partials() {
        let mut planner = FftPlanner::new();
        let table = Wavetable::from_partials(&[1.0, 0.5], &[0.0, 0.3], &mut planner);
        for i in [0usize, 100, 1000, 3000] {
            let th = 2.0 * PI * i as f64 / TABLE_LEN as f64;
            let want = th.sin() + 0.5 * (2.0 * th + 0.3).sin();
            assert!((table.0[i] - want).abs() < 1e-9);
        }
    }
}
