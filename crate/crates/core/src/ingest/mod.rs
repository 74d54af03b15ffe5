//! Signal ingestion: sample buffers loaded from WAV/CSV files, and a seeded
//! multi-device environment simulator.
//!
//! The simulator generates one latent source and hands every device its own
//! view of it, `gain * (h * s)(t - delay) + noise`, so experiments can place a
//! reference, a legitimate peer, a more distant device and an adversary behind
//! a wall in the same synthetic room.

mod channel;
mod source;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use channel::ChannelModel;
pub use source::SourceKind;

/// Divisor mapping signed 16-bit PCM onto `[-1, 1]`.
pub const PCM16_SCALE: f64 = 32768.0;

/// A device's time-domain measurement of its environment.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBuffer<T = f64> {
    samples: Vec<T>,
    sample_rate_hz: u32,
    source_id: String,
}

impl<T: Scalar> SampleBuffer<T> {
    pub fn new(samples: Vec<T>, sample_rate_hz: u32, source_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("sample buffer has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be at least 1 Hz".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Format(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            source_id: source_id.into(),
        })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false: a buffer holds at least one sample.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    /// Copy of `len` samples starting at `start`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        let end = start
            .checked_add(len)
            .ok_or_else(|| Error::Config("window bounds overflow".into()))?;
        if end > self.samples.len() {
            return Err(Error::insufficient(
                format!("window [{start}, {end}) of '{}'", self.source_id),
                end,
                self.samples.len(),
            ));
        }
        Self::new(
            self.samples[start..end].to_vec(),
            self.sample_rate_hz,
            self.source_id.clone(),
        )
    }

    /// Shift content right by `shift` samples, zero-filling the head and
    /// keeping the length.
    pub fn delayed(&self, shift: usize) -> Self {
        let n = self.samples.len();
        let mut out = vec![T::zero(); n];
        if shift < n {
            out[shift..].copy_from_slice(&self.samples[..n - shift]);
        }
        Self {
            samples: out,
            sample_rate_hz: self.sample_rate_hz,
            source_id: self.source_id.clone(),
        }
    }

    /// Same buffer in another scalar type.
    pub fn cast<U: Scalar>(&self) -> SampleBuffer<U> {
        SampleBuffer {
            samples: self
                .samples
                .iter()
                .map(|s| U::of(s.to_f64_lossy()))
                .collect(),
            sample_rate_hz: self.sample_rate_hz,
            source_id: self.source_id.clone(),
        }
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }
}

/// Load a 16-bit PCM WAV file. Multichannel files keep channel 0 only.
pub fn load_wav(path: impl AsRef<Path>) -> Result<SampleBuffer<f64>> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(wav_error)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "expected 16-bit PCM, found {} bits {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let channels = spec.channels.max(1) as usize;
    let declared = reader.len() as usize;
    let mut read = 0usize;
    let mut samples = Vec::with_capacity(reader.len() as usize / channels);
    for (i, s) in reader.samples::<i16>().enumerate() {
        // a short body surfaces as an I/O error from the sample reader
        let s = s.map_err(|e| Error::Format(e.to_string()))?;
        read += 1;
        if i % channels == 0 {
            samples.push(s as f64 / PCM16_SCALE);
        }
    }
    if read < declared {
        return Err(Error::Format(format!(
            "{} is truncated: header declares {declared} samples, body holds {read}",
            path.display()
        )));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no audio frames", path.display())));
    }
    SampleBuffer::new(samples, spec.sample_rate, source_id_for(path))
}

fn wav_error(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => Error::Io(io),
        other => Error::Format(other.to_string()),
    }
}

/// Load a trace with one real value per line (LF or CRLF line endings).
pub fn load_csv(path: impl AsRef<Path>, sample_rate_hz: u32) -> Result<SampleBuffer<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let samples = parse_csv_samples(&text)?;
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no samples", path.display())));
    }
    SampleBuffer::new(samples, sample_rate_hz, source_id_for(path))
}

fn parse_csv_samples(text: &str) -> Result<Vec<f64>> {
    let mut samples = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line).trim();
        if line.is_empty() {
            continue;
        }
        let value: f64 = line.parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("'{line}' is not a number"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("'{line}' is not finite"),
            });
        }
        samples.push(value);
    }
    Ok(samples)
}

fn source_id_for(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "file".to_string())
}

/// One simulated device and the channel between it and the latent source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub device_id: String,
    pub channel: ChannelModel,
}

/// Seeded description of a synthetic multi-device environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub source_kind: SourceKind,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub seed: u64,
    pub devices: Vec<DeviceSpec>,
}

impl EnvironmentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("environment spec serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn total_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn device(&self, id: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.device_id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices.len() < 2 {
            return Err(Error::Config(format!(
                "an environment needs at least 2 devices, got {}",
                self.devices.len()
            )));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::Config("duration_s must be positive".into()));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample_rate_hz must be at least 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.devices {
            if !seen.insert(d.device_id.as_str()) {
                return Err(Error::Config(format!("duplicate device id '{}'", d.device_id)));
            }
            d.channel.validate()?;
        }
        let n = self.total_samples();
        let longest = self
            .devices
            .iter()
            .map(|d| d.channel.fir_taps.len())
            .max()
            .unwrap_or(0);
        if n < longest {
            return Err(Error::Config(format!(
                "{n} samples cannot hold a {longest}-tap channel filter"
            )));
        }
        Ok(())
    }

    /// Same room, different moment: the latent source is redrawn while the
    /// device placements stay fixed.
    pub fn epoch(&self, epoch: u64) -> Self {
        Self {
            seed: derive_seed(self.seed, 0xE90C_0000 ^ epoch),
            ..self.clone()
        }
    }
}

/// Render every device's buffer. Pure in `spec`: the same spec reproduces the
/// same samples bit for bit.
pub fn synthesize_environment(spec: &EnvironmentSpec) -> Result<BTreeMap<String, SampleBuffer<f64>>> {
    spec.validate()?;
    let n = spec.total_samples();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let latent = spec.source_kind.generate(n, spec.sample_rate_hz, &mut rng);

    let mut out = BTreeMap::new();
    for (i, device) in spec.devices.iter().enumerate() {
        let mut noise_rng = ChaCha20Rng::seed_from_u64(derive_seed(spec.seed, i as u64 + 1));
        let samples = device.channel.apply(&latent, &mut noise_rng);
        out.insert(
            device.device_id.clone(),
            SampleBuffer::new(samples, spec.sample_rate_hz, device.device_id.clone())?,
        );
    }
    Ok(out)
}

/// SplitMix64 finalizer over `seed + stream`; decorrelates sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
