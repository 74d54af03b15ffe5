//! Experiment drivers shared by the command-line harness and the acceptance
//! tests. Every driver is a pure function of its config and seed: trial `i`
//! runs on an environment seeded with `seed ^ i`, so results do not depend on
//! how trials are scheduled across threads.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{synthesize_environment, ChannelModel, DeviceSpec, EnvironmentSpec, SampleBuffer, SourceKind};
use crate::protocol::{pair_loopback, MsgType, PairingConfig, PairingSession, Role};
use crate::quantize::{bit_error_rate, mean_cosine_distance, quantize_buffer, BitSequence, Origin, Representation};
use crate::spectral::SpectralConfig;

pub const DEVICE_A: &str = "a";
pub const DEVICE_B: &str = "b";
pub const DEVICE_MEDIUM: &str = "medium";
pub const DEVICE_ADV: &str = "adv";

/// Two co-located devices on identity channels at 20 dB, a third behind a
/// mild 8 kHz lowpass at 15 dB, and an adversary behind a 2 kHz lowpass at
/// 5 dB.
pub fn standard_environment(kind: SourceKind, seed: u64, duration_s: f64) -> EnvironmentSpec {
    let rate = 48_000;
    EnvironmentSpec {
        source_kind: kind,
        duration_s,
        sample_rate_hz: rate,
        seed,
        devices: vec![
            DeviceSpec {
                device_id: DEVICE_A.into(),
                channel: ChannelModel::identity(20.0),
            },
            DeviceSpec {
                device_id: DEVICE_B.into(),
                channel: ChannelModel::identity(20.0),
            },
            DeviceSpec {
                device_id: DEVICE_MEDIUM.into(),
                channel: ChannelModel::windowed_sinc_lowpass(8000.0, rate, 63, 15.0),
            },
            DeviceSpec {
                device_id: DEVICE_ADV.into(),
                channel: ChannelModel::windowed_sinc_lowpass(2000.0, rate, 101, 5.0),
            },
        ],
    }
}

/// Early reflections of the partition in [`wall_environment`].
pub const WALL_REFLECTIONS: [(usize, f64); 2] = [(37, 0.5), (113, -0.3)];

/// Legitimate pair inside the room; the adversary listens through a wall
/// (2 kHz one-pole lowpass with two reflections) at `snr_db`.
pub fn wall_environment(kind: SourceKind, seed: u64, duration_s: f64, snr_db: f64) -> EnvironmentSpec {
    let mut env = standard_environment(kind, seed, duration_s);
    env.devices.retain(|d| d.device_id != DEVICE_MEDIUM);
    let adv = env
        .devices
        .iter_mut()
        .find(|d| d.device_id == DEVICE_ADV)
        .expect("standard environment has an adversary");
    adv.channel = ChannelModel::wall(2000.0, env.sample_rate_hz, &WALL_REFLECTIONS, snr_db);
    env
}

pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed ^ trial as u64
}

fn trial_env(env: &EnvironmentSpec, seed: u64, trial: usize, min_samples: usize) -> Result<EnvironmentSpec> {
    let rate = env.sample_rate_hz as f64;
    let mut e = env.clone();
    e.seed = trial_seed(seed, trial);
    if e.total_samples() < min_samples {
        e.duration_s = (min_samples as f64 / rate).max(env.duration_s);
        // round up so total_samples() cannot fall one short
        e.duration_s += 1.0 / rate;
    }
    Ok(e)
}

fn device<'a>(bufs: &'a std::collections::BTreeMap<String, SampleBuffer<f64>>, id: &str) -> Result<&'a SampleBuffer<f64>> {
    bufs.get(id)
        .ok_or_else(|| Error::Config(format!("environment has no device {id:?}")))
}

fn quantize(buf: &SampleBuffer<f64>, origin: Origin, spectral: &SpectralConfig, k: usize) -> Result<BitSequence> {
    quantize_buffer(buf, origin, spectral, k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSweepConfig {
    pub shift_max: usize,
    pub shift_step: usize,
    pub trials: usize,
    pub quantizers: Vec<Origin>,
    /// Devices compared against the reference device `a`.
    pub peers: Vec<String>,
    pub window_s: f64,
    pub k_eigenvectors: usize,
    pub spectral: SpectralConfig,
}

impl Default for ShiftSweepConfig {
    fn default() -> Self {
        Self {
            shift_max: 96_000,
            shift_step: 2400,
            trials: 20,
            quantizers: vec![Origin::Trevor, Origin::Means, Origin::SchurmannSigg],
            peers: vec![DEVICE_B.into()],
            window_s: 3.0,
            k_eigenvectors: 4,
            spectral: SpectralConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub shift_samples: usize,
    pub quantizer: Origin,
    pub role_pair: String,
    /// Mean over trials.
    pub ber: f64,
}

fn shifts(max: usize, step: usize) -> Vec<usize> {
    (0..=max).step_by(step.max(1)).collect()
}

/// Mean BER between `a`'s leading window and each peer's window read
/// `shift` samples later, per quantizer.
pub fn shift_sweep(env: &EnvironmentSpec, cfg: &ShiftSweepConfig, seed: u64) -> Result<Vec<ShiftRow>> {
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let w = (cfg.window_s * env.sample_rate_hz as f64).round() as usize;
    let grid = shifts(cfg.shift_max, cfg.shift_step);
    let per_trial: Vec<Vec<f64>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<f64>> {
            let e = trial_env(env, seed, t, w + cfg.shift_max)?;
            let bufs = synthesize_environment(&e)?;
            let a = device(&bufs, DEVICE_A)?.window(0, w)?;
            let mut out = Vec::new();
            for &q in &cfg.quantizers {
                let ka = quantize(&a, q, &cfg.spectral, cfg.k_eigenvectors)?;
                for peer in &cfg.peers {
                    let p = device(&bufs, peer)?;
                    for &s in &grid {
                        let kp = quantize(&p.window(s, w)?, q, &cfg.spectral, cfg.k_eigenvectors)?;
                        out.push(bit_error_rate(&ka, &kp)?);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut idx = 0;
    for &q in &cfg.quantizers {
        for peer in &cfg.peers {
            for &s in &grid {
                let ber = per_trial.iter().map(|v| v[idx]).sum::<f64>() / cfg.trials as f64;
                rows.push(ShiftRow {
                    shift_samples: s,
                    quantizer: q,
                    role_pair: format!("{DEVICE_A}:{peer}"),
                    ber,
                });
                idx += 1;
            }
        }
    }
    Ok(rows)
}

pub fn shift_rows_csv(rows: &[ShiftRow]) -> String {
    let mut out = String::from("shift_samples,quantizer,role_pair,ber\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.6}", r.shift_samples, r.quantizer.name(), r.role_pair, r.ber);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingRunConfig {
    pub trials: usize,
    /// How much later the responder's window starts.
    pub shift_samples: usize,
    pub pairing: PairingConfig,
    /// Responders tried against the initiator `a`, each in its own session.
    pub responders: Vec<String>,
}

impl PairingRunConfig {
    pub fn new(pairing: PairingConfig) -> Self {
        Self {
            trials: 100,
            shift_samples: 2400,
            pairing: pairing.with_role(Role::Initiator),
            responders: vec![DEVICE_B.into(), DEVICE_ADV.into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingTrial {
    pub trial: usize,
    pub responder: String,
    pub verified: bool,
    /// BER between the two sides' local bits; diagnostic only.
    pub ber: Option<f64>,
    pub commit_frames: usize,
    pub snippet_frames: usize,
}

fn summarize(trial: usize, responder: &str, init: &PairingSession, resp: &PairingSession) -> PairingTrial {
    let ber = match (init.local_bits(), resp.local_bits()) {
        (Some(a), Some(b)) => bit_error_rate(a, b).ok(),
        _ => None,
    };
    PairingTrial {
        trial,
        responder: responder.to_string(),
        verified: init.is_verified() && resp.is_verified(),
        ber,
        commit_frames: init.count_frames(MsgType::Commit),
        snippet_frames: init.count_frames(MsgType::SyncSnippet),
    }
}

/// Full pairings over loopback, returning the sessions too.
pub fn pairing_sessions(
    env: &EnvironmentSpec,
    cfg: &PairingRunConfig,
    seed: u64,
) -> Result<Vec<(PairingTrial, PairingSession, PairingSession)>> {
    cfg.pairing.validate()?;
    let w = cfg.pairing.window_samples(env.sample_rate_hz);
    let per_trial: Vec<Vec<_>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<_>> {
            let e = trial_env(env, seed, t, w + cfg.shift_samples)?;
            let bufs = synthesize_environment(&e)?;
            let a = device(&bufs, DEVICE_A)?.window(0, w)?;
            let init_cfg = cfg.pairing.with_role(Role::Initiator);
            let resp_cfg = cfg.pairing.with_role(Role::Responder);
            cfg.responders
                .iter()
                .map(|r| {
                    let p = device(&bufs, r)?;
                    // the sync baseline responder aligns within its whole buffer
                    let sig = match cfg.pairing.protocol_kind {
                        crate::protocol::ProtocolKind::Trevor => p.window(cfg.shift_samples, w)?,
                        crate::protocol::ProtocolKind::SyncBaseline => p.clone(),
                    };
                    let (i, s) = pair_loopback(&init_cfg, &a, &resp_cfg, &sig, trial_seed(seed, t));
                    Ok((summarize(t, r, &i, &s), i, s))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

pub fn pairing_runs(env: &EnvironmentSpec, cfg: &PairingRunConfig, seed: u64) -> Result<Vec<PairingTrial>> {
    Ok(pairing_sessions(env, cfg, seed)?.into_iter().map(|(t, _, _)| t).collect())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn pairing_csv(rows: &[PairingTrial]) -> String {
    let mut out = String::from("trial,responder,verified,ber\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.trial, r.responder, r.verified as u8, opt(r.ber));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayKind {
    /// `b` recording live, same moment as `a`.
    Fresh,
    /// A recording of `b`'s position made during an earlier epoch.
    Replay,
    /// The replay path fed a recording from the current epoch.
    Control,
}

impl ReplayKind {
    pub fn name(self) -> &'static str {
        match self {
            ReplayKind::Fresh => "fresh",
            ReplayKind::Replay => "replay",
            ReplayKind::Control => "control",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayTrial {
    pub trial: usize,
    pub kind: ReplayKind,
    pub verified: bool,
    pub ber: Option<f64>,
}

/// Trial `t` pairs `a` at epoch 1 of its environment against `b` at epoch 1
/// (fresh), a stored recording from epoch 0 (replay), and a stored recording
/// from epoch 1 (control).
pub fn replay_runs(env: &EnvironmentSpec, pairing: &PairingConfig, trials: usize, seed: u64) -> Result<Vec<ReplayTrial>> {
    pairing.validate()?;
    let w = pairing.window_samples(env.sample_rate_hz);
    let per_trial: Vec<Vec<ReplayTrial>> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<ReplayTrial>> {
            let base = trial_env(env, seed, t, w)?;
            let now = synthesize_environment(&base.epoch(1))?;
            let past = synthesize_environment(&base.epoch(0))?;
            let a = device(&now, DEVICE_A)?.window(0, w)?;
            let live = device(&now, DEVICE_B)?.window(0, w)?;
            let stored_past = device(&past, DEVICE_B)?.window(0, w)?.with_source_id("replay");
            let stored_now = live.clone().with_source_id("replay");
            let init_cfg = pairing.with_role(Role::Initiator);
            let resp_cfg = pairing.with_role(Role::Responder);
            [
                (ReplayKind::Fresh, live),
                (ReplayKind::Replay, stored_past),
                (ReplayKind::Control, stored_now),
            ]
            .into_iter()
            .map(|(kind, sig)| {
                let (i, s) = pair_loopback(&init_cfg, &a, &resp_cfg, &sig, trial_seed(seed, t));
                let row = summarize(t, kind.name(), &i, &s);
                Ok(ReplayTrial {
                    trial: t,
                    kind,
                    verified: row.verified,
                    ber: row.ber,
                })
            })
            .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

pub fn replay_csv(rows: &[ReplayTrial]) -> String {
    let mut out = String::from("trial,kind,verified,ber\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.trial, r.kind.name(), r.verified as u8, opt(r.ber));
    }
    out
}

/// Device `a`'s quantized bits from `n` environments seeded `seed ^ i`,
/// truncated to `bits`.
pub fn randomness_keys(
    env: &EnvironmentSpec,
    pairing: &PairingConfig,
    n: usize,
    bits: usize,
    seed: u64,
) -> Result<Vec<BitSequence>> {
    let w = pairing.window_samples(env.sample_rate_hz);
    let origin = pairing.protocol_kind.quantizer();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let e = trial_env(env, seed, i, w)?;
            let bufs = synthesize_environment(&e)?;
            let a = device(&bufs, DEVICE_A)?.window(0, w)?;
            let key = quantize(&a, origin, &pairing.spectral, pairing.k_eigenvectors)?;
            if key.len() < bits {
                return Err(Error::insufficient("key bits", bits, key.len()));
            }
            Ok(key.truncated(bits))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineRow {
    pub device: String,
    pub representation: Representation,
    pub mean_distance: f64,
}

/// Mean cosine distance between `a`'s `window_s` window and every other
/// device's, over shifts `0, step, ..., max_shift`.
pub fn cosine_rows(
    env: &EnvironmentSpec,
    window_s: f64,
    max_shift: usize,
    step: usize,
    seed: u64,
) -> Result<Vec<CosineRow>> {
    let w = (window_s * env.sample_rate_hz as f64).round() as usize;
    let e = trial_env(env, seed, 0, w + max_shift)?;
    let bufs = synthesize_environment(&e)?;
    let a = device(&bufs, DEVICE_A)?.window(0, w + max_shift)?;
    // a one-second window holds only 23 blocks of 2048
    let spectral = SpectralConfig {
        block_len_d: 1024,
        n_bins: 32,
        min_rows: 33,
    };
    let mut rows = Vec::new();
    for (id, buf) in bufs.iter().filter(|(id, _)| id.as_str() != DEVICE_A) {
        let other = buf.window(0, w + max_shift)?;
        for repr in Representation::ALL {
            rows.push(CosineRow {
                device: id.clone(),
                representation: repr,
                mean_distance: mean_cosine_distance(&a, &other, repr, max_shift, step, &spectral)?,
            });
        }
    }
    Ok(rows)
}

pub fn cosine_csv(rows: &[CosineRow]) -> String {
    let mut out = String::from("device,representation,mean_cosine_distance\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6}", r.device, r.representation.name(), r.mean_distance);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_is_deterministic_and_zero_shift_is_best() {
        let env = standard_environment(SourceKind::HarmonicMixture, 5, 3.0);
        let cfg = ShiftSweepConfig {
            shift_max: 4800,
            shift_step: 2400,
            trials: 2,
            quantizers: vec![Origin::Trevor, Origin::SchurmannSigg],
            ..ShiftSweepConfig::default()
        };
        let a = shift_sweep(&env, &cfg, 9).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(shift_rows_csv(&a), shift_rows_csv(&shift_sweep(&env, &cfg, 9).unwrap()));
        let ss: Vec<_> = a.iter().filter(|r| r.quantizer == Origin::SchurmannSigg).collect();
        assert!(ss[0].ber < ss[1].ber && ss[0].ber < ss[2].ber);
    }

    #[test]
    fn wall_environment_has_three_devices() {
        let env = wall_environment(SourceKind::HarmonicMixture, 1, 3.0, 10.0);
        assert_eq!(env.devices.len(), 3);
        assert!(env.device(DEVICE_MEDIUM).is_none());
        env.validate().unwrap();
    }
}
