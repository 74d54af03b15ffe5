//! Passive attack on snippet-synchronized pairing.
//!
//! An eavesdropper outside the room records a muffled version of the shared
//! audio. Every sync snippet broadcast by the legitimate devices is a clean
//! sample of the in-room signal at a known time, so pairing snippets with the
//! eavesdropper's own recording of the same instants gives training data for
//! the wall's transfer function. Inverting that estimate on later recordings
//! reconstructs an approximation of what the legitimate devices heard.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{synthesize_environment, EnvironmentSpec, SampleBuffer};
use crate::protocol::session::decode_pcm16;
use crate::protocol::{pair_loopback, Direction, MsgType, PairingConfig, PairingSession, Role};
use crate::quantize::{bit_error_rate, schurmann_sigg_deltas, BitSequence};
use crate::reconcile::{decommit, FuzzyCommitment};
use crate::spectral::build_observation_matrix;

/// Estimated frequency response of the barrier (in-room to outside), bins
/// `0..=fft_len/2`, with the per-bin residual power the fit left unexplained
/// relative to the in-room power.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferEstimate {
    pub gains: Vec<Complex<f64>>,
    pub noise_ratio: Vec<f64>,
    pub fft_len: usize,
    pub regularizer_eps: f64,
    pub training_pairs: usize,
}

impl TransferEstimate {
    /// A known response with no noise, for tests and diagnostics.
    pub fn exact(gains: Vec<Complex<f64>>) -> Self {
        let fft_len = 2 * (gains.len().max(1) - 1);
        Self {
            noise_ratio: vec![0.0; gains.len()],
            gains,
            fft_len,
            regularizer_eps: 0.0,
            training_pairs: 0,
        }
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Hann-windowed spectra of half-overlapping frames, bins `0..=fft_len/2`.
/// Signals shorter than one frame are zero-padded to one frame.
fn frame_spectra(x: &[f64], fft_len: usize, planner: &mut FftPlanner<f64>) -> Vec<Vec<Complex<f64>>> {
    let fft = planner.plan_fft_forward(fft_len);
    let w = hann(fft_len);
    let hop = fft_len / 2;
    let mut starts: Vec<usize> = (0..).map(|m| m * hop).take_while(|s| s + fft_len <= x.len()).collect();
    if starts.is_empty() {
        starts.push(0);
    }
    starts
        .into_iter()
        .map(|s| {
            let mut buf: Vec<Complex<f64>> = (0..fft_len)
                .map(|i| Complex::new(x.get(s + i).copied().unwrap_or(0.0) * w[i], 0.0))
                .collect();
            fft.process(&mut buf);
            buf.truncate(fft_len / 2 + 1);
            buf
        })
        .collect()
}

fn check_fft_len(fft_len: usize) -> Result<()> {
    if fft_len < 4 || !fft_len.is_power_of_two() {
        return Err(Error::Config(format!("fft_len {fft_len} must be a power of two >= 4")));
    }
    Ok(())
}

/// `scale * mean |L(ω)|²` over every frame and bin of the in-room snippets.
pub fn default_eps(leg_snippets: &[SampleBuffer<f64>], fft_len: usize, scale: f64) -> Result<f64> {
    check_fft_len(fft_len)?;
    if leg_snippets.is_empty() {
        return Err(Error::insufficient("training snippet pairs", 1, 0));
    }
    let mut planner = FftPlanner::new();
    let (mut total, mut count) = (0.0, 0usize);
    for l in leg_snippets {
        for frame in frame_spectra(l.samples(), fft_len, &mut planner) {
            total += frame.iter().map(|c| c.norm_sqr()).sum::<f64>();
            count += frame.len();
        }
    }
    Ok(scale * total / count as f64)
}

/// Regularized least-squares fit of the barrier, `Ĥ = Σ A conj(L) / (Σ |L|² + eps)`
/// per bin, so that `A ≈ Ĥ L`.
pub fn fit_transfer(
    leg_snippets: &[SampleBuffer<f64>],
    adv_snippets: &[SampleBuffer<f64>],
    fft_len: usize,
    eps: f64,
) -> Result<TransferEstimate> {
    check_fft_len(fft_len)?;
    if leg_snippets.is_empty() {
        return Err(Error::insufficient("training snippet pairs", 1, 0));
    }
    if leg_snippets.len() != adv_snippets.len() {
        return Err(Error::Dimension {
            expected: leg_snippets.len(),
            actual: adv_snippets.len(),
        });
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!("regularizer eps must be positive, got {eps}")));
    }
    let bins = fft_len / 2 + 1;
    let mut num = vec![Complex::new(0.0, 0.0); bins];
    let mut den = vec![0.0; bins];
    let mut planner = FftPlanner::new();
    let mut frames = Vec::new();
    for (l, a) in leg_snippets.iter().zip(adv_snippets) {
        if l.len() != a.len() {
            return Err(Error::Dimension {
                expected: l.len(),
                actual: a.len(),
            });
        }
        let lf = frame_spectra(l.samples(), fft_len, &mut planner);
        let af = frame_spectra(a.samples(), fft_len, &mut planner);
        frames.extend(lf.into_iter().zip(af));
    }
    for (lr, ar) in &frames {
        for k in 0..bins {
            num[k] += ar[k] * lr[k].conj();
            den[k] += lr[k].norm_sqr();
        }
    }
    let gains: Vec<Complex<f64>> = num.iter().zip(&den).map(|(n, d)| n / (d + eps)).collect();
    let mut residual = vec![0.0; bins];
    for (lr, ar) in &frames {
        for k in 0..bins {
            residual[k] += (ar[k] - gains[k] * lr[k]).norm_sqr();
        }
    }
    let noise_ratio = residual.iter().zip(&den).map(|(r, d)| r / (d + eps)).collect();
    Ok(TransferEstimate {
        gains,
        noise_ratio,
        fft_len,
        regularizer_eps: eps,
        training_pairs: leg_snippets.len(),
    })
}

/// Undo the estimated barrier on `muffled`: per frame
/// `E = M conj(Ĥ) / (|Ĥ|² + ρ)` with `ρ` the fitted noise ratio of each bin,
/// resynthesized by 50% overlap-add.
pub fn apply_inverse(est: &TransferEstimate, muffled: &SampleBuffer<f64>) -> Result<SampleBuffer<f64>> {
    let n = est.fft_len;
    check_fft_len(n)?;
    for len in [est.gains.len(), est.noise_ratio.len()] {
        if len != n / 2 + 1 {
            return Err(Error::Dimension {
                expected: n / 2 + 1,
                actual: len,
            });
        }
    }
    let hop = n / 2;
    let len = muffled.len();
    // half a frame of zeros on each side so every sample sees two windows
    let padded_len = (len + n).div_ceil(hop) * hop + hop;
    let mut padded = vec![0.0; padded_len];
    padded[hop..hop + len].copy_from_slice(muffled.samples());

    let g: Vec<Complex<f64>> = est
        .gains
        .iter()
        .zip(&est.noise_ratio)
        .map(|(h, rho)| {
            let d = h.norm_sqr() + rho;
            if d > 0.0 {
                h.conj() / d
            } else {
                Complex::new(0.0, 0.0)
            }
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let w = hann(n);
    let mut out = vec![0.0; padded_len];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut start = 0;
    while start + n <= padded_len {
        for i in 0..n {
            buf[i] = Complex::new(padded[start + i] * w[i], 0.0);
        }
        fwd.process(&mut buf);
        for k in 0..=n / 2 {
            buf[k] *= g[k];
        }
        for k in 1..n / 2 {
            buf[n - k] = buf[k].conj();
        }
        inv.process(&mut buf);
        for i in 0..n {
            out[start + i] += buf[i].re / n as f64;
        }
        start += hop;
    }
    SampleBuffer::new(out[hop..hop + len].to_vec(), muffled.sample_rate_hz(), format!("{}+inverse", muffled.source_id()))
}

/// Decommit with the adversary's estimated bits.
pub fn local_reconciliation_check(est_bits: &BitSequence, snooped: &FuzzyCommitment) -> bool {
    matches!(decommit(snooped, est_bits), Ok(Some(_)))
}

/// Try the estimated bits, then every way of flipping the least reliable bit
/// in up to `radius` of the `candidates` least reliable bytes. Returns the
/// key on success.
pub fn brute_force_reconciliation(
    est_bits: &BitSequence,
    reliability: &[f64],
    snooped: &FuzzyCommitment,
    radius: usize,
    candidates: usize,
) -> Option<Vec<u8>> {
    let n = snooped.params().n();
    let bytes = est_bits.leading_bytes(n).ok()?.to_vec();
    if reliability.len() < 8 * n {
        return None;
    }
    // per byte: its weakest bit and that bit's reliability
    let mut weakest: Vec<(usize, usize, f64)> = (0..n)
        .map(|b| {
            let (bit, r) = (0..8)
                .map(|i| (i, reliability[8 * b + i].abs()))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .expect("eight bits");
            (b, bit, r)
        })
        .collect();
    weakest.sort_by(|x, y| x.2.total_cmp(&y.2));
    weakest.truncate(candidates.min(n));

    let attempt = |flips: &[usize]| {
        let mut guess = bytes.clone();
        for &c in flips {
            let (b, bit, _) = weakest[c];
            guess[b] ^= 0x80 >> bit;
        }
        decommit(snooped, &BitSequence::from_bytes(&guess)).ok().flatten()
    };
    if let Some(k) = attempt(&[]) {
        return Some(k);
    }
    let mut chosen = Vec::with_capacity(radius);
    search(&mut chosen, 0, weakest.len(), radius, &attempt)
}

fn search(
    chosen: &mut Vec<usize>,
    from: usize,
    pool: usize,
    radius: usize,
    attempt: &dyn Fn(&[usize]) -> Option<Vec<u8>>,
) -> Option<Vec<u8>> {
    if chosen.len() == radius {
        return None;
    }
    for c in from..pool {
        chosen.push(c);
        if let Some(k) = attempt(chosen).or_else(|| search(chosen, c + 1, pool, radius, attempt)) {
            return Some(k);
        }
        chosen.pop();
    }
    None
}

/// Raw samples carried by every SYNC_SNIPPET the initiator sent.
pub fn snooped_snippets(session: &PairingSession) -> Result<Vec<Vec<f64>>> {
    session
        .transcript()
        .iter()
        .filter(|e| e.direction == Direction::Sent && e.msg_type == MsgType::SyncSnippet)
        .map(|e| decode_pcm16(&e.frame[crate::protocol::wire::HEADER_LEN..]))
        .collect()
}

/// The commitment the initiator sent, if any.
pub fn snooped_commitment(session: &PairingSession) -> Option<FuzzyCommitment> {
    session
        .transcript()
        .iter()
        .find(|e| e.direction == Direction::Sent && e.msg_type == MsgType::Commit)
        .and_then(|e| FuzzyCommitment::from_bytes(&e.frame[crate::protocol::wire::HEADER_LEN..]).ok())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub training_rounds: usize,
    pub attack_rounds: usize,
    /// Protocol the legitimate devices run (initiator role).
    pub pairing: PairingConfig,
    pub initiator_id: String,
    pub responder_id: String,
    pub adversary_id: String,
    /// How much earlier the responder started recording than the initiator.
    pub lead_samples: usize,
    pub fft_len: usize,
    /// Regularizer as a fraction of the mean in-room spectral power.
    pub eps_scale: f64,
    pub search_radius: usize,
    pub search_candidates: usize,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(pairing: PairingConfig) -> Self {
        Self {
            training_rounds: 256,
            attack_rounds: 100,
            pairing: pairing.with_role(Role::Initiator),
            initiator_id: "a".into(),
            responder_id: "b".into(),
            adversary_id: "adv".into(),
            lead_samples: 2400,
            fft_len: 2048,
            eps_scale: 1e-3,
            search_radius: 2,
            search_candidates: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackTrial {
    pub trial: usize,
    pub legit_ber: f64,
    pub ber_without_attack: f64,
    pub ber_with_attack: f64,
    pub legit_verified: bool,
    pub reconciled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub ber_without_attack: f64,
    pub ber_with_attack: f64,
    pub trials: usize,
    pub reconciliation_successes: usize,
    pub training_pairs: usize,
    pub code_n: usize,
    pub code_t: usize,
    pub per_trial: Vec<AttackTrial>,
}

/// Epoch offset separating attack rounds from training rounds.
const ATTACK_EPOCH_BASE: u64 = 1 << 32;

struct Round {
    initiator: PairingSession,
    responder: PairingSession,
    adversary: SampleBuffer<f64>,
}

fn legit_round(env: &EnvironmentSpec, cfg: &AttackConfig, epoch: u64) -> Result<Round> {
    let spec = env.epoch(epoch);
    let bufs = synthesize_environment(&spec)?;
    let get = |id: &str| {
        bufs.get(id)
            .ok_or_else(|| Error::Config(format!("environment has no device {id:?}")))
    };
    let (a, b, adv) = (get(&cfg.initiator_id)?, get(&cfg.responder_id)?, get(&cfg.adversary_id)?);
    let w = cfg.pairing.window_samples(spec.sample_rate_hz);
    let init_signal = a.window(cfg.lead_samples, w)?;
    let adversary = adv.window(cfg.lead_samples, w)?;
    let (initiator, responder) = pair_loopback(
        &cfg.pairing,
        &init_signal,
        &cfg.pairing.with_role(Role::Responder),
        b,
        cfg.seed ^ epoch,
    );
    Ok(Round {
        initiator,
        responder,
        adversary,
    })
}

fn ss_soft(buf: &SampleBuffer<f64>, cfg: &PairingConfig) -> Result<(BitSequence, Vec<f64>)> {
    let x = build_observation_matrix(buf, &cfg.spectral)?;
    let deltas = schurmann_sigg_deltas(&x);
    let bits = BitSequence::from_bits(deltas.iter().map(|&d| d > 0.0));
    Ok((bits, deltas))
}

fn attack_round(env: &EnvironmentSpec, cfg: &AttackConfig, est: &TransferEstimate, t: usize) -> Result<AttackTrial> {
    let round = legit_round(env, cfg, ATTACK_EPOCH_BASE + t as u64)?;
    let Some(s_a) = round.initiator.local_bits() else {
        return Err(Error::Protocol(format!(
            "initiator produced no bits: {}",
            round.initiator.reject_reason().unwrap_or("unknown")
        )));
    };
    let legit_ber = match round.responder.local_bits() {
        Some(s_b) => bit_error_rate(s_a, s_b)?,
        None => 1.0,
    };
    let (plain, _) = ss_soft(&round.adversary, &cfg.pairing)?;
    let reconstructed = apply_inverse(est, &round.adversary)?;
    let (attacked, reliability) = ss_soft(&reconstructed, &cfg.pairing)?;
    let reconciled = snooped_commitment(&round.initiator).is_some_and(|c| {
        brute_force_reconciliation(&attacked, &reliability, &c, cfg.search_radius, cfg.search_candidates).is_some()
    });
    Ok(AttackTrial {
        trial: t,
        legit_ber,
        ber_without_attack: bit_error_rate(s_a, &plain)?,
        ber_with_attack: bit_error_rate(s_a, &attacked)?,
        legit_verified: round.initiator.is_verified(),
        reconciled,
    })
}

/// Train on snooped snippets, then attack fresh pairings.
pub fn run_attack(env: &EnvironmentSpec, cfg: &AttackConfig) -> Result<AttackReport> {
    if env.device(&cfg.adversary_id).is_none() {
        return Err(Error::Config(format!("environment has no adversary device {:?}", cfg.adversary_id)));
    }
    let rate = env.sample_rate_hz;
    let rounds: Vec<Round> = (0..cfg.training_rounds)
        .into_par_iter()
        .map(|r| legit_round(env, cfg, r as u64))
        .collect::<Result<_>>()?;
    let mut leg = Vec::new();
    let mut adv = Vec::new();
    for round in &rounds {
        for snippet in snooped_snippets(&round.initiator)? {
            adv.push(round.adversary.window(0, snippet.len())?);
            leg.push(SampleBuffer::new(snippet, rate, "snippet")?);
        }
    }
    drop(rounds);
    log::info!("snooped {} snippets in {} rounds", leg.len(), cfg.training_rounds);
    let eps = default_eps(&leg, cfg.fft_len, cfg.eps_scale)?;
    let est = fit_transfer(&leg, &adv, cfg.fft_len, eps)?;

    let per_trial: Vec<AttackTrial> = (0..cfg.attack_rounds)
        .into_par_iter()
        .map(|t| attack_round(env, cfg, &est, t))
        .collect::<Result<_>>()?;
    let trials = per_trial.len();
    let mean = |f: fn(&AttackTrial) -> f64| per_trial.iter().map(f).sum::<f64>() / trials.max(1) as f64;
    Ok(AttackReport {
        ber_without_attack: mean(|t| t.ber_without_attack),
        ber_with_attack: mean(|t| t.ber_with_attack),
        trials,
        reconciliation_successes: per_trial.iter().filter(|t| t.reconciled).count(),
        training_pairs: est.training_pairs,
        code_n: cfg.pairing.rs.n(),
        code_t: cfg.pairing.rs.t(),
        per_trial,
    })
}
