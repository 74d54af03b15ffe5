//! Pairing state machine.
//!
//! Trevor flow (initiator on the left):
//!
//! ```text
//! INIT(hash ‖ id)      ->
//!                      <-  INIT(hash ‖ id)      or RESULT(0) on hash mismatch
//! COMMIT(E)            ->
//!                      <-  RESULT(1 | 0)
//! ```
//!
//! The sync baseline inserts `SYNC_SNIPPET(raw samples)` before `COMMIT`; the
//! responder aligns its buffer to the snippet before quantizing.

use std::time::Duration;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::transport::Transport;
use super::wire::{MsgType, WireMessage};
use crate::error::{Error, Result};
use crate::ingest::{SampleBuffer, PCM16_SCALE};
use crate::quantize::{quantize_buffer, BitSequence, Origin};
use crate::reconcile::{commit, decommit, FuzzyCommitment, RsParams};
use crate::spectral::SpectralConfig;

/// Minimum Pearson correlation accepted when aligning to a sync snippet.
pub const MIN_SNIPPET_CORRELATION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Trevor,
    SyncBaseline,
}

impl ProtocolKind {
    pub fn quantizer(self) -> Origin {
        match self {
            ProtocolKind::Trevor => Origin::Trevor,
            ProtocolKind::SyncBaseline => Origin::SchurmannSigg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingConfig {
    pub spectral: SpectralConfig,
    pub k_eigenvectors: usize,
    pub rs: RsParams,
    pub sample_duration_s: f64,
    /// Length of the raw snippet the sync baseline broadcasts.
    pub snippet_duration_s: f64,
    pub role: Role,
    pub protocol_kind: ProtocolKind,
    pub timeout_ms: u64,
}

impl PairingConfig {
    /// 3 s of audio, four eigenvectors (256 bits), and the code fitted to
    /// 32 bytes of symbols.
    pub fn trevor(role: Role) -> Self {
        Self {
            spectral: SpectralConfig::default(),
            k_eigenvectors: 4,
            rs: RsParams::fitted(32).expect("32 bytes fit a code"),
            sample_duration_s: 3.0,
            snippet_duration_s: 0.25,
            role,
            protocol_kind: ProtocolKind::Trevor,
            timeout_ms: 10_000,
        }
    }

    /// Spectrogram double-delta bits after snippet alignment, with the full
    /// (255, 191) code.
    pub fn sync_baseline(role: Role) -> Self {
        Self {
            rs: RsParams::default(),
            protocol_kind: ProtocolKind::SyncBaseline,
            ..Self::trevor(role)
        }
    }

    pub fn with_role(&self, role: Role) -> Self {
        Self { role, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.spectral.validate()?;
        if self.k_eigenvectors == 0 || self.k_eigenvectors > self.spectral.n_bins {
            return Err(Error::Config(format!(
                "k_eigenvectors must be in 1..={}, got {}",
                self.spectral.n_bins, self.k_eigenvectors
            )));
        }
        RsParams::new(self.rs.n(), self.rs.k())?;
        if !(self.sample_duration_s > 0.0) || !(self.snippet_duration_s > 0.0) {
            return Err(Error::Config("durations must be positive".into()));
        }
        if self.snippet_duration_s > self.sample_duration_s {
            return Err(Error::Config("snippet cannot be longer than the sample window".into()));
        }
        Ok(())
    }

    pub fn window_samples(&self, rate: u32) -> usize {
        (self.sample_duration_s * rate as f64).round() as usize
    }

    pub fn snippet_samples(&self, rate: u32) -> usize {
        (self.snippet_duration_s * rate as f64).round() as usize
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Digest of every parameter both peers must share (role and timeout are
    /// local).
    pub fn hash(&self) -> [u8; 32] {
        let canonical = format!(
            "pairing-config/1|kind={:?}|d={}|bins={}|min_rows={}|k={}|n={}|rs_k={}|dur={:?}|snippet={:?}",
            self.protocol_kind,
            self.spectral.block_len_d,
            self.spectral.n_bins,
            self.spectral.min_rows,
            self.k_eigenvectors,
            self.rs.n(),
            self.rs.k(),
            self.sample_duration_s,
            self.snippet_duration_s,
        );
        Sha256::digest(canonical.as_bytes()).into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    Sampling,
    Quantized,
    Committed,
    Verified,
    Rejected,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Verified | SessionState::Rejected)
    }

    fn may_advance_to(self, next: SessionState) -> bool {
        use SessionState::*;
        match (self, next) {
            (s, Rejected) => !s.is_terminal(),
            (Idle, Sampling) | (Sampling, Quantized) | (Quantized, Committed) | (Quantized, Verified) => true,
            (Committed, Verified) => true,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Sent,
    Received,
}

/// One frame as it crossed the transport.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub msg_type: MsgType,
    pub frame: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairingSession {
    state: SessionState,
    history: Vec<SessionState>,
    peer_id: String,
    derived_key: Option<Vec<u8>>,
    transcript: Vec<TranscriptEntry>,
    reject_reason: Option<String>,
    local_bits: Option<BitSequence>,
    alignment: Option<Alignment>,
}

/// Where the responder found the initiator's sync snippet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    pub lag: usize,
    pub correlation: f64,
}

impl PairingSession {
    fn new() -> Self {
        Self {
            state: SessionState::Idle,
            history: vec![SessionState::Idle],
            peer_id: String::new(),
            derived_key: None,
            transcript: Vec::new(),
            reject_reason: None,
            local_bits: None,
            alignment: None,
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    /// Every state the session passed through, starting with `Idle`.
    pub fn history(&self) -> &[SessionState] {
        &self.history
    }

    pub fn peer_id(&self) -> &str {
        &self.peer_id
    }

    pub fn derived_key(&self) -> Option<&[u8]> {
        self.derived_key.as_deref()
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn reject_reason(&self) -> Option<&str> {
        self.reject_reason.as_deref()
    }

    /// This device's quantized bits. Kept for diagnostics; never transmitted.
    pub fn local_bits(&self) -> Option<&BitSequence> {
        self.local_bits.as_ref()
    }

    pub fn alignment(&self) -> Option<Alignment> {
        self.alignment
    }

    pub fn is_verified(&self) -> bool {
        self.state == SessionState::Verified
    }

    /// All transcript bytes in order.
    pub fn transcript_bytes(&self) -> Vec<u8> {
        self.transcript.iter().flat_map(|e| e.frame.iter().copied()).collect()
    }

    pub fn count_frames(&self, msg_type: MsgType) -> usize {
        self.transcript.iter().filter(|e| e.msg_type == msg_type).count()
    }

    fn advance(&mut self, next: SessionState) {
        assert!(
            self.state.may_advance_to(next),
            "illegal session transition {:?} -> {next:?}",
            self.state
        );
        self.state = next;
        self.history.push(next);
    }

    fn verify(&mut self, key: Vec<u8>) {
        self.advance(SessionState::Verified);
        self.derived_key = Some(key);
    }

    fn reject(&mut self, reason: impl Into<String>) {
        let reason = reason.into();
        log::info!("pairing rejected: {reason}");
        if !self.state.is_terminal() {
            self.advance(SessionState::Rejected);
        }
        self.reject_reason = Some(reason);
    }

    fn send<T: Transport + ?Sized>(&mut self, t: &mut T, msg: WireMessage) -> Result<()> {
        let frame = msg.serialize()?;
        t.send(&msg)?;
        log::debug!("sent {} ({} bytes)", msg.msg_type.name(), frame.len());
        self.transcript.push(TranscriptEntry {
            direction: Direction::Sent,
            msg_type: msg.msg_type,
            frame,
        });
        Ok(())
    }

    fn recv<T: Transport + ?Sized>(&mut self, t: &mut T) -> Result<WireMessage> {
        let msg = t.recv()?;
        log::debug!("received {} ({} bytes)", msg.msg_type.name(), msg.body.len());
        self.transcript.push(TranscriptEntry {
            direction: Direction::Received,
            msg_type: msg.msg_type,
            frame: msg.serialize()?,
        });
        Ok(msg)
    }
}

const ACCEPT: u8 = 1;
const REJECT: u8 = 0;

/// Run one side of a trevor pairing. The initiator draws the key from `rng`;
/// the responder ignores it. Failures of any kind end in a rejected session.
pub fn run_pairing<T, R>(cfg: &PairingConfig, signal: &SampleBuffer<f64>, transport: &mut T, rng: &mut R) -> PairingSession
where
    T: Transport + ?Sized,
    R: Rng + ?Sized,
{
    run(cfg, signal, transport, rng, ProtocolKind::Trevor)
}

/// Run one side of the snippet-synchronized baseline protocol.
pub fn run_sync_baseline<T, R>(
    cfg: &PairingConfig,
    signal: &SampleBuffer<f64>,
    transport: &mut T,
    rng: &mut R,
) -> PairingSession
where
    T: Transport + ?Sized,
    R: Rng + ?Sized,
{
    run(cfg, signal, transport, rng, ProtocolKind::SyncBaseline)
}

fn run<T, R>(cfg: &PairingConfig, signal: &SampleBuffer<f64>, transport: &mut T, rng: &mut R, kind: ProtocolKind) -> PairingSession
where
    T: Transport + ?Sized,
    R: Rng + ?Sized,
{
    let mut session = PairingSession::new();
    let outcome = if cfg.protocol_kind != kind {
        Err(Error::Config(format!("configuration is for {:?}", cfg.protocol_kind)))
    } else {
        cfg.validate().and_then(|_| match cfg.role {
            Role::Initiator => initiator(cfg, signal, transport, rng, &mut session),
            Role::Responder => responder(cfg, signal, transport, &mut session),
        })
    };
    if let Err(e) = outcome {
        session.reject(e.to_string());
    }
    debug_assert!(session.state.is_terminal());
    session
}

fn init_body(cfg: &PairingConfig, signal: &SampleBuffer<f64>) -> Vec<u8> {
    let mut body = cfg.hash().to_vec();
    body.extend_from_slice(signal.source_id().as_bytes());
    body
}

fn parse_init(msg: &WireMessage) -> Result<([u8; 32], String)> {
    if msg.msg_type != MsgType::Init || msg.body.len() < 32 {
        return Err(Error::Protocol(format!("expected INIT, got {}", msg.msg_type.name())));
    }
    let hash = msg.body[..32].try_into().expect("length checked");
    let id = String::from_utf8_lossy(&msg.body[32..]).into_owned();
    Ok((hash, id))
}

fn result_accepted(msg: &WireMessage) -> Result<bool> {
    if msg.msg_type != MsgType::Result || msg.body.len() != 1 {
        return Err(Error::Protocol(format!("expected RESULT, got {}", msg.msg_type.name())));
    }
    Ok(msg.body[0] == ACCEPT)
}

fn local_window(cfg: &PairingConfig, signal: &SampleBuffer<f64>, start: usize) -> Result<SampleBuffer<f64>> {
    let w = cfg.window_samples(signal.sample_rate_hz());
    if start + w > signal.len() {
        return Err(Error::insufficient("samples for the pairing window", start + w, signal.len()));
    }
    signal.window(start, w)
}

fn quantize_local(cfg: &PairingConfig, window: &SampleBuffer<f64>, session: &mut PairingSession) -> Result<BitSequence> {
    let bits = quantize_buffer(window, cfg.protocol_kind.quantizer(), &cfg.spectral, cfg.k_eigenvectors)?;
    if bits.len() < 8 * cfg.rs.n() {
        return Err(Error::insufficient("quantized bits", 8 * cfg.rs.n(), bits.len()));
    }
    session.local_bits = Some(bits.clone());
    session.advance(SessionState::Quantized);
    Ok(bits)
}

fn initiator<T, R>(
    cfg: &PairingConfig,
    signal: &SampleBuffer<f64>,
    transport: &mut T,
    rng: &mut R,
    session: &mut PairingSession,
) -> Result<()>
where
    T: Transport + ?Sized,
    R: Rng + ?Sized,
{
    session.send(transport, WireMessage::new(MsgType::Init, init_body(cfg, signal)))?;
    let reply = session.recv(transport)?;
    if reply.msg_type == MsgType::Result {
        session.reject("peer rejected the configuration");
        return Ok(());
    }
    let (hash, peer) = parse_init(&reply)?;
    session.peer_id = peer;
    if hash != cfg.hash() {
        session.reject("peer echoed a different configuration hash");
        return Ok(());
    }

    session.advance(SessionState::Sampling);
    let window = local_window(cfg, signal, 0)?;
    if cfg.protocol_kind == ProtocolKind::SyncBaseline {
        let s = cfg.snippet_samples(signal.sample_rate_hz());
        let body = encode_pcm16(&window.samples()[..s]);
        session.send(transport, WireMessage::new(MsgType::SyncSnippet, body))?;
    }
    let bits = match quantize_local(cfg, &window, session) {
        Ok(bits) => bits,
        Err(e) => {
            // let the responder stop waiting for COMMIT
            let _ = session.send(transport, WireMessage::new(MsgType::Result, vec![REJECT]));
            return Err(e);
        }
    };

    let mut key = vec![0u8; cfg.rs.k()];
    rng.fill_bytes(&mut key);
    let commitment = commit(&key, &bits, cfg.rs)?;
    session.send(transport, WireMessage::new(MsgType::Commit, commitment.to_bytes()))?;
    session.advance(SessionState::Committed);

    let reply = session.recv(transport)?;
    if result_accepted(&reply)? {
        session.verify(key);
    } else {
        session.reject("peer could not open the commitment");
    }
    Ok(())
}

fn responder<T>(cfg: &PairingConfig, signal: &SampleBuffer<f64>, transport: &mut T, session: &mut PairingSession) -> Result<()>
where
    T: Transport + ?Sized,
{
    let init = session.recv(transport)?;
    let (hash, peer) = parse_init(&init)?;
    session.peer_id = peer;
    if hash != cfg.hash() {
        session.send(transport, WireMessage::new(MsgType::Result, vec![REJECT]))?;
        session.reject("configuration hash mismatch");
        return Ok(());
    }
    session.send(transport, WireMessage::new(MsgType::Init, init_body(cfg, signal)))?;

    session.advance(SessionState::Sampling);
    let start = if cfg.protocol_kind == ProtocolKind::SyncBaseline {
        let msg = session.recv(transport)?;
        if msg.msg_type != MsgType::SyncSnippet {
            return Err(Error::Protocol(format!("expected SYNC_SNIPPET, got {}", msg.msg_type.name())));
        }
        let snippet = decode_pcm16(&msg.body)?;
        let alignment = align_snippet(&snippet, signal.samples())?;
        session.alignment = Some(alignment);
        if alignment.correlation < MIN_SNIPPET_CORRELATION {
            session.send(transport, WireMessage::new(MsgType::Result, vec![REJECT]))?;
            session.reject(format!(
                "snippet correlation {:.3} below {MIN_SNIPPET_CORRELATION}",
                alignment.correlation
            ));
            return Ok(());
        }
        alignment.lag
    } else {
        0
    };

    let bits = match local_window(cfg, signal, start).and_then(|w| quantize_local(cfg, &w, session)) {
        Ok(bits) => bits,
        Err(e) => {
            let _ = session.send(transport, WireMessage::new(MsgType::Result, vec![REJECT]));
            return Err(e);
        }
    };

    let msg = session.recv(transport)?;
    if msg.msg_type == MsgType::Result {
        session.reject("initiator aborted");
        return Ok(());
    }
    if msg.msg_type != MsgType::Commit {
        return Err(Error::Protocol(format!("expected COMMIT, got {}", msg.msg_type.name())));
    }
    let commitment = FuzzyCommitment::from_bytes(&msg.body)?;
    if commitment.params() != cfg.rs {
        session.send(transport, WireMessage::new(MsgType::Result, vec![REJECT]))?;
        session.reject("commitment uses different code parameters");
        return Ok(());
    }
    match decommit(&commitment, &bits)? {
        Some(key) => {
            session.send(transport, WireMessage::new(MsgType::Result, vec![ACCEPT]))?;
            session.verify(key);
        }
        None => {
            session.send(transport, WireMessage::new(MsgType::Result, vec![REJECT]))?;
            session.reject("commitment did not open with local symbols");
        }
    }
    Ok(())
}

/// Samples as little-endian signed 16-bit PCM.
pub fn encode_pcm16(samples: &[f64]) -> Vec<u8> {
    samples
        .iter()
        .flat_map(|&x| {
            let v = (x * PCM16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
            v.to_le_bytes()
        })
        .collect()
}

pub fn decode_pcm16(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 2 != 0 {
        return Err(Error::Format("PCM16 payload has an odd byte count".into()));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / PCM16_SCALE)
        .collect())
}

/// Offset into `signal` where `snippet` has the highest Pearson correlation.
pub fn align_snippet(snippet: &[f64], signal: &[f64]) -> Result<Alignment> {
    let s = snippet.len();
    if s < 2 {
        return Err(Error::insufficient("snippet samples", 2, s));
    }
    if signal.len() < s {
        return Err(Error::insufficient("samples to align against", s, signal.len()));
    }
    let mean = snippet.iter().sum::<f64>() / s as f64;
    let centered: Vec<f64> = snippet.iter().map(|x| x - mean).collect();
    let snip_norm = centered.iter().map(|x| x * x).sum::<f64>().sqrt();

    // cross-correlation by FFT
    let n = (signal.len() + s).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    a.resize(n, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = centered.iter().map(|&x| Complex::new(x, 0.0)).collect();
    b.resize(n, Complex::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y.conj();
    }
    inv.process(&mut a);

    let mut prefix = vec![0.0; signal.len() + 1];
    let mut prefix_sq = vec![0.0; signal.len() + 1];
    for (i, &x) in signal.iter().enumerate() {
        prefix[i + 1] = prefix[i] + x;
        prefix_sq[i + 1] = prefix_sq[i] + x * x;
    }
    let mut best = Alignment {
        lag: 0,
        correlation: f64::NEG_INFINITY,
    };
    for lag in 0..=signal.len() - s {
        let sum = prefix[lag + s] - prefix[lag];
        let var = (prefix_sq[lag + s] - prefix_sq[lag]) - sum * sum / s as f64;
        let denom = snip_norm * var.max(0.0).sqrt();
        let r = if denom > 1e-12 { a[lag].re / n as f64 / denom } else { 0.0 };
        if r > best.correlation {
            best = Alignment { lag, correlation: r };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_ignores_role_only() {
        let a = PairingConfig::trevor(Role::Initiator);
        assert_eq!(a.hash(), a.with_role(Role::Responder).hash());
        let mut b = a.clone();
        b.k_eigenvectors = 5;
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.hash(), PairingConfig::sync_baseline(Role::Initiator).hash());
    }

    #[test]
    fn config_validation() {
        let mut c = PairingConfig::trevor(Role::Initiator);
        c.k_eigenvectors = 33;
        assert!(c.validate().is_err());
        c.k_eigenvectors = 4;
        c.sample_duration_s = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn state_machine_rules() {
        use SessionState::*;
        assert!(Idle.may_advance_to(Sampling));
        assert!(!Idle.may_advance_to(Quantized));
        assert!(Quantized.may_advance_to(Verified));
        assert!(Committed.may_advance_to(Rejected));
        assert!(!Verified.may_advance_to(Rejected));
        assert!(!Sampling.may_advance_to(Committed));
    }

    #[test]
    fn pcm16_round_trip() {
        let x = [0.0, 0.5, -1.0, 0.25];
        let bytes = encode_pcm16(&x);
        assert_eq!(bytes.len(), 8);
        assert_eq!(decode_pcm16(&bytes).unwrap(), x.to_vec());
        assert!(decode_pcm16(&[1]).is_err());
    }

    #[test]
    fn alignment_finds_exact_offset() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(4);
        let signal: Vec<f64> = (0..20_000).map(|_| rng.random_range(-0.3..0.3)).collect();
        let snippet = &signal[2400..2400 + 1200];
        let a = align_snippet(snippet, &signal).unwrap();
        assert_eq!(a.lag, 2400);
        assert!((a.correlation - 1.0).abs() < 1e-9);
    }
}
