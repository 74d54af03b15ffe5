//! Two-party pairing over a byte transport.

pub mod session;
pub mod transport;
pub mod wire;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub use session::{
    align_snippet, run_pairing, run_sync_baseline, Alignment, Direction, PairingConfig, PairingSession,
    ProtocolKind, Role, SessionState, TranscriptEntry,
};
pub use transport::{Loopback, TcpTransport, Transport, DEFAULT_TIMEOUT};
pub use wire::{MsgType, WireMessage};

use crate::ingest::SampleBuffer;

/// Run both sides of a pairing in-process over a loopback pipe. The
/// initiator's key comes from a ChaCha20 stream seeded with `key_seed`.
/// Returns `(initiator, responder)` sessions.
pub fn pair_loopback(
    initiator_cfg: &PairingConfig,
    initiator_signal: &SampleBuffer<f64>,
    responder_cfg: &PairingConfig,
    responder_signal: &SampleBuffer<f64>,
    key_seed: u64,
) -> (PairingSession, PairingSession) {
    let (mut a, mut b) = Loopback::pair(initiator_cfg.timeout());
    let runner = |cfg: &PairingConfig, sig: &SampleBuffer<f64>, t: &mut Loopback, seed: u64| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        match cfg.protocol_kind {
            ProtocolKind::Trevor => run_pairing(cfg, sig, t, &mut rng),
            ProtocolKind::SyncBaseline => run_sync_baseline(cfg, sig, t, &mut rng),
        }
    };
    std::thread::scope(|scope| {
        let responder = scope.spawn(|| runner(responder_cfg, responder_signal, &mut b, key_seed ^ 0x5EED));
        let initiator = runner(initiator_cfg, initiator_signal, &mut a, key_seed);
        // closing our end unblocks a responder still waiting on us
        drop(a);
        (initiator, responder.join().expect("responder thread panicked"))
    })
}
