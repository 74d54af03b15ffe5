mod plot;

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{debug, info};

use trevor_core::experiments::{self, ReplayKind, ShiftSweepConfig, DEVICE_A, DEVICE_B};
use trevor_core::ingest::{synthesize_environment, EnvironmentSpec, SourceKind};
use trevor_core::protocol::{
    pair_loopback, run_pairing, run_sync_baseline, PairingConfig, PairingSession, ProtocolKind, Role, TcpTransport,
    Transport,
};
use trevor_core::quantize::{bit_error_rate, Origin};
use trevor_core::randomness::run_suite;
use trevor_core::syncbleed::{run_attack, AttackConfig};
use trevor_core::Error;

use plot::{cdf, Chart, Series};

#[derive(Parser)]
#[command(name = "trevor", version, about = "Ambient-audio pairing experiments")]
struct Cli {
    /// Environment spec (JSON). Without it a built-in synthetic room is used.
    #[arg(long, global = true)]
    env: Option<PathBuf>,
    /// Source for the built-in room.
    #[arg(long, global = true, value_enum, default_value_t = Source::HarmonicMixture)]
    source: Source,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "trevor-out")]
    out: PathBuf,
    /// Verbose logging, and print BERs that a deployed device would not know.
    #[arg(long, global = true)]
    debug: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    HarmonicMixture,
    ArProcess,
    FilteredNoise,
}

impl From<Source> for SourceKind {
    fn from(s: Source) -> Self {
        match s {
            Source::HarmonicMixture => SourceKind::HarmonicMixture,
            Source::ArProcess => SourceKind::ArProcess,
            Source::FilteredNoise => SourceKind::FilteredNoise,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Trevor,
    Sync,
}

impl Protocol {
    fn config(self) -> PairingConfig {
        match self {
            Protocol::Trevor => PairingConfig::trevor(Role::Initiator),
            Protocol::Sync => PairingConfig::sync_baseline(Role::Initiator),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Quantizer {
    Trevor,
    Means,
    Ss,
    All,
}

impl Quantizer {
    fn origins(self) -> Vec<Origin> {
        match self {
            Quantizer::Trevor => vec![Origin::Trevor],
            Quantizer::Means => vec![Origin::Means],
            Quantizer::Ss => vec![Origin::SchurmannSigg],
            Quantizer::All => vec![Origin::Trevor, Origin::Means, Origin::SchurmannSigg],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TcpRole {
    Both,
    Initiator,
    Responder,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one pairing between device a and a peer.
    Pair(PairArgs),
    /// BER against relative shift for each quantizer.
    ShiftSweep(SweepArgs),
    /// Passive transfer-function attack on snippet-synchronized pairing.
    Attack(AttackArgs),
    /// Pair against audio recorded in an earlier epoch.
    Replay(ReplayArgs),
    /// Statistical tests on keys from independent environments.
    Randomness(RandomnessArgs),
    /// Mean cosine distance per signal representation.
    Cosine(CosineArgs),
}

#[derive(Args)]
struct PairArgs {
    /// `loopback` or `tcp://host:port`.
    #[arg(long, default_value = "loopback")]
    transport: String,
    #[arg(long, value_enum, default_value_t = TcpRole::Both)]
    role: TcpRole,
    #[arg(long, default_value = DEVICE_B)]
    peer: String,
    /// Samples the peer's window starts after a's.
    #[arg(long, default_value_t = 0)]
    shift: usize,
    #[arg(long, value_enum, default_value_t = Protocol::Trevor)]
    protocol: Protocol,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 96_000)]
    shift_max: usize,
    #[arg(long, default_value_t = 2400)]
    shift_step: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = Quantizer::All)]
    quantizer: Quantizer,
    /// Devices compared against a.
    #[arg(long, value_delimiter = ',', default_value = DEVICE_B)]
    peers: Vec<String>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, default_value_t = 256)]
    training_rounds: usize,
    /// Attacked pairings.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = Protocol::Sync)]
    protocol: Protocol,
    /// Adversary SNR behind the built-in wall.
    #[arg(long, default_value_t = 10.0)]
    snr: f64,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = Protocol::Trevor)]
    protocol: Protocol,
}

#[derive(Args)]
struct RandomnessArgs {
    /// Number of keys.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 256)]
    bits: usize,
}

#[derive(Args)]
struct CosineArgs {
    #[arg(long, default_value_t = 4800)]
    shift_max: usize,
    #[arg(long, default_value_t = 480)]
    shift_step: usize,
    /// Seconds compared per shift.
    #[arg(long, default_value_t = 1.0)]
    window: f64,
}

/// A negative experimental outcome (exit 1), as opposed to an error (exit 2).
struct Negative(String);

type Outcome = std::result::Result<Option<Negative>, Error>;

fn environment(cli: &Cli, default: impl FnOnce(SourceKind) -> EnvironmentSpec) -> Result<EnvironmentSpec, Error> {
    match &cli.env {
        Some(path) => EnvironmentSpec::load(path),
        None => Ok(default(cli.source.into())),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.debug { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TREVOR_LOG", level)).init();

    let outcome = match &cli.cmd {
        Cmd::Pair(a) => cmd_pair(&cli, a),
        Cmd::ShiftSweep(a) => cmd_shift_sweep(&cli, a),
        Cmd::Attack(a) => cmd_attack(&cli, a),
        Cmd::Replay(a) => cmd_replay(&cli, a),
        Cmd::Randomness(a) => cmd_randomness(&cli, a),
        Cmd::Cosine(a) => cmd_cosine(&cli, a),
    };
    match outcome {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Negative(msg))) => {
            println!("{msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run_side<T: Transport>(cfg: &PairingConfig, sig: &trevor_core::Samples, t: &mut T, seed: u64) -> PairingSession {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    match cfg.protocol_kind {
        ProtocolKind::Trevor => run_pairing(cfg, sig, t, &mut rng),
        ProtocolKind::SyncBaseline => run_sync_baseline(cfg, sig, t, &mut rng),
    }
}

fn report(session: &PairingSession, other: Option<&PairingSession>, debug_mode: bool) -> Option<Negative> {
    if debug_mode {
        if let Some(o) = other {
            if let (Some(a), Some(b)) = (session.local_bits(), o.local_bits()) {
                if let Ok(ber) = bit_error_rate(a, b) {
                    println!("ber {ber:.4}");
                }
            }
        }
    }
    if session.is_verified() && other.is_none_or(|o| o.is_verified()) {
        println!("verified");
        None
    } else {
        let reason = session
            .reject_reason()
            .or_else(|| other.and_then(|o| o.reject_reason()))
            .unwrap_or("unknown");
        Some(Negative(format!("rejected: {reason}")))
    }
}

fn cmd_pair(cli: &Cli, args: &PairArgs) -> Outcome {
    let env = environment(cli, |k| experiments::standard_environment(k, cli.seed, 3.5))?;
    let init_cfg = args.protocol.config();
    let resp_cfg = init_cfg.with_role(Role::Responder);
    let w = init_cfg.window_samples(env.sample_rate_hz);
    let bufs = synthesize_environment(&env)?;
    let get = |id: &str| {
        bufs.get(id)
            .ok_or_else(|| Error::Config(format!("environment has no device {id:?}")))
    };
    let a = get(DEVICE_A)?.window(0, w)?;
    let peer = get(&args.peer)?;
    let b = match init_cfg.protocol_kind {
        ProtocolKind::Trevor => peer.window(args.shift, w)?,
        ProtocolKind::SyncBaseline => peer.clone(),
    };

    if args.transport == "loopback" {
        let (i, r) = pair_loopback(&init_cfg, &a, &resp_cfg, &b, cli.seed);
        return Ok(report(&i, Some(&r), cli.debug));
    }
    let Some(addr) = args.transport.strip_prefix("tcp://") else {
        return Err(Error::Config(format!("unknown transport {:?}", args.transport)));
    };
    let timeout = init_cfg.timeout();
    match args.role {
        TcpRole::Initiator => {
            let mut t = TcpTransport::connect(addr, timeout)?;
            Ok(report(&run_side(&init_cfg, &a, &mut t, cli.seed), None, cli.debug))
        }
        TcpRole::Responder => {
            let listener = TcpListener::bind(addr)?;
            let mut t = TcpTransport::accept(&listener, timeout)?;
            Ok(report(&run_side(&resp_cfg, &b, &mut t, cli.seed ^ 0x5EED), None, cli.debug))
        }
        TcpRole::Both => {
            let listener = TcpListener::bind(addr)?;
            let local = listener.local_addr()?;
            debug!("listening on {local}");
            std::thread::scope(|s| {
                let responder = s.spawn(|| -> Result<PairingSession, Error> {
                    let mut t = TcpTransport::accept(&listener, timeout)?;
                    Ok(run_side(&resp_cfg, &b, &mut t, cli.seed ^ 0x5EED))
                });
                let mut t = TcpTransport::connect(local, timeout)?;
                let i = run_side(&init_cfg, &a, &mut t, cli.seed);
                drop(t);
                let r = responder.join().expect("responder thread panicked")?;
                Ok(report(&i, Some(&r), cli.debug))
            })
        }
    }
}

fn cmd_shift_sweep(cli: &Cli, args: &SweepArgs) -> Outcome {
    let env = environment(cli, |k| experiments::standard_environment(k, cli.seed, 3.0))?;
    let cfg = ShiftSweepConfig {
        shift_max: args.shift_max,
        shift_step: args.shift_step,
        trials: args.trials,
        quantizers: args.quantizer.origins(),
        peers: args.peers.clone(),
        ..ShiftSweepConfig::default()
    };
    let rows = experiments::shift_sweep(&env, &cfg, cli.seed)?;
    write(&cli.out, "shift_sweep.csv", &experiments::shift_rows_csv(&rows))?;
    let mut series = Vec::new();
    for &q in &cfg.quantizers {
        for peer in &cfg.peers {
            let pair = format!("{DEVICE_A}:{peer}");
            let points = rows
                .iter()
                .filter(|r| r.quantizer == q && r.role_pair == pair)
                .map(|r| (r.shift_samples as f64 * 1000.0 / env.sample_rate_hz as f64, r.ber))
                .collect();
            series.push(Series {
                label: format!("{} {pair}", q.name()),
                points,
            });
        }
    }
    let chart = Chart {
        title: "Bit error rate vs shift".into(),
        x_label: "shift (ms)".into(),
        y_label: "BER".into(),
        series,
        steps: false,
    };
    write(&cli.out, "shift_sweep.svg", &chart.to_svg())?;
    for r in rows.iter().filter(|r| r.shift_samples == 0) {
        println!("{} {} ber@0 {:.4}", r.quantizer.name(), r.role_pair, r.ber);
    }
    Ok(None)
}

fn cmd_attack(cli: &Cli, args: &AttackArgs) -> Outcome {
    let env = environment(cli, |k| experiments::wall_environment(k, cli.seed, 3.2, args.snr))?;
    let mut cfg = AttackConfig::new(args.protocol.config());
    cfg.training_rounds = args.training_rounds;
    cfg.attack_rounds = args.trials;
    cfg.seed = cli.seed;
    let report = match run_attack(&env, &cfg) {
        Ok(r) => r,
        Err(Error::InsufficientData { what, .. }) if what.contains("snippet") => {
            return Ok(Some(Negative(
                "attack impossible: the transcripts carry no sync snippets to train on".into(),
            )));
        }
        Err(e) => return Err(e),
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    write(&cli.out, "attack.json", &json)?;
    let mut csv = String::from("trial,legit_ber,ber_without_attack,ber_with_attack,reconciled\n");
    for t in &report.per_trial {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            t.trial, t.legit_ber, t.ber_without_attack, t.ber_with_attack, t.reconciled as u8
        ));
    }
    write(&cli.out, "attack.csv", &csv)?;
    let col = |f: fn(&trevor_core::syncbleed::AttackTrial) -> f64| report.per_trial.iter().map(f).collect::<Vec<_>>();
    let chart = Chart {
        title: "CDF of adversary bit error rate".into(),
        x_label: "BER".into(),
        y_label: "fraction of keys".into(),
        series: vec![
            Series {
                label: "without attack".into(),
                points: cdf(&col(|t| t.ber_without_attack)),
            },
            Series {
                label: "with attack".into(),
                points: cdf(&col(|t| t.ber_with_attack)),
            },
        ],
        steps: true,
    };
    write(&cli.out, "attack_cdf.svg", &chart.to_svg())?;
    println!(
        "ber without attack {:.4}, with attack {:.4}, reconciled {}/{}",
        report.ber_without_attack, report.ber_with_attack, report.reconciliation_successes, report.trials
    );
    Ok(None)
}

fn cmd_replay(cli: &Cli, args: &ReplayArgs) -> Outcome {
    let env = environment(cli, |k| experiments::standard_environment(k, cli.seed, 3.0))?;
    let rows = experiments::replay_runs(&env, &args.protocol.config(), args.trials, cli.seed)?;
    write(&cli.out, "replay.csv", &experiments::replay_csv(&rows))?;
    let mut replay_successes = 0;
    for kind in [ReplayKind::Fresh, ReplayKind::Replay, ReplayKind::Control] {
        let sel: Vec<_> = rows.iter().filter(|r| r.kind == kind).collect();
        let ok = sel.iter().filter(|r| r.verified).count();
        let bers: Vec<f64> = sel.iter().filter_map(|r| r.ber).collect();
        let mean = bers.iter().sum::<f64>() / bers.len().max(1) as f64;
        println!("{:<8} verified {ok}/{} mean ber {mean:.4}", kind.name(), sel.len());
        if kind == ReplayKind::Replay {
            replay_successes = ok;
        }
    }
    if replay_successes > 0 {
        return Ok(Some(Negative(format!("{replay_successes} replayed pairings verified"))));
    }
    Ok(None)
}

fn cmd_randomness(cli: &Cli, args: &RandomnessArgs) -> Outcome {
    let env = environment(cli, |k| experiments::standard_environment(k, cli.seed, 3.0))?;
    let keys = experiments::randomness_keys(&env, &PairingConfig::trevor(Role::Initiator), args.trials, args.bits, cli.seed)?;
    let report = run_suite(&keys)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    write(&cli.out, "randomness.json", &json)?;
    let mut csv = String::from("key,test,statistic,p_value,pass\n");
    for (i, r) in report.per_key.iter().enumerate() {
        for (name, o) in &r.per_test {
            csv.push_str(&format!("{i},{name},{:.6},{:.6},{}\n", o.statistic, o.p_value, o.pass as u8));
        }
    }
    write(&cli.out, "randomness.csv", &csv)?;
    let table = report.to_string();
    write(&cli.out, "randomness.txt", &format!("{table}\n"))?;
    println!("{table}");
    if !report.passed {
        return Ok(Some(Negative("randomness suite failed".into())));
    }
    Ok(None)
}

fn cmd_cosine(cli: &Cli, args: &CosineArgs) -> Outcome {
    let env = environment(cli, |k| experiments::standard_environment(k, cli.seed, 1.2))?;
    let rows = experiments::cosine_rows(&env, args.window, args.shift_max, args.shift_step, cli.seed)?;
    write(&cli.out, "cosine.csv", &experiments::cosine_csv(&rows))?;
    let devices: Vec<&str> = {
        let mut d: Vec<&str> = rows.iter().map(|r| r.device.as_str()).collect();
        d.dedup();
        d
    };
    // one series per representation, devices along x
    let series = trevor_core::quantize::Representation::ALL
        .iter()
        .map(|&repr| Series {
            label: repr.name().into(),
            points: devices
                .iter()
                .enumerate()
                .filter_map(|(i, d)| {
                    rows.iter()
                        .find(|r| r.device == *d && r.representation == repr)
                        .map(|r| (i as f64, r.mean_distance))
                })
                .collect(),
        })
        .collect();
    let chart = Chart {
        title: format!("Mean cosine distance to {DEVICE_A} (x: {})", devices.join(", ")),
        x_label: "device".into(),
        y_label: "mean cosine distance".into(),
        series,
        steps: false,
    };
    write(&cli.out, "cosine.svg", &chart.to_svg())?;
    for r in &rows {
        println!("{:<8} {:<10} {:.4}", r.device, r.representation.name(), r.mean_distance);
    }
    Ok(None)
}
