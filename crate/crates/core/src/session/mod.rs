//! End-to-end key exchange between two simulated endpoints.
//!
//! Alice and Bob run as sequential processes interleaved by a deterministic
//! scheduler in one thread. Every classical message is framed, tagged from
//! the sender's authentication reserve, appended to the transcript and
//! verified by the receiver before it is acted upon.

mod channel;
mod keystore;
mod report;
mod wire;

use thiserror::Error;

use crate::bits::BitString;
use crate::distillation::cascade::{reconcile_with_layout, CascadeLayout};
use crate::distillation::{
    compute_secret_length, toeplitz_hash, AuthError, CascadeConfig, CascadeError, CascadeResponder,
    DistillationRecord, EveBound, ParityChannel, ParityQuery, ToeplitzError,
};
use crate::photonic::{analytic_rates, expected_qber, DistillationModel, LinkParams, ModelError};
use crate::protocol::{
    bob_decode, coherent_monitor_counts, expected_coherent_darks, generate_frame,
    simulate_alignment, simulate_transmission, AlignmentController, MonitorClick, Port,
    ProtocolError, SlotKind, VisibilityEstimate, VisibilityPolicy,
};
use crate::randomness::{BitSource, RandomnessError, Seed};

pub use channel::{replay_transcript, Side, Tamper};
pub use keystore::{KeyStore, StoredBlock};
pub use report::{SessionReport, REFERENCE_SECRET_BITS_PER_BLOCK};
pub use wire::{
    decode_message, encode_message, read_frame, split_frames, FrameError, Message, MessageType,
    PayloadReader, PayloadWriter, HEADER_LEN, TAG_LEN,
};

use channel::Wire;

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("authentication failure on frame {frame} ({kind})")]
    AuthFailure { frame: usize, kind: &'static str },
    #[error(transparent)]
    KeyDepletion(#[from] AuthError),
    #[error("out-of-order message: expected seq {expected}, got {got}")]
    Sequence { expected: u64, got: u64 },
    #[error("unexpected message: expected {expected}, got {got}")]
    UnexpectedMessage {
        expected: &'static str,
        got: &'static str,
    },
    #[error("peer aborted: {0}")]
    PeerAbort(String),
    #[error("no detections within {timeout_s} s ({sifted} of {needed} sifted bits)")]
    NoDetections {
        timeout_s: f64,
        sifted: usize,
        needed: usize,
    },
    #[error("monitor visibility unreliable and policy is abort")]
    VisibilityUnreliable,
    #[error("parity accounting differs: Bob counted {bob}, Alice answered {alice}")]
    LeakMismatch { bob: usize, alice: usize },
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Toeplitz(#[from] ToeplitzError),
    #[error(transparent)]
    Randomness(#[from] RandomnessError),
}

/// What to do with a block whose monitor statistics are not trustworthy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnreliablePolicy {
    /// Distil with this visibility and mark the block.
    ProceedWithFloor(f64),
    Abort,
}

#[derive(Debug, Clone, Copy)]
pub struct SessionConfig {
    pub block_size: usize,
    pub n_blocks: usize,
    pub epsilon_pa: f64,
    pub eve_bound: EveBound,
    /// Pre-shared authentication key.
    pub bootstrap_bits: usize,
    /// After each block the reserve is topped up to this many unused bits
    /// from fresh secret key.
    pub auth_reserve_bits: usize,
    pub cascade_passes: usize,
    pub visibility_policy: VisibilityPolicy,
    pub unreliable_visibility: UnreliablePolicy,
    /// Abort if a block cannot be filled within this much simulated time.
    pub detection_timeout_s: f64,
    /// Added to the simulated clock per classical message.
    pub classical_latency_s: f64,
    pub alignment: AlignmentController,
    /// Slots to simulate per sifting round, as a multiple of the expected
    /// need.
    pub chunk_oversize: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            block_size: 1 << 15,
            n_blocks: 3,
            epsilon_pa: 1e-9,
            eve_bound: EveBound::Coherence,
            bootstrap_bits: 1 << 15,
            auth_reserve_bits: 1 << 15,
            cascade_passes: 4,
            visibility_policy: VisibilityPolicy::default(),
            unreliable_visibility: UnreliablePolicy::ProceedWithFloor(0.92),
            detection_timeout_s: 3600.0,
            classical_latency_s: 0.0,
            alignment: AlignmentController::default(),
            chunk_oversize: 1.1,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: &str| Err(SessionError::Config(m.to_string()));
        if self.block_size < 16 {
            return bad("block_size must be at least 16");
        }
        if !(self.epsilon_pa > 0.0 && self.epsilon_pa < 1.0) {
            return bad("epsilon_pa must lie in (0, 1)");
        }
        if self.cascade_passes == 0 {
            return bad("cascade_passes must be >= 1");
        }
        if !(self.detection_timeout_s > 0.0 && self.detection_timeout_s.is_finite()) {
            return bad("detection_timeout_s must be positive");
        }
        if !(self.classical_latency_s >= 0.0 && self.classical_latency_s.is_finite()) {
            return bad("classical_latency_s must be >= 0");
        }
        if !(self.chunk_oversize >= 1.0 && self.chunk_oversize.is_finite()) {
            return bad("chunk_oversize must be >= 1");
        }
        if let UnreliablePolicy::ProceedWithFloor(v) = self.unreliable_visibility {
            if !(0.0..=1.0).contains(&v) {
                return bad("visibility floor must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Everything a session leaves behind.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub report: SessionReport,
    /// Concatenated frames exactly as they crossed the channel.
    pub transcript: Vec<u8>,
    pub alice: KeyStore,
    pub bob: KeyStore,
}

pub fn run_session(
    link: &LinkParams,
    config: &SessionConfig,
    seed: Seed,
) -> Result<SessionOutcome, SessionError> {
    run_session_with(link, config, seed, None)
}

/// As [`run_session`], with an optional in-flight frame modifier standing in
/// for an active adversary on the classical channel.
pub fn run_session_with(
    link: &LinkParams,
    config: &SessionConfig,
    seed: Seed,
    tamper: Option<Tamper>,
) -> Result<SessionOutcome, SessionError> {
    link.validate()?;
    config.validate()?;
    let root = BitSource::new(seed);
    let bootstrap = root.fork_str("bootstrap").next_bits(config.bootstrap_bits);
    let mut engine = Engine {
        link,
        config,
        alice: Alice {
            store: KeyStore::new(bootstrap.clone()),
            source: root.fork_str("alice"),
        },
        bob: Bob {
            store: KeyStore::new(bootstrap),
            source: root.fork_str("bob"),
        },
        wire: Wire::new(tamper),
        physics: root.fork_str("channel"),
        time_s: 0.0,
        records: Vec::new(),
    };

    let mut alignment_cfg = config.alignment;
    alignment_cfg.lock_time_s = 0.0;
    let trace = simulate_alignment(link, &alignment_cfg, &mut root.fork_str("alignment"))?;
    let alignment_time_s =
        trace.samples.last().map(|s| s.time_s).unwrap_or(0.0) + alignment_cfg.settle_time_s;
    engine.time_s = alignment_time_s;

    let abort_reason = match engine.run() {
        Ok(()) => None,
        Err(e) => {
            engine.send_abort(&e);
            Some(e.to_string())
        }
    };
    let report = SessionReport {
        seed,
        link_length_km: link.fibre.length_km,
        blocks: engine.records,
        alignment_time_s,
        duration_s: engine.time_s,
        messages: engine.wire.frames,
        abort_reason,
    };
    Ok(SessionOutcome {
        report,
        transcript: engine.wire.transcript,
        alice: engine.alice.store,
        bob: engine.bob.store,
    })
}

struct Alice {
    store: KeyStore,
    source: BitSource,
}

struct Bob {
    store: KeyStore,
    source: BitSource,
}

struct Engine<'a> {
    link: &'a LinkParams,
    config: &'a SessionConfig,
    alice: Alice,
    bob: Bob,
    wire: Wire,
    physics: BitSource,
    time_s: f64,
    records: Vec<DistillationRecord>,
}

/// Sifted material waiting to fill a block.
#[derive(Default)]
struct Buffers {
    alice: BitString,
    bob: BitString,
}

#[derive(Default)]
struct Accumulated {
    decoy_detections: u64,
    destructive: u64,
    constructive: u64,
    expected_dark: f64,
}

impl Engine<'_> {
    fn send(
        &mut self,
        from: Side,
        kind: MessageType,
        payload: Vec<u8>,
    ) -> Result<Message, SessionError> {
        self.time_s += self.config.classical_latency_s;
        let (tx, rx) = match from {
            Side::Alice => (&mut self.alice.store, &mut self.bob.store),
            Side::Bob => (&mut self.bob.store, &mut self.alice.store),
        };
        self.wire.transfer(from, tx, rx, kind, payload)
    }

    fn send_abort(&mut self, reason: &SessionError) {
        // best effort; a depleted or desynchronised pool cannot tag it
        if matches!(
            reason,
            SessionError::AuthFailure { .. } | SessionError::KeyDepletion(_)
        ) {
            return;
        }
        let payload = PayloadWriter::new()
            .bytes(reason.to_string().as_bytes())
            .finish();
        let _ = self.send(Side::Alice, MessageType::Abort, payload);
    }

    fn run(&mut self) -> Result<(), SessionError> {
        let n = self.config.block_size;
        let mut buffers = Buffers::default();
        let mut qber_estimate = expected_qber(self.link).unwrap_or(0.5);
        let rates = analytic_rates(self.link, &DistillationModel::default())?;
        let sift_per_slot = rates.sifted_rate_hz / self.link.source.bit_rate_hz();
        let mut chunk_id = 0u64;
        for block_id in 0..self.config.n_blocks as u64 {
            let auth_before = self.alice.store.auth.consumed();
            let mut acc = Accumulated::default();
            let block_start = self.time_s;
            while buffers.alice.len() < n {
                let elapsed = self.time_s - block_start;
                if elapsed >= self.config.detection_timeout_s {
                    return Err(SessionError::NoDetections {
                        timeout_s: self.config.detection_timeout_s,
                        sifted: buffers.alice.len(),
                        needed: n,
                    });
                }
                let remaining_slots = ((self.config.detection_timeout_s - elapsed)
                    * self.link.source.bit_rate_hz())
                .ceil()
                .max(1.0);
                let need = (n - buffers.alice.len()) as f64;
                let slots = if sift_per_slot > 0.0 {
                    (need * self.config.chunk_oversize / sift_per_slot).ceil()
                } else {
                    remaining_slots
                }
                .clamp(1.0, remaining_slots) as u64;
                self.sift_chunk(chunk_id, slots, &mut buffers, &mut acc)?;
                chunk_id += 1;
            }
            let alice_key = buffers.alice.slice(0, n);
            let bob_key = buffers.bob.slice(0, n);
            buffers.alice = buffers.alice.slice(n, buffers.alice.len());
            buffers.bob = buffers.bob.slice(n, buffers.bob.len());

            let record = self.distil(
                block_id,
                alice_key,
                bob_key,
                qber_estimate,
                &acc,
                auth_before,
            )?;
            if record.qber > 0.0 || record.n_sifted > 0 {
                qber_estimate = record.qber;
            }
            self.records.push(record);
        }
        Ok(())
    }

    /// One transmission frame plus its announce/report exchange.
    fn sift_chunk(
        &mut self,
        chunk_id: u64,
        slots: u64,
        buffers: &mut Buffers,
        acc: &mut Accumulated,
    ) -> Result<(), SessionError> {
        let link = self.link;
        let frame = generate_frame(&mut self.alice.source, slots, link.protocol.decoy_fraction)?;
        let record = simulate_transmission(&frame, link, &mut self.physics)?;
        self.time_s += slots as f64 / link.source.bit_rate_hz();

        // Bob: announce data-click slots and monitor click times
        let decoded = bob_decode(&record);
        let mut w = PayloadWriter::new()
            .u64(chunk_id)
            .u64(slots)
            .u32(decoded.len() as u32);
        for a in &decoded.announcements {
            w = w.u64(a.slot);
        }
        w = w.u32(record.monitor_clicks.len() as u32);
        for m in &record.monitor_clicks {
            w = w
                .u64(m.pulse)
                .u8(matches!(m.port, Port::Constructive) as u8);
        }
        let msg = self.send(Side::Bob, MessageType::SiftAnnounce, w.finish())?;

        // Alice: flag decoys, keep her bits, accumulate monitor statistics
        let mut r = PayloadReader::new(msg.kind, &msg.payload);
        let (_chunk, _slots) = (r.u64()?, r.u64()?);
        let count = r.u32()? as usize;
        let mut reader = frame.reader();
        let mut decoy_flags = BitString::with_capacity(count);
        for _ in 0..count {
            let slot = r.u64()?;
            if slot >= frame.n_slots() {
                return Err(ProtocolError::SlotOutOfRange {
                    slot,
                    n_slots: frame.n_slots(),
                }
                .into());
            }
            match reader.kind(slot) {
                SlotKind::Decoy => {
                    decoy_flags.push(true);
                    acc.decoy_detections += 1;
                }
                SlotKind::Data(bit) => {
                    decoy_flags.push(false);
                    buffers.alice.push(bit);
                }
            }
        }
        let n_monitor = r.u32()? as usize;
        let mut clicks = Vec::with_capacity(n_monitor);
        for _ in 0..n_monitor {
            let pulse = r.u64()?;
            let port = if r.u8()? == 1 {
                Port::Constructive
            } else {
                Port::Destructive
            };
            clicks.push(MonitorClick { pulse, port });
        }
        r.end()?;
        let (d, c) = coherent_monitor_counts(&clicks, &frame);
        acc.destructive += d;
        acc.constructive += c;
        acc.expected_dark += expected_coherent_darks(slots, frame.decoy_fraction(), link);

        let payload = PayloadWriter::new()
            .u64(chunk_id)
            .u32(count as u32)
            .bytes(&decoy_flags.to_bytes())
            .finish();
        let msg = self.send(Side::Alice, MessageType::DecoyReport, payload)?;

        // Bob: drop decoy positions
        let mut r = PayloadReader::new(msg.kind, &msg.payload);
        let _chunk = r.u64()?;
        let flagged = r.u32()? as usize;
        let bitmap = r.bytes()?;
        r.end()?;
        if flagged != decoded.len() || bitmap.len() != flagged.div_ceil(8) {
            return Err(FrameError::Payload {
                kind: msg.kind.name(),
                position: HEADER_LEN,
            }
            .into());
        }
        let flags = BitString::from_bytes(bitmap, flagged);
        for (i, bit) in decoded.bits.iter().enumerate() {
            if !flags.get(i) {
                buffers.bob.push(bit);
            }
        }
        Ok(())
    }

    fn distil(
        &mut self,
        block_id: u64,
        alice_key: BitString,
        bob_key: BitString,
        qber_estimate: f64,
        acc: &Accumulated,
        auth_before: usize,
    ) -> Result<DistillationRecord, SessionError> {
        let n = alice_key.len();
        let cfg = self.config;

        // Alice: visibility from coherent monitor bins
        let estimate = VisibilityEstimate::from_counts(
            acc.destructive,
            acc.constructive,
            acc.expected_dark,
            &cfg.visibility_policy,
        );
        let (measured, reliable) = match &estimate {
            Ok(e) => (e.visibility, e.reliable),
            Err(_) => (0.0, false),
        };
        let used = if reliable {
            measured
        } else {
            match cfg.unreliable_visibility {
                UnreliablePolicy::ProceedWithFloor(floor) => floor,
                UnreliablePolicy::Abort => return Err(SessionError::VisibilityUnreliable),
            }
        };
        let payload = PayloadWriter::new()
            .u64(block_id)
            .u64(acc.destructive)
            .u64(acc.constructive)
            .f64(measured)
            .u8(reliable as u8)
            .f64(used)
            .finish();
        let msg = self.send(Side::Alice, MessageType::VisibilityReport, payload)?;
        let mut r = PayloadReader::new(msg.kind, &msg.payload);
        let _ = (r.u64()?, r.u64()?, r.u64()?, r.f64()?, r.u8()?, r.f64()?);
        r.end()?;

        // Bob: shuffle seed and block sizes for Cascade
        let shuffle_seed = seed_from_bits(&self.bob.source.next_bits(256));
        let cascade_cfg = CascadeConfig {
            num_passes: cfg.cascade_passes,
            ..CascadeConfig::new(shuffle_seed)
        };
        let sizes = cascade_cfg.block_sizes(n, qber_estimate)?;
        let mut w = PayloadWriter::new()
            .u64(block_id)
            .bytes(&shuffle_seed.0)
            .f64(qber_estimate)
            .u8(sizes.len() as u8);
        for &s in &sizes {
            w = w.u32(s as u32);
        }
        let msg = self.send(Side::Bob, MessageType::ShuffleSeed, w.finish())?;

        // Alice: rebuild the layout from the announced parameters
        let mut r = PayloadReader::new(msg.kind, &msg.payload);
        let _ = r.u64()?;
        let seed_bytes: [u8; 32] = r.bytes()?.try_into().map_err(|_| FrameError::Payload {
            kind: msg.kind.name(),
            position: HEADER_LEN + 8,
        })?;
        let _ = r.f64()?;
        let passes = r.u8()? as usize;
        let alice_sizes = (0..passes)
            .map(|_| r.u32().map(|s| s as usize))
            .collect::<Result<Vec<_>, _>>()?;
        r.end()?;
        let alice_layout = CascadeLayout::new(n, alice_sizes, Seed(seed_bytes));
        let bob_layout = CascadeLayout::new(n, sizes, shuffle_seed);

        let mut channel = WireParity {
            engine: self,
            responder: CascadeResponder::new(alice_key.clone(), alice_layout),
            alice_leaked: 0,
            failure: None,
        };
        let outcome = reconcile_with_layout(&bob_key, &bob_layout, &mut channel);
        let alice_leaked = channel.alice_leaked;
        let failure = channel.failure.take();
        let outcome = match (outcome, failure) {
            (_, Some(e)) => return Err(e),
            (Err(e), None) => return Err(e.into()),
            (Ok(o), None) => o,
        };
        if outcome.leaked_bits != alice_leaked {
            return Err(SessionError::LeakMismatch {
                bob: outcome.leaked_bits,
                alice: alice_leaked,
            });
        }
        let qber = outcome.corrections as f64 / n as f64;

        // Alice: privacy amplification
        let m = compute_secret_length(n, alice_leaked, used, cfg.epsilon_pa, cfg.eve_bound);
        let pa_seed = if m > 0 {
            self.alice.source.next_bits(n + m - 1)
        } else {
            BitString::new()
        };
        let payload = PayloadWriter::new()
            .u64(block_id)
            .u32(m as u32)
            .bytes(&pa_seed.to_bytes())
            .finish();
        let msg = self.send(Side::Alice, MessageType::PaSeed, payload)?;
        let mut r = PayloadReader::new(msg.kind, &msg.payload);
        let _ = r.u64()?;
        let m_bob = r.u32()? as usize;
        let seed_bytes = r.bytes()?;
        r.end()?;
        let seed_len = if m_bob > 0 { n + m_bob - 1 } else { 0 };
        let bob_pa_seed = BitString::from_bytes(seed_bytes, seed_len);

        let mut confirmed = false;
        if m > 0 {
            let alice_final = toeplitz_hash(&pa_seed, &alice_key, m)?;
            let bob_final = toeplitz_hash(&bob_pa_seed, &outcome.corrected, m_bob)?;

            // Alice: confirmation hash under a fresh public seed
            let confirm_seed = self.alice.source.next_bits(m + 63);
            let hash = toeplitz_hash(&confirm_seed, &alice_final, 64)?;
            let payload = PayloadWriter::new()
                .u64(block_id)
                .bytes(&confirm_seed.to_bytes())
                .bytes(&hash.to_bytes())
                .finish();
            let msg = self.send(Side::Alice, MessageType::KeyConfirm, payload)?;
            let mut r = PayloadReader::new(msg.kind, &msg.payload);
            let _ = r.u64()?;
            let seed_bob = BitString::from_bytes(r.bytes()?, m_bob + 63);
            let hash_alice = r.bytes()?.to_vec();
            r.end()?;
            let hash_bob = toeplitz_hash(&seed_bob, &bob_final, 64)?;
            let ok = hash_bob.to_bytes() == hash_alice;
            let payload = PayloadWriter::new().u64(block_id).u8(ok as u8).finish();
            let msg = self.send(Side::Bob, MessageType::KeyConfirm, payload)?;
            let mut r = PayloadReader::new(msg.kind, &msg.payload);
            let _ = r.u64()?;
            confirmed = r.u8()? == 1;
            r.end()?;
            if confirmed && ok {
                self.alice.store.deposit(block_id, alice_final);
                self.bob.store.deposit(block_id, bob_final);
            }
        }
        self.alice.store.top_up_auth(cfg.auth_reserve_bits);
        self.bob.store.top_up_auth(cfg.auth_reserve_bits);

        Ok(DistillationRecord {
            block_id,
            n_sifted: n,
            qber,
            leaked_bits: alice_leaked,
            visibility: used,
            measured_visibility: measured,
            visibility_reliable: reliable,
            eve_bound_per_bit: cfg.eve_bound.eval(used),
            secret_len: if confirmed { m } else { 0 },
            epsilon_pa: cfg.epsilon_pa,
            sim_time_s: self.time_s,
            decoy_detections: acc.decoy_detections,
            auth_bits_used: self.alice.store.auth.consumed() - auth_before,
            confirmed,
        })
    }
}

fn seed_from_bits(bits: &BitString) -> Seed {
    let mut out = [0u8; 32];
    out.copy_from_slice(&bits.to_bytes()[..32]);
    Seed(out)
}

/// Cascade's parity channel carried over authenticated frames.
struct WireParity<'e, 'a> {
    engine: &'e mut Engine<'a>,
    responder: CascadeResponder,
    alice_leaked: usize,
    failure: Option<SessionError>,
}

impl WireParity<'_, '_> {
    fn round_trip(&mut self, queries: &[ParityQuery]) -> Result<Vec<bool>, SessionError> {
        let mut w = PayloadWriter::new().u32(queries.len() as u32);
        for q in queries {
            w = w.u16(q.pass).u32(q.block).u32(q.start).u32(q.end);
        }
        let msg = self
            .engine
            .send(Side::Bob, MessageType::ParityRequest, w.finish())?;

        let mut r = PayloadReader::new(msg.kind, &msg.payload);
        let count = r.u32()? as usize;
        let mut received = Vec::with_capacity(count);
        for _ in 0..count {
            received.push(ParityQuery {
                pass: r.u16()?,
                block: r.u32()?,
                start: r.u32()?,
                end: r.u32()?,
            });
        }
        r.end()?;
        let answers = self.responder.answer(&received)?;
        self.alice_leaked += answers.len();
        let bits = BitString::from_bools(&answers);
        let payload = PayloadWriter::new()
            .u32(answers.len() as u32)
            .bytes(&bits.to_bytes())
            .finish();
        let msg = self
            .engine
            .send(Side::Alice, MessageType::ParityResponse, payload)?;

        let mut r = PayloadReader::new(msg.kind, &msg.payload);
        let count = r.u32()? as usize;
        let bytes = r.bytes()?;
        r.end()?;
        if bytes.len() != count.div_ceil(8) {
            return Err(FrameError::Payload {
                kind: msg.kind.name(),
                position: HEADER_LEN + 4,
            }
            .into());
        }
        Ok(BitString::from_bytes(bytes, count).iter().collect())
    }
}

impl ParityChannel for WireParity<'_, '_> {
    fn exchange(&mut self, queries: &[ParityQuery]) -> Result<Vec<bool>, CascadeError> {
        self.round_trip(queries).map_err(|e| {
            let text = e.to_string();
            self.failure = Some(e);
            CascadeError::Transport(text)
        })
    }
}
