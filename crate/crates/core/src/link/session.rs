//! Alice and Bob session loops.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::channel::{FramedChannel, MemoryDuplex, RecordingTransport, Transcript};
use super::quantum;
use super::wire::{AbortReason, Message, Role, SessionId, WireError};
use crate::detection::{apply_intrinsic_errors, DcrTable, DetectorParams};
use crate::optics::{KeyRateReport, OpticalBudget, RowStatus};
use crate::privacy::{hash_fft, output_length, BlockEntry, KeyManifest, ToeplitzDescriptor};
use crate::protocol::{
    alice_sift, bob_detected_pairs, bob_sift, disclose_positions, encode_sequence, split_disclosed, BitBlock,
    BlockMeta, Bits, Stage,
};
use crate::reconciliation::{
    decode, estimate_qber, ldpc_generate, syndrome, verify_blocks, CodeRate, VerificationTag, SUPPORTED_LENGTHS,
};
use crate::rng;

/// How the LDPC code rate is chosen once the QBER is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RatePolicy {
    /// Highest rate that corrects an upper confidence bound of the QBER.
    #[default]
    Auto,
    Fixed(CodeRate),
}

impl fmt::Display for RatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RatePolicy::Auto => f.write_str("auto"),
            RatePolicy::Fixed(r) => write!(f, "{r}"),
        }
    }
}

impl FromStr for RatePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "auto" => Ok(RatePolicy::Auto),
            other => other.parse().map(RatePolicy::Fixed),
        }
    }
}

impl TryFrom<String> for RatePolicy {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<RatePolicy> for String {
    fn from(p: RatePolicy) -> Self {
        p.to_string()
    }
}

/// Parameters both parties must agree on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub budget: OpticalBudget,
    pub detector: DetectorParams,
    /// Pulse pairs in the session's single pulse train.
    pub pairs: usize,
    pub decoy_prob: f64,
    pub dr: f64,
    pub cr: f64,
    pub qber_ceiling: f64,
    pub block_len: usize,
    pub code_rate: RatePolicy,
    pub max_iter: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            budget: OpticalBudget::default(),
            detector: DetectorParams::default(),
            pairs: 50_000_000,
            decoy_prob: 0.5,
            dr: 0.03125,
            cr: 0.5,
            qber_ceiling: 0.06,
            block_len: 1024,
            code_rate: RatePolicy::Auto,
            max_iter: crate::reconciliation::DEFAULT_MAX_ITER,
        }
    }
}

impl SessionConfig {
    /// Lossless fiber, unit-efficiency detector without dead time, dark
    /// counts or jitter; `bit_error` is injected into Bob's sifted bits.
    pub fn noiseless(pairs: usize, bit_error: f64) -> Self {
        Self {
            budget: OpticalBudget {
                distance_km: 0.0,
                ..OpticalBudget::default()
            },
            detector: DetectorParams {
                intrinsic_error: bit_error,
                dcr_table: DcrTable::constant(0.0),
                ..DetectorParams::ideal(1.0)
            },
            pairs,
            block_len: 4096,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |msg: String| Err(SessionError::Config(msg));
        self.budget.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        self.detector.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        if self.pairs == 0 {
            return bad("pairs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.decoy_prob) {
            return bad(format!("decoy_prob {} outside [0, 1)", self.decoy_prob));
        }
        if !(self.dr > 0.0 && self.dr < 1.0) {
            return bad(format!("dr {} outside (0, 1)", self.dr));
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return bad(format!("cr {} outside [0, 1]", self.cr));
        }
        if !(self.qber_ceiling > 0.0 && self.qber_ceiling < 0.5) {
            return bad(format!("qber_ceiling {} outside (0, 0.5)", self.qber_ceiling));
        }
        if !SUPPORTED_LENGTHS.contains(&self.block_len) {
            return bad(format!("block_len {} not in {SUPPORTED_LENGTHS:?}", self.block_len));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        Ok(())
    }

    /// Canonical text exchanged in Hello.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("session config serializes")
    }

    pub fn duration_s(&self) -> f64 {
        self.pairs as f64 * 2.0 / self.budget.pulse_rate_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Init,
    Quantum,
    Sift,
    Disclose,
    Reconcile,
    Amplify,
    Done,
    Aborted,
}

/// Phase tracking plus the key material each phase produced.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub role: Role,
    phase: Phase,
    pub blocks: Vec<BitBlock>,
}

impl SessionState {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            phase: Phase::Init,
            blocks: Vec::new(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Moves forward; `Aborted` is reachable from any unfinished phase.
    pub fn enter(&mut self, next: Phase) -> Result<(), SessionError> {
        let allowed = match next {
            Phase::Aborted => self.phase != Phase::Done,
            _ => next > self.phase && self.phase != Phase::Aborted,
        };
        if !allowed {
            return Err(SessionError::PhaseOrder {
                from: self.phase,
                to: next,
            });
        }
        self.phase = next;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("session aborted ({reason}, {}): {detail}", if *by_peer { "by peer" } else { "locally" })]
    Aborted {
        reason: AbortReason,
        detail: String,
        by_peer: bool,
    },
    #[error("phase cannot move from {from:?} to {to:?}")]
    PhaseOrder { from: Phase, to: Phase },
}

impl SessionError {
    pub fn abort_reason(&self) -> Option<AbortReason> {
        match self {
            SessionError::Aborted { reason, .. } => Some(*reason),
            _ => None,
        }
    }
}

/// Counters of a finished session.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SessionStats {
    pub pairs: usize,
    pub detected_pairs: usize,
    pub sifted_bits: usize,
    pub disclosed_bits: usize,
    pub qber: f64,
    pub code_rate: Option<CodeRate>,
    pub blocks_total: usize,
    pub blocks_corrected: usize,
    pub final_bits: usize,
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub role: Role,
    pub final_key: Bits,
    /// Per-block layout of `final_key`, for the sidecar file.
    pub manifest: KeyManifest,
    pub report: KeyRateReport,
    pub stats: SessionStats,
    pub state: SessionState,
}

fn session_id(seed: u64) -> SessionId {
    let mut id = [0u8; 16];
    id[..8].copy_from_slice(&rng::substream(seed, "session", 0).to_le_bytes());
    id[8..].copy_from_slice(&rng::substream(seed, "session", 1).to_le_bytes());
    id
}

fn final_hash(key: &Bits, toeplitz_seed: u64) -> u64 {
    VerificationTag::compute(key, toeplitz_seed, u64::MAX).value
}

/// Upper three-sigma bound of a QBER estimated from `n` bits.
fn qber_upper(qber: f64, n: usize) -> f64 {
    let n = n as f64;
    qber + 3.0 * (qber.max(0.5 / n) * (1.0 - qber) / n).sqrt()
}

fn amplify(blocks: &[(u64, Bits)], cr: f64, toeplitz_seed: u64) -> Result<(Bits, KeyManifest), String> {
    let mut key = Bits::new();
    let mut manifest = KeyManifest {
        seed: toeplitz_seed,
        cr,
        blocks: Vec::with_capacity(blocks.len()),
    };
    for (id, block) in blocks {
        let n_out = output_length(block.len(), cr);
        let desc = ToeplitzDescriptor::new(rng::substream(toeplitz_seed, "block", *id), block.len(), n_out)
            .map_err(|e| e.to_string())?;
        key.extend_from_bitslice(&hash_fft(&desc, block).map_err(|e| e.to_string())?);
        manifest.blocks.push(BlockEntry {
            block_id: *id,
            n_in: block.len(),
            n_out,
        });
    }
    Ok((key, manifest))
}

struct Party<C> {
    chan: FramedChannel<C>,
    state: SessionState,
}

impl<C: Read + Write> Party<C> {
    fn new(role: Role, inner: C) -> Self {
        Self {
            chan: FramedChannel::new(inner),
            state: SessionState::new(role),
        }
    }

    /// Aborts locally and tells the peer when the channel still works.
    fn fail(&mut self, reason: AbortReason, detail: impl Into<String>) -> SessionError {
        let detail = detail.into();
        if reason != AbortReason::Transport {
            let _ = self.chan.send(&Message::Abort {
                reason,
                detail: detail.clone(),
            });
        }
        let _ = self.state.enter(Phase::Aborted);
        SessionError::Aborted {
            reason,
            detail,
            by_peer: false,
        }
    }

    fn wire_failure(&mut self, e: WireError) -> SessionError {
        match e {
            WireError::Io(_) | WireError::Truncated { .. } => self.fail(AbortReason::Transport, e.to_string()),
            other => self.fail(AbortReason::Protocol, other.to_string()),
        }
    }

    fn send(&mut self, msg: &Message) -> Result<(), SessionError> {
        self.chan.send(msg).map_err(|e| self.wire_failure(e))
    }

    fn recv(&mut self) -> Result<Message, SessionError> {
        match self.chan.recv() {
            Ok(Message::Abort { reason, detail }) => {
                let _ = self.state.enter(Phase::Aborted);
                Err(SessionError::Aborted {
                    reason,
                    detail,
                    by_peer: true,
                })
            }
            Ok(m) => Ok(m),
            Err(e) => Err(self.wire_failure(e)),
        }
    }

    fn unexpected(&mut self, wanted: &str, got: &Message) -> SessionError {
        self.fail(AbortReason::Protocol, format!("expected {wanted}, got {:?}", got.kind()))
    }

    fn enter(&mut self, phase: Phase) -> Result<(), SessionError> {
        self.state.enter(phase)
    }

    fn exchange_final_hash(&mut self, key: &Bits, toeplitz_seed: u64, alice_first: bool) -> Result<(), SessionError> {
        let own = Message::FinalAck {
            key_bits: key.len() as u64,
            key_hash: final_hash(key, toeplitz_seed),
        };
        if alice_first {
            self.send(&own)?;
        }
        let peer = self.recv()?;
        if !matches!(peer, Message::FinalAck { .. }) {
            return Err(self.unexpected("FinalAck", &peer));
        }
        if peer != own {
            return Err(self.fail(AbortReason::Verification, "final keys differ"));
        }
        if !alice_first {
            self.send(&own)?;
        }
        Ok(())
    }
}

/// Alice's side: prepares and sends the pulse train, sifts against Bob's
/// detections, estimates the QBER, drives reconciliation and privacy
/// amplification.
pub fn run_alice<C: Read + Write, Q: Write>(
    config: &SessionConfig,
    classical: C,
    quantum: Q,
    seed: u64,
) -> Result<SessionOutcome, SessionError> {
    config.validate()?;
    let mut p = Party::new(Role::Alice, classical);
    p.chan.set_session_id(session_id(seed));
    p.send(&Message::Hello {
        role: Role::Alice,
        auth_tag: 0,
        params: config.canonical(),
    })?;
    match p.recv()? {
        Message::Hello { role: Role::Bob, params, .. } if params == config.canonical() => {}
        Message::Hello { role: Role::Bob, .. } => {
            return Err(p.fail(AbortReason::Config, "session parameters differ"))
        }
        other => return Err(p.unexpected("Hello from Bob", &other)),
    }

    p.enter(Phase::Quantum)?;
    let frame = encode_sequence(
        rng::substream(seed, "frame", 0),
        config.pairs,
        config.decoy_prob,
        config.budget.mu,
    )
    .map_err(|e| p.fail(AbortReason::Config, e.to_string()))?;
    quantum::transmit(&frame.pulse_train(), quantum).map_err(|e| p.fail(AbortReason::Transport, e.to_string()))?;

    p.enter(Phase::Sift)?;
    let announced = match p.recv()? {
        Message::DetectionIndices { pairs } => pairs,
        other => return Err(p.unexpected("DetectionIndices", &other)),
    };
    if announced.windows(2).any(|w| w[0] >= w[1]) {
        return Err(p.fail(AbortReason::Protocol, "detection indices not strictly increasing"));
    }
    let (kept, alice_bits) =
        alice_sift(&frame, &announced).map_err(|e| p.fail(AbortReason::Protocol, e.to_string()))?;
    p.send(&Message::DetectionIndices { pairs: kept })?;
    let meta = BlockMeta {
        seed,
        block_id: 0,
        params: format!("role=alice,pairs={}", config.pairs),
    };
    let sifted = BitBlock::new(alice_bits, Stage::Sifted, meta);
    let sifted_bits = sifted.len();
    p.state.blocks.push(sifted.clone());

    p.enter(Phase::Disclose)?;
    let disclose_seed = rng::substream(seed, "disclose", 0);
    p.send(&Message::DiscloseRequest {
        seed: disclose_seed,
        dr: config.dr,
    })?;
    let bob_disclosed = match p.recv()? {
        Message::DiscloseBits { bits } => bits,
        other => return Err(p.unexpected("DiscloseBits", &other)),
    };
    let positions = disclose_positions(sifted.len(), config.dr, disclose_seed)
        .map_err(|e| p.fail(AbortReason::Config, e.to_string()))?;
    let (own_disclosed, remainder) = split_disclosed(sifted.bits(), &positions);
    let own_disclosed: Bits = own_disclosed.into_iter().map(|(_, b)| b).collect();
    if own_disclosed.is_empty() {
        return Err(p.fail(AbortReason::Protocol, "no sifted bits to disclose"));
    }
    let qber = estimate_qber(&own_disclosed, &bob_disclosed).map_err(|e| p.fail(AbortReason::Protocol, e.to_string()))?;
    if qber > config.qber_ceiling {
        return Err(p.fail(
            AbortReason::QberExceeded,
            format!("qber {qber:.4} above ceiling {}", config.qber_ceiling),
        ));
    }
    let post = sifted
        .advance(Stage::PostDisclose, remainder)
        .map_err(|e| p.fail(AbortReason::Protocol, e.to_string()))?;
    p.state.blocks.push(post.clone());

    p.enter(Phase::Reconcile)?;
    let upper = qber_upper(qber, own_disclosed.len());
    let rate = match config.code_rate {
        RatePolicy::Auto => CodeRate::for_qber(upper),
        RatePolicy::Fixed(r) => r,
    };
    let crossover = upper.clamp(0.01, 0.2);
    let n = config.block_len;
    let blocks = post.len() / n;
    let ldpc_seed = rng::substream(seed, "ldpc", 0);
    let tag_seed = rng::substream(seed, "tag", 0);
    p.send(&Message::QberReport {
        qber,
        code_rate: rate,
        block_len: n as u64,
        blocks: blocks as u64,
        crossover,
        ldpc_seed,
        tag_seed,
    })?;
    let matrix = ldpc_generate(n, rate, ldpc_seed).map_err(|e| p.fail(AbortReason::Config, e.to_string()))?;
    let mut corrected = Vec::new();
    for id in 0..blocks as u64 {
        let block = &post.bits()[id as usize * n..(id as usize + 1) * n];
        let tag = VerificationTag::compute(block, tag_seed, id);
        let syn = syndrome(&matrix, block).map_err(|e| p.fail(AbortReason::Protocol, e.to_string()))?;
        p.send(&Message::Syndrome {
            block_id: id,
            syndrome: syn,
            tag: tag.value,
        })?;
        match p.recv()? {
            Message::VerifyTag { block_id, ok, tag: bob_tag } if block_id == id => {
                let bob = VerificationTag { block_id, value: bob_tag };
                let agree = verify_blocks(&tag, &bob).map_err(|e| p.fail(AbortReason::Protocol, e.to_string()))?;
                if ok && !agree {
                    return Err(p.fail(AbortReason::Verification, format!("block {id} tag mismatch")));
                }
                if ok {
                    corrected.push((id, block.to_bitvec()));
                }
            }
            other => return Err(p.unexpected("VerifyTag for the current block", &other)),
        }
    }
    let corrected_bits: Bits = corrected.iter().flat_map(|(_, b)| b.iter().by_vals()).collect();
    let corrected_block = post
        .advance(Stage::Corrected, corrected_bits)
        .map_err(|e| p.fail(AbortReason::Protocol, e.to_string()))?;
    p.state.blocks.push(corrected_block.clone());

    p.enter(Phase::Amplify)?;
    let toeplitz_seed = rng::substream(seed, "toeplitz", 0);
    p.send(&Message::ToeplitzSeed {
        seed: toeplitz_seed,
        cr: config.cr,
    })?;
    let (key, manifest) = amplify(&corrected, config.cr, toeplitz_seed).map_err(|e| p.fail(AbortReason::Protocol, e))?;
    p.exchange_final_hash(&key, toeplitz_seed, false)?;
    let final_block = corrected_block
        .advance(Stage::Final, key.clone())
        .map_err(|e| p.fail(AbortReason::Protocol, e.to_string()))?;
    p.state.blocks.push(final_block);
    p.enter(Phase::Done)?;

    let stats = SessionStats {
        pairs: config.pairs,
        detected_pairs: announced.len(),
        sifted_bits,
        disclosed_bits: own_disclosed.len(),
        qber,
        code_rate: Some(rate),
        blocks_total: blocks,
        blocks_corrected: corrected.len(),
        final_bits: key.len(),
    };
    Ok(SessionOutcome {
        role: Role::Alice,
        report: report_for(config, &stats),
        final_key: key,
        manifest,
        stats,
        state: p.state,
    })
}

fn report_for(config: &SessionConfig, stats: &SessionStats) -> KeyRateReport {
    let t = config.duration_s();
    KeyRateReport::measured(
        &config.budget,
        config.dr,
        config.cr,
        stats.detected_pairs as f64 / t,
        stats.sifted_bits as f64 / t,
        stats.qber,
        stats.final_bits as f64 / t,
        RowStatus::Ok,
    )
    .with_bias(config.detector.bias_v)
}

/// Bob's side: detects the pulse train, announces click positions,
/// discloses the requested sample and decodes Alice's syndromes.
pub fn run_bob<C: Read + Write, Q: Read>(
    config: &SessionConfig,
    classical: C,
    quantum: Q,
    seed: u64,
) -> Result<SessionOutcome, SessionError> {
    config.validate()?;
    let mut p = Party::new(Role::Bob, classical);
    match p.chan.recv_any() {
        Ok((sid, Message::Hello { role: Role::Alice, params, .. })) => {
            p.chan.set_session_id(sid);
            p.send(&Message::Hello {
                role: Role::Bob,
                auth_tag: 0,
                params: config.canonical(),
            })?;
            if params != config.canonical() {
                // Alice reports the mismatch after seeing Bob's parameters
                return match p.recv() {
                    Err(e) => Err(e),
                    Ok(other) => Err(p.unexpected("Abort", &other)),
                };
            }
        }
        Ok((sid, other)) => {
            p.chan.set_session_id(sid);
            return Err(p.unexpected("Hello from Alice", &other));
        }
        Err(e) => return Err(p.wire_failure(e)),
    }

    p.enter(Phase::Quantum)?;
    let train = quantum::receive(quantum).map_err(|e| p.fail(AbortReason::Transport, e.to_string()))?;
    if train.pairs() != config.pairs {
        return Err(p.fail(AbortReason::Protocol, "pulse train length differs from config"));
    }
    let clicks = quantum::detect(&train, &config.budget, &config.detector, seed)
        .map_err(|e| p.fail(AbortReason::Config, e.to_string()))?;
    drop(train);

    p.enter(Phase::Sift)?;
    let detections = bob_detected_pairs(&clicks);
    p.send(&Message::DetectionIndices {
        pairs: detections.pairs.clone(),
    })?;
    let kept = match p.recv()? {
        Message::DetectionIndices { pairs } => pairs,
        other => return Err(p.unexpected("DetectionIndices", &other)),
    };
    let mut bits = bob_sift(&detections, &kept).map_err(|e| p.fail(AbortReason::Protocol, e.to_string()))?;
    apply_intrinsic_errors(&mut bits, config.detector.intrinsic_error, rng::substream(seed, "intrinsic", 0));
    let meta = BlockMeta {
        seed,
        block_id: 0,
        params: format!("role=bob,pairs={}", config.pairs),
    };
    let sifted = BitBlock::new(bits, Stage::Sifted, meta);
    let sifted_bits = sifted.len();
    p.state.blocks.push(sifted.clone());

    p.enter(Phase::Disclose)?;
    let (disclose_seed, dr) = match p.recv()? {
        Message::DiscloseRequest { seed, dr } => (seed, dr),
        other => return Err(p.unexpected("DiscloseRequest", &other)),
    };
    if dr != config.dr {
        return Err(p.fail(AbortReason::Protocol, "disclose rate differs from config"));
    }
    let positions =
        disclose_positions(sifted.len(), dr, disclose_seed).map_err(|e| p.fail(AbortReason::Protocol, e.to_string()))?;
    let (disclosed, remainder) = split_disclosed(sifted.bits(), &positions);
    let disclosed_bits = disclosed.len();
    p.send(&Message::DiscloseBits {
        bits: disclosed.into_iter().map(|(_, b)| b).collect(),
    })?;
    let post = sifted
        .advance(Stage::PostDisclose, remainder)
        .map_err(|e| p.fail(AbortReason::Protocol, e.to_string()))?;
    p.state.blocks.push(post.clone());

    p.enter(Phase::Reconcile)?;
    let (qber, rate, n, blocks, crossover, ldpc_seed, tag_seed) = match p.recv()? {
        Message::QberReport {
            qber,
            code_rate,
            block_len,
            blocks,
            crossover,
            ldpc_seed,
            tag_seed,
        } => (qber, code_rate, block_len as usize, blocks as usize, crossover, ldpc_seed, tag_seed),
        other => return Err(p.unexpected("QberReport", &other)),
    };
    if n != config.block_len || blocks != post.len() / n {
        return Err(p.fail(AbortReason::Protocol, "block layout differs"));
    }
    let matrix = ldpc_generate(n, rate, ldpc_seed).map_err(|e| p.fail(AbortReason::Config, e.to_string()))?;
    let mut corrected = Vec::new();
    for id in 0..blocks as u64 {
        let (syn, alice_tag) = match p.recv()? {
            Message::Syndrome { block_id, syndrome, tag } if block_id == id => (syndrome, tag),
            other => return Err(p.unexpected("Syndrome for the next block", &other)),
        };
        if syn.len() != matrix.m() {
            return Err(p.fail(AbortReason::Protocol, "syndrome length differs from code"));
        }
        let own = &post.bits()[id as usize * n..(id as usize + 1) * n];
        let alice_tag = VerificationTag {
            block_id: id,
            value: alice_tag,
        };
        let (ok, tag) = match decode(&matrix, own, &syn, crossover, config.max_iter) {
            Ok(out) => {
                let tag = VerificationTag::compute(&out.bits, tag_seed, id);
                let ok = verify_blocks(&alice_tag, &tag).unwrap_or(false);
                if ok {
                    corrected.push((id, out.bits));
                }
                (ok, tag)
            }
            Err(_) => (false, VerificationTag::compute(own, tag_seed, id)),
        };
        p.send(&Message::VerifyTag {
            block_id: id,
            ok,
            tag: tag.value,
        })?;
    }
    let corrected_bits: Bits = corrected.iter().flat_map(|(_, b)| b.iter().by_vals()).collect();
    let corrected_block = post
        .advance(Stage::Corrected, corrected_bits)
        .map_err(|e| p.fail(AbortReason::Protocol, e.to_string()))?;
    p.state.blocks.push(corrected_block.clone());

    p.enter(Phase::Amplify)?;
    let (toeplitz_seed, cr) = match p.recv()? {
        Message::ToeplitzSeed { seed, cr } => (seed, cr),
        other => return Err(p.unexpected("ToeplitzSeed", &other)),
    };
    if cr != config.cr {
        return Err(p.fail(AbortReason::Protocol, "compression ratio differs from config"));
    }
    let (key, manifest) = amplify(&corrected, cr, toeplitz_seed).map_err(|e| p.fail(AbortReason::Protocol, e))?;
    p.exchange_final_hash(&key, toeplitz_seed, true)?;
    let final_block = corrected_block
        .advance(Stage::Final, key.clone())
        .map_err(|e| p.fail(AbortReason::Protocol, e.to_string()))?;
    p.state.blocks.push(final_block);
    p.enter(Phase::Done)?;

    let stats = SessionStats {
        pairs: config.pairs,
        detected_pairs: detections.pairs.len(),
        sifted_bits,
        disclosed_bits,
        qber,
        code_rate: Some(rate),
        blocks_total: blocks,
        blocks_corrected: corrected.len(),
        final_bits: key.len(),
    };
    Ok(SessionOutcome {
        role: Role::Bob,
        report: report_for(config, &stats),
        final_key: key,
        manifest,
        stats,
        state: p.state,
    })
}

/// Results of an in-process session with recorded classical traffic.
pub struct LoopbackRun {
    pub alice: Result<SessionOutcome, SessionError>,
    pub bob: Result<SessionOutcome, SessionError>,
    /// Classical bytes written by Alice and by Bob.
    pub alice_sent: Transcript,
    pub bob_sent: Transcript,
}

/// Runs Alice and Bob on two threads over in-memory channels.
pub fn loopback(config: &SessionConfig, alice_seed: u64, bob_seed: u64) -> LoopbackRun {
    let (ca, cb) = MemoryDuplex::pair();
    let (qa, qb) = MemoryDuplex::pair();
    let (ca, alice_sent) = RecordingTransport::new(ca);
    let (cb, bob_sent) = RecordingTransport::new(cb);
    let bob_config = config.clone();
    let bob = thread::spawn(move || run_bob(&bob_config, cb, qb, bob_seed));
    let alice = run_alice(config, ca, qa, alice_seed);
    let bob = bob.join().expect("bob thread panicked");
    LoopbackRun {
        alice,
        bob,
        alice_sent,
        bob_sent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_only_move_forward() {
        let mut s = SessionState::new(Role::Alice);
        s.enter(Phase::Quantum).unwrap();
        s.enter(Phase::Disclose).unwrap();
        assert!(s.enter(Phase::Sift).is_err());
        assert!(s.enter(Phase::Disclose).is_err());
        s.enter(Phase::Aborted).unwrap();
        assert!(s.enter(Phase::Done).is_err());
        let mut done = SessionState::new(Role::Bob);
        done.enter(Phase::Done).unwrap();
        assert!(done.enter(Phase::Aborted).is_err());
    }

    #[test]
    fn rate_policy_text() {
        assert_eq!("auto".parse::<RatePolicy>().unwrap(), RatePolicy::Auto);
        assert_eq!("3/4".parse::<RatePolicy>().unwrap(), RatePolicy::Fixed(CodeRate::ThreeQuarters));
        assert!("7/8".parse::<RatePolicy>().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = SessionConfig::noiseless(1000, 0.03);
        let text = c.canonical();
        let back: SessionConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
        assert!(SessionConfig { dr: 0.0, ..c.clone() }.validate().is_err());
        assert!(SessionConfig { block_len: 1000, ..c }.validate().is_err());
    }

    #[test]
    fn noiseless_session_agrees() {
        let run = loopback(&SessionConfig::noiseless(100_000, 0.0), 1, 2);
        let (a, b) = (run.alice.unwrap(), run.bob.unwrap());
        assert_eq!(a.final_key, b.final_key);
        assert!(!a.final_key.is_empty());
        assert_eq!(a.stats.qber, 0.0);
        assert_eq!(a.state.phase(), Phase::Done);
        assert_eq!(a.stats.blocks_corrected, a.stats.blocks_total);
    }

    #[test]
    fn mismatched_configs_abort() {
        let (ca, cb) = MemoryDuplex::pair();
        let (qa, qb) = MemoryDuplex::pair();
        let alice_cfg = SessionConfig::noiseless(1000, 0.0);
        let bob_cfg = SessionConfig {
            cr: 0.9,
            ..alice_cfg.clone()
        };
        let bob = thread::spawn(move || run_bob(&bob_cfg, cb, qb, 2));
        let alice = run_alice(&alice_cfg, ca, qa, 1);
        assert_eq!(alice.unwrap_err().abort_reason(), Some(AbortReason::Config));
        assert_eq!(bob.join().unwrap().unwrap_err().abort_reason(), Some(AbortReason::Config));
    }

    #[test]
    fn vanished_peer_is_a_transport_abort() {
        let (ca, cb) = MemoryDuplex::pair();
        let (qa, _qb) = MemoryDuplex::pair();
        drop(cb);
        let err = run_alice(&SessionConfig::noiseless(1000, 0.0), ca, qa, 1).unwrap_err();
        assert_eq!(err.abort_reason(), Some(AbortReason::Transport));
    }
}
