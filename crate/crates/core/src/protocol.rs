//! Logical layer of the COW protocol.
//!
//! A logical bit is the position of a single non-empty pulse inside a pair
//! of time slots: bit 0 is (non-empty, empty), bit 1 is (empty, non-empty).
//! A decoy fills both slots and never contributes key material. Bob reads
//! a click in the early slot as 0 and in the late slot as 1.

use std::io::{self, Read, Write};

use bitvec::prelude::*;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{DetectionRecord, Slot};
use crate::rng;

/// Packed key bits, most significant bit first within each byte.
pub type Bits = BitVec<u8, Msb0>;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("detection references pair {index} but the frame has {len} pairs")]
    PairOutOfRange { index: u64, len: u64 },
    #[error("block stage cannot move from {from:?} to {to:?}")]
    StageOrder { from: Stage, to: Stage },
    #[error("block length cannot grow from {from} to {to} bits")]
    LengthGrowth { from: usize, to: usize },
    #[error("malformed record: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum LogicalSymbol {
    Bit0 = 0,
    Bit1 = 1,
    Decoy = 2,
}

impl LogicalSymbol {
    /// Key bit carried by the symbol, `None` for decoys.
    pub fn bit(self) -> Option<bool> {
        match self {
            LogicalSymbol::Bit0 => Some(false),
            LogicalSymbol::Bit1 => Some(true),
            LogicalSymbol::Decoy => None,
        }
    }

    /// Occupation of the (early, late) slots.
    pub fn occupancy(self) -> (bool, bool) {
        match self {
            LogicalSymbol::Bit0 => (true, false),
            LogicalSymbol::Bit1 => (false, true),
            LogicalSymbol::Decoy => (true, true),
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LogicalSymbol::Bit0),
            1 => Some(LogicalSymbol::Bit1),
            2 => Some(LogicalSymbol::Decoy),
            _ => None,
        }
    }
}

/// Mean photon numbers of the (early, late) pulses encoding `symbol`.
pub fn symbol_to_pulses(symbol: LogicalSymbol, mu: f64) -> (f64, f64) {
    let (early, late) = symbol.occupancy();
    (if early { mu } else { 0.0 }, if late { mu } else { 0.0 })
}

/// Alice's symbol sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub symbols: Vec<LogicalSymbol>,
    pub seed: u64,
    /// Decoy probability.
    pub decoy_prob: f64,
    pub mu: f64,
}

/// Draws `n_symbols` symbols: decoy with probability `decoy_prob`, otherwise
/// bit 0 or bit 1 with equal probability.
pub fn encode_sequence(seed: u64, n_symbols: usize, decoy_prob: f64, mu: f64) -> Result<SymbolFrame, ProtocolError> {
    if n_symbols == 0 {
        return Err(ProtocolError::Domain("a frame needs at least one symbol".into()));
    }
    if !(0.0..=1.0).contains(&decoy_prob) {
        return Err(ProtocolError::Domain(format!("decoy probability {decoy_prob} outside [0, 1]")));
    }
    if !(mu > 0.0) {
        return Err(ProtocolError::Domain(format!("mean photon number {mu} must be positive")));
    }
    let mut rng = rng::from_seed(seed);
    let symbols = (0..n_symbols)
        .map(|_| {
            if rng.random_bool(decoy_prob) {
                LogicalSymbol::Decoy
            } else if rng.random::<bool>() {
                LogicalSymbol::Bit1
            } else {
                LogicalSymbol::Bit0
            }
        })
        .collect();
    Ok(SymbolFrame {
        symbols,
        seed,
        decoy_prob,
        mu,
    })
}

impl SymbolFrame {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn decoy_count(&self) -> usize {
        self.symbols.iter().filter(|s| **s == LogicalSymbol::Decoy).count()
    }

    /// Pulse intensities in emission order, two per symbol.
    pub fn intensities(&self) -> impl Iterator<Item = f64> + '_ {
        self.symbols.iter().flat_map(move |s| {
            let (a, b) = symbol_to_pulses(*s, self.mu);
            [a, b]
        })
    }

    pub fn pulse_train(&self) -> PulseTrain {
        let mut occupied = Bits::with_capacity(2 * self.len());
        for s in &self.symbols {
            let (early, late) = s.occupancy();
            occupied.push(early);
            occupied.push(late);
        }
        PulseTrain { mu: self.mu, occupied }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ProtocolError> {
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.decoy_prob.to_le_bytes())?;
        w.write_all(&self.mu.to_le_bytes())?;
        let mut codes = Bits::with_capacity(2 * self.len());
        for s in &self.symbols {
            let c = *s as u8;
            codes.push(c & 2 != 0);
            codes.push(c & 1 != 0);
        }
        write_bits(&mut w, &codes)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ProtocolError> {
        let seed = read_u64(&mut r)?;
        let decoy_prob = f64::from_bits(read_u64(&mut r)?);
        let mu = f64::from_bits(read_u64(&mut r)?);
        let codes = read_bits(&mut r)?;
        if codes.len() % 2 != 0 {
            return Err(ProtocolError::Format("odd symbol code length".into()));
        }
        let symbols = codes
            .chunks(2)
            .map(|c| {
                let code = (u8::from(c[0]) << 1) | u8::from(c[1]);
                LogicalSymbol::from_code(code).ok_or_else(|| ProtocolError::Format(format!("bad symbol code {code}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            symbols,
            seed,
            decoy_prob,
            mu,
        })
    }
}

/// What travels over the quantum channel: occupancy of every time slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain {
    pub mu: f64,
    pub occupied: Bits,
}

impl PulseTrain {
    pub fn pairs(&self) -> usize {
        self.occupied.len() / 2
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ProtocolError> {
        w.write_all(&self.mu.to_le_bytes())?;
        write_bits(&mut w, &self.occupied)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ProtocolError> {
        let mu = f64::from_bits(read_u64(&mut r)?);
        let occupied = read_bits(&mut r)?;
        Ok(Self { mu, occupied })
    }
}

/// Pipeline stage of a key buffer; ordering is the processing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Stage {
    Raw = 0,
    Sifted = 1,
    PostDisclose = 2,
    Corrected = 3,
    Final = 4,
}

impl Stage {
    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Stage::Raw,
            1 => Stage::Sifted,
            2 => Stage::PostDisclose,
            3 => Stage::Corrected,
            4 => Stage::Final,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockMeta {
    pub seed: u64,
    pub block_id: u64,
    /// Parameter snapshot, `key=value` pairs separated by commas.
    pub params: String,
}

/// Key bits tagged with their pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitBlock {
    bits: Bits,
    stage: Stage,
    pub meta: BlockMeta,
}

impl BitBlock {
    pub fn new(bits: Bits, stage: Stage, meta: BlockMeta) -> Self {
        Self { bits, stage, meta }
    }

    pub fn bits(&self) -> &Bits {
        &self.bits
    }

    pub fn into_bits(self) -> Bits {
        self.bits
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Moves the block to a later stage with new contents of equal or
    /// smaller length.
    pub fn advance(self, stage: Stage, bits: Bits) -> Result<BitBlock, ProtocolError> {
        if stage <= self.stage {
            return Err(ProtocolError::StageOrder { from: self.stage, to: stage });
        }
        if bits.len() > self.bits.len() {
            return Err(ProtocolError::LengthGrowth {
                from: self.bits.len(),
                to: bits.len(),
            });
        }
        Ok(BitBlock {
            bits,
            stage,
            meta: self.meta,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ProtocolError> {
        w.write_all(&[self.stage as u8])?;
        w.write_all(&self.meta.seed.to_le_bytes())?;
        w.write_all(&self.meta.block_id.to_le_bytes())?;
        let params = self.meta.params.as_bytes();
        w.write_all(&(params.len() as u64).to_le_bytes())?;
        w.write_all(params)?;
        write_bits(&mut w, &self.bits)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ProtocolError> {
        let mut code = [0u8; 1];
        r.read_exact(&mut code)?;
        let stage = Stage::from_code(code[0]).ok_or_else(|| ProtocolError::Format(format!("bad stage {}", code[0])))?;
        let seed = read_u64(&mut r)?;
        let block_id = read_u64(&mut r)?;
        let plen = read_len(&mut r, 1 << 20)?;
        let mut params = vec![0u8; plen];
        r.read_exact(&mut params)?;
        let params = String::from_utf8(params).map_err(|e| ProtocolError::Format(e.to_string()))?;
        let bits = read_bits(&mut r)?;
        Ok(Self {
            bits,
            stage,
            meta: BlockMeta { seed, block_id, params },
        })
    }
}

/// Diagnostics of one sifting pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SiftStats {
    /// Pairs with at least one in-window click.
    pub detected_pairs: usize,
    /// Pairs that clicked in both slots and were discarded.
    pub double_clicks: usize,
    /// Detected pairs that turned out to be decoys.
    pub decoys_discarded: usize,
    /// Records that were not early/late data clicks.
    pub ignored_records: usize,
}

/// Bob's view after sifting-side bookkeeping: each detected pair with the
/// bit read from its slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BobDetections {
    pub pairs: Vec<u64>,
    pub bits: Bits,
    pub stats: SiftStats,
}

/// Groups Bob's classified clicks per pair, drops pairs that clicked in
/// both slots, and reads early as 0, late as 1.
pub fn bob_detected_pairs(records: &[DetectionRecord]) -> BobDetections {
    let mut stats = SiftStats::default();
    let mut clicks: Vec<(u64, Slot)> = Vec::with_capacity(records.len());
    for r in records {
        match r.slot {
            Slot::Early | Slot::Late => clicks.push((r.pair_index, r.slot)),
            _ => stats.ignored_records += 1,
        }
    }
    clicks.sort_by_key(|(p, _)| *p);
    let mut out = BobDetections::default();
    let mut i = 0;
    while i < clicks.len() {
        let pair = clicks[i].0;
        let (mut early, mut late) = (false, false);
        while i < clicks.len() && clicks[i].0 == pair {
            match clicks[i].1 {
                Slot::Early => early = true,
                _ => late = true,
            }
            i += 1;
        }
        stats.detected_pairs += 1;
        if early && late {
            stats.double_clicks += 1;
            continue;
        }
        out.pairs.push(pair);
        out.bits.push(late);
    }
    out.stats = stats;
    out
}

/// Alice's half of sifting: keep the announced pairs that are not decoys.
/// Returns the kept pair indices and Alice's bits for them.
pub fn alice_sift(frame: &SymbolFrame, announced: &[u64]) -> Result<(Vec<u64>, Bits), ProtocolError> {
    let len = frame.len() as u64;
    let mut kept = Vec::with_capacity(announced.len());
    let mut bits = Bits::with_capacity(announced.len());
    for &p in announced {
        let symbol = frame
            .symbols
            .get(p as usize)
            .filter(|_| p < len)
            .ok_or(ProtocolError::PairOutOfRange { index: p, len })?;
        if let Some(bit) = symbol.bit() {
            kept.push(p);
            bits.push(bit);
        }
    }
    Ok((kept, bits))
}

/// Bob's half of sifting: restrict his detections to the pairs Alice kept.
/// `kept` must be an ordered subsequence of `detections.pairs`.
pub fn bob_sift(detections: &BobDetections, kept: &[u64]) -> Result<Bits, ProtocolError> {
    let mut out = Bits::with_capacity(kept.len());
    let mut j = 0;
    for &p in kept {
        while j < detections.pairs.len() && detections.pairs[j] < p {
            j += 1;
        }
        if j == detections.pairs.len() || detections.pairs[j] != p {
            return Err(ProtocolError::Domain(format!("pair {p} was not announced as detected")));
        }
        out.push(detections.bits[j]);
        j += 1;
    }
    Ok(out)
}

/// Result of a full sifting pass.
#[derive(Debug, Clone)]
pub struct SiftOutcome {
    pub alice: BitBlock,
    pub bob: BitBlock,
    /// Pair index of every sifted bit.
    pub pairs: Vec<u64>,
    pub stats: SiftStats,
}

/// Sifts Alice's frame against Bob's classified detections.
pub fn sift(frame: &SymbolFrame, detections: &[DetectionRecord]) -> Result<SiftOutcome, ProtocolError> {
    let bob = bob_detected_pairs(detections);
    let (kept, alice_bits) = alice_sift(frame, &bob.pairs)?;
    let bob_bits = bob_sift(&bob, &kept)?;
    let mut stats = bob.stats;
    stats.decoys_discarded = bob.pairs.len() - kept.len();
    let meta = BlockMeta {
        seed: frame.seed,
        block_id: 0,
        params: format!("f={},mu={},pairs={}", frame.decoy_prob, frame.mu, frame.len()),
    };
    Ok(SiftOutcome {
        alice: BitBlock::new(alice_bits, Stage::Sifted, meta.clone()),
        bob: BitBlock::new(bob_bits, Stage::Sifted, meta),
        pairs: kept,
        stats,
    })
}

/// Positions (ascending) and values of bits published for QBER estimation.
pub type Disclosure = Vec<(usize, bool)>;

/// Number of bits disclosed out of `len` at disclose rate `dr`.
pub fn disclosed_count(len: usize, dr: f64) -> usize {
    ((dr * len as f64) + 0.5).floor().min(len as f64) as usize
}

/// Positions chosen for disclosure, uniformly without replacement.
pub fn disclose_positions(len: usize, dr: f64, seed: u64) -> Result<Vec<usize>, ProtocolError> {
    if !(0.0..=1.0).contains(&dr) {
        return Err(ProtocolError::Domain(format!("disclose rate {dr} outside [0, 1]")));
    }
    let k = disclosed_count(len, dr);
    let mut rng = rng::from_seed(seed);
    let mut picked = index::sample(&mut rng, len, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Splits `positions` (ascending) out of `bits`.
pub fn split_disclosed(bits: &Bits, positions: &[usize]) -> (Disclosure, Bits) {
    let mut disclosed = Vec::with_capacity(positions.len());
    let mut remainder = Bits::with_capacity(bits.len() - positions.len());
    let mut next = positions.iter().peekable();
    for (i, bit) in bits.iter().by_vals().enumerate() {
        if next.peek() == Some(&&i) {
            disclosed.push((i, bit));
            next.next();
        } else {
            remainder.push(bit);
        }
    }
    (disclosed, remainder)
}

/// Publishes `round(dr * len)` uniformly chosen bits of a sifted block and
/// returns them together with the undisclosed remainder.
pub fn disclose_sample(block: BitBlock, dr: f64, seed: u64) -> Result<(Disclosure, BitBlock), ProtocolError> {
    let positions = disclose_positions(block.len(), dr, seed)?;
    let (disclosed, remainder) = split_disclosed(block.bits(), &positions);
    let block = block.advance(Stage::PostDisclose, remainder)?;
    Ok((disclosed, block))
}

pub(crate) fn write_bits<W: Write>(w: &mut W, bits: &Bits) -> Result<(), ProtocolError> {
    w.write_all(&(bits.len() as u64).to_le_bytes())?;
    let bytes = bits.as_raw_slice();
    let used = bits.len().div_ceil(8);
    // bits past the end of a BitVec are unspecified; mask them
    let mut tail = bytes[..used].to_vec();
    if bits.len() % 8 != 0 {
        if let Some(last) = tail.last_mut() {
            *last &= 0xFFu8 << (8 - bits.len() % 8);
        }
    }
    w.write_all(&tail)?;
    Ok(())
}

pub(crate) fn read_bits<R: Read>(r: &mut R) -> Result<Bits, ProtocolError> {
    let len = read_len(r, 1 << 40)?;
    let mut bytes = vec![0u8; len.div_ceil(8)];
    r.read_exact(&mut bytes)?;
    let mut bits = Bits::from_vec(bytes);
    bits.truncate(len);
    Ok(bits)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ProtocolError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_len<R: Read>(r: &mut R, max: u64) -> Result<usize, ProtocolError> {
    let len = read_u64(r)?;
    if len > max {
        return Err(ProtocolError::Format(format!("length {len} exceeds limit {max}")));
    }
    Ok(len as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(pair: u64, slot: Slot) -> DetectionRecord {
        DetectionRecord {
            time_s: pair as f64 * 4e-9 + if slot == Slot::Late { 2e-9 } else { 0.0 },
            pair_index: pair,
            slot,
        }
    }

    /// Ideal receiver: one click in every occupied slot of a bit pair.
    fn noiseless_detections(frame: &SymbolFrame, every: usize) -> Vec<DetectionRecord> {
        frame
            .symbols
            .iter()
            .enumerate()
            .filter(|(i, _)| i % every == 0)
            .filter_map(|(i, s)| match s {
                LogicalSymbol::Bit0 => Some(record(i as u64, Slot::Early)),
                LogicalSymbol::Bit1 => Some(record(i as u64, Slot::Late)),
                LogicalSymbol::Decoy => Some(record(i as u64, Slot::Early)),
            })
            .collect()
    }

    #[test]
    fn pulse_mapping() {
        assert_eq!(symbol_to_pulses(LogicalSymbol::Bit1, 0.5), (0.0, 0.5));
        assert_eq!(symbol_to_pulses(LogicalSymbol::Bit0, 0.5), (0.5, 0.0));
        assert_eq!(symbol_to_pulses(LogicalSymbol::Decoy, 0.5), (0.5, 0.5));
    }

    #[test]
    fn encode_extremes() {
        let f = encode_sequence(1, 1000, 0.0, 0.5).unwrap();
        assert_eq!(f.decoy_count(), 0);
        let f = encode_sequence(1, 1000, 1.0, 0.5).unwrap();
        assert_eq!(f.decoy_count(), 1000);
        assert!(encode_sequence(1, 0, 0.5, 0.5).is_err());
        assert!(encode_sequence(1, 10, 1.5, 0.5).is_err());
    }

    #[test]
    fn encode_decoy_fraction_within_binomial_band() {
        let f = encode_sequence(7, 100_000, 0.1, 0.5).unwrap();
        let sigma = (100_000.0f64 * 0.1 * 0.9).sqrt();
        assert!((sigma * 5.0 - 474.3).abs() < 0.1);
        let d = f.decoy_count() as f64;
        assert!((d - 10_000.0).abs() <= 474.0, "decoys {d}");
        let ones = f.symbols.iter().filter(|s| **s == LogicalSymbol::Bit1).count() as f64;
        let zeros = f.symbols.iter().filter(|s| **s == LogicalSymbol::Bit0).count() as f64;
        let sigma_bit = (100_000.0f64 * 0.45 * 0.55).sqrt();
        assert!((ones - 45_000.0).abs() < 5.0 * sigma_bit);
        assert!((zeros - 45_000.0).abs() < 5.0 * sigma_bit);
    }

    #[test]
    fn encode_is_deterministic() {
        assert_eq!(encode_sequence(5, 500, 0.5, 0.5).unwrap(), encode_sequence(5, 500, 0.5, 0.5).unwrap());
        assert_ne!(encode_sequence(5, 500, 0.5, 0.5).unwrap(), encode_sequence(6, 500, 0.5, 0.5).unwrap());
    }

    #[test]
    fn sift_drops_decoys() {
        let frame = SymbolFrame {
            symbols: vec![LogicalSymbol::Decoy, LogicalSymbol::Bit0, LogicalSymbol::Decoy],
            seed: 0,
            decoy_prob: 0.5,
            mu: 0.5,
        };
        let out = sift(&frame, &[record(0, Slot::Early), record(2, Slot::Late)]).unwrap();
        assert!(out.alice.is_empty() && out.bob.is_empty());
        assert_eq!(out.stats.decoys_discarded, 2);
    }

    #[test]
    fn sift_rejects_out_of_range_pairs() {
        let frame = encode_sequence(1, 10, 0.5, 0.5).unwrap();
        let err = sift(&frame, &[record(10, Slot::Early)]).unwrap_err();
        assert!(matches!(err, ProtocolError::PairOutOfRange { index: 10, len: 10 }));
    }

    #[test]
    fn double_clicks_are_discarded() {
        let frame = SymbolFrame {
            symbols: vec![LogicalSymbol::Bit1, LogicalSymbol::Bit0],
            seed: 0,
            decoy_prob: 0.5,
            mu: 0.5,
        };
        let recs = [record(0, Slot::Early), record(0, Slot::Late), record(1, Slot::Early)];
        let out = sift(&frame, &recs).unwrap();
        assert_eq!(out.stats.double_clicks, 1);
        assert_eq!(out.pairs, vec![1]);
        assert_eq!(out.bob.bits().iter().by_vals().collect::<Vec<_>>(), vec![false]);
    }

    #[test]
    fn noiseless_channel_gives_identical_blocks() {
        let frame = encode_sequence(11, 2_000, 0.5, 0.5).unwrap();
        let recs = noiseless_detections(&frame, 3);
        let out = sift(&frame, &recs).unwrap();
        let k = frame
            .symbols
            .iter()
            .enumerate()
            .filter(|(i, s)| i % 3 == 0 && **s != LogicalSymbol::Decoy)
            .count();
        assert_eq!(out.alice.len(), k);
        assert_eq!(out.alice.bits(), out.bob.bits());
    }

    #[test]
    fn disclose_examples() {
        let bits: Bits = (0..1000).map(|i| i % 3 == 0).collect();
        let block = BitBlock::new(bits.clone(), Stage::Sifted, BlockMeta::default());
        let (d, rest) = disclose_sample(block.clone(), 0.0, 4).unwrap();
        assert!(d.is_empty());
        assert_eq!(rest.bits(), &bits);
        assert_eq!(rest.stage(), Stage::PostDisclose);
        let (d, rest) = disclose_sample(block, 1.0, 4).unwrap();
        assert_eq!(d.len(), 1000);
        assert!(rest.is_empty());

        let bits: Bits = (0..1024).map(|i| i % 5 == 0).collect();
        let block = BitBlock::new(bits.clone(), Stage::Sifted, BlockMeta::default());
        let positions = disclose_positions(1024, 0.03125, 1).unwrap();
        let (d, rest) = disclose_sample(block, 0.03125, 1).unwrap();
        assert_eq!(d.len(), 32);
        assert_eq!(rest.len(), 1024 - 32);
        let picked: std::collections::BTreeSet<usize> = d.iter().map(|(i, _)| *i).collect();
        assert_eq!(picked.len(), 32);
        assert_eq!(picked.iter().copied().collect::<Vec<_>>(), positions);
        // remainder is exactly the complement, in order
        let complement: Bits = (0..1024).filter(|i| !picked.contains(i)).map(|i| bits[i]).collect();
        assert_eq!(rest.bits(), &complement);
        for (i, b) in d {
            assert_eq!(bits[i], b);
        }
    }

    #[test]
    fn disclose_rejects_bad_rate() {
        let block = BitBlock::new(Bits::repeat(false, 8), Stage::Sifted, BlockMeta::default());
        assert!(disclose_sample(block, 1.5, 0).is_err());
    }

    #[test]
    fn stages_only_move_forward_and_never_grow() {
        let block = BitBlock::new(Bits::repeat(true, 16), Stage::Sifted, BlockMeta::default());
        assert!(block.clone().advance(Stage::Raw, Bits::new()).is_err());
        assert!(block.clone().advance(Stage::Sifted, Bits::new()).is_err());
        assert!(block.clone().advance(Stage::Corrected, Bits::repeat(true, 17)).is_err());
        let b = block.advance(Stage::Corrected, Bits::repeat(true, 16)).unwrap();
        assert_eq!(b.stage(), Stage::Corrected);
    }

    #[test]
    fn bit_record_layout_is_msb_first() {
        let bits: Bits = [true, false, true, true, false, false, false, false, true].into_iter().collect();
        let mut buf = Vec::new();
        write_bits(&mut buf, &bits).unwrap();
        assert_eq!(&buf[..8], &9u64.to_le_bytes());
        assert_eq!(&buf[8..], &[0b1011_0000, 0b1000_0000]);
    }

    #[test]
    fn truncated_record_is_an_error() {
        let frame = encode_sequence(3, 100, 0.5, 0.5).unwrap();
        let mut buf = Vec::new();
        frame.write_to(&mut buf).unwrap();
        buf.pop();
        assert!(SymbolFrame::read_from(&buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn frame_and_block_records_round_trip(seed in any::<u64>(), n in 1usize..300, f in 0.0f64..=1.0) {
            let frame = encode_sequence(seed, n, f, 0.5).unwrap();
            let mut buf = Vec::new();
            frame.write_to(&mut buf).unwrap();
            prop_assert_eq!(SymbolFrame::read_from(&buf[..]).unwrap(), frame.clone());

            let bits: Bits = frame.symbols.iter().map(|s| *s == LogicalSymbol::Bit1).collect();
            let block = BitBlock::new(bits, Stage::Corrected, BlockMeta { seed, block_id: 3, params: "cr=0.5".into() });
            let mut buf = Vec::new();
            block.write_to(&mut buf).unwrap();
            prop_assert_eq!(BitBlock::read_from(&buf[..]).unwrap(), block);
        }

        #[test]
        fn lossless_noiseless_sift_agrees_for_every_seed(seed in any::<u64>()) {
            let frame = encode_sequence(seed, 400, 0.5, 0.5).unwrap();
            let out = sift(&frame, &noiseless_detections(&frame, 1)).unwrap();
            prop_assert_eq!(out.alice.bits(), out.bob.bits());
            for p in &out.pairs {
                prop_assert_ne!(frame.symbols[*p as usize], LogicalSymbol::Decoy);
            }
        }

        #[test]
        fn disclosure_partitions_the_block(seed in any::<u64>(), len in 0usize..600, dr in 0.0f64..=1.0) {
            let bits: Bits = (0..len).map(|i| (i * 7 + 3) % 5 < 2).collect();
            let block = BitBlock::new(bits.clone(), Stage::Sifted, BlockMeta::default());
            let (d, rest) = disclose_sample(block, dr, seed).unwrap();
            prop_assert_eq!(d.len(), disclosed_count(len, dr));
            prop_assert_eq!(d.len() + rest.len(), len);
            let mut seen = vec![false; len];
            for (i, _) in &d { prop_assert!(!seen[*i]); seen[*i] = true; }
        }
    }
}
