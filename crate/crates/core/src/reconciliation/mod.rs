//! Information reconciliation: QBER estimation from disclosed bits and
//! one-way LDPC syndrome decoding.
//!
//! Alice sends the syndrome of each block, Bob runs belief propagation on
//! his noisy copy until its syndrome matches, and a 64-bit universal hash
//! confirms that both blocks agree.

mod bp;
mod ldpc;
mod tag;

use std::fmt;
use std::str::FromStr;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::Bits;

pub use bp::{decode, DecodeOutcome, DEFAULT_MAX_ITER};
pub use ldpc::{ldpc_generate, ParityCheckMatrix, COLUMN_WEIGHT, SUPPORTED_LENGTHS};
pub use tag::{verify_blocks, VerificationTag};

#[derive(Debug, Error, PartialEq)]
pub enum ReconError {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported code: n = {n}, rate = {rate}")]
    Unsupported { n: usize, rate: String },
    #[error("decoder did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("verification tags belong to different blocks ({a} vs {b})")]
    BlockMismatch { a: u64, b: u64 },
    #[error("malformed matrix export at line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Supported LDPC code rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CodeRate {
    Half,
    ThreeQuarters,
    FiveSixths,
}

impl CodeRate {
    pub const ALL: [CodeRate; 3] = [CodeRate::Half, CodeRate::ThreeQuarters, CodeRate::FiveSixths];

    pub fn fraction(self) -> (usize, usize) {
        match self {
            CodeRate::Half => (1, 2),
            CodeRate::ThreeQuarters => (3, 4),
            CodeRate::FiveSixths => (5, 6),
        }
    }

    pub fn as_f64(self) -> f64 {
        let (a, b) = self.fraction();
        a as f64 / b as f64
    }

    /// Number of checks for block length `n`, `ceil(n (1 - rate))`.
    pub fn checks(self, n: usize) -> usize {
        let (a, b) = self.fraction();
        (n * (b - a)).div_ceil(b)
    }

    /// Highest rate whose code reliably corrects a crossover probability `p`
    /// at the supported block lengths.
    pub fn for_qber(p: f64) -> Self {
        if p <= 0.004 {
            CodeRate::FiveSixths
        } else if p <= 0.012 {
            CodeRate::ThreeQuarters
        } else {
            CodeRate::Half
        }
    }
}

impl fmt::Display for CodeRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = self.fraction();
        write!(f, "{a}/{b}")
    }
}

impl FromStr for CodeRate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "1/2" | "0.5" => Ok(CodeRate::Half),
            "3/4" | "0.75" => Ok(CodeRate::ThreeQuarters),
            "5/6" => Ok(CodeRate::FiveSixths),
            other => Err(format!("unsupported code rate `{other}` (expected 1/2, 3/4 or 5/6)")),
        }
    }
}

impl TryFrom<String> for CodeRate {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<CodeRate> for String {
    fn from(r: CodeRate) -> Self {
        r.to_string()
    }
}

/// What Alice sends for each block.
#[derive(Debug, Clone, PartialEq)]
pub struct SyndromeMessage {
    pub block_id: u64,
    pub syndrome: Bits,
    pub tag: VerificationTag,
}

impl SyndromeMessage {
    pub fn check_against(&self, matrix: &ParityCheckMatrix) -> Result<(), ReconError> {
        if self.syndrome.len() != matrix.m() {
            return Err(ReconError::LengthMismatch {
                expected: matrix.m(),
                actual: self.syndrome.len(),
            });
        }
        if self.tag.block_id != self.block_id {
            return Err(ReconError::BlockMismatch {
                a: self.block_id,
                b: self.tag.block_id,
            });
        }
        Ok(())
    }
}

/// Fraction of positions where the disclosed samples disagree.
pub fn estimate_qber(disclosed_a: &BitSlice<u8, Msb0>, disclosed_b: &BitSlice<u8, Msb0>) -> Result<f64, ReconError> {
    if disclosed_a.len() != disclosed_b.len() {
        return Err(ReconError::LengthMismatch {
            expected: disclosed_a.len(),
            actual: disclosed_b.len(),
        });
    }
    if disclosed_a.is_empty() {
        return Err(ReconError::Domain("no disclosed bits".into()));
    }
    let diff = disclosed_a.to_bitvec() ^ disclosed_b;
    Ok(diff.count_ones() as f64 / disclosed_a.len() as f64)
}

/// Parity of each check row over GF(2).
pub fn syndrome(matrix: &ParityCheckMatrix, bits: &BitSlice<u8, Msb0>) -> Result<Bits, ReconError> {
    if bits.len() != matrix.n() {
        return Err(ReconError::LengthMismatch {
            expected: matrix.n(),
            actual: bits.len(),
        });
    }
    Ok(matrix
        .rows()
        .iter()
        .map(|row| row.iter().fold(false, |acc, &c| acc ^ bits[c as usize]))
        .collect())
}
