//! Coherent one-way (COW) quantum key distribution, end to end in software.
//!
//! The crate is organised along the signal path:
//!
//! * [`optics`] - closed-form link budget and key-rate arithmetic.
//! * [`protocol`] - Alice's symbol encoding, sifting and disclosure sampling.
//! * [`detection`] - Monte Carlo of the single-photon detector (loss,
//!   efficiency, dead time, dark counts, timing jitter).
//! * [`reconciliation`] - QBER estimation and syndrome-based LDPC decoding.
//! * [`privacy`] - Toeplitz-hash privacy amplification with an FFT fast path.
//! * [`link`] - the two-party session over a framed classical channel.
//! * [`sweep`] - parameter sweeps, filtering calibration and stability runs.

pub mod detection;
pub mod link;
pub mod optics;
pub mod privacy;
pub mod protocol;
pub mod reconciliation;
pub mod rng;
pub mod sweep;

pub use detection::{DcrTable, DetectionRecord, DetectorParams, Slot, SlotClock};
pub use optics::{KeyRateReport, OpticalBudget, RowStatus};
pub use privacy::ToeplitzDescriptor;
pub use protocol::{BitBlock, Bits, LogicalSymbol, Stage, SymbolFrame};
pub use reconciliation::{CodeRate, ParityCheckMatrix, SyndromeMessage, VerificationTag};
pub use sweep::{SweepMode, SweepResult, SweepSpec};
