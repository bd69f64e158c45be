//! Two-party session over a framed classical channel.
//!
//! Alice and Bob each run a blocking state machine
//! (`Init -> Quantum -> Sift -> Disclose -> Reconcile -> Amplify -> Done`)
//! over any `Read + Write` byte stream: TCP for separate processes, an
//! in-memory duplex for tests. The quantum channel is a second stream that
//! carries only the simulated pulse train.

pub mod channel;
pub mod quantum;
pub mod session;
pub mod wire;

pub use channel::{tcp_connect, FramedChannel, MemoryDuplex, RecordingTransport, TcpEndpoints, Transcript};
pub use session::{
    loopback, run_alice, run_bob, LoopbackRun, Phase, RatePolicy, SessionConfig, SessionError, SessionOutcome,
    SessionState, SessionStats,
};
pub use wire::{decode_message, encode_message, read_frame, AbortReason, Message, MessageType, Role, WireError, WireMessage};
