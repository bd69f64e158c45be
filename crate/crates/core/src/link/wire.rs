//! Binary framing of classical-channel messages.
//!
//! ```text
//! magic "C0W1" | type u8 | session_id [u8; 16] | len u64 LE | payload | crc32 LE
//! ```
//!
//! The CRC covers every preceding byte of the frame.

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::protocol::{self, Bits};
use crate::reconciliation::CodeRate;

pub const MAGIC: [u8; 4] = *b"C0W1";
pub const MAX_PAYLOAD: usize = 16 << 20;
pub const HEADER_LEN: usize = 4 + 1 + 16 + 8;
pub const TRAILER_LEN: usize = 4;

pub type SessionId = [u8; 16];

#[derive(Debug, Error)]
pub enum WireError {
    #[error("truncated frame: need {needed} more bytes")]
    Truncated { needed: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("payload length {0} exceeds limit")]
    TooLong(u64),
    #[error("crc mismatch: frame says {expected:08x}, computed {actual:08x}")]
    Crc { expected: u32, actual: u32 },
    #[error("{extra} trailing bytes after frame")]
    Trailing { extra: usize },
    #[error("malformed {kind:?} payload: {reason}")]
    Payload { kind: MessageType, reason: String },
    #[error("unexpected message: wanted {expected}, got {got:?}")]
    Unexpected { expected: &'static str, got: MessageType },
    #[error("session id mismatch")]
    WrongSession,
    #[error("transport: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    DetectionIndices = 2,
    DiscloseRequest = 3,
    DiscloseBits = 4,
    QberReport = 5,
    Syndrome = 6,
    VerifyTag = 7,
    ToeplitzSeed = 8,
    FinalAck = 9,
    Abort = 10,
}

impl MessageType {
    pub const ALL: [MessageType; 10] = [
        MessageType::Hello,
        MessageType::DetectionIndices,
        MessageType::DiscloseRequest,
        MessageType::DiscloseBits,
        MessageType::QberReport,
        MessageType::Syndrome,
        MessageType::VerifyTag,
        MessageType::ToeplitzSeed,
        MessageType::FinalAck,
        MessageType::Abort,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == code)
    }
}

/// One frame on the classical channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub kind: MessageType,
    pub session_id: SessionId,
    pub payload: Vec<u8>,
}

pub fn encode_message(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    if msg.payload.len() > MAX_PAYLOAD {
        return Err(WireError::TooLong(msg.payload.len() as u64));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + msg.payload.len() + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(msg.kind as u8);
    out.extend_from_slice(&msg.session_id);
    out.extend_from_slice(&(msg.payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&msg.payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parses the header; returns type, session id and payload length.
fn parse_header(header: &[u8; HEADER_LEN]) -> Result<(MessageType, SessionId, usize), WireError> {
    let magic: [u8; 4] = header[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let kind = MessageType::from_code(header[4]).ok_or(WireError::UnknownType(header[4]))?;
    let session_id: SessionId = header[5..21].try_into().expect("16 bytes");
    let len = u64::from_le_bytes(header[21..29].try_into().expect("8 bytes"));
    if len > MAX_PAYLOAD as u64 {
        return Err(WireError::TooLong(len));
    }
    Ok((kind, session_id, len as usize))
}

fn check_crc(frame_without_crc: &[u8], trailer: &[u8]) -> Result<(), WireError> {
    let expected = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(frame_without_crc);
    if expected != actual {
        return Err(WireError::Crc { expected, actual });
    }
    Ok(())
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_message(bytes: &[u8]) -> Result<WireMessage, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN - bytes.len(),
        });
    }
    let (kind, session_id, len) = parse_header(bytes[..HEADER_LEN].try_into().expect("header"))?;
    let total = HEADER_LEN + len + TRAILER_LEN;
    if bytes.len() < total {
        return Err(WireError::Truncated {
            needed: total - bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(WireError::Trailing {
            extra: bytes.len() - total,
        });
    }
    check_crc(&bytes[..total - TRAILER_LEN], &bytes[total - TRAILER_LEN..])?;
    Ok(WireMessage {
        kind,
        session_id,
        payload: bytes[HEADER_LEN..HEADER_LEN + len].to_vec(),
    })
}

/// Reads one frame from a byte stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<WireMessage, WireError> {
    let mut header = [0u8; HEADER_LEN];
    read_full(r, &mut header)?;
    let (kind, session_id, len) = parse_header(&header)?;
    let mut rest = vec![0u8; len + TRAILER_LEN];
    read_full(r, &mut rest)?;
    let mut frame = header.to_vec();
    frame.extend_from_slice(&rest[..len]);
    check_crc(&frame, &rest[len..])?;
    rest.truncate(len);
    Ok(WireMessage {
        kind,
        session_id,
        payload: rest,
    })
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), WireError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(WireError::Truncated {
                    needed: buf.len() - filled,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub fn write_frame<W: Write>(w: &mut W, msg: &WireMessage) -> Result<(), WireError> {
    w.write_all(&encode_message(msg)?)?;
    w.flush()?;
    Ok(())
}

/// Why a session was abandoned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum AbortReason {
    Transport = 1,
    QberExceeded = 2,
    Protocol = 3,
    Verification = 4,
    Config = 5,
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbortReason::Transport => "transport",
            AbortReason::QberExceeded => "qber_exceeded",
            AbortReason::Protocol => "protocol",
            AbortReason::Verification => "verification",
            AbortReason::Config => "config",
        })
    }
}

impl AbortReason {
    fn from_code(code: u8) -> Option<Self> {
        [
            AbortReason::Transport,
            AbortReason::QberExceeded,
            AbortReason::Protocol,
            AbortReason::Verification,
            AbortReason::Config,
        ]
        .into_iter()
        .find(|r| *r as u8 == code)
    }
}

/// Which side sent a Hello.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Role {
    Alice = 1,
    Bob = 2,
}

/// Typed payloads.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        role: Role,
        /// Reserved slot for a keyed authentication tag; zero when unused.
        auth_tag: u64,
        /// Canonical text of the session parameters.
        params: String,
    },
    DetectionIndices {
        pairs: Vec<u64>,
    },
    DiscloseRequest {
        seed: u64,
        dr: f64,
    },
    DiscloseBits {
        bits: Bits,
    },
    QberReport {
        qber: f64,
        code_rate: CodeRate,
        block_len: u64,
        blocks: u64,
        crossover: f64,
        ldpc_seed: u64,
        tag_seed: u64,
    },
    Syndrome {
        block_id: u64,
        syndrome: Bits,
        tag: u64,
    },
    VerifyTag {
        block_id: u64,
        ok: bool,
        tag: u64,
    },
    ToeplitzSeed {
        seed: u64,
        cr: f64,
    },
    FinalAck {
        key_bits: u64,
        key_hash: u64,
    },
    Abort {
        reason: AbortReason,
        detail: String,
    },
}

struct Cursor<'a> {
    kind: MessageType,
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> WireError {
        WireError::Payload {
            kind: self.kind,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(self.err(format!("needs {n} bytes, {} left", self.buf.len())));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn bits(&mut self) -> Result<Bits, WireError> {
        let len = self.u64()?;
        if len.div_ceil(8) > self.buf.len() as u64 {
            return Err(self.err(format!("{len} bits do not fit the payload")));
        }
        let len = len as usize;
        let mut bits = Bits::from_slice(self.take(len.div_ceil(8))?);
        bits.truncate(len);
        Ok(bits)
    }

    fn string(&mut self) -> Result<String, WireError> {
        let len = self.u64()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|e| self.err(e.to_string()))
    }

    fn finish(self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(self.err(format!("{} unread bytes", self.buf.len())))
        }
    }
}

fn put_bits(out: &mut Vec<u8>, bits: &Bits) {
    protocol::write_bits(out, bits).expect("writing to a Vec cannot fail");
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Message {
    pub fn kind(&self) -> MessageType {
        match self {
            Message::Hello { .. } => MessageType::Hello,
            Message::DetectionIndices { .. } => MessageType::DetectionIndices,
            Message::DiscloseRequest { .. } => MessageType::DiscloseRequest,
            Message::DiscloseBits { .. } => MessageType::DiscloseBits,
            Message::QberReport { .. } => MessageType::QberReport,
            Message::Syndrome { .. } => MessageType::Syndrome,
            Message::VerifyTag { .. } => MessageType::VerifyTag,
            Message::ToeplitzSeed { .. } => MessageType::ToeplitzSeed,
            Message::FinalAck { .. } => MessageType::FinalAck,
            Message::Abort { .. } => MessageType::Abort,
        }
    }

    pub fn to_payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Message::Hello { role, auth_tag, params } => {
                out.push(*role as u8);
                out.extend_from_slice(&auth_tag.to_le_bytes());
                put_string(&mut out, params);
            }
            Message::DetectionIndices { pairs } => {
                out.extend_from_slice(&(pairs.len() as u64).to_le_bytes());
                for p in pairs {
                    out.extend_from_slice(&p.to_le_bytes());
                }
            }
            Message::DiscloseRequest { seed, dr } => {
                out.extend_from_slice(&seed.to_le_bytes());
                out.extend_from_slice(&dr.to_le_bytes());
            }
            Message::DiscloseBits { bits } => put_bits(&mut out, bits),
            Message::QberReport {
                qber,
                code_rate,
                block_len,
                blocks,
                crossover,
                ldpc_seed,
                tag_seed,
            } => {
                out.extend_from_slice(&qber.to_le_bytes());
                out.push(*code_rate as u8);
                for v in [*block_len, *blocks] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&crossover.to_le_bytes());
                for v in [*ldpc_seed, *tag_seed] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Message::Syndrome { block_id, syndrome, tag } => {
                out.extend_from_slice(&block_id.to_le_bytes());
                put_bits(&mut out, syndrome);
                out.extend_from_slice(&tag.to_le_bytes());
            }
            Message::VerifyTag { block_id, ok, tag } => {
                out.extend_from_slice(&block_id.to_le_bytes());
                out.push(u8::from(*ok));
                out.extend_from_slice(&tag.to_le_bytes());
            }
            Message::ToeplitzSeed { seed, cr } => {
                out.extend_from_slice(&seed.to_le_bytes());
                out.extend_from_slice(&cr.to_le_bytes());
            }
            Message::FinalAck { key_bits, key_hash } => {
                out.extend_from_slice(&key_bits.to_le_bytes());
                out.extend_from_slice(&key_hash.to_le_bytes());
            }
            Message::Abort { reason, detail } => {
                out.push(*reason as u8);
                put_string(&mut out, detail);
            }
        }
        out
    }

    pub fn from_payload(kind: MessageType, payload: &[u8]) -> Result<Self, WireError> {
        let mut c = Cursor { kind, buf: payload };
        let msg = match kind {
            MessageType::Hello => {
                let role = match c.u8()? {
                    1 => Role::Alice,
                    2 => Role::Bob,
                    other => return Err(c.err(format!("unknown role {other}"))),
                };
                Message::Hello {
                    role,
                    auth_tag: c.u64()?,
                    params: c.string()?,
                }
            }
            MessageType::DetectionIndices => {
                let n = c.u64()?;
                if n > (c.buf.len() / 8) as u64 {
                    return Err(c.err(format!("{n} indices do not fit the payload")));
                }
                let pairs = (0..n).map(|_| c.u64()).collect::<Result<_, _>>()?;
                Message::DetectionIndices { pairs }
            }
            MessageType::DiscloseRequest => Message::DiscloseRequest {
                seed: c.u64()?,
                dr: c.f64()?,
            },
            MessageType::DiscloseBits => Message::DiscloseBits { bits: c.bits()? },
            MessageType::QberReport => {
                let qber = c.f64()?;
                let code_rate = match c.u8()? {
                    0 => CodeRate::Half,
                    1 => CodeRate::ThreeQuarters,
                    2 => CodeRate::FiveSixths,
                    other => return Err(c.err(format!("unknown code rate {other}"))),
                };
                Message::QberReport {
                    qber,
                    code_rate,
                    block_len: c.u64()?,
                    blocks: c.u64()?,
                    crossover: c.f64()?,
                    ldpc_seed: c.u64()?,
                    tag_seed: c.u64()?,
                }
            }
            MessageType::Syndrome => Message::Syndrome {
                block_id: c.u64()?,
                syndrome: c.bits()?,
                tag: c.u64()?,
            },
            MessageType::VerifyTag => Message::VerifyTag {
                block_id: c.u64()?,
                ok: match c.u8()? {
                    0 => false,
                    1 => true,
                    other => return Err(c.err(format!("bad flag {other}"))),
                },
                tag: c.u64()?,
            },
            MessageType::ToeplitzSeed => Message::ToeplitzSeed {
                seed: c.u64()?,
                cr: c.f64()?,
            },
            MessageType::FinalAck => Message::FinalAck {
                key_bits: c.u64()?,
                key_hash: c.u64()?,
            },
            MessageType::Abort => {
                let code = c.u8()?;
                let reason = AbortReason::from_code(code).ok_or_else(|| c.err(format!("unknown reason {code}")))?;
                Message::Abort {
                    reason,
                    detail: c.string()?,
                }
            }
        };
        c.finish()?;
        Ok(msg)
    }

    pub fn into_wire(&self, session_id: SessionId) -> WireMessage {
        WireMessage {
            kind: self.kind(),
            session_id,
            payload: self.to_payload(),
        }
    }

    pub fn from_wire(msg: &WireMessage) -> Result<Self, WireError> {
        Self::from_payload(msg.kind, &msg.payload)
    }
}
