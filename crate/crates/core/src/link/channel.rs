//! Byte-stream transports for the classical and quantum channels.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use super::wire::{read_frame, write_frame, Message, SessionId, WireError};

/// One end of an in-memory full-duplex pipe.
pub struct MemoryDuplex {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    offset: usize,
}

impl MemoryDuplex {
    pub fn pair() -> (Self, Self) {
        let (tx_a, rx_b) = channel();
        let (tx_b, rx_a) = channel();
        let end = |tx, rx| Self {
            tx,
            rx,
            pending: Vec::new(),
            offset: 0,
        };
        (end(tx_a, rx_a), end(tx_b, rx_b))
    }
}

impl Read for MemoryDuplex {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        while self.offset == self.pending.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.offset = 0;
                }
                // peer dropped: end of stream
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.offset);
        buf[..n].copy_from_slice(&self.pending[self.offset..self.offset + n]);
        self.offset += n;
        Ok(n)
    }
}

impl Write for MemoryDuplex {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer closed"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Everything written through a [`RecordingTransport`], in order.
pub type Transcript = Arc<Mutex<Vec<u8>>>;

/// Passes bytes through and keeps a copy of everything written.
pub struct RecordingTransport<T> {
    inner: T,
    written: Transcript,
}

impl<T> RecordingTransport<T> {
    pub fn new(inner: T) -> (Self, Transcript) {
        let written = Transcript::default();
        (
            Self {
                inner,
                written: Arc::clone(&written),
            },
            written,
        )
    }
}

impl<T: Read> Read for RecordingTransport<T> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.inner.read(buf)
    }
}

impl<T: Write> Write for RecordingTransport<T> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written.lock().expect("transcript lock").extend_from_slice(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Typed message exchange over a framed byte stream, bound to one session.
pub struct FramedChannel<T> {
    inner: T,
    session_id: SessionId,
}

impl<T: Read + Write> FramedChannel<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            session_id: [0; 16],
        }
    }

    pub fn session_id(&self) -> SessionId {
        self.session_id
    }

    pub fn set_session_id(&mut self, id: SessionId) {
        self.session_id = id;
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        write_frame(&mut self.inner, &msg.into_wire(self.session_id))
    }

    /// Next message; frames from another session are rejected.
    pub fn recv(&mut self) -> Result<Message, WireError> {
        let frame = read_frame(&mut self.inner)?;
        if frame.session_id != self.session_id {
            return Err(WireError::WrongSession);
        }
        Message::from_wire(&frame)
    }

    /// Next message without a session check, for the opening Hello.
    pub fn recv_any(&mut self) -> Result<(SessionId, Message), WireError> {
        let frame = read_frame(&mut self.inner)?;
        Ok((frame.session_id, Message::from_wire(&frame)?))
    }

    pub fn into_inner(self) -> T {
        self.inner
    }
}

/// Alice's side of a TCP deployment: one listener per channel.
pub struct TcpEndpoints {
    pub classical: TcpListener,
    pub quantum: TcpListener,
}

impl TcpEndpoints {
    pub fn bind<A: ToSocketAddrs, B: ToSocketAddrs>(classical: A, quantum: B) -> io::Result<Self> {
        Ok(Self {
            classical: TcpListener::bind(classical)?,
            quantum: TcpListener::bind(quantum)?,
        })
    }

    /// Waits for Bob on the classical then the quantum listener.
    pub fn accept(&self) -> io::Result<(TcpStream, TcpStream)> {
        let (c, _) = self.classical.accept()?;
        let (q, _) = self.quantum.accept()?;
        c.set_nodelay(true)?;
        Ok((c, q))
    }
}

/// Bob's side of a TCP deployment.
pub fn tcp_connect<A: ToSocketAddrs, B: ToSocketAddrs>(classical: A, quantum: B) -> io::Result<(TcpStream, TcpStream)> {
    let c = TcpStream::connect(classical)?;
    c.set_nodelay(true)?;
    let q = TcpStream::connect(quantum)?;
    Ok((c, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::wire::{AbortReason, Role};

    #[test]
    fn duplex_carries_bytes_both_ways() {
        let (mut a, mut b) = MemoryDuplex::pair();
        a.write_all(b"hello").unwrap();
        b.write_all(b"world!").unwrap();
        let mut buf = [0u8; 5];
        b.read_exact(&mut buf).unwrap();
        assert_eq!(&buf, b"hello");
        let mut buf = [0u8; 6];
        a.read_exact(&mut buf).unwrap();
        assert_eq!(&buf, b"world!");
        drop(a);
        assert_eq!(b.read(&mut buf).unwrap(), 0);
        assert!(b.write_all(b"x").is_err());
    }

    #[test]
    fn framed_channel_checks_session() {
        let (a, b) = MemoryDuplex::pair();
        let (mut a, mut b) = (FramedChannel::new(a), FramedChannel::new(b));
        a.set_session_id([1; 16]);
        let hello = Message::Hello {
            role: Role::Alice,
            auth_tag: 0,
            params: String::new(),
        };
        a.send(&hello).unwrap();
        let (sid, msg) = b.recv_any().unwrap();
        assert_eq!((sid, msg), ([1; 16], hello));
        a.send(&Message::Abort {
            reason: AbortReason::Protocol,
            detail: "x".into(),
        })
        .unwrap();
        assert!(matches!(b.recv(), Err(WireError::WrongSession)));
    }

    #[test]
    fn recording_keeps_written_bytes() {
        let (a, mut b) = MemoryDuplex::pair();
        let (mut rec, transcript) = RecordingTransport::new(a);
        rec.write_all(b"abc").unwrap();
        rec.write_all(b"def").unwrap();
        let mut buf = [0u8; 6];
        b.read_exact(&mut buf).unwrap();
        assert_eq!(&*transcript.lock().unwrap(), b"abcdef");
    }

    #[test]
    fn tcp_round_trip() {
        let endpoints = TcpEndpoints::bind("127.0.0.1:0", "127.0.0.1:0").unwrap();
        let ca = endpoints.classical.local_addr().unwrap();
        let qa = endpoints.quantum.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut c, mut q) = endpoints.accept().unwrap();
            let mut buf = [0u8; 4];
            c.read_exact(&mut buf).unwrap();
            q.write_all(&buf).unwrap();
        });
        let (mut c, mut q) = tcp_connect(ca, qa).unwrap();
        c.write_all(b"ping").unwrap();
        let mut buf = [0u8; 4];
        q.read_exact(&mut buf).unwrap();
        assert_eq!(&buf, b"ping");
        server.join().unwrap();
    }
}
