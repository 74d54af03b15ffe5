//! Ordered, reliable, bidirectional byte channels carrying wire frames.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::wire::WireMessage;
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

pub trait Transport {
    fn send(&mut self, msg: &WireMessage) -> Result<()>;
    /// Block for the next frame, failing with [`Error::Timeout`] after the
    /// transport's timeout.
    fn recv(&mut self) -> Result<WireMessage>;
}

/// One end of an in-process byte pipe pair.
pub struct Loopback {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pending: VecDeque<u8>,
    timeout: Duration,
}

impl Loopback {
    /// Two connected ends.
    pub fn pair(timeout: Duration) -> (Self, Self) {
        let (tx_a, rx_b) = channel();
        let (tx_b, rx_a) = channel();
        let end = |tx, rx| Self {
            tx,
            rx,
            pending: VecDeque::new(),
            timeout,
        };
        (end(tx_a, rx_a), end(tx_b, rx_b))
    }
}

impl Read for Loopback {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pending.is_empty() {
            match self.rx.recv_timeout(self.timeout) {
                Ok(chunk) => self.pending.extend(chunk),
                Err(RecvTimeoutError::Timeout) => return Err(io::ErrorKind::TimedOut.into()),
                // peer dropped its end
                Err(RecvTimeoutError::Disconnected) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len());
        for (dst, src) in buf.iter_mut().zip(self.pending.drain(..n)) {
            *dst = src;
        }
        Ok(n)
    }
}

impl Write for Loopback {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "loopback peer closed"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Transport for Loopback {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        msg.write_to(self)
    }

    fn recv(&mut self) -> Result<WireMessage> {
        WireMessage::read_from(self)
    }
}

/// A TCP connection carrying one pairing.
pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| Error::Config("address resolved to nothing".into()))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        Self::from_stream(stream, timeout)
    }

    /// Wait for a single peer on `listener`.
    pub fn accept(listener: &TcpListener, timeout: Duration) -> Result<Self> {
        let (stream, _) = listener.accept()?;
        Self::from_stream(stream, timeout)
    }

    pub fn from_stream(stream: TcpStream, timeout: Duration) -> Result<Self> {
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        msg.write_to(&mut self.stream)
    }

    fn recv(&mut self) -> Result<WireMessage> {
        WireMessage::read_from(&mut self.stream)
    }
}
