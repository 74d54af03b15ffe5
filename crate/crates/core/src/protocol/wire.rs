//! Frame layout: 4-byte big-endian body length, 1-byte type, 1-byte version,
//! then the body.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 6;
/// Largest body accepted from a peer.
pub const MAX_BODY_LEN: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MsgType {
    Init = 1,
    SyncSnippet = 2,
    Commit = 3,
    Result = 4,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            1 => MsgType::Init,
            2 => MsgType::SyncSnippet,
            3 => MsgType::Commit,
            4 => MsgType::Result,
            other => return Err(Error::Protocol(format!("unknown message type {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Init => "INIT",
            MsgType::SyncSnippet => "SYNC_SNIPPET",
            MsgType::Commit => "COMMIT",
            MsgType::Result => "RESULT",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub version: u8,
    pub body: Vec<u8>,
}

impl WireMessage {
    pub fn new(msg_type: MsgType, body: Vec<u8>) -> Self {
        Self {
            msg_type,
            version: PROTOCOL_VERSION,
            body,
        }
    }

    pub fn serialize(&self) -> Result<Vec<u8>> {
        if self.body.len() > MAX_BODY_LEN {
            return Err(Error::Framing(format!(
                "body of {} bytes exceeds the {MAX_BODY_LEN}-byte limit",
                self.body.len()
            )));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len());
        out.extend_from_slice(&(self.body.len() as u32).to_be_bytes());
        out.push(self.msg_type as u8);
        out.push(self.version);
        out.extend_from_slice(&self.body);
        Ok(out)
    }

    /// Parse one frame from the front of `bytes`, returning it and the number
    /// of bytes consumed.
    pub fn deserialize(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Framing(format!(
                "need {HEADER_LEN} header bytes, have {}",
                bytes.len()
            )));
        }
        let (len, msg_type, version) = parse_header(bytes[..HEADER_LEN].try_into().expect("sliced"))?;
        let available = bytes.len() - HEADER_LEN;
        if available < len {
            return Err(Error::Framing(format!("declared body of {len} bytes, {available} available")));
        }
        let msg = Self {
            msg_type,
            version,
            body: bytes[HEADER_LEN..HEADER_LEN + len].to_vec(),
        };
        Ok((msg, HEADER_LEN + len))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.serialize()?)?;
        w.flush()?;
        Ok(())
    }

    /// Read exactly one frame. End of stream inside a frame is a framing error.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        read_exact(r, &mut header)?;
        let (len, msg_type, version) = parse_header(&header)?;
        let mut body = vec![0u8; len];
        read_exact(r, &mut body)?;
        Ok(Self {
            msg_type,
            version,
            body,
        })
    }
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(usize, MsgType, u8)> {
    let len = u32::from_be_bytes([h[0], h[1], h[2], h[3]]) as usize;
    if len > MAX_BODY_LEN {
        return Err(Error::Framing(format!("declared body of {len} bytes exceeds the limit")));
    }
    let msg_type = MsgType::from_byte(h[4])?;
    if h[5] != PROTOCOL_VERSION {
        return Err(Error::Protocol(format!("unsupported protocol version {}", h[5])));
    }
    Ok((len, msg_type, h[5]))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Framing("stream ended inside a frame".into()),
        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => Error::Timeout,
        _ => Error::Io(e),
    })
}
