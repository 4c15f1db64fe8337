//! Length-prefixed framing shared by every channel.
//!
//! ```text
//! 0..4   "NDE4"
//! 4      version = 0x01
//! 5      channel (ORDERS=1, ARCHIVE=2, SOVEREIGN=3)
//! 6..10  payload length, u32 little-endian
//! 10..   payload
//! ```
//!
//! ORDERS payloads are capped at 16 MiB inclusive. Bulk data belongs on the
//! ARCHIVE channel, so oversized workflow payloads are refused, not split.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const FRAME_MAGIC: &[u8; 4] = b"NDE4";
pub const FRAME_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
/// 16 MiB.
pub const ORDERS_PAYLOAD_LIMIT: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Channel {
    Orders = 1,
    Archive = 2,
    Sovereign = 3,
}

impl Channel {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(Channel::Orders),
            2 => Some(Channel::Archive),
            3 => Some(Channel::Sovereign),
            _ => None,
        }
    }

    pub fn payload_limit(&self) -> usize {
        match self {
            Channel::Orders => ORDERS_PAYLOAD_LIMIT,
            Channel::Archive | Channel::Sovereign => u32::MAX as usize,
        }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("payload of {size} bytes exceeds the {limit}-byte {channel:?} limit; route via the archive channel")]
    OversizedPayload {
        channel: Channel,
        size: usize,
        limit: usize,
    },
    #[error("bad frame magic")]
    BadMagic,
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("unknown channel {0}")]
    BadChannel(u8),
    #[error("frame declares {declared} payload bytes but carries {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub channel: Channel,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(channel: Channel, payload: Vec<u8>) -> Self {
        Self { channel, payload }
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        encode_frame(self.channel, &self.payload)
    }
}

fn check_size(channel: Channel, size: usize) -> Result<(), FrameError> {
    let limit = channel.payload_limit();
    if size > limit {
        return Err(FrameError::OversizedPayload { channel, size, limit });
    }
    Ok(())
}

fn header(channel: Channel, len: usize) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(FRAME_MAGIC);
    h[4] = FRAME_VERSION;
    h[5] = channel as u8;
    h[6..].copy_from_slice(&(len as u32).to_le_bytes());
    h
}

pub fn encode_frame(channel: Channel, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    check_size(channel, payload.len())?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&header(channel, payload.len()));
    out.extend_from_slice(payload);
    Ok(out)
}

/// Validate a 10-byte header and return the channel and declared length.
fn parse_header(h: &[u8]) -> Result<(Channel, usize), FrameError> {
    if &h[..4] != FRAME_MAGIC {
        return Err(FrameError::BadMagic);
    }
    if h[4] != FRAME_VERSION {
        return Err(FrameError::BadVersion(h[4]));
    }
    let channel = Channel::from_byte(h[5]).ok_or(FrameError::BadChannel(h[5]))?;
    let len = u32::from_le_bytes([h[6], h[7], h[8], h[9]]) as usize;
    check_size(channel, len)?;
    Ok((channel, len))
}

/// Decode exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != FRAME_MAGIC {
            return Err(FrameError::BadMagic);
        }
        return Err(FrameError::LengthMismatch {
            declared: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let (channel, len) = parse_header(&bytes[..HEADER_LEN])?;
    let actual = bytes.len() - HEADER_LEN;
    if actual != len {
        return Err(FrameError::LengthMismatch { declared: len, actual });
    }
    Ok(Frame {
        channel,
        payload: bytes[HEADER_LEN..].to_vec(),
    })
}

/// Write one frame to a byte stream.
pub fn write_frame<W: Write>(out: &mut W, channel: Channel, payload: &[u8]) -> Result<(), FrameError> {
    check_size(channel, payload.len())?;
    out.write_all(&header(channel, payload.len()))?;
    out.write_all(payload)?;
    out.flush()?;
    Ok(())
}

/// Read one frame from a byte stream. `Ok(None)` on clean end of stream.
pub fn read_frame<R: Read>(input: &mut R) -> Result<Option<Frame>, FrameError> {
    let mut h = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        let n = input.read(&mut h[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(FrameError::LengthMismatch {
                declared: HEADER_LEN,
                actual: filled,
            });
        }
        filled += n;
    }
    let (channel, len) = parse_header(&h)?;
    let mut payload = vec![0u8; len];
    input.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FrameError::LengthMismatch {
                declared: len,
                actual: 0,
            }
        } else {
            FrameError::Io(e)
        }
    })?;
    Ok(Some(Frame { channel, payload }))
}
