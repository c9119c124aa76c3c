//! Binary record layout, little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "NRMN"
//! 4       2     version (1)
//! 6       8     stream id
//! 14      8     token index
//! 22      1     flags: 0x01 step end, 0x02 has text, 0x80 end of stream
//! 23      4     channel count n
//! 27      8n    channel values (f64)
//! [27+8n  4     text length m, only when flags & 0x02]
//! [31+8n  m     UTF-8 token text]
//! ```
//!
//! The end-of-stream record carries flag 0x80, no channels and no text; its
//! token index is the number of frames that preceded it.

use serde::{Deserialize, Serialize};

use crate::error::FrameErrorKind;

pub const FRAME_MAGIC: &[u8; 4] = b"NRMN";
pub const FRAME_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 27;

pub const FLAG_STEP_END: u8 = 0x01;
pub const FLAG_HAS_TEXT: u8 = 0x02;
pub const FLAG_END_OF_STREAM: u8 = 0x80;
const KNOWN_FLAGS: u8 = FLAG_STEP_END | FLAG_HAS_TEXT | FLAG_END_OF_STREAM;

pub(crate) const MAX_CHANNELS: u32 = 1 << 20;
pub(crate) const MAX_TEXT: u32 = 1 << 24;

/// One token's activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationFrame {
    pub stream: u64,
    pub token: u64,
    pub channels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// The token completes a step separator.
    #[serde(default)]
    pub step_end: bool,
}

impl ActivationFrame {
    pub fn new(stream: u64, token: u64, channels: Vec<f64>) -> Self {
        Self { stream, token, channels, text: None, step_end: false }
    }

    pub fn with_step_end(mut self, step_end: bool) -> Self {
        self.step_end = step_end;
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Frame(ActivationFrame),
    EndOfStream { stream: u64, frames: u64 },
}

pub fn encode_record(record: &Record, out: &mut Vec<u8>) {
    let (stream, token, flags, channels, text): (u64, u64, u8, &[f64], Option<&str>) = match record {
        Record::Frame(f) => {
            let mut flags = 0;
            if f.step_end {
                flags |= FLAG_STEP_END;
            }
            if f.text.is_some() {
                flags |= FLAG_HAS_TEXT;
            }
            (f.stream, f.token, flags, &f.channels, f.text.as_deref())
        }
        Record::EndOfStream { stream, frames } => (*stream, *frames, FLAG_END_OF_STREAM, &[], None),
    };
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.extend_from_slice(&stream.to_le_bytes());
    out.extend_from_slice(&token.to_le_bytes());
    out.push(flags);
    out.extend_from_slice(&(channels.len() as u32).to_le_bytes());
    for v in channels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(t) = text {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        out.extend_from_slice(t.as_bytes());
    }
}

/// Parsed fixed header; tells the caller how many more bytes the record needs.
pub(crate) struct Header {
    pub stream: u64,
    pub token: u64,
    pub flags: u8,
    pub channels: u32,
}

pub(crate) fn parse_header(b: &[u8; HEADER_LEN]) -> Result<Header, FrameErrorKind> {
    let magic: [u8; 4] = b[0..4].try_into().unwrap();
    if &magic != FRAME_MAGIC {
        return Err(FrameErrorKind::BadMagic(magic));
    }
    let version = u16::from_le_bytes(b[4..6].try_into().unwrap());
    if version != FRAME_VERSION {
        return Err(FrameErrorKind::UnsupportedVersion(version));
    }
    let h = Header {
        stream: u64::from_le_bytes(b[6..14].try_into().unwrap()),
        token: u64::from_le_bytes(b[14..22].try_into().unwrap()),
        flags: b[22],
        channels: u32::from_le_bytes(b[23..27].try_into().unwrap()),
    };
    if h.flags & !KNOWN_FLAGS != 0 {
        return Err(FrameErrorKind::Malformed(format!("unknown flag bits {:#04x}", h.flags)));
    }
    if h.flags & FLAG_END_OF_STREAM != 0 && (h.flags != FLAG_END_OF_STREAM || h.channels != 0) {
        return Err(FrameErrorKind::Malformed("end-of-stream record carries payload".into()));
    }
    if h.channels > MAX_CHANNELS {
        return Err(FrameErrorKind::Oversized(h.channels as u64));
    }
    Ok(h)
}

pub(crate) fn parse_channels(raw: &[u8]) -> Result<Vec<f64>, FrameErrorKind> {
    let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    match values.iter().position(|v| !v.is_finite()) {
        Some(channel) => Err(FrameErrorKind::NonFinite { channel }),
        None => Ok(values),
    }
}

pub(crate) fn finish_record(h: Header, channels: Vec<f64>, text: Option<Vec<u8>>) -> Result<Record, FrameErrorKind> {
    if h.flags & FLAG_END_OF_STREAM != 0 {
        return Ok(Record::EndOfStream { stream: h.stream, frames: h.token });
    }
    let text = match text {
        Some(bytes) => Some(String::from_utf8(bytes).map_err(|_| FrameErrorKind::InvalidText)?),
        None => None,
    };
    Ok(Record::Frame(ActivationFrame {
        stream: h.stream,
        token: h.token,
        channels,
        text,
        step_end: h.flags & FLAG_STEP_END != 0,
    }))
}

/// Decodes exactly one record occupying all of `bytes`.
pub fn decode_record(bytes: &[u8]) -> Result<Record, FrameErrorKind> {
    let head: &[u8; HEADER_LEN] = bytes.get(..HEADER_LEN).ok_or(FrameErrorKind::Truncated)?.try_into().unwrap();
    let h = parse_header(head)?;
    let end = HEADER_LEN + 8 * h.channels as usize;
    let channels = parse_channels(bytes.get(HEADER_LEN..end).ok_or(FrameErrorKind::Truncated)?)?;
    let mut used = end;
    let text = if h.flags & FLAG_HAS_TEXT != 0 {
        let len_bytes = bytes.get(end..end + 4).ok_or(FrameErrorKind::Truncated)?;
        let len = u32::from_le_bytes(len_bytes.try_into().unwrap());
        if len > MAX_TEXT {
            return Err(FrameErrorKind::Oversized(len as u64));
        }
        used = end + 4 + len as usize;
        Some(bytes.get(end + 4..used).ok_or(FrameErrorKind::Truncated)?.to_vec())
    } else {
        None
    };
    if used != bytes.len() {
        return Err(FrameErrorKind::TrailingData);
    }
    finish_record(h, channels, text)
}

/// Per-stream invariants: one stream id, constant channel count, strictly
/// increasing token indices, finite values.
#[derive(Debug, Clone, Default)]
pub struct FrameValidator {
    stream: Option<u64>,
    channels: Option<usize>,
    last_token: Option<u64>,
    frames: u64,
}

impl FrameValidator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, frame: &ActivationFrame) -> Result<(), FrameErrorKind> {
        if let Some(expected) = self.stream {
            if frame.stream != expected {
                return Err(FrameErrorKind::StreamIdChanged { expected, got: frame.stream });
            }
        }
        if let Some(expected) = self.channels {
            if frame.channels.len() != expected {
                return Err(FrameErrorKind::ChannelCount { expected, got: frame.channels.len() });
            }
        }
        if let Some(previous) = self.last_token {
            if frame.token <= previous {
                return Err(FrameErrorKind::NonMonotoneIndex { previous, got: frame.token });
            }
        }
        if let Some(channel) = frame.channels.iter().position(|v| !v.is_finite()) {
            return Err(FrameErrorKind::NonFinite { channel });
        }
        self.stream = Some(frame.stream);
        self.channels = Some(frame.channels.len());
        self.last_token = Some(frame.token);
        self.frames += 1;
        Ok(())
    }

    pub fn check_end(&self, stream: u64) -> Result<(), FrameErrorKind> {
        match self.stream {
            Some(expected) if expected != stream => Err(FrameErrorKind::StreamIdChanged { expected, got: stream }),
            _ => Ok(()),
        }
    }

    pub fn stream(&self) -> Option<u64> {
        self.stream
    }

    pub fn channels(&self) -> Option<usize> {
        self.channels
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }
}
