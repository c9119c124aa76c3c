use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::frame::{
    encode_record, finish_record, parse_channels, parse_header, ActivationFrame, FrameValidator, Record,
    FLAG_HAS_TEXT, HEADER_LEN, MAX_TEXT,
};
use crate::error::FrameErrorKind;
use crate::util::write_atomic;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Binary,
    /// One JSON object per line.
    Text,
}

impl TraceFormat {
    /// `.jsonl`/`.json`/`.txt` select text, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json" | "txt") => Self::Text,
            _ => Self::Binary,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TextRecord {
    End { end: bool, stream: u64, frames: u64 },
    Frame(ActivationFrame),
}

fn frame_err(offset: u64, kind: FrameErrorKind) -> Error {
    Error::Frame { offset, kind }
}

/// Reads frames in order, validating per-stream invariants.
///
/// Errors carry the byte offset of the record in which they were found. A
/// trace that ends without an end-of-stream record is an error.
pub struct TraceReader<R> {
    inner: R,
    format: TraceFormat,
    offset: u64,
    validator: FrameValidator,
    done: bool,
    line: String,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(inner: R, format: TraceFormat) -> Self {
        Self { inner, format, offset: 0, validator: FrameValidator::new(), done: false, line: String::new() }
    }

    /// Detects the format from the first byte.
    pub fn detect(mut inner: R) -> Result<Self> {
        let format = match inner.fill_buf()?.first() {
            Some(b'{') | Some(b' ') | Some(b'\n') => TraceFormat::Text,
            _ => TraceFormat::Binary,
        };
        Ok(Self::new(inner, format))
    }

    pub fn format(&self) -> TraceFormat {
        self.format
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn stream(&self) -> Option<u64> {
        self.validator.stream()
    }

    pub fn channels(&self) -> Option<usize> {
        self.validator.channels()
    }

    fn read_full(&mut self, buf: &mut [u8]) -> Result<usize> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(got)
    }

    fn next_binary(&mut self) -> Result<Option<Record>> {
        let start = self.offset;
        let mut head = [0u8; HEADER_LEN];
        let got = self.read_full(&mut head)?;
        if got == 0 {
            return Ok(None);
        }
        if got < HEADER_LEN {
            return Err(frame_err(start, FrameErrorKind::Truncated));
        }
        let h = parse_header(&head).map_err(|k| frame_err(start, k))?;
        let mut raw = vec![0u8; 8 * h.channels as usize];
        if self.read_full(&mut raw)? < raw.len() {
            return Err(frame_err(start, FrameErrorKind::Truncated));
        }
        let mut len = HEADER_LEN + raw.len();
        let channels = parse_channels(&raw).map_err(|k| frame_err(start, k))?;
        let text = if h.flags & FLAG_HAS_TEXT != 0 {
            let mut n = [0u8; 4];
            if self.read_full(&mut n)? < 4 {
                return Err(frame_err(start, FrameErrorKind::Truncated));
            }
            let n = u32::from_le_bytes(n);
            if n > MAX_TEXT {
                return Err(frame_err(start, FrameErrorKind::Oversized(n as u64)));
            }
            let mut t = vec![0u8; n as usize];
            if self.read_full(&mut t)? < t.len() {
                return Err(frame_err(start, FrameErrorKind::Truncated));
            }
            len += 4 + t.len();
            Some(t)
        } else {
            None
        };
        self.offset += len as u64;
        finish_record(h, channels, text).map(Some).map_err(|k| frame_err(start, k))
    }

    fn next_text(&mut self) -> Result<Option<Record>> {
        loop {
            let start = self.offset;
            self.line.clear();
            let n = self.inner.read_line(&mut self.line)?;
            if n == 0 {
                return Ok(None);
            }
            self.offset += n as u64;
            if !self.line.ends_with('\n') {
                return Err(frame_err(start, FrameErrorKind::Truncated));
            }
            let line = self.line.trim();
            if line.is_empty() {
                continue;
            }
            let rec: TextRecord = serde_json::from_str(line)
                .map_err(|e| frame_err(start, FrameErrorKind::Malformed(e.to_string())))?;
            return Ok(Some(match rec {
                TextRecord::End { end: true, stream, frames } => Record::EndOfStream { stream, frames },
                TextRecord::End { .. } => {
                    return Err(frame_err(start, FrameErrorKind::Malformed("\"end\" must be true".into())))
                }
                TextRecord::Frame(f) => Record::Frame(f),
            }));
        }
    }

    fn next_record(&mut self) -> Result<Option<ActivationFrame>> {
        let start = self.offset;
        let record = match self.format {
            TraceFormat::Binary => self.next_binary()?,
            TraceFormat::Text => self.next_text()?,
        };
        match record {
            None => Err(frame_err(start, FrameErrorKind::MissingEndOfStream)),
            Some(Record::Frame(f)) => {
                self.validator.check(&f).map_err(|k| frame_err(start, k))?;
                Ok(Some(f))
            }
            Some(Record::EndOfStream { stream, .. }) => {
                self.validator.check_end(stream).map_err(|k| frame_err(start, k))?;
                let trailing = match self.format {
                    TraceFormat::Binary => !self.inner.fill_buf()?.is_empty(),
                    TraceFormat::Text => {
                        let mut rest = String::new();
                        self.inner.read_to_string(&mut rest)?;
                        !rest.trim().is_empty()
                    }
                };
                if trailing {
                    return Err(frame_err(self.offset, FrameErrorKind::TrailingData));
                }
                Ok(None)
            }
        }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<ActivationFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(f)) => Some(Ok(f)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<TraceReader<BufReader<File>>> {
    TraceReader::detect(BufReader::new(File::open(path)?))
}

/// Writes a validated stream and closes it with an end-of-stream record.
pub struct TraceWriter<W: Write> {
    inner: W,
    format: TraceFormat,
    validator: FrameValidator,
    buf: Vec<u8>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(inner: W, format: TraceFormat) -> Self {
        Self { inner, format, validator: FrameValidator::new(), buf: Vec::new() }
    }

    pub fn write(&mut self, frame: &ActivationFrame) -> Result<()> {
        let index = self.validator.frames();
        self.validator.check(frame).map_err(|kind| Error::Frame { offset: index, kind })?;
        match self.format {
            TraceFormat::Binary => {
                self.buf.clear();
                encode_record(&Record::Frame(frame.clone()), &mut self.buf);
                self.inner.write_all(&self.buf)?;
            }
            TraceFormat::Text => {
                serde_json::to_writer(&mut self.inner, frame)?;
                self.inner.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        let stream = self.validator.stream().unwrap_or(0);
        let frames = self.validator.frames();
        match self.format {
            TraceFormat::Binary => {
                self.buf.clear();
                encode_record(&Record::EndOfStream { stream, frames }, &mut self.buf);
                self.inner.write_all(&self.buf)?;
            }
            TraceFormat::Text => {
                serde_json::to_writer(&mut self.inner, &TextRecord::End { end: true, stream, frames })?;
                self.inner.write_all(b"\n")?;
            }
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn write_trace<'a>(
    path: impl AsRef<Path>,
    frames: impl IntoIterator<Item = &'a ActivationFrame>,
    format: TraceFormat,
) -> Result<()> {
    write_atomic(path.as_ref(), |w| {
        let mut tw = TraceWriter::new(w, format);
        for f in frames {
            tw.write(f)?;
        }
        tw.finish()?;
        Ok(())
    })
}
