//! Socket session protocol.
//!
//! Producer → monitor: each record (see `frame`) prefixed by its length as a
//! little-endian u32. The session ends with an end-of-stream record; a
//! connection that closes before it is a truncated stream.
//!
//! Monitor → producer: one JSON object per line. Every frame gets exactly
//! one `ack` or `directive` reply, in order; the end-of-stream record gets an
//! `end` reply; a framing or validation failure gets an `error` reply and the
//! session is closed.
//!
//! ```text
//! {"kind":"ack","token":17}
//! {"kind":"directive","token":18,"directive":{...}}
//! {"kind":"end","stream":3,"frames":10000}
//! {"kind":"error","message":"..."}
//! ```
//!
//! The producer keeps at most `budget` frames unanswered and waits for all
//! replies after every step-separator frame, so a directive for token τ
//! reaches it before it sends τ + budget + 1.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use super::frame::{decode_record, encode_record, ActivationFrame, FrameValidator, Record, MAX_CHANNELS, MAX_TEXT};
use crate::error::FrameErrorKind;
use crate::{Error, Level, Result};

/// Largest accepted record on the wire.
const MAX_RECORD: u64 = 27 + 8 * MAX_CHANNELS as u64 + 4 + MAX_TEXT as u64;

/// Next-token constraint for the decoding runtime: emit `force` as token
/// `at`, then decode freely from `resume`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directive {
    pub stream: u64,
    pub level: Level,
    /// Token position that triggered the event.
    pub token: u64,
    pub force: String,
    pub at: u64,
    pub resume: u64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Reply {
    Ack { token: u64 },
    Directive { token: u64, directive: Directive },
    End { stream: u64, frames: u64 },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum SessionOutcome {
    Completed { stream: u64, frames: u64 },
    /// The peer went away before the end-of-stream record.
    Truncated { stream: Option<u64>, frames: u64 },
    Aborted { stream: Option<u64>, frames: u64, reason: String },
}

impl SessionOutcome {
    pub fn frames(&self) -> u64 {
        match self {
            Self::Completed { frames, .. } | Self::Truncated { frames, .. } | Self::Aborted { frames, .. } => *frames,
        }
    }
}

/// Monitor side of one session.
pub trait SessionHandler: Send {
    fn on_frame(&mut self, frame: &ActivationFrame) -> Result<Option<Directive>>;

    /// Called exactly once when the session ends, however it ends.
    fn on_close(&mut self, _outcome: &SessionOutcome) {}
}

fn write_reply(w: &mut impl Write, reply: &Reply) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, reply)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Reads until `buf` is full or EOF; connection errors count as EOF.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> usize {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(_) => break,
        }
    }
    got
}

/// Runs one session to completion on an accepted connection.
pub fn serve_connection<H: SessionHandler + ?Sized>(stream: TcpStream, handler: &mut H) -> Result<SessionOutcome> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut validator = FrameValidator::new();
    let mut body = Vec::new();

    let outcome = loop {
        let frames = validator.frames();
        let abort = |reason: String, validator: &FrameValidator| SessionOutcome::Aborted {
            stream: validator.stream(),
            frames,
            reason,
        };
        let mut len = [0u8; 4];
        if read_full(&mut reader, &mut len) < 4 {
            break SessionOutcome::Truncated { stream: validator.stream(), frames };
        }
        let len = u32::from_le_bytes(len) as u64;
        if len > MAX_RECORD {
            break abort(FrameErrorKind::Oversized(len).to_string(), &validator);
        }
        body.resize(len as usize, 0);
        if read_full(&mut reader, &mut body) < body.len() {
            break SessionOutcome::Truncated { stream: validator.stream(), frames };
        }
        let checked = decode_record(&body).and_then(|r| match &r {
            Record::Frame(f) => validator.check(f).map(|_| r),
            Record::EndOfStream { stream, .. } => validator.check_end(*stream).map(|_| r),
        });
        match checked {
            Err(kind) => break abort(format!("record {frames}: {kind}"), &validator),
            Ok(Record::EndOfStream { stream, .. }) => {
                let stream = validator.stream().unwrap_or(stream);
                let _ = write_reply(&mut writer, &Reply::End { stream, frames });
                break SessionOutcome::Completed { stream, frames };
            }
            Ok(Record::Frame(frame)) => {
                let reply = match handler.on_frame(&frame) {
                    Ok(None) => Reply::Ack { token: frame.token },
                    Ok(Some(directive)) => Reply::Directive { token: frame.token, directive },
                    Err(e) => break abort(e.to_string(), &validator),
                };
                if write_reply(&mut writer, &reply).is_err() {
                    break SessionOutcome::Truncated { stream: validator.stream(), frames: validator.frames() };
                }
            }
        }
    };
    match &outcome {
        SessionOutcome::Aborted { reason, .. } => {
            tracing::warn!(%reason, "session aborted");
            let _ = write_reply(&mut writer, &Reply::Error { message: reason.clone() });
        }
        SessionOutcome::Truncated { stream, frames } => {
            tracing::warn!(?stream, frames, "stream truncated before end-of-stream record");
        }
        SessionOutcome::Completed { .. } => {}
    }
    handler.on_close(&outcome);
    let _ = writer.get_ref().shutdown(Shutdown::Both);
    Ok(outcome)
}

type Sessions = Arc<Mutex<Vec<JoinHandle<Option<SessionOutcome>>>>>;

/// Running accept loop; each connection is served on its own thread.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: JoinHandle<()>,
    sessions: Sessions,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, waits for open sessions, returns their outcomes in
    /// connection order.
    pub fn shutdown(self) -> Vec<SessionOutcome> {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        let _ = self.accept.join();
        let sessions = std::mem::take(&mut *self.sessions.lock().unwrap());
        sessions.into_iter().filter_map(|h| h.join().ok().flatten()).collect()
    }

    /// Blocks for as long as the accept loop runs.
    pub fn wait(self) {
        let _ = self.accept.join();
    }
}

pub fn serve_socket<A, F, H>(addr: A, factory: F) -> Result<ServerHandle>
where
    A: ToSocketAddrs,
    F: Fn() -> H + Send + Sync + 'static,
    H: SessionHandler + 'static,
{
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let sessions: Sessions = Arc::default();
    let accept = {
        let stop = Arc::clone(&stop);
        let sessions = Arc::clone(&sessions);
        std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let conn = match conn {
                    Ok(c) => c,
                    Err(e) => {
                        tracing::warn!(error = %e, "accept failed");
                        continue;
                    }
                };
                let mut handler = factory();
                let session = std::thread::spawn(move || match serve_connection(conn, &mut handler) {
                    Ok(outcome) => Some(outcome),
                    Err(e) => {
                        tracing::warn!(error = %e, "session failed");
                        None
                    }
                });
                sessions.lock().unwrap().push(session);
            }
        })
    };
    Ok(ServerHandle { addr, stop, accept, sessions })
}

/// Producer side of a session.
pub struct StreamClient {
    writer: BufWriter<TcpStream>,
    reader: BufReader<TcpStream>,
    budget: usize,
    in_flight: usize,
    received: Vec<Directive>,
    stream: Option<u64>,
    sent: u64,
    buf: Vec<u8>,
    line: String,
}

pub fn connect_stream(addr: impl ToSocketAddrs, budget: usize) -> Result<StreamClient> {
    if budget == 0 {
        return Err(Error::Config("frame budget must be at least 1".into()));
    }
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    Ok(StreamClient {
        reader: BufReader::new(stream.try_clone()?),
        writer: BufWriter::new(stream),
        budget,
        in_flight: 0,
        received: Vec::new(),
        stream: None,
        sent: 0,
        buf: Vec::new(),
        line: String::new(),
    })
}

impl StreamClient {
    fn read_reply(&mut self) -> Result<Reply> {
        self.line.clear();
        if self.reader.read_line(&mut self.line)? == 0 {
            return Err(Error::Protocol("monitor closed the session".into()));
        }
        let reply: Reply = serde_json::from_str(&self.line)?;
        if let Reply::Error { message } = &reply {
            return Err(Error::Protocol(message.clone()));
        }
        Ok(reply)
    }

    fn recv_one(&mut self) -> Result<()> {
        match self.read_reply()? {
            Reply::Ack { .. } => {}
            Reply::Directive { directive, .. } => self.received.push(directive),
            other => return Err(Error::Protocol(format!("unexpected reply {other:?}"))),
        }
        self.in_flight -= 1;
        Ok(())
    }

    /// Sends one frame, blocking while the budget is exhausted. Returns the
    /// directives that arrived meanwhile.
    pub fn send(&mut self, frame: &ActivationFrame) -> Result<Vec<Directive>> {
        self.wait_for_budget()?;
        self.write_record(&Record::Frame(frame.clone()))?;
        self.stream = Some(frame.stream);
        self.sent += 1;
        self.in_flight += 1;
        if frame.step_end {
            self.drain_pending()?;
        }
        Ok(std::mem::take(&mut self.received))
    }

    fn wait_for_budget(&mut self) -> Result<()> {
        while self.in_flight >= self.budget {
            self.recv_one()?;
        }
        Ok(())
    }

    /// Blocks until another frame may be sent; returns directives received
    /// meanwhile. A producer calls this before decoding its next token.
    pub fn ready(&mut self) -> Result<Vec<Directive>> {
        self.wait_for_budget()?;
        Ok(std::mem::take(&mut self.received))
    }

    fn write_record(&mut self, record: &Record) -> Result<()> {
        self.buf.clear();
        encode_record(record, &mut self.buf);
        self.writer.write_all(&(self.buf.len() as u32).to_le_bytes())?;
        self.writer.write_all(&self.buf)?;
        self.writer.flush()?;
        Ok(())
    }

    fn drain_pending(&mut self) -> Result<()> {
        while self.in_flight > 0 {
            self.recv_one()?;
        }
        Ok(())
    }

    /// Waits for replies to every frame sent so far.
    pub fn drain(&mut self) -> Result<Vec<Directive>> {
        self.drain_pending()?;
        Ok(std::mem::take(&mut self.received))
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    /// Sends the end-of-stream record and waits for the monitor to confirm.
    pub fn finish(mut self) -> Result<Vec<Directive>> {
        self.drain_pending()?;
        let stream = self.stream.unwrap_or(0);
        self.write_record(&Record::EndOfStream { stream, frames: self.sent })?;
        match self.read_reply()? {
            Reply::End { frames, .. } if frames == self.sent => Ok(std::mem::take(&mut self.received)),
            other => Err(Error::Protocol(format!("expected end confirmation, got {other:?}"))),
        }
    }

    /// Drops the connection without an end-of-stream record.
    pub fn abort(self) {
        let _ = self.writer.get_ref().shutdown(Shutdown::Both);
    }
}
