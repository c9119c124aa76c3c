//! Activation-frame file and wire formats.
//!
//! A trace is a sequence of per-token frames for one stream, closed by an
//! explicit end-of-stream record. Two encodings share the same validation:
//! a binary record format and a JSON-lines text format. See `frame` for the
//! byte layout and `wire` for the socket session protocol.

mod frame;
mod steps;
mod trace;
pub mod wire;

pub use frame::{
    decode_record, encode_record, ActivationFrame, FrameValidator, Record, FLAG_END_OF_STREAM, FLAG_HAS_TEXT,
    FLAG_STEP_END, FRAME_MAGIC, FRAME_VERSION, HEADER_LEN,
};
pub use steps::{derive_step_flags, StepDetector, STEP_SEPARATOR};
pub use trace::{read_trace, write_trace, TraceFormat, TraceReader, TraceWriter};
pub use wire::{connect_stream, serve_connection, serve_socket, Directive, ServerHandle, SessionHandler, SessionOutcome, StreamClient};
