//! Online failure monitor.
//!
//! Frames are pushed into one sliding window per level over that level's
//! expert channels. Intra and inter windows hold the last `k` completed steps
//! plus the step in progress; the instance window holds the first `K` steps
//! and is evaluated once, when step `K` completes. A detection above threshold
//! outside the level's refractory span becomes an [`InterventionEvent`].

mod bench;
mod config;
mod engine;
mod replay;
mod score;
mod tracker;

pub use bench::{bench, BenchConfig, BenchReport, BenchRow};
pub use config::{default_layout, Aggregation, ChannelLayout, MonitorConfig, Payloads, ALLOWED_WINDOW_STEPS, NO_THINKING};
pub use engine::{aggregate, decode_constraint, Detectors, InterventionEvent, Monitor, StreamSummary};
pub use replay::{replay, replay_frames, FeatureRow, LogRecord, MonitorSession, ReplayOutput};
pub use score::{score_events, EventScore, LevelScore};
pub use tracker::{FeatureTracker, Observation};
