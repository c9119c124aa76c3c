//! Streaming detection of reasoning-failure patterns in neuron-activation traces.
//!
//! The crate is organised bottom-up:
//!
//! - [`spectral`] computes frequency-domain features, exactly (full DFT) or
//!   incrementally over a variable-length sliding window of fixed probes.
//! - [`mon`] selects expert neuron clusters from attribution scores.
//! - [`classifier`] holds the three-layer MLP detectors, their trainer and
//!   their on-disk format.
//! - [`sim`] generates labeled synthetic traces and detector datasets.
//! - [`monitor`] is the online engine that turns frames into intervention
//!   events.
//! - [`ingest`] defines the frame file/wire formats and the socket session.
//! - [`reconstruct`] builds trigger-annotated fine-tuning corpora.

pub mod classifier;
pub mod error;
pub mod ingest;
pub mod level;
pub mod mon;
pub mod monitor;
pub mod reconstruct;
pub mod sim;
pub mod spectral;
pub mod util;

pub use error::{Error, FrameErrorKind, Result};
pub use level::{Level, PerLevel};
