//! Labeled synthetic activation traces.
//!
//! Every channel carries a positive, stationary baseline: a log-normal
//! transform of a unit AR(1) process. Failure patterns are superposed on the
//! channels of their level:
//!
//! - intra: isolated impulses inside the affected steps;
//! - inter: a sinusoid of period `inter_period` tokens across the event span;
//! - instance: elevated, high-variance activity over the prefix that either
//!   collapses to baseline partway through (easy) or persists (hard).
//!
//! Magnitudes are multiples of the baseline noise scale `mean * noise`.

mod corpus;
mod dataset;
mod generate;
mod spec;

pub use corpus::CorpusSpec;
pub use dataset::{build_dataset, dataset_from_traces, split_by_trace, trace_examples};
pub use generate::{generate, read_labels, write_labeled_trace, EventSpan, LabeledTrace, StepLabel, TraceLabels};
pub use spec::{Baseline, InstanceKind, InstanceProfile, Injection, SimSpec};
