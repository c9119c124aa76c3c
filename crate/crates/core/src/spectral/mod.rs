//! Frequency-domain features of activation magnitudes.
//!
//! Two routes compute the same family of features:
//!
//! - [`dft`] works on a complete series with a full DFT over the
//!   non-redundant bins `f = 1..=floor(T/2)+1`.
//! - [`window`] keeps a sliding window of arbitrary, changing length and
//!   evaluates a fixed [`ProbeSet`] of angular frequencies with O(N·K) work
//!   per pushed or popped token, independent of the window length.
//!
//! In both routes the DC component is excluded, the remaining power is
//! normalized with a small `epsilon`, and the features are read off the
//! normalized distribution.

pub mod dft;
mod features;
mod probes;
mod series;
pub mod window;

pub use dft::{dft_spectrum, inst_features, inter_features, intra_features, spectral_entropy, Spectrum};
pub use features::{FeatureVector, PowerSummary};
pub use probes::ProbeSet;
pub use series::ActivationSeries;
pub use window::SpectralWindow;

/// Stabilizer added to every normalizer and logarithm argument.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Window operations between mandatory exact rebuilds of the phase registers.
pub const DEFAULT_REBUILD_INTERVAL: usize = 4096;
