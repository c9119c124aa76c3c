use serde::{Deserialize, Serialize};

use crate::spectral::{ProbeSet, DEFAULT_EPSILON, DEFAULT_REBUILD_INTERVAL};
use crate::{Error, Level, PerLevel, Result};

/// Window sizes accepted without an explicit override.
pub const ALLOWED_WINDOW_STEPS: [usize; 3] = [2, 4, 8];

/// Inserted to end deliberation on an easy instance.
pub const NO_THINKING: &str = "Okay, I have finished thinking.";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Average each feature over the level's channels, then one detector call.
    #[default]
    MeanFeatures,
    /// One detector call per channel; the largest probability wins.
    MaxProbability,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-features" | "mean" => Ok(Self::MeanFeatures),
            "max-probability" | "max" => Ok(Self::MaxProbability),
            other => Err(Error::Config(format!("unknown aggregation '{other}' (mean-features | max-probability)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Payloads {
    pub intra: String,
    pub inter: String,
    pub inst: String,
}

impl Default for Payloads {
    fn default() -> Self {
        Self { intra: "<INTRA>".into(), inter: "<INTER>".into(), inst: NO_THINKING.into() }
    }
}

impl Payloads {
    pub fn get(&self, level: Level) -> &str {
        match level {
            Level::Intra => &self.intra,
            Level::Inter => &self.inter,
            Level::Inst => &self.inst,
        }
    }
}

/// Frame channel indices watched at each level.
pub type ChannelLayout = PerLevel<Vec<usize>>;

/// Twelve channels, four per level.
pub fn default_layout() -> ChannelLayout {
    PerLevel::new((0..4).collect(), (4..8).collect(), (8..12).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    /// Completed steps kept in the intra window.
    pub k_intra: usize,
    /// Completed steps kept in the inter window.
    pub k_inter: usize,
    /// Steps in the instance prefix; the instance detector runs once when it completes.
    pub inst_prefix: usize,
    /// Accept window sizes outside {2, 4, 8}.
    pub custom_windows: bool,
    pub threshold_intra: f64,
    pub threshold_inter: f64,
    pub threshold_inst: f64,
    /// Steps after an event during which the same level stays silent; `None` means `2k`.
    pub refractory_steps: Option<usize>,
    pub aggregation: Aggregation,
    pub probes: ProbeSet,
    pub payloads: Payloads,
    pub channels: ChannelLayout,
    /// Evaluate intra and inter detectors every `stride` tokens.
    pub stride: usize,
    pub epsilon: f64,
    /// Exact accumulator rebuild period in window operations; 0 disables it.
    pub rebuild_interval: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            k_intra: 4,
            k_inter: 4,
            inst_prefix: 4,
            custom_windows: false,
            threshold_intra: 0.5,
            threshold_inter: 0.5,
            threshold_inst: 0.5,
            refractory_steps: None,
            aggregation: Aggregation::MeanFeatures,
            probes: ProbeSet::default(),
            payloads: Payloads::default(),
            channels: default_layout(),
            stride: 1,
            epsilon: DEFAULT_EPSILON,
            rebuild_interval: DEFAULT_REBUILD_INTERVAL,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("k_intra", self.k_intra), ("k_inter", self.k_inter), ("inst_prefix", self.inst_prefix)] {
            if k == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
            if !self.custom_windows && !ALLOWED_WINDOW_STEPS.contains(&k) {
                return Err(Error::Config(format!(
                    "{name} = {k} is not one of {ALLOWED_WINDOW_STEPS:?}; set custom_windows to override"
                )));
            }
        }
        for level in Level::ALL {
            let t = self.threshold(level);
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("threshold_{level} = {t} must lie in (0, 1)")));
            }
            let ch = &self.channels[level];
            if ch.is_empty() {
                return Err(Error::Config(format!("no channels configured for level {level}")));
            }
            let mut sorted = ch.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != ch.len() {
                return Err(Error::Config(format!("duplicate channel index for level {level}")));
            }
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.payloads.intra.is_empty() || self.payloads.inter.is_empty() || self.payloads.inst.is_empty() {
            return Err(Error::Config("trigger payloads must be non-empty".into()));
        }
        Ok(())
    }

    pub fn threshold(&self, level: Level) -> f64 {
        match level {
            Level::Intra => self.threshold_intra,
            Level::Inter => self.threshold_inter,
            Level::Inst => self.threshold_inst,
        }
    }

    /// Window size in steps: `k` for intra/inter, `K` for the instance prefix.
    pub fn window_steps(&self, level: Level) -> usize {
        match level {
            Level::Intra => self.k_intra,
            Level::Inter => self.k_inter,
            Level::Inst => self.inst_prefix,
        }
    }

    pub fn refractory(&self, level: Level) -> usize {
        self.refractory_steps.unwrap_or(2 * self.window_steps(level))
    }

    /// Smallest frame width covering every configured channel.
    pub fn required_channels(&self) -> usize {
        self.channels.iter().flat_map(|(_, c)| c.iter()).max().map_or(0, |m| m + 1)
    }

    pub fn rebuild(&self) -> Option<usize> {
        (self.rebuild_interval > 0).then_some(self.rebuild_interval)
    }
}
