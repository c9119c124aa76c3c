use serde::{Deserialize, Serialize};

use crate::monitor::{default_layout, ChannelLayout};
use crate::{Error, Level, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Baseline {
    /// Typical magnitude.
    pub mean: f64,
    /// Standard deviation of the log-magnitude.
    pub noise: f64,
    /// Lag-one autocorrelation of the log-magnitude.
    pub correlation: f64,
}

impl Default for Baseline {
    fn default() -> Self {
        Self { mean: 2.0, noise: 0.1, correlation: 0.3 }
    }
}

impl Baseline {
    /// Magnitude unit for injections.
    pub fn noise_scale(&self) -> f64 {
        self.mean * self.noise
    }
}

/// One injected failure pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub level: Level,
    pub onset_step: usize,
    #[serde(default = "one")]
    pub duration_steps: usize,
    /// Impulse height (intra) or sinusoid amplitude (inter), in noise-scale units.
    pub magnitude: f64,
    /// Impulses per affected step; drawn from 1..=2 when absent. Intra only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impulses: Option<usize>,
}

fn one() -> usize {
    1
}

impl Injection {
    pub fn intra(onset_step: usize, magnitude: f64) -> Self {
        Self { level: Level::Intra, onset_step, duration_steps: 1, magnitude, impulses: None }
    }

    pub fn inter(onset_step: usize, duration_steps: usize, magnitude: f64) -> Self {
        Self { level: Level::Inter, onset_step, duration_steps, magnitude, impulses: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    /// Activity collapses early: the model could stop thinking.
    Easy,
    /// Activity stays high throughout.
    #[default]
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceProfile {
    /// Steps in the instance prefix `K`.
    pub prefix_steps: usize,
    /// Active magnitude as a multiple of the baseline mean.
    pub active_level: f64,
    /// Log-magnitude standard deviation while active.
    pub active_noise: f64,
    /// Lag-one autocorrelation of the active log-magnitude.
    pub active_correlation: f64,
    /// Collapse point as a fraction of the prefix tokens, drawn uniformly.
    pub collapse: [f64; 2],
    /// Exponential decay constant of the collapse, in tokens.
    pub decay_tokens: f64,
}

impl Default for InstanceProfile {
    fn default() -> Self {
        Self {
            prefix_steps: 4,
            active_level: 5.0,
            active_noise: 0.1,
            active_correlation: 0.0,
            collapse: [0.1, 0.25],
            decay_tokens: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub seed: u64,
    pub stream: u64,
    pub channels: usize,
    pub layout: ChannelLayout,
    pub steps: usize,
    /// Inclusive bounds on tokens per step.
    pub tokens_per_step: [usize; 2],
    pub baseline: Baseline,
    /// Inter-pattern period in tokens.
    pub inter_period: f64,
    /// Generated magnitudes are clamped to this.
    pub ceiling: f64,
    pub injections: Vec<Injection>,
    pub instance: InstanceKind,
    pub instance_profile: InstanceProfile,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            stream: 0,
            channels: 12,
            layout: default_layout(),
            steps: 32,
            tokens_per_step: [12, 24],
            baseline: Baseline::default(),
            inter_period: 12.0,
            ceiling: 1e3,
            injections: Vec::new(),
            instance: InstanceKind::Hard,
            instance_profile: InstanceProfile::default(),
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.steps == 0 {
            return bad("channels and steps must be positive".into());
        }
        for (level, chans) in self.layout.iter() {
            if chans.is_empty() {
                return bad(format!("no channels assigned to {level}"));
            }
            if let Some(c) = chans.iter().find(|&&c| c >= self.channels) {
                return bad(format!("{level} channel {c} outside 0..{}", self.channels));
            }
        }
        let [lo, hi] = self.tokens_per_step;
        if lo < 1 || lo > hi {
            return bad(format!("tokens_per_step [{lo}, {hi}] must satisfy 1 <= min <= max"));
        }
        let b = &self.baseline;
        if !(b.mean > 0.0 && b.mean.is_finite()) || !(b.noise >= 0.0 && b.noise.is_finite()) {
            return bad("baseline mean must be positive and noise non-negative".into());
        }
        if !(b.correlation.abs() < 1.0) {
            return bad("baseline correlation must lie in (-1, 1)".into());
        }
        if !(self.ceiling > 0.0 && self.ceiling.is_finite()) {
            return bad("ceiling must be positive and finite".into());
        }
        if !(self.inter_period >= 2.0 && self.inter_period.is_finite()) {
            return bad("inter_period must be at least 2 tokens".into());
        }
        for (i, inj) in self.injections.iter().enumerate() {
            if inj.level == Level::Inst {
                return bad(format!("injection {i}: instance behavior is set by `instance`, not by an injection"));
            }
            if inj.onset_step >= self.steps {
                return bad(format!("injection {i}: onset step {} outside trace of {} steps", inj.onset_step, self.steps));
            }
            if inj.duration_steps == 0 {
                return bad(format!("injection {i}: duration must be positive"));
            }
            if !(inj.magnitude > 0.0 && inj.magnitude.is_finite()) {
                return bad(format!("injection {i}: magnitude must be positive"));
            }
            if inj.impulses == Some(0) {
                return bad(format!("injection {i}: impulse count must be positive"));
            }
        }
        let p = &self.instance_profile;
        if p.prefix_steps == 0 {
            return bad("instance prefix must be positive".into());
        }
        if self.instance == InstanceKind::Easy && p.prefix_steps > self.steps {
            return bad(format!("instance prefix of {} steps exceeds trace length {}", p.prefix_steps, self.steps));
        }
        if !(p.active_level > 0.0) || !(p.active_noise >= 0.0) || !(p.active_correlation.abs() < 1.0) {
            return bad("instance activity parameters out of range".into());
        }
        let [c0, c1] = p.collapse;
        if !(0.0..=1.0).contains(&c0) || !(0.0..=1.0).contains(&c1) || c0 > c1 {
            return bad("instance collapse range must lie in [0, 1] with min <= max".into());
        }
        if !(p.decay_tokens > 0.0) {
            return bad("instance decay must be positive".into());
        }
        Ok(())
    }
}
