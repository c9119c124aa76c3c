use serde::{Deserialize, Serialize};

use crate::{Error, Level, Result};

/// A level-tagged feature tuple fed to that level's detector.
///
/// | level | values |
/// |-------|--------|
/// | intra | `(r_hf, entropy, log_energy)` |
/// | inter | `(r_dom, entropy)` |
/// | inst  | `(r_lf, entropy)` |
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    level: Level,
    values: [f64; 3],
}

impl FeatureVector {
    pub fn intra(high_ratio: f64, entropy: f64, log_energy: f64) -> Self {
        Self { level: Level::Intra, values: [high_ratio, entropy, log_energy] }
    }

    pub fn inter(dominant_ratio: f64, entropy: f64) -> Self {
        Self { level: Level::Inter, values: [dominant_ratio, entropy, 0.0] }
    }

    pub fn inst(low_ratio: f64, entropy: f64) -> Self {
        Self { level: Level::Inst, values: [low_ratio, entropy, 0.0] }
    }

    pub fn new(level: Level, values: &[f64]) -> Result<Self> {
        if values.len() != level.dim() {
            return Err(Error::Shape { expected: level.dim(), got: values.len() });
        }
        let mut v = [0.0; 3];
        v[..values.len()].copy_from_slice(values);
        Ok(Self { level, values: v })
    }

    /// Builds the level's tuple from a power summary and window energy.
    pub fn from_summary(level: Level, summary: &PowerSummary, energy: f64, epsilon: f64) -> Self {
        match level {
            Level::Intra => Self::intra(summary.high_ratio, summary.entropy, (energy.max(0.0) + epsilon).ln()),
            Level::Inter => Self::inter(summary.dominant_ratio, summary.entropy),
            Level::Inst => Self::inst(summary.low_ratio, summary.entropy),
        }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.level.dim()]
    }

    pub fn entropy(&self) -> f64 {
        self.values[1]
    }

    /// Element-wise mean of same-level vectors.
    pub fn mean(vectors: &[FeatureVector]) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::Config("cannot average an empty feature set".into()))?;
        let mut acc = [0.0; 3];
        for v in vectors {
            if v.level != first.level {
                return Err(Error::InvalidInput("mixed feature levels".into()));
            }
            for (a, x) in acc.iter_mut().zip(v.values) {
                *a += x;
            }
        }
        let n = vectors.len() as f64;
        Ok(Self { level: first.level, values: acc.map(|a| a / n) })
    }
}

/// Normalized statistics of a non-DC power distribution `P̃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSummary {
    /// `Σ P̃`, at most 1.
    pub total: f64,
    /// Shannon entropy of `P̃` divided by `ln(len)`; 0 when `len <= 1`.
    pub entropy: f64,
    /// Mass of the upper part of the distribution (indices `>= split`).
    pub high_ratio: f64,
    /// Mass of the lower part (indices `< split`).
    pub low_ratio: f64,
    /// Largest single entry.
    pub dominant_ratio: f64,
}

impl PowerSummary {
    /// `power` holds the non-DC powers in ascending frequency order.
    pub fn from_power(power: &[f64], split: usize, epsilon: f64) -> Self {
        let z = power.iter().sum::<f64>() + epsilon;
        let mut total = 0.0;
        let mut high = 0.0;
        let mut low = 0.0;
        let mut dominant = 0.0f64;
        let mut plogp = 0.0;
        for (i, &p) in power.iter().enumerate() {
            let pn = p / z;
            total += pn;
            if i >= split {
                high += pn;
            } else {
                low += pn;
            }
            dominant = dominant.max(pn);
            if pn > 0.0 {
                plogp += pn * pn.ln();
            }
        }
        let entropy = if power.len() > 1 {
            (-plogp / (power.len() as f64).ln()).clamp(0.0, 1.0)
        } else {
            0.0
        };
        Self {
            total: total.min(1.0),
            entropy,
            high_ratio: high.min(1.0),
            low_ratio: low.min(1.0),
            dominant_ratio: dominant.min(1.0),
        }
    }
}
