use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{InstanceKind, Injection, SimSpec};
use crate::{Error, Result};

/// A population of traces with randomly placed failure patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub traces: usize,
    pub seed: u64,
    /// Template for every trace; its seed, stream, injections and instance kind are replaced.
    pub base: SimSpec,
    /// Probability that a trace carries intra events.
    pub intra_rate: f64,
    pub inter_rate: f64,
    /// Probability that a trace is an easy instance.
    pub easy_rate: f64,
    /// Upper bound on events per level in one trace.
    pub max_events: usize,
    /// Minimum distance between onsets of same-level events, in steps.
    pub min_gap_steps: usize,
    /// Earliest onset step.
    pub first_onset: usize,
    pub intra_magnitude: f64,
    pub inter_magnitude: f64,
    pub inter_duration: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            traces: 200,
            seed: 0,
            base: SimSpec::default(),
            intra_rate: 0.5,
            inter_rate: 0.5,
            easy_rate: 0.5,
            max_events: 2,
            min_gap_steps: 12,
            first_onset: 2,
            intra_magnitude: 20.0,
            inter_magnitude: 15.0,
            inter_duration: 3,
        }
    }
}

fn rate(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1]")))
    }
}

/// Up to `count` sorted onsets in `lo..hi` at least `gap` apart.
fn onsets(rng: &mut ChaCha8Rng, count: usize, lo: usize, hi: usize, gap: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    if hi <= lo {
        return out;
    }
    for _ in 0..count {
        for _ in 0..64 {
            let s = rng.random_range(lo..hi);
            if out.iter().all(|&o| o.abs_diff(s) >= gap) {
                out.push(s);
                break;
            }
        }
    }
    out.sort_unstable();
    out
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.traces == 0 {
            return Err(Error::Config("corpus needs at least one trace".into()));
        }
        rate("intra_rate", self.intra_rate)?;
        rate("inter_rate", self.inter_rate)?;
        rate("easy_rate", self.easy_rate)?;
        if self.max_events == 0 || self.inter_duration == 0 {
            return Err(Error::Config("max_events and inter_duration must be positive".into()));
        }
        if !(self.intra_magnitude > 0.0) || !(self.inter_magnitude > 0.0) {
            return Err(Error::Config("magnitudes must be positive".into()));
        }
        SimSpec { injections: vec![], ..self.base.clone() }.validate()
    }

    /// Per-trace specs, deterministic in `seed`.
    pub fn specs(&self) -> Result<Vec<SimSpec>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let steps = self.base.steps;
        (0..self.traces)
            .map(|i| {
                let mut spec = self.base.clone();
                spec.seed = rng.random();
                spec.stream = i as u64;
                spec.injections.clear();
                if rng.random_bool(self.intra_rate) {
                    let n = rng.random_range(1..=self.max_events);
                    for s in onsets(&mut rng, n, self.first_onset, steps, self.min_gap_steps) {
                        spec.injections.push(Injection::intra(s, self.intra_magnitude));
                    }
                }
                if rng.random_bool(self.inter_rate) {
                    let n = rng.random_range(1..=self.max_events);
                    let hi = steps.saturating_sub(self.inter_duration) + 1;
                    let gap = self.min_gap_steps.max(self.inter_duration);
                    for s in onsets(&mut rng, n, self.first_onset, hi, gap) {
                        spec.injections.push(Injection::inter(s, self.inter_duration, self.inter_magnitude));
                    }
                }
                spec.instance =
                    if rng.random_bool(self.easy_rate) { InstanceKind::Easy } else { InstanceKind::Hard };
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }
}
