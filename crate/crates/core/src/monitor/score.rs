use serde::{Deserialize, Serialize};

use super::config::MonitorConfig;
use super::engine::InterventionEvent;
use crate::sim::TraceLabels;
use crate::{Level, PerLevel};

/// Event-level agreement with ground truth for one level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    /// Ground-truth events.
    pub events: u64,
    /// Ground-truth events matched by at least one emitted event.
    pub detected: u64,
    /// Emitted events.
    pub fired: u64,
    /// Emitted events that match no ground-truth event.
    pub false_events: u64,
    /// Steps outside every event's tolerance span.
    pub clean_steps: u64,
}

impl LevelScore {
    pub fn recall(&self) -> f64 {
        if self.events == 0 {
            1.0
        } else {
            self.detected as f64 / self.events as f64
        }
    }

    pub fn precision(&self) -> f64 {
        if self.fired == 0 {
            1.0
        } else {
            (self.fired - self.false_events) as f64 / self.fired as f64
        }
    }

    pub fn false_per_100_clean_steps(&self) -> f64 {
        if self.clean_steps == 0 {
            if self.false_events == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            100.0 * self.false_events as f64 / self.clean_steps as f64
        }
    }

    fn add(&mut self, o: &LevelScore) {
        self.events += o.events;
        self.detected += o.detected;
        self.fired += o.fired;
        self.false_events += o.false_events;
        self.clean_steps += o.clean_steps;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EventScore {
    pub levels: PerLevel<LevelScore>,
}

impl EventScore {
    pub fn merge(&mut self, other: &EventScore) {
        for level in Level::ALL {
            self.levels[level].add(&other.levels[level]);
        }
    }
}

/// Scores emitted events against a trace's labels.
///
/// An intra or inter event counts as a detection when its step lies in
/// `[onset, end - 1 + k]` of an injected event of the same level. An
/// instance event is correct only on an easy trace, at the step completing
/// the prefix, with the configured payload. Everything else is a false event.
pub fn score_events(labels: &TraceLabels, events: &[InterventionEvent], config: &MonitorConfig) -> EventScore {
    let steps = labels.steps.len() as u64;
    let mut score = EventScore::default();
    for level in Level::ALL {
        let spans: Vec<(u64, u64)> = labels
            .events(level)
            .map(|e| match level {
                Level::Inst => {
                    let at = config.inst_prefix as u64 - 1;
                    (at, at)
                }
                _ => (e.onset_step as u64, (e.end_step as u64).saturating_sub(1) + config.window_steps(level) as u64),
            })
            .collect();
        let mut hit = vec![false; spans.len()];
        let s = &mut score.levels[level];
        s.events = spans.len() as u64;
        for ev in events.iter().filter(|e| e.level == level) {
            s.fired += 1;
            let ok_payload = ev.payload == config.payloads.get(level);
            let matched = spans.iter().position(|&(a, b)| ok_payload && ev.step >= a && ev.step <= b);
            match matched {
                Some(i) => hit[i] = true,
                None => s.false_events += 1,
            }
        }
        s.detected = hit.iter().filter(|&&h| h).count() as u64;
        let mut covered = vec![false; steps as usize];
        for &(a, b) in &spans {
            let (a, b) = if level == Level::Inst { (0, b) } else { (a, b) };
            for st in a..=b.min(steps.saturating_sub(1)) {
                covered[st as usize] = true;
            }
        }
        s.clean_steps = covered.iter().filter(|&&c| !c).count() as u64;
    }
    score
}
