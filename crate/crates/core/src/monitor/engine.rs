use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{Aggregation, MonitorConfig};
use super::tracker::{FeatureTracker, Observation};
use crate::classifier::MlpModel;
use crate::ingest::{ActivationFrame, Directive};
use crate::spectral::FeatureVector;
use crate::{Error, Level, PerLevel, Result};

/// Detector probability for one level's window.
pub fn aggregate(features: &[FeatureVector], model: &MlpModel, mode: Aggregation) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::Config("cannot aggregate an empty neuron set".into()));
    }
    match mode {
        Aggregation::MeanFeatures => model.forward(&FeatureVector::mean(features)?),
        Aggregation::MaxProbability => {
            let mut best = f64::NEG_INFINITY;
            for f in features {
                best = best.max(model.forward(f)?);
            }
            Ok(best)
        }
    }
}

/// Trained detectors, one optional model per level.
#[derive(Debug, Clone, Default)]
pub struct Detectors {
    models: PerLevel<Option<MlpModel>>,
}

impl Detectors {
    pub fn new(intra: Option<MlpModel>, inter: Option<MlpModel>, inst: Option<MlpModel>) -> Result<Self> {
        let models = PerLevel::new(intra, inter, inst);
        for (slot, model) in models.iter() {
            if let Some(m) = model {
                if m.level() != slot {
                    return Err(Error::Config(format!("a {} model was given for the {slot} detector", m.level())));
                }
            }
        }
        Ok(Self { models })
    }

    pub fn get(&self, level: Level) -> Option<&MlpModel> {
        self.models[level].as_ref()
    }

    /// Refuses any model trained against a different probe set.
    pub fn check(&self, config: &MonitorConfig) -> Result<()> {
        for (_, m) in self.models.iter() {
            if let Some(m) = m {
                m.ensure_probes(&config.probes)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionEvent {
    pub stream: u64,
    /// Token position τ at which the failure was detected.
    pub token: u64,
    pub step: u64,
    pub level: Level,
    pub payload: String,
    pub probability: f64,
    /// Ordinal of the evaluated window for this level.
    pub window: u64,
}

/// Next-token constraint for an event: force the payload at τ+1 and resume
/// free decoding at τ+2.
pub fn decode_constraint(event: Option<&InterventionEvent>) -> Option<Directive> {
    event.map(|e| Directive {
        stream: e.stream,
        level: e.level,
        token: e.token,
        force: e.payload.clone(),
        at: e.token + 1,
        resume: e.token + 2,
        probability: e.probability,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub stream: Option<u64>,
    pub frames: u64,
    pub steps: u64,
    pub events: PerLevel<u64>,
    pub truncated: bool,
}

/// Per-stream monitoring state. Models and configuration are shared.
pub struct Monitor {
    config: Arc<MonitorConfig>,
    detectors: Arc<Detectors>,
    tracker: FeatureTracker,
    stream: Option<u64>,
    frames: u64,
    ended: bool,
    /// First step at which each level may fire again.
    quiet_until: PerLevel<u64>,
    windows: PerLevel<u64>,
    events: PerLevel<u64>,
    last_probability: PerLevel<Option<f64>>,
}

impl Monitor {
    pub fn new(config: Arc<MonitorConfig>, detectors: Arc<Detectors>) -> Result<Self> {
        config.validate()?;
        detectors.check(&config)?;
        let tracker = FeatureTracker::new(&config)?;
        Ok(Self {
            config,
            detectors,
            tracker,
            stream: None,
            frames: 0,
            ended: false,
            quiet_until: PerLevel::default(),
            windows: PerLevel::default(),
            events: PerLevel::default(),
            last_probability: PerLevel::default(),
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn tracker(&self) -> &FeatureTracker {
        &self.tracker
    }

    /// Probability computed for `level` on the latest frame, if it was evaluated.
    pub fn last_probability(&self, level: Level) -> Option<f64> {
        self.last_probability[level]
    }

    pub fn on_frame(&mut self, frame: &ActivationFrame) -> Result<Option<InterventionEvent>> {
        Ok(self.step(frame)?.1)
    }

    /// Like [`Monitor::on_frame`], also returning what the tracker did.
    pub fn step(&mut self, frame: &ActivationFrame) -> Result<(Observation, Option<InterventionEvent>)> {
        if self.ended {
            return Err(Error::Protocol(format!("frame {} arrived after end of stream", frame.token)));
        }
        match self.stream {
            Some(s) if s != frame.stream => {
                return Err(Error::Protocol(format!("frame for stream {} on stream {s}", frame.stream)))
            }
            _ => self.stream = Some(frame.stream),
        }
        let obs = self.tracker.observe(frame)?;
        self.frames += 1;
        self.last_probability = PerLevel::default();

        let mut fired = None;
        for level in [Level::Inst, Level::Intra, Level::Inter] {
            if !obs.evaluated[level] {
                continue;
            }
            self.windows[level] += 1;
            let Some(model) = self.detectors.get(level) else { continue };
            let p = aggregate(self.tracker.features(level), model, self.config.aggregation)?;
            self.last_probability[level] = Some(p);
            if fired.is_none() && p >= self.config.threshold(level) && obs.step >= self.quiet_until[level] {
                fired = Some((level, p));
            }
        }
        let event = fired.map(|(level, probability)| {
            self.quiet_until[level] = obs.step + self.config.refractory(level) as u64;
            self.events[level] += 1;
            InterventionEvent {
                stream: frame.stream,
                token: frame.token,
                step: obs.step,
                level,
                payload: self.config.payloads.get(level).to_string(),
                probability,
                window: self.windows[level],
            }
        });
        if let Some(e) = &event {
            tracing::debug!(level = %e.level, token = e.token, step = e.step, p = e.probability, "intervention");
        }
        Ok((obs, event))
    }

    /// Closes the stream; further frames are protocol errors.
    pub fn finish(&mut self, truncated: bool) -> StreamSummary {
        self.ended = true;
        StreamSummary {
            stream: self.stream,
            frames: self.frames,
            steps: self.tracker.completed_steps(),
            events: self.events,
            truncated,
        }
    }
}
