use std::collections::VecDeque;
use std::sync::Arc;

use super::config::MonitorConfig;
use crate::ingest::ActivationFrame;
use crate::spectral::{FeatureVector, ProbeSet, SpectralWindow};
use crate::{Error, Level, PerLevel, Result};

/// Sliding window over one level's channels, keyed on step boundaries.
#[derive(Debug, Clone)]
struct StepWindow {
    window: SpectralWindow,
    channels: Vec<usize>,
    /// Token counts of the completed steps currently in the window.
    steps: VecDeque<usize>,
    /// Tokens of the step in progress.
    current: usize,
    /// Completed steps kept; `None` never pops.
    keep: Option<usize>,
}

impl StepWindow {
    fn new(channels: &[usize], probes: &Arc<ProbeSet>, keep: Option<usize>, config: &MonitorConfig) -> Self {
        let window = SpectralWindow::new(channels.len(), Arc::clone(probes))
            .with_rebuild_interval(config.rebuild())
            .with_epsilon(config.epsilon);
        Self { window, channels: channels.to_vec(), steps: VecDeque::new(), current: 0, keep }
    }

    fn push(&mut self, frame: &ActivationFrame, scratch: &mut Vec<f64>) -> Result<()> {
        scratch.clear();
        scratch.extend(self.channels.iter().map(|&c| frame.channels[c]));
        self.window.push(scratch)?;
        self.current += 1;
        if frame.step_end {
            self.steps.push_back(std::mem::take(&mut self.current));
            if let Some(keep) = self.keep {
                while self.steps.len() > keep {
                    let oldest = self.steps.pop_front().expect("more than keep steps");
                    self.window.pop(oldest)?;
                }
            }
        }
        Ok(())
    }
}

/// What happened on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub token: u64,
    /// Zero-based index of the step this token belongs to.
    pub step: u64,
    pub step_end: bool,
    /// Levels whose features were refreshed on this frame.
    pub evaluated: PerLevel<bool>,
}

/// Per-level windows and their per-channel features, shared by the monitor
/// and by dataset construction so both see identical windows.
#[derive(Debug, Clone)]
pub struct FeatureTracker {
    intra: StepWindow,
    inter: StepWindow,
    inst: Option<StepWindow>,
    inst_prefix: usize,
    stride: usize,
    required: usize,
    width: Option<usize>,
    completed_steps: u64,
    tokens: u64,
    scratch: Vec<f64>,
    features: PerLevel<Vec<FeatureVector>>,
}

impl FeatureTracker {
    pub fn new(config: &MonitorConfig) -> Result<Self> {
        config.validate()?;
        let probes = Arc::new(config.probes.clone());
        Ok(Self {
            intra: StepWindow::new(&config.channels.intra, &probes, Some(config.k_intra), config),
            inter: StepWindow::new(&config.channels.inter, &probes, Some(config.k_inter), config),
            inst: Some(StepWindow::new(&config.channels.inst, &probes, None, config)),
            inst_prefix: config.inst_prefix,
            stride: config.stride,
            required: config.required_channels(),
            width: None,
            completed_steps: 0,
            tokens: 0,
            scratch: Vec::new(),
            features: PerLevel::default(),
        })
    }

    fn check_width(&mut self, frame: &ActivationFrame) -> Result<()> {
        let got = frame.channels.len();
        match self.width {
            Some(w) if w != got => Err(Error::Config(format!("frame {} has {got} channels, stream has {w}", frame.token))),
            None if got < self.required => Err(Error::Config(format!(
                "frames carry {got} channels but the layout references channel {}",
                self.required - 1
            ))),
            _ => {
                self.width = Some(got);
                Ok(())
            }
        }
    }

    pub fn observe(&mut self, frame: &ActivationFrame) -> Result<Observation> {
        self.check_width(frame)?;
        let step = self.completed_steps;
        self.intra.push(frame, &mut self.scratch)?;
        self.inter.push(frame, &mut self.scratch)?;
        if let Some(inst) = &mut self.inst {
            inst.push(frame, &mut self.scratch)?;
        }
        self.tokens += 1;
        if frame.step_end {
            self.completed_steps += 1;
        }

        let mut evaluated = PerLevel::new(false, false, false);
        if self.tokens.is_multiple_of(self.stride as u64) {
            for (level, w) in [(Level::Intra, &self.intra), (Level::Inter, &self.inter)] {
                if w.window.len() >= 2 {
                    w.window.features_into(level, &mut self.features[level])?;
                    evaluated[level] = true;
                }
            }
        }
        if frame.step_end && self.completed_steps == self.inst_prefix as u64 {
            if let Some(inst) = self.inst.take() {
                if inst.window.len() >= 2 {
                    inst.window.features_into(Level::Inst, &mut self.features.inst)?;
                    evaluated.inst = true;
                }
            }
        }
        Ok(Observation { token: frame.token, step, step_end: frame.step_end, evaluated })
    }

    /// Per-channel features from the most recent evaluation of `level`.
    pub fn features(&self, level: Level) -> &[FeatureVector] {
        &self.features[level]
    }

    pub fn completed_steps(&self) -> u64 {
        self.completed_steps
    }

    pub fn tokens(&self) -> u64 {
        self.tokens
    }

    /// Tokens currently held by a level's window.
    pub fn window_len(&self, level: Level) -> usize {
        match level {
            Level::Intra => self.intra.window.len(),
            Level::Inter => self.inter.window.len(),
            Level::Inst => self.inst.as_ref().map_or(0, |w| w.window.len()),
        }
    }

    /// Token counts of the completed steps inside a level's window.
    pub fn window_steps(&self, level: Level) -> Vec<usize> {
        match level {
            Level::Intra => self.intra.steps.iter().copied().collect(),
            Level::Inter => self.inter.steps.iter().copied().collect(),
            Level::Inst => self.inst.as_ref().map_or_else(Vec::new, |w| w.steps.iter().copied().collect()),
        }
    }
}
