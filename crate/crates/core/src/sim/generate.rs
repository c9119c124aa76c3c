use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::spec::{InstanceKind, SimSpec};
use crate::ingest::{write_trace, ActivationFrame, TraceFormat};
use crate::monitor::ChannelLayout;
use crate::util::write_atomic;
use crate::{Level, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLabel {
    pub step: usize,
    pub first_token: u64,
    pub tokens: usize,
    pub intra: bool,
    pub inter: bool,
    pub inst: bool,
}

impl StepLabel {
    pub fn get(&self, level: Level) -> bool {
        match level {
            Level::Intra => self.intra,
            Level::Inter => self.inter,
            Level::Inst => self.inst,
        }
    }
}

/// Steps `[onset_step, end_step)` and tokens `[first_token, end_token)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpan {
    pub level: Level,
    pub onset_step: usize,
    pub end_step: usize,
    pub first_token: u64,
    pub end_token: u64,
}

/// Ground truth for one trace, keyed by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLabels {
    pub stream: u64,
    pub seed: u64,
    pub channels: usize,
    pub layout: ChannelLayout,
    pub instance: InstanceKind,
    pub inst_prefix: usize,
    pub steps: Vec<StepLabel>,
    pub events: Vec<EventSpan>,
    pub impulse_tokens: Vec<u64>,
}

impl TraceLabels {
    pub fn tokens(&self) -> u64 {
        self.steps.last().map_or(0, |s| s.first_token + s.tokens as u64)
    }

    pub fn events(&self, level: Level) -> impl Iterator<Item = &EventSpan> {
        self.events.iter().filter(move |e| e.level == level)
    }

    /// Any impulse among tokens `[first, end)`.
    pub fn has_impulse(&self, first: u64, end: u64) -> bool {
        let i = self.impulse_tokens.partition_point(|&t| t < first);
        self.impulse_tokens.get(i).is_some_and(|&t| t < end)
    }

    /// Fraction of tokens `[first, end)` inside an inter event.
    pub fn inter_fraction(&self, first: u64, end: u64) -> f64 {
        if end <= first {
            return 0.0;
        }
        let covered: u64 = self
            .events(Level::Inter)
            .map(|e| end.min(e.end_token).saturating_sub(first.max(e.first_token)))
            .sum();
        covered as f64 / (end - first) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrace {
    pub frames: Vec<ActivationFrame>,
    pub labels: TraceLabels,
}

/// Unit-variance AR(1) sample path.
fn ar1(rng: &mut ChaCha8Rng, len: usize, phi: f64) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut z: f64 = rng.sample(StandardNormal);
    (0..len)
        .map(|_| {
            let v = z;
            let e: f64 = rng.sample(StandardNormal);
            z = phi * z + innov * e;
            v
        })
        .collect()
}

pub fn generate(spec: &SimSpec) -> Result<LabeledTrace> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [lo, hi] = spec.tokens_per_step;
    let lens: Vec<usize> = (0..spec.steps).map(|_| rng.random_range(lo..=hi)).collect();
    let mut starts = Vec::with_capacity(spec.steps + 1);
    let mut acc = 0usize;
    for &l in &lens {
        starts.push(acc);
        acc += l;
    }
    starts.push(acc);
    let total = acc;

    let b = spec.baseline;
    let sigma = b.noise_scale();
    let mut values = vec![vec![0.0; spec.channels]; total];
    let mut base = Vec::with_capacity(spec.channels);
    for n in 0..spec.channels {
        let z = ar1(&mut rng, total, b.correlation);
        for t in 0..total {
            values[t][n] = b.mean * (b.noise * z[t]).exp();
        }
        base.push(z);
    }

    let p = spec.instance_profile;
    let prefix_end = starts[p.prefix_steps.min(spec.steps)];
    let collapse_at = match spec.instance {
        InstanceKind::Easy => {
            let frac = rng.random_range(p.collapse[0]..=p.collapse[1]);
            Some((frac * prefix_end as f64).round() as usize)
        }
        InstanceKind::Hard => None,
    };
    for &c in &spec.layout.inst {
        let active = ar1(&mut rng, total, p.active_correlation);
        for t in 0..total {
            // weight of the active regime; decays to the channel's own baseline after collapse
            let w = match collapse_at {
                Some(tc) if t >= tc => (-((t - tc) as f64) / p.decay_tokens).exp(),
                _ => 1.0,
            };
            let level = b.mean * (1.0 + (p.active_level - 1.0) * w);
            let log = w * p.active_noise * active[t] + (1.0 - w) * b.noise * base[c][t];
            values[t][c] = level * log.exp();
        }
    }

    let mut step_flags = vec![[false; 3]; spec.steps];
    let mut events = Vec::new();
    let mut impulses = Vec::new();
    let span = |onset: usize, duration: usize| {
        let end = (onset + duration).min(spec.steps);
        (onset, end, starts[onset], starts[end])
    };

    for inj in &spec.injections {
        let (s0, s1, t0, t1) = span(inj.onset_step, inj.duration_steps);
        events.push(EventSpan { level: inj.level, onset_step: s0, end_step: s1, first_token: t0 as u64, end_token: t1 as u64 });
        let height = inj.magnitude * sigma;
        match inj.level {
            Level::Intra => {
                for s in s0..s1 {
                    step_flags[s][0] = true;
                    let count = inj.impulses.unwrap_or_else(|| rng.random_range(1..=2)).min(lens[s]);
                    for i in sample(&mut rng, lens[s], count) {
                        let t = starts[s] + i;
                        impulses.push(t as u64);
                        for &c in &spec.layout.intra {
                            values[t][c] += height;
                        }
                    }
                }
            }
            Level::Inter => {
                let phase: f64 = rng.random_range(0.0..TAU);
                for s in s0..s1 {
                    step_flags[s][1] = true;
                }
                for t in t0..t1 {
                    let wave = height * (TAU * (t - t0) as f64 / spec.inter_period + phase).sin();
                    for &c in &spec.layout.inter {
                        values[t][c] += wave;
                    }
                }
            }
            Level::Inst => unreachable!("rejected by validation"),
        }
    }

    if spec.instance == InstanceKind::Easy {
        for flags in step_flags.iter_mut().take(p.prefix_steps) {
            flags[2] = true;
        }
        events.push(EventSpan {
            level: Level::Inst,
            onset_step: 0,
            end_step: p.prefix_steps,
            first_token: 0,
            end_token: prefix_end as u64,
        });
    }

    impulses.sort_unstable();
    impulses.dedup();
    let frames = values
        .into_iter()
        .enumerate()
        .map(|(t, mut v)| {
            v.iter_mut().for_each(|x| *x = x.min(spec.ceiling));
            let step_end = starts[1..].binary_search(&(t + 1)).is_ok();
            ActivationFrame::new(spec.stream, t as u64, v).with_step_end(step_end)
        })
        .collect();
    let steps = (0..spec.steps)
        .map(|s| StepLabel {
            step: s,
            first_token: starts[s] as u64,
            tokens: lens[s],
            intra: step_flags[s][0],
            inter: step_flags[s][1],
            inst: step_flags[s][2],
        })
        .collect();
    Ok(LabeledTrace {
        frames,
        labels: TraceLabels {
            stream: spec.stream,
            seed: spec.seed,
            channels: spec.channels,
            layout: spec.layout.clone(),
            instance: spec.instance,
            inst_prefix: p.prefix_steps,
            steps,
            events,
            impulse_tokens: impulses,
        },
    })
}

/// Writes the trace and a JSON label sidecar next to it (`<path>.labels.json`).
pub fn write_labeled_trace(trace: &LabeledTrace, path: &Path, format: TraceFormat) -> Result<std::path::PathBuf> {
    let sidecar = sidecar_path(path);
    write_atomic(&sidecar, |w| {
        serde_json::to_writer_pretty(&mut *w, &trace.labels)?;
        w.write_all(b"\n")?;
        Ok(())
    })?;
    write_trace(path, &trace.frames, format)?;
    Ok(sidecar)
}

pub(crate) fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".labels.json");
    path.with_file_name(name)
}

/// Reads the label sidecar of a trace file, or a sidecar path directly.
pub fn read_labels(path: &Path) -> Result<TraceLabels> {
    let p = if path.to_string_lossy().ends_with(".labels.json") { path.to_path_buf() } else { sidecar_path(path) };
    let bytes = std::fs::read(&p)?;
    Ok(serde_json::from_slice(&bytes)?)
}
