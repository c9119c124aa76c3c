use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::config::MonitorConfig;
use super::engine::{decode_constraint, Detectors, InterventionEvent, Monitor, StreamSummary};
use crate::ingest::{read_trace, ActivationFrame, Directive, SessionHandler, SessionOutcome};
use crate::spectral::FeatureVector;
use crate::util::write_atomic;
use crate::{Level, Result};

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum LogRecord {
    Event(InterventionEvent),
    End(StreamSummary),
    /// The stream stopped before its end-of-stream marker.
    Truncated(StreamSummary),
}

impl LogRecord {
    fn finish(summary: StreamSummary) -> Self {
        if summary.truncated {
            Self::Truncated(summary)
        } else {
            Self::End(summary)
        }
    }
}

/// One evaluated window, with channel-averaged features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub stream: u64,
    pub token: u64,
    pub step: u64,
    pub level: Level,
    pub window_tokens: usize,
    pub probability: Option<f64>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutput {
    pub events: Vec<InterventionEvent>,
    pub summary: StreamSummary,
    pub features: Vec<FeatureRow>,
}

impl ReplayOutput {
    pub fn log(&self) -> Vec<LogRecord> {
        let mut log: Vec<LogRecord> = self.events.iter().cloned().map(LogRecord::Event).collect();
        log.push(LogRecord::finish(self.summary.clone()));
        log
    }

    /// JSON lines, one record per event and a closing summary.
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let log = self.log();
        write_atomic(path.as_ref(), |w| {
            for r in &log {
                serde_json::to_writer(&mut *w, r)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })
    }

    /// Columnar text: one row per evaluated window.
    pub fn write_features(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), |w| {
            writeln!(w, "stream,token,step,level,window_tokens,probability,f0,f1,f2")?;
            for r in &self.features {
                let p = r.probability.map_or(String::new(), |p| format!("{p:?}"));
                let f: Vec<String> = (0..3).map(|i| r.features.get(i).map_or(String::new(), |v| format!("{v:?}"))).collect();
                writeln!(w, "{},{},{},{},{},{},{}", r.stream, r.token, r.step, r.level, r.window_tokens, p, f.join(","))?;
            }
            Ok(())
        })
    }
}

/// Runs a monitor over a frame sequence.
pub fn replay_frames<I>(
    frames: I,
    config: Arc<MonitorConfig>,
    detectors: Arc<Detectors>,
    dump_features: bool,
) -> Result<ReplayOutput>
where
    I: IntoIterator<Item = Result<ActivationFrame>>,
{
    let mut monitor = Monitor::new(config, detectors)?;
    let mut events = Vec::new();
    let mut rows = Vec::new();
    for frame in frames {
        let frame = frame?;
        let (obs, event) = monitor.step(&frame)?;
        if dump_features {
            for level in Level::ALL {
                if !obs.evaluated[level] {
                    continue;
                }
                let tracker = monitor.tracker();
                let mean = FeatureVector::mean(tracker.features(level))?;
                rows.push(FeatureRow {
                    stream: frame.stream,
                    token: frame.token,
                    step: obs.step,
                    level,
                    window_tokens: if level == Level::Inst {
                        tracker.tokens() as usize
                    } else {
                        tracker.window_len(level)
                    },
                    probability: monitor.last_probability(level),
                    features: mean.as_slice().to_vec(),
                });
            }
        }
        events.extend(event);
    }
    Ok(ReplayOutput { events, summary: monitor.finish(false), features: rows })
}

/// Replays a trace file. Models must match the configured probe set.
pub fn replay(
    path: impl AsRef<Path>,
    config: Arc<MonitorConfig>,
    detectors: Arc<Detectors>,
    dump_features: bool,
) -> Result<ReplayOutput> {
    detectors.check(&config)?;
    replay_frames(read_trace(path)?, config, detectors, dump_features)
}

/// Socket session handler: one monitor per stream, events appended to a shared log.
pub struct MonitorSession {
    monitor: Monitor,
    log: Arc<Mutex<Vec<LogRecord>>>,
}

impl MonitorSession {
    pub fn new(config: Arc<MonitorConfig>, detectors: Arc<Detectors>, log: Arc<Mutex<Vec<LogRecord>>>) -> Result<Self> {
        Ok(Self { monitor: Monitor::new(config, detectors)?, log })
    }
}

impl SessionHandler for MonitorSession {
    fn on_frame(&mut self, frame: &ActivationFrame) -> Result<Option<Directive>> {
        let event = self.monitor.on_frame(frame)?;
        let directive = decode_constraint(event.as_ref());
        if let Some(e) = event {
            self.log.lock().unwrap().push(LogRecord::Event(e));
        }
        Ok(directive)
    }

    fn on_close(&mut self, outcome: &SessionOutcome) {
        let truncated = !matches!(outcome, SessionOutcome::Completed { .. });
        let summary = self.monitor.finish(truncated);
        if truncated {
            tracing::warn!(stream = ?summary.stream, frames = summary.frames, "stream finalized as truncated");
        }
        self.log.lock().unwrap().push(LogRecord::finish(summary));
    }
}
