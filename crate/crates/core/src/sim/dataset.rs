use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::generate::{generate, LabeledTrace};
use super::spec::{InstanceKind, SimSpec};
use crate::classifier::{Dataset, Example};
use crate::monitor::{Aggregation, FeatureTracker, MonitorConfig};
use crate::spectral::FeatureVector;
use crate::{Error, Level, PerLevel, Result};

/// Inter windows count as positive when at least this share of their tokens
/// lies inside an inter event.
const INTER_POSITIVE_SHARE: f64 = 0.25;

/// Runs the monitor's windows over one trace and labels every evaluated window.
pub fn trace_examples(trace: &LabeledTrace, trace_id: u32, config: &MonitorConfig) -> Result<PerLevel<Vec<Example>>> {
    let mut tracker = FeatureTracker::new(config)?;
    let labels = &trace.labels;
    let mut out: PerLevel<Vec<Example>> = PerLevel::default();
    for frame in &trace.frames {
        let obs = tracker.observe(frame)?;
        for level in Level::ALL {
            if !obs.evaluated[level] {
                continue;
            }
            let end = frame.token + 1;
            let label = match level {
                Level::Intra => labels.has_impulse(end - tracker.window_len(level) as u64, end),
                Level::Inter => {
                    labels.inter_fraction(end - tracker.window_len(level) as u64, end) >= INTER_POSITIVE_SHARE
                }
                Level::Inst => labels.instance == InstanceKind::Easy,
            };
            let features = tracker.features(level);
            match config.aggregation {
                Aggregation::MeanFeatures => {
                    out[level].push(Example { features: FeatureVector::mean(features)?, label, trace: trace_id })
                }
                Aggregation::MaxProbability => out[level]
                    .extend(features.iter().map(|&f| Example { features: f, label, trace: trace_id })),
            }
        }
    }
    Ok(out)
}

/// Trace ids `0..n` split 8:2 into (train, test), shuffled by `seed`.
pub fn split_by_trace(n: usize, seed: u64) -> (Vec<u32>, Vec<u32>) {
    let mut ids: Vec<u32> = (0..n as u32).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = ((n as f64) * 0.2).round() as usize;
    let train = ids.split_off(test);
    let (mut train, mut test) = (train, ids);
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

pub fn dataset_from_traces(traces: &[LabeledTrace], config: &MonitorConfig, split_seed: u64) -> Result<PerLevel<Dataset>> {
    let (_, test_ids) = split_by_trace(traces.len(), split_seed);
    let mut is_test = vec![false; traces.len()];
    for &i in &test_ids {
        is_test[i as usize] = true;
    }
    let mut out = PerLevel::from_fn(|l| Dataset { level: Some(l), ..Dataset::default() });
    for (i, trace) in traces.iter().enumerate() {
        let examples = trace_examples(trace, i as u32, config)?;
        for level in Level::ALL {
            let d = &mut out[level];
            if is_test[i] { &mut d.test } else { &mut d.train }.extend_from_slice(&examples[level]);
        }
    }
    for (level, d) in out.iter() {
        let pos = Dataset::positives(&d.train) + Dataset::positives(&d.test);
        if pos == 0 || pos == d.len() {
            return Err(Error::Config(format!(
                "{level} dataset has a single class ({pos} positive of {} windows); add traces of the other kind",
                d.len()
            )));
        }
    }
    Ok(out)
}

/// Generates every trace and builds per-level datasets split 8:2 by trace.
pub fn build_dataset(specs: &[SimSpec], config: &MonitorConfig, split_seed: u64) -> Result<PerLevel<Dataset>> {
    let traces = specs.iter().map(generate).collect::<Result<Vec<_>>>()?;
    dataset_from_traces(&traces, config, split_seed)
}
