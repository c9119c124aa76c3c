use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{aggregate, Aggregation, MonitorConfig};
use crate::classifier::{MlpModel, DEFAULT_HIDDEN};
use crate::spectral::SpectralWindow;
use crate::{Error, Level, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Window lengths in tokens.
    pub windows: Vec<usize>,
    pub channels: usize,
    /// Timed tokens per window length.
    pub tokens: usize,
    /// Tokens per timing sample; the per-token cost is the batch time divided by this.
    pub batch: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { windows: vec![64, 256, 1024, 4096], channels: 32, tokens: 16_384, batch: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub window: usize,
    pub channels: usize,
    pub median_ns: f64,
    pub p90_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Median cost at the longest window over the median at the shortest.
    pub fn ratio(&self) -> f64 {
        let by_len = |pick: fn(&BenchRow, &BenchRow) -> bool| {
            self.rows.iter().reduce(|a, b| if pick(a, b) { a } else { b }).map_or(f64::NAN, |r| r.median_ns)
        };
        by_len(|a, b| a.window >= b.window) / by_len(|a, b| a.window <= b.window)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// Per-token cost of the monitor's hot path at a fixed window length: slide
/// by one token (push and pop), compute per-channel intra features, aggregate
/// and run the detector.
pub fn bench(config: &BenchConfig, monitor: &MonitorConfig) -> Result<BenchReport> {
    if config.windows.is_empty() || config.channels == 0 || config.batch == 0 || config.tokens < config.batch {
        return Err(Error::Config("bench needs window lengths, channels and tokens >= batch > 0".into()));
    }
    if config.windows.iter().any(|&w| w < 2) {
        return Err(Error::Config("bench window lengths must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pool: Vec<f64> = (0..4096 * config.channels).map(|_| rng.random_range(0.0..4.0)).collect();
    let row = |i: usize| {
        let start = (i % 4096) * config.channels;
        &pool[start..start + config.channels]
    };
    let model = MlpModel::new(Level::Intra, Level::Intra.dim(), DEFAULT_HIDDEN, config.seed)?;
    let probes = Arc::new(monitor.probes.clone());
    let mut rows = Vec::with_capacity(config.windows.len());
    for &w in &config.windows {
        let mut window = SpectralWindow::new(config.channels, Arc::clone(&probes))
            .with_rebuild_interval(monitor.rebuild())
            .with_epsilon(monitor.epsilon);
        for i in 0..w {
            window.push(row(i))?;
        }
        let mut features = Vec::with_capacity(config.channels);
        let mut sink = 0.0;
        let mut samples = Vec::with_capacity(config.tokens / config.batch);
        let mut t = w;
        for _ in 0..config.tokens / config.batch {
            let start = Instant::now();
            for _ in 0..config.batch {
                window.push(row(t))?;
                window.pop(1)?;
                window.features_into(Level::Intra, &mut features)?;
                sink += aggregate(&features, &model, Aggregation::MeanFeatures)?;
                t += 1;
            }
            samples.push(start.elapsed().as_nanos() as f64 / config.batch as f64);
        }
        std::hint::black_box(sink);
        samples.sort_by(f64::total_cmp);
        rows.push(BenchRow { window: w, channels: config.channels, median_ns: quantile(&samples, 0.5), p90_ns: quantile(&samples, 0.9) });
    }
    Ok(BenchReport { rows })
}
