//! Variable-length sliding window with O(1) probe-spectrum updates.
//!
//! For a window holding magnitude vectors `y_s..=y_t` the state keeps
//!
//! ```text
//! U = Σ y_i        V = Σ y_i²        A[n,k] = Σ y_{n,i} q_k^i
//! α_k = q_k^t      β_k = q_k^s       ρ_k = q_k^L
//! ```
//!
//! Pushing or popping a token touches each `(channel, probe)` pair once.
//! Features use the closed form `B_k = Σ_{i=s..t} q_k^i = β_k (1 - ρ_k) η_k`
//! to remove the window mean without traversing the queue:
//! `S[n,k] = A[n,k] - (U_n / L) B_k`.
//!
//! Indices are relative to a phase origin that is reset by [`SpectralWindow::rebuild`];
//! only `|S|²` is observed, so the origin does not affect any feature.

use std::collections::VecDeque;
use std::sync::Arc;

use num_complex::Complex64;

use super::{FeatureVector, PowerSummary, ProbeSet, DEFAULT_EPSILON, DEFAULT_REBUILD_INTERVAL};
use crate::{Error, Level, Result};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone)]
pub struct SpectralWindow {
    channels: usize,
    probes: Arc<ProbeSet>,
    queue: VecDeque<f64>,
    start: u64,
    len: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    acc: Vec<Complex64>,
    alpha: Vec<Complex64>,
    beta: Vec<Complex64>,
    rho: Vec<Complex64>,
    ops_since_rebuild: usize,
    rebuild_interval: Option<usize>,
    epsilon: f64,
}

impl SpectralWindow {
    pub fn new(channels: usize, probes: Arc<ProbeSet>) -> Self {
        let k = probes.len();
        let mut w = Self {
            channels,
            probes,
            queue: VecDeque::new(),
            start: 0,
            len: 0,
            sum: vec![0.0; channels],
            sum_sq: vec![0.0; channels],
            acc: vec![Complex64::default(); channels * k],
            alpha: vec![ONE; k],
            beta: vec![ONE; k],
            rho: vec![ONE; k],
            ops_since_rebuild: 0,
            rebuild_interval: Some(DEFAULT_REBUILD_INTERVAL),
            epsilon: DEFAULT_EPSILON,
        };
        w.beta.copy_from_slice(w.probes.q());
        w
    }

    /// `None` disables automatic rebuilds (drift experiments only).
    pub fn with_rebuild_interval(mut self, interval: Option<usize>) -> Self {
        self.rebuild_interval = interval.filter(|&n| n > 0);
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn probes(&self) -> &ProbeSet {
        &self.probes
    }

    /// Number of tokens currently in the window.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Absolute index of the oldest token in the window.
    pub fn start(&self) -> u64 {
        self.start
    }

    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    pub fn sum_sq(&self) -> &[f64] {
        &self.sum_sq
    }

    /// Complex accumulator `A[channel, probe]`.
    pub fn acc(&self, channel: usize, probe: usize) -> Complex64 {
        self.acc[channel * self.probes.len() + probe]
    }

    pub fn alpha(&self) -> &[Complex64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[Complex64] {
        &self.beta
    }

    pub fn rho(&self) -> &[Complex64] {
        &self.rho
    }

    pub fn ops_since_rebuild(&self) -> usize {
        self.ops_since_rebuild
    }

    /// Magnitude vectors in the window, oldest first.
    pub fn entries(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let n = self.channels;
        (0..self.len).map(move |i| self.queue.range(i * n..(i + 1) * n).copied().collect())
    }

    /// Values of one channel across the window, oldest first.
    pub fn channel_values(&self, channel: usize) -> impl Iterator<Item = f64> + '_ {
        let n = self.channels;
        self.queue.iter().skip(channel).step_by(n.max(1)).copied()
    }

    /// Appends one token. Activations are converted to magnitudes `|a|`.
    /// Non-finite input is rejected before any state changes.
    pub fn push(&mut self, activations: &[f64]) -> Result<()> {
        if activations.len() != self.channels {
            return Err(Error::Shape { expected: self.channels, got: activations.len() });
        }
        if let Some(i) = activations.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("channel {i} is not finite")));
        }
        let k_count = self.probes.len();
        for (k, q) in self.probes.q().iter().enumerate() {
            self.alpha[k] *= q;
            self.rho[k] *= q;
        }
        for (n, &a) in activations.iter().enumerate() {
            let y = a.abs();
            self.queue.push_back(y);
            self.sum[n] += y;
            self.sum_sq[n] += y * y;
            let row = &mut self.acc[n * k_count..(n + 1) * k_count];
            for (slot, alpha) in row.iter_mut().zip(&self.alpha) {
                *slot += alpha * y;
            }
        }
        self.len += 1;
        self.tick();
        Ok(())
    }

    /// Removes the `count` oldest tokens.
    pub fn pop(&mut self, count: usize) -> Result<()> {
        if count > self.len {
            return Err(Error::Underflow { requested: count, available: self.len });
        }
        let k_count = self.probes.len();
        for _ in 0..count {
            for n in 0..self.channels {
                let y = self.queue.pop_front().expect("queue holds len * channels values");
                self.sum[n] -= y;
                self.sum_sq[n] -= y * y;
                let row = &mut self.acc[n * k_count..(n + 1) * k_count];
                for (slot, beta) in row.iter_mut().zip(&self.beta) {
                    *slot -= beta * y;
                }
            }
            for (k, (q, q_inv)) in self.probes.q().iter().zip(self.probes.q_inv()).enumerate() {
                self.beta[k] *= q;
                self.rho[k] *= q_inv;
            }
            self.len -= 1;
            self.start += 1;
            self.tick();
        }
        Ok(())
    }

    /// Removes every token.
    pub fn clear(&mut self) {
        let len = self.len;
        self.pop(len).expect("popping the full length cannot underflow");
    }

    fn tick(&mut self) {
        self.ops_since_rebuild += 1;
        if let Some(interval) = self.rebuild_interval {
            if self.ops_since_rebuild >= interval {
                self.rebuild();
            }
        }
    }

    /// Recomputes sums, accumulators and phase registers from the queue by
    /// direct summation, re-basing the phase origin at the window start.
    pub fn rebuild(&mut self) {
        let k_count = self.probes.len();
        let n_count = self.channels;
        self.sum.iter_mut().for_each(|v| *v = 0.0);
        self.sum_sq.iter_mut().for_each(|v| *v = 0.0);
        self.acc.iter_mut().for_each(|v| *v = Complex64::default());

        for (k, &w) in self.probes.omegas().iter().enumerate() {
            let phase_len = Complex64::from_polar(1.0, -w * self.len as f64);
            self.alpha[k] = phase_len;
            self.rho[k] = phase_len;
            self.beta[k] = Complex64::from_polar(1.0, -w);
        }
        for i in 0..self.len {
            let base = i * n_count;
            for n in 0..n_count {
                let y = self.queue[base + n];
                self.sum[n] += y;
                self.sum_sq[n] += y * y;
            }
            for (k, &w) in self.probes.omegas().iter().enumerate() {
                let phase = Complex64::from_polar(1.0, -w * (i + 1) as f64);
                for n in 0..n_count {
                    self.acc[n * k_count + k] += phase * self.queue[base + n];
                }
            }
        }
        self.ops_since_rebuild = 0;
    }

    /// `B_k = Σ_{i=s..t} q_k^i`.
    fn phase_sums(&self) -> Vec<Complex64> {
        self.beta
            .iter()
            .zip(&self.rho)
            .zip(self.probes.eta())
            .map(|((b, r), e)| b * (ONE - r) * e)
            .collect()
    }

    fn check_len(&self) -> Result<()> {
        if self.len < 2 {
            return Err(Error::DegenerateWindow { needed: 2, got: self.len });
        }
        Ok(())
    }

    fn channel_power(&self, channel: usize, phase_sums: &[Complex64], out: &mut [f64]) {
        let k_count = self.probes.len();
        let mean = self.sum[channel] / self.len as f64;
        let row = &self.acc[channel * k_count..(channel + 1) * k_count];
        for ((p, a), b) in out.iter_mut().zip(row).zip(phase_sums) {
            *p = (a - b * mean).norm_sqr();
        }
    }

    /// Mean-removed probe powers `|S[n,k]|²` for one channel.
    pub fn probe_power(&self, channel: usize) -> Result<Vec<f64>> {
        self.check_len()?;
        let mut out = vec![0.0; self.probes.len()];
        self.channel_power(channel, &self.phase_sums(), &mut out);
        Ok(out)
    }

    /// Time-domain variation energy `E = V - U²/L`, clamped at 0.
    pub fn energy(&self, channel: usize) -> f64 {
        if self.len == 0 {
            return 0.0;
        }
        let u = self.sum[channel];
        (self.sum_sq[channel] - u * u / self.len as f64).max(0.0)
    }

    /// Per-channel features for `level`.
    pub fn features(&self, level: Level) -> Result<Vec<FeatureVector>> {
        let mut out = Vec::with_capacity(self.channels);
        self.features_into(level, &mut out)?;
        Ok(out)
    }

    pub fn features_into(&self, level: Level, out: &mut Vec<FeatureVector>) -> Result<()> {
        self.check_len()?;
        out.clear();
        let phase_sums = self.phase_sums();
        let mut power = vec![0.0; self.probes.len()];
        let split = self.probes.split();
        for n in 0..self.channels {
            self.channel_power(n, &phase_sums, &mut power);
            let summary = PowerSummary::from_power(&power, split, self.epsilon);
            out.push(FeatureVector::from_summary(level, &summary, self.energy(n), self.epsilon));
        }
        Ok(())
    }
}
