//! Test-only oracles, independent of the library's computation paths.
#![allow(dead_code)]

pub mod stub;
pub mod text;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_series(seed: u64, len: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len).map(|_| r.random::<f64>()).collect()
}

/// Naive O(T²) DFT of the mean-removed magnitudes, all `T` bins.
pub fn naive_dft_power(values: &[f64]) -> Vec<f64> {
    let t = values.len();
    let mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let mean = mags.iter().sum::<f64>() / t as f64;
    (0..t)
        .map(|f| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, x) in mags.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (f * i) as f64 / t as f64;
                acc += Complex64::from_polar(x - mean, ang);
            }
            acc.norm_sqr()
        })
        .collect()
}

/// `(normalized P̃ for f=2..F, r_hf, r_lf, r_dom, H, E)` by direct formulas.
pub struct OracleFeatures {
    pub normalized: Vec<f64>,
    pub r_hf: f64,
    pub r_lf: f64,
    pub r_dom: f64,
    pub entropy: f64,
    pub energy: f64,
}

pub fn naive_dft_features(values: &[f64], eps: f64) -> OracleFeatures {
    let t = values.len();
    let power = naive_dft_power(values);
    let big_f = t / 2 + 1;
    let z: f64 = (2..=big_f).map(|f| power[f - 1]).sum::<f64>() + eps;
    let normalized: Vec<f64> = (2..=big_f).map(|f| power[f - 1] / z).collect();
    let mut r_hf = 0.0;
    let mut r_lf = 0.0;
    for f in 2..=big_f {
        let p = normalized[f - 2];
        if f > big_f / 2 {
            r_hf += p;
        }
        if f <= big_f / 2 {
            r_lf += p;
        }
    }
    let r_dom = normalized.iter().cloned().fold(0.0, f64::max);
    let entropy = if big_f - 1 <= 1 {
        0.0
    } else {
        -normalized.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
            / ((big_f - 1) as f64).ln()
    };
    let mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let mean = mags.iter().sum::<f64>() / t as f64;
    let energy = mags.iter().map(|x| (x - mean) * (x - mean)).sum();
    OracleFeatures { normalized, r_hf, r_lf, r_dom, entropy, energy }
}

/// Direct-summation probe powers `|Σ_j (y_j - μ) e^{-iω j}|²` over a window.
pub fn naive_probe_power(window: &[f64], omegas: &[f64]) -> Vec<f64> {
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    omegas
        .iter()
        .map(|&w| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, y) in window.iter().enumerate() {
                acc += Complex64::from_polar(y - mean, -w * j as f64);
            }
            acc.norm_sqr()
        })
        .collect()
}

/// Probe-route features `[r_hf, r_lf, r_dom, H, e]` by direct summation.
pub fn naive_probe_features(window: &[f64], omegas: &[f64], eps: f64) -> [f64; 5] {
    let power = naive_probe_power(window, omegas);
    let k = power.len();
    let z: f64 = power.iter().sum::<f64>() + eps;
    let pn: Vec<f64> = power.iter().map(|p| p / z).collect();
    let half = k / 2;
    let r_hf: f64 = pn[half..].iter().sum();
    let r_lf: f64 = pn[..half].iter().sum();
    let r_dom = pn.iter().cloned().fold(0.0, f64::max);
    let h = -pn.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>() / (k as f64).ln();
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let e: f64 = window.iter().map(|y| (y - mean) * (y - mean)).sum();
    [r_hf, r_lf, r_dom, h, (e + eps).ln()]
}
