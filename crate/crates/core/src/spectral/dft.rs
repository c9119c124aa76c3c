//! Exact features from a full DFT of the mean-removed magnitude series.

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{ActivationSeries, FeatureVector, PowerSummary};
use crate::{Error, Level, Result};

/// Power spectrum of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// `|Y(f)|²` for every bin `f = 1..=T` (two-sided).
    power_full: Vec<f64>,
    /// `P̃(f)` for `f = 2..=F`.
    normalized: Vec<f64>,
    bins: usize,
    time_energy: f64,
    epsilon: f64,
}

impl Spectrum {
    /// Number of non-redundant bins `F = floor(T/2) + 1`.
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn series_len(&self) -> usize {
        self.power_full.len()
    }

    /// `P(f)` for `f = 1..=F`; index 0 is the DC bin.
    pub fn power(&self) -> &[f64] {
        &self.power_full[..self.bins]
    }

    /// `P̃(f)` for `f = 2..=F`; index 0 is `f = 2`.
    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    /// `Σ_{f=1..T} |Y(f)|²` over the full two-sided spectrum.
    pub fn two_sided_energy(&self) -> f64 {
        self.power_full.iter().sum()
    }

    /// Time-domain energy `E = Σ y_t²`.
    pub fn time_energy(&self) -> f64 {
        self.time_energy
    }

    /// One-sided frequency-domain energy `Σ_{f=2..F} P(f)`.
    pub fn frequency_energy(&self) -> f64 {
        self.power()[1..].iter().sum()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Low/high split: bins `2..=floor(F/2)` are low, the rest high.
    pub fn summary(&self) -> PowerSummary {
        let split = (self.bins / 2).saturating_sub(1);
        PowerSummary::from_power(&self.power()[1..], split, self.epsilon)
    }
}

pub fn dft_spectrum(series: &ActivationSeries, epsilon: f64) -> Result<Spectrum> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    let t = series.len();
    if t < 2 {
        return Err(Error::DegenerateWindow { needed: 2, got: t });
    }
    let y = series.centered_magnitudes();
    let time_energy = y.iter().map(|v| v * v).sum();

    let mut buf: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(t).process(&mut buf);
    let power_full: Vec<f64> = buf.iter().map(|c| c.norm_sqr()).collect();

    let bins = t / 2 + 1;
    let denom: f64 = power_full[1..bins].iter().sum::<f64>() + epsilon;
    let normalized = power_full[1..bins].iter().map(|p| p / denom).collect();
    Ok(Spectrum { power_full, normalized, bins, time_energy, epsilon })
}

/// Normalized spectral entropy of `P̃` over `f = 2..=F`.
///
/// Returns 0 when only one non-DC bin exists (`T ∈ {2, 3}`) or when all
/// non-DC power is zero.
pub fn spectral_entropy(spectrum: &Spectrum) -> f64 {
    let m = spectrum.normalized.len();
    if m <= 1 {
        return 0.0;
    }
    let s: f64 = spectrum
        .normalized
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum();
    (-s / (m as f64).ln()).clamp(0.0, 1.0)
}

fn checked_spectrum(series: &ActivationSeries, epsilon: f64) -> Result<Spectrum> {
    if series.len() < 4 {
        return Err(Error::DegenerateWindow { needed: 4, got: series.len() });
    }
    dft_spectrum(series, epsilon)
}

/// `(r_hf, H, e)` with `e = ln(Σ y² + ε)`.
pub fn intra_features(series: &ActivationSeries, epsilon: f64) -> Result<FeatureVector> {
    let spec = checked_spectrum(series, epsilon)?;
    Ok(FeatureVector::from_summary(Level::Intra, &spec.summary(), spec.time_energy, epsilon))
}

/// `(r_dom, H)`.
pub fn inter_features(series: &ActivationSeries, epsilon: f64) -> Result<FeatureVector> {
    let spec = checked_spectrum(series, epsilon)?;
    Ok(FeatureVector::from_summary(Level::Inter, &spec.summary(), 0.0, epsilon))
}

/// `(r_lf, H)`; `r_lf = 0` when the low band is empty (`T <= 5`).
pub fn inst_features(series: &ActivationSeries, epsilon: f64) -> Result<FeatureVector> {
    let spec = checked_spectrum(series, epsilon)?;
    Ok(FeatureVector::from_summary(Level::Inst, &spec.summary(), 0.0, epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::DEFAULT_EPSILON as EPS;

    fn series(v: &[f64]) -> ActivationSeries {
        ActivationSeries::new(v.to_vec()).unwrap()
    }

    fn impulse8() -> ActivationSeries {
        series(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    }

    fn tone8() -> ActivationSeries {
        let v: Vec<f64> = (0..8)
            .map(|t| 2.0 + (2.0 * std::f64::consts::PI * t as f64 / 4.0).cos())
            .collect();
        series(&v)
    }

    #[test]
    fn constant_series_has_no_power() {
        let s = dft_spectrum(&series(&[3.0; 4]), EPS).unwrap();
        assert_eq!(s.bins(), 3);
        assert!(s.power().iter().all(|&p| p == 0.0));
        assert_eq!(s.normalized(), &[0.0, 0.0]);
        assert_eq!(spectral_entropy(&s), 0.0);
        let f = inter_features(&series(&[3.0; 4]), EPS).unwrap();
        assert_eq!(f.as_slice()[0], 0.0);
    }

    #[test]
    fn impulse_is_flat() {
        let s = dft_spectrum(&impulse8(), EPS).unwrap();
        for p in s.normalized() {
            assert!((p - 0.25).abs() < 1e-9);
        }
        assert!((spectral_entropy(&s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_tone_concentrates_in_one_bin() {
        let s = dft_spectrum(&tone8(), EPS).unwrap();
        assert!(spectral_entropy(&s) < 1e-9);
        let f = inter_features(&tone8(), EPS).unwrap();
        assert!(f.as_slice()[0] >= 1.0 - 1e-9);
        assert!(f.as_slice()[1] <= 1e-9);
    }

    #[test]
    fn impulse_band_ratios() {
        let intra = intra_features(&impulse8(), EPS).unwrap();
        let v = intra.as_slice();
        assert!((v[0] - 0.75).abs() < 1e-12);
        assert!((v[1] - 1.0).abs() < 1e-12);
        assert!((v[2] - (7.0f64 / 8.0 + EPS).ln()).abs() < 1e-12);
        let inst = inst_features(&impulse8(), EPS).unwrap();
        assert!((inst.as_slice()[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn nyquist_alternation() {
        let f = intra_features(&series(&[2.0, 0.0, 2.0, 0.0]), EPS).unwrap();
        assert!((f.as_slice()[0] - 1.0).abs() < 1e-9);
        assert!(f.as_slice()[1].abs() < 1e-12);
    }

    #[test]
    fn short_series_has_empty_low_band() {
        let f = inst_features(&series(&[0.3, 2.0, -1.5, 0.7]), EPS).unwrap();
        assert_eq!(f.as_slice()[0], 0.0);
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        assert!(matches!(
            dft_spectrum(&series(&[1.0]), EPS),
            Err(Error::DegenerateWindow { needed: 2, got: 1 })
        ));
        assert!(dft_spectrum(&series(&[1.0, 2.0]), 0.0).is_err());
        assert!(matches!(
            intra_features(&series(&[1.0, 2.0, 3.0]), EPS),
            Err(Error::DegenerateWindow { needed: 4, .. })
        ));
        // T = 2, 3: a single non-DC bin carries no dispersion information.
        let s = dft_spectrum(&series(&[1.0, 5.0, 2.0]), EPS).unwrap();
        assert_eq!(spectral_entropy(&s), 0.0);
    }
}
