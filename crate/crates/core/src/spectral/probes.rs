use std::f64::consts::PI;
use std::hash::Hasher;

use fnv::FnvHasher;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fixed angular frequencies evaluated by the sliding window.
///
/// For each probe `ω_k` the set caches `q_k = e^{-iω_k}`, its inverse and
/// `η_k = 1 / (1 - q_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbeSet {
    omegas: Vec<f64>,
    q: Vec<Complex64>,
    q_inv: Vec<Complex64>,
    eta: Vec<Complex64>,
    hash: u64,
}

impl ProbeSet {
    pub fn new(omegas: Vec<f64>) -> Result<Self> {
        if omegas.len() < 2 {
            return Err(Error::Config(format!("need at least 2 probes, got {}", omegas.len())));
        }
        for (i, &w) in omegas.iter().enumerate() {
            if !(w > 0.0 && w <= PI) {
                return Err(Error::Config(format!("probe {i} = {w} is outside (0, π]")));
            }
            if omegas[..i].contains(&w) {
                return Err(Error::Config(format!("probe {i} = {w} is duplicated")));
            }
        }
        let q: Vec<Complex64> = omegas.iter().map(|&w| Complex64::from_polar(1.0, -w)).collect();
        let q_inv = q.iter().map(|z| z.conj()).collect();
        let eta = q.iter().map(|z| (Complex64::new(1.0, 0.0) - z).inv()).collect();

        let mut h = FnvHasher::default();
        h.write_u64(omegas.len() as u64);
        for w in &omegas {
            h.write_u64(w.to_bits());
        }
        let hash = h.finish();
        Ok(Self { omegas, q, q_inv, eta, hash })
    }

    /// `count` probes `ω_k = πk/count`, `k = 1..=count`: DC excluded, Nyquist included.
    pub fn uniform(count: usize) -> Result<Self> {
        Self::new((1..=count).map(|k| PI * k as f64 / count as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn q(&self) -> &[Complex64] {
        &self.q
    }

    pub(crate) fn q_inv(&self) -> &[Complex64] {
        &self.q_inv
    }

    pub(crate) fn eta(&self) -> &[Complex64] {
        &self.eta
    }

    /// Probes with 1-based index `k <= floor(K/2)` form the low band.
    pub fn split(&self) -> usize {
        self.omegas.len() / 2
    }

    /// Stable fingerprint stored in model files to catch feature/model skew.
    pub fn hash(&self) -> u64 {
        self.hash
    }
}

impl Default for ProbeSet {
    fn default() -> Self {
        Self::uniform(16).expect("16 uniform probes are valid")
    }
}

impl TryFrom<Vec<f64>> for ProbeSet {
    type Error = Error;

    fn try_from(omegas: Vec<f64>) -> Result<Self> {
        Self::new(omegas)
    }
}

impl From<ProbeSet> for Vec<f64> {
    fn from(p: ProbeSet) -> Self {
        p.omegas
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_sixteen_uniform() {
        let p = ProbeSet::default();
        assert_eq!(p.len(), 16);
        assert_eq!(p.split(), 8);
        assert_eq!(p.omegas()[15], PI);
        for z in p.q() {
            assert!((z.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn validation() {
        assert!(ProbeSet::new(vec![1.0]).is_err());
        assert!(ProbeSet::new(vec![0.0, 1.0]).is_err());
        assert!(ProbeSet::new(vec![1.0, 4.0]).is_err());
        assert!(ProbeSet::new(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn hash_distinguishes_sets() {
        let a = ProbeSet::uniform(16).unwrap();
        let b = ProbeSet::uniform(8).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), ProbeSet::uniform(16).unwrap().hash());
    }
}
