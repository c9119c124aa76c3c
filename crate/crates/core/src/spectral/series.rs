use crate::{Error, Result};

/// A finite, non-empty sequence of raw activations `a_t`.
///
/// Features operate on magnitudes `|a_t|`; the raw sign is kept only so the
/// series round-trips unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSeries {
    values: Vec<f64>,
}

impl ActivationSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("activation series is empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "activation {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean-removed magnitudes `y_t = |a_t| - mean(|a|)`.
    pub fn centered_magnitudes(&self) -> Vec<f64> {
        let mags: Vec<f64> = self.values.iter().map(|a| a.abs()).collect();
        let mean = mags.iter().sum::<f64>() / mags.len() as f64;
        mags.into_iter().map(|x| x - mean).collect()
    }
}

impl TryFrom<Vec<f64>> for ActivationSeries {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}
