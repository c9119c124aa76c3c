use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::spectral::{FeatureVector, ProbeSet};
use crate::{Error, Level, Result};

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

/// `d/dx [x Φ(x)] = Φ(x) + x φ(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dense layer, `weights` row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..outputs).map(|_| rng.random_range(-bound..bound)).collect();
        Self { inputs, outputs, weights, bias }
    }

    pub(crate) fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs).zip(&self.bias)) {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub(crate) level: Level,
    pub(crate) layers: [Layer; 3],
    pub(crate) input_shift: Vec<f64>,
    pub(crate) input_scale: Vec<f64>,
    pub(crate) dropout: f64,
    pub(crate) probe_hash: u64,
}

impl MlpModel {
    /// Randomly initialized model, uniform in `±1/sqrt(fan_in)`.
    pub fn new(level: Level, input: usize, hidden: [usize; 2], seed: u64) -> Result<Self> {
        if input == 0 || hidden.contains(&0) {
            return Err(Error::InvalidInput("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = [
            Layer::uniform(input, hidden[0], &mut rng),
            Layer::uniform(hidden[0], hidden[1], &mut rng),
            Layer::uniform(hidden[1], 1, &mut rng),
        ];
        Ok(Self::from_layers(level, layers))
    }

    /// Model with the given layers and identity input standardization.
    pub fn from_layers(level: Level, layers: [Layer; 3]) -> Self {
        let d = layers[0].inputs;
        Self {
            level,
            layers,
            input_shift: vec![0.0; d],
            input_scale: vec![1.0; d],
            dropout: 0.0,
            probe_hash: ProbeSet::default().hash(),
        }
    }

    pub fn zeros(level: Level, input: usize, hidden: [usize; 2]) -> Self {
        Self::from_layers(
            level,
            [Layer::zeros(input, hidden[0]), Layer::zeros(hidden[0], hidden[1]), Layer::zeros(hidden[1], 1)],
        )
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    /// `[input, hidden₁, hidden₂, 1]`.
    pub fn dims(&self) -> [usize; 4] {
        [self.layers[0].inputs, self.layers[0].outputs, self.layers[1].outputs, self.layers[2].outputs]
    }

    pub fn layers(&self) -> &[Layer; 3] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer; 3] {
        &mut self.layers
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn probe_hash(&self) -> u64 {
        self.probe_hash
    }

    pub fn set_probe_hash(&mut self, hash: u64) {
        self.probe_hash = hash;
    }

    pub fn standardization(&self) -> (&[f64], &[f64]) {
        (&self.input_shift, &self.input_scale)
    }

    pub fn set_standardization(&mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        let d = self.input_dim();
        if shift.len() != d || scale.len() != d {
            return Err(Error::Shape { expected: d, got: shift.len().min(scale.len()) });
        }
        self.input_shift = shift;
        self.input_scale = scale;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Refuses a model trained against a different probe set.
    pub fn ensure_probes(&self, probes: &ProbeSet) -> Result<()> {
        if self.probe_hash != probes.hash() {
            return Err(Error::ProbeMismatch { model: self.probe_hash, monitor: probes.hash() });
        }
        Ok(())
    }

    pub(crate) fn standardize(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (x[i] - self.input_shift[i]) * self.input_scale[i];
        }
    }

    /// Failure probability for one feature vector. Dropout is never applied.
    pub fn forward(&self, features: &FeatureVector) -> Result<f64> {
        self.forward_slice(features.as_slice())
    }

    pub fn forward_slice(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), got: x.len() });
        }
        Ok(sigmoid(self.logit(x)))
    }

    pub(crate) fn logit(&self, x: &[f64]) -> f64 {
        let [l1, l2, l3] = &self.layers;
        let mut z = vec![0.0; l1.inputs];
        self.standardize(x, &mut z);
        let mut h1 = vec![0.0; l1.outputs];
        l1.apply(&z, &mut h1);
        h1.iter_mut().for_each(|v| *v = gelu(*v));
        let mut h2 = vec![0.0; l2.outputs];
        l2.apply(&h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = gelu(*v));
        let mut out = [0.0];
        l3.apply(&h2, &mut out);
        out[0]
    }

    pub(crate) fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub(crate) fn set_params(&mut self, p: &[f64]) {
        let mut i = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[i..i + nw]);
            i += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[i..i + nb]);
            i += nb;
        }
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = (&mut f64, bool)> {
        self.layers.iter_mut().flat_map(|l| {
            l.weights.iter_mut().map(|w| (w, true)).chain(l.bias.iter_mut().map(|b| (b, false)))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_outputs_half() {
        let m = MlpModel::zeros(Level::Intra, 3, [8, 8]);
        let p = m.forward(&FeatureVector::intra(0.3, 0.5, 0.1)).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn zero_input_propagates_to_half() {
        let mut m = MlpModel::zeros(Level::Inter, 2, [1, 1]);
        for l in m.layers_mut() {
            l.weights.iter_mut().for_each(|w| *w = 1.0);
        }
        assert_eq!(m.forward(&FeatureVector::inter(0.0, 0.0)).unwrap(), 0.5);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = MlpModel::new(Level::Intra, 3, [4, 4], 1).unwrap();
        assert!(matches!(
            m.forward(&FeatureVector::inter(0.1, 0.2)),
            Err(Error::Shape { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((gelu(-1.0) + 0.158_655_253_931_457_05).abs() < 1e-15);
        let h = 1e-6;
        for x in [-2.0, -0.3, 0.0, 0.7, 3.1] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }
}
