use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Example};
use super::model::{gelu, gelu_grad, sigmoid, MlpModel};
use super::DEFAULT_HIDDEN;
use crate::{Error, Level, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub hidden: [usize; 2],
    pub seed: u64,
    /// Decision threshold used for the held-out metrics.
    pub threshold: f64,
    /// Reweight samples by inverse class frequency.
    pub balance_classes: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 1e-4,
            batch_size: 64,
            epochs: 60,
            dropout: 0.1,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
            threshold: 0.5,
            balance_classes: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment decay rates must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("optimizer epsilon must be positive and weight decay non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.hidden.contains(&0) {
            return bad("batch size, epochs and hidden widths must be positive");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub false_positive_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Weighted mean cross-entropy over the epoch's batches.
    pub loss: f64,
    pub test: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub level: Level,
    pub train_size: usize,
    pub test_size: usize,
    pub epochs: Vec<EpochStats>,
    pub train: Metrics,
    pub test: Metrics,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.loss)
    }
}

/// Accuracy, recall, precision and false-positive rate at `threshold`.
pub fn evaluate(model: &MlpModel, examples: &[Example], threshold: f64) -> Result<Metrics> {
    let (mut tp, mut tn, mut fp, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for e in examples {
        let hit = model.forward(&e.features)? >= threshold;
        match (hit, e.label) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Metrics {
        count: examples.len(),
        accuracy: ratio(tp + tn, examples.len()),
        recall: ratio(tp, tp + fne),
        precision: ratio(tp, tp + fp),
        false_positive_rate: ratio(fp, fp + tn),
    })
}

/// Scratch buffers for one forward/backward pass.
struct Pass {
    z: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl Pass {
    fn new(model: &MlpModel) -> Self {
        let [d, w1, w2, _] = model.dims();
        Self {
            z: vec![0.0; d],
            a1: vec![0.0; w1],
            h1: vec![0.0; w1],
            a2: vec![0.0; w2],
            h2: vec![0.0; w2],
            m1: vec![1.0; w1],
            m2: vec![1.0; w2],
            d1: vec![0.0; w1],
            d2: vec![0.0; w2],
        }
    }

    /// Forward with the current dropout masks; returns the logit.
    fn forward(&mut self, model: &MlpModel, x: &[f64]) -> f64 {
        let [l1, l2, l3] = &model.layers;
        model.standardize(x, &mut self.z);
        l1.apply(&self.z, &mut self.a1);
        for i in 0..self.a1.len() {
            self.h1[i] = gelu(self.a1[i]) * self.m1[i];
        }
        l2.apply(&self.h1, &mut self.a2);
        for i in 0..self.a2.len() {
            self.h2[i] = gelu(self.a2[i]) * self.m2[i];
        }
        let mut out = [0.0];
        l3.apply(&self.h2, &mut out);
        out[0]
    }

    /// Accumulates `scale * dL/dθ` into `grad` given `dL/dlogit`.
    fn backward(&mut self, model: &MlpModel, dlogit: f64, scale: f64, grad: &mut [f64]) {
        let [l1, l2, l3] = &model.layers;
        let g = dlogit * scale;
        let (g1, rest) = grad.split_at_mut(l1.param_count());
        let (g2, g3) = rest.split_at_mut(l2.param_count());

        for i in 0..l3.inputs {
            g3[i] += g * self.h2[i];
        }
        g3[l3.inputs] += g;
        for i in 0..self.d2.len() {
            self.d2[i] = g * l3.weights[i] * self.m2[i] * gelu_grad(self.a2[i]);
        }

        let (gw2, gb2) = g2.split_at_mut(l2.weights.len());
        self.d1.iter_mut().for_each(|v| *v = 0.0);
        for (o, &d) in self.d2.iter().enumerate() {
            let row = o * l2.inputs;
            for i in 0..l2.inputs {
                gw2[row + i] += d * self.h1[i];
                self.d1[i] += d * l2.weights[row + i];
            }
            gb2[o] += d;
        }
        for i in 0..self.d1.len() {
            self.d1[i] *= self.m1[i] * gelu_grad(self.a1[i]);
        }

        let (gw1, gb1) = g1.split_at_mut(l1.weights.len());
        for (o, &d) in self.d1.iter().enumerate() {
            let row = o * l1.inputs;
            for i in 0..l1.inputs {
                gw1[row + i] += d * self.z[i];
            }
            gb1[o] += d;
        }
    }
}

/// `-[y ln σ(s) + (1-y) ln(1-σ(s))]` computed from the logit.
fn bce_logit(s: f64, y: f64) -> f64 {
    let softplus = if s > 0.0 { s + (-s).exp().ln_1p() } else { s.exp().ln_1p() };
    softplus - y * s
}

/// Weighted mean loss over `batch` and its gradient, with dropout off.
fn loss_and_grad(model: &MlpModel, batch: &[(&[f64], f64, f64)]) -> (f64, Vec<f64>) {
    let mut pass = Pass::new(model);
    let mut grad = vec![0.0; model.param_count()];
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for &(x, y, w) in batch {
        let s = pass.forward(model, x);
        loss += w * bce_logit(s, y) / n;
        pass.backward(model, sigmoid(s) - y, w / n, &mut grad);
    }
    (loss, grad)
}

fn batch_loss(model: &MlpModel, batch: &[(&[f64], f64, f64)]) -> f64 {
    let n = batch.len() as f64;
    batch.iter().map(|&(x, y, w)| w * bce_logit(model.logit(x), y)).sum::<f64>() / n
}

fn check_level(level: Level, examples: &[Example]) -> Result<()> {
    match examples.iter().find(|e| e.features.level() != level) {
        Some(e) => Err(Error::Training(format!(
            "dataset mixes levels: expected {level}, found {}",
            e.features.level()
        ))),
        None => Ok(()),
    }
}

/// Trains a detector on `data.train`, reporting held-out metrics on `data.test`.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    let first = data.train.first().ok_or_else(|| Error::Training("training split is empty".into()))?;
    let level = data.level.unwrap_or(first.features.level());
    check_level(level, &data.train)?;
    check_level(level, &data.test)?;
    let positives = Dataset::positives(&data.train);
    let n = data.train.len();
    if positives == 0 || positives == n {
        return Err(Error::Training(format!(
            "training split for {level} has a single class ({positives} positive of {n})"
        )));
    }

    let d = level.dim();
    let mut model = MlpModel::new(level, d, config.hidden, config.seed)?;
    model.dropout = config.dropout;
    let (shift, scale) = fit_standardization(&data.train, d);
    model.set_standardization(shift, scale)?;

    let (w_pos, w_neg) = if config.balance_classes {
        (n as f64 / (2.0 * positives as f64), n as f64 / (2.0 * (n - positives) as f64))
    } else {
        (1.0, 1.0)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a41_0000_0001);
    let mut order: Vec<usize> = (0..n).collect();
    let mut pass = Pass::new(&model);
    let p_count = model.param_count();
    let mut grad = vec![0.0; p_count];
    let mut m = vec![0.0; p_count];
    let mut v = vec![0.0; p_count];
    let mut step = 0i32;
    let keep = 1.0 - config.dropout;
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let bn = chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let e = &data.train[idx];
                if config.dropout > 0.0 {
                    for mask in pass.m1.iter_mut().chain(pass.m2.iter_mut()) {
                        *mask = if rng.random_bool(keep) { 1.0 / keep } else { 0.0 };
                    }
                }
                let y = if e.label { 1.0 } else { 0.0 };
                let w = if e.label { w_pos } else { w_neg };
                let s = pass.forward(&model, e.features.as_slice());
                batch_loss += w * bce_logit(s, y) / bn;
                pass.backward(&model, sigmoid(s) - y, w / bn, &mut grad);
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "loss diverged at epoch {epoch} (batch loss {batch_loss}); lower the learning rate"
                )));
            }
            epoch_loss += batch_loss * bn / n as f64;

            step += 1;
            let bc1 = 1.0 - config.beta1.powi(step);
            let bc2 = 1.0 - config.beta2.powi(step);
            for (i, (p, is_weight)) in model.params_mut().enumerate() {
                let g = grad[i];
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + config.adam_epsilon);
                let decay = if is_weight { config.weight_decay * *p } else { 0.0 };
                *p -= config.learning_rate * (update + decay);
            }
        }
        let test = evaluate(&model, &data.test, config.threshold)?;
        tracing::debug!(epoch, loss = epoch_loss, accuracy = test.accuracy, recall = test.recall, "epoch done");
        epochs.push(EpochStats { epoch, loss: epoch_loss, test });
    }

    let report = TrainReport {
        level,
        train_size: n,
        test_size: data.test.len(),
        train: evaluate(&model, &data.train, config.threshold)?,
        test: evaluate(&model, &data.test, config.threshold)?,
        epochs,
    };
    Ok((model, report))
}

fn fit_standardization(examples: &[Example], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = examples.len() as f64;
    let mut mean = vec![0.0; d];
    for e in examples {
        for (m, x) in mean.iter_mut().zip(e.features.as_slice()) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; d];
    for e in examples {
        for ((s, x), m) in var.iter_mut().zip(e.features.as_slice()).zip(&mean) {
            *s += (x - m) * (x - m) / n;
        }
    }
    let scale = var.iter().map(|s| 1.0 / s.sqrt().max(1e-6)).collect();
    (mean, scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_relative_error: f64,
}

/// Gradient magnitude below which the comparison falls back to absolute error.
const RELATIVE_FLOOR: f64 = 1e-4;

/// Compares backpropagated gradients of the mean cross-entropy over `batch`
/// against central differences with step `epsilon`. Dropout is not applied.
pub fn grad_check(model: &MlpModel, batch: &[Example], epsilon: f64) -> Result<f64> {
    Ok(grad_check_detail(model, batch, epsilon)?.max_relative_error)
}

pub fn grad_check_detail(model: &MlpModel, batch: &[Example], epsilon: f64) -> Result<GradCheck> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("gradient check needs a non-empty batch".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput("finite-difference step must be positive".into()));
    }
    for e in batch {
        if e.features.as_slice().len() != model.input_dim() {
            return Err(Error::Shape { expected: model.input_dim(), got: e.features.as_slice().len() });
        }
    }
    let rows: Vec<(&[f64], f64, f64)> =
        batch.iter().map(|e| (e.features.as_slice(), if e.label { 1.0 } else { 0.0 }, 1.0)).collect();
    grad_check_rows(model, &rows, epsilon)
}

pub(crate) fn grad_check_rows(model: &MlpModel, rows: &[(&[f64], f64, f64)], epsilon: f64) -> Result<GradCheck> {
    let (_, analytic) = loss_and_grad(model, rows);
    let params = model.params();
    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(params.len());
    let mut shifted = params.clone();
    for i in 0..params.len() {
        shifted[i] = params[i] + epsilon;
        probe.set_params(&shifted);
        let up = batch_loss(&probe, rows);
        shifted[i] = params[i] - epsilon;
        probe.set_params(&shifted);
        let down = batch_loss(&probe, rows);
        shifted[i] = params[i];
        numeric.push((up - down) / (2.0 * epsilon));
    }
    let max_relative_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_FLOOR))
        .fold(0.0, f64::max);
    Ok(GradCheck { analytic, numeric, max_relative_error })
}
