use super::PredictorError;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named tensors packed into one flat vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub layout: Vec<TensorSpec>,
    pub values: Vec<f64>,
}

/// On-disk form: one entry per tensor with its row-major values.
#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Serialize for Params {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<StoredTensor> = self
            .layout
            .iter()
            .map(|t| StoredTensor { name: t.name.clone(), shape: t.shape.clone(), values: self.slice(t).to_vec() })
            .collect();
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Params {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let stored = Vec::<StoredTensor>::deserialize(d)?;
        let mut p = Params::default();
        for t in stored {
            let n: usize = t.shape.iter().product();
            if n != t.values.len() {
                return Err(serde::de::Error::custom(format!("tensor {} holds {} values for shape {:?}", t.name, t.values.len(), t.shape)));
            }
            p.layout.push(TensorSpec { name: t.name, shape: t.shape, offset: p.values.len() });
            p.values.extend(t.values);
        }
        Ok(p)
    }
}

impl Params {
    /// Appends a tensor drawn uniformly from ±`scale`.
    pub fn push(&mut self, name: &str, shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> usize {
        let spec = TensorSpec { name: name.to_string(), shape: shape.to_vec(), offset: self.values.len() };
        let n = spec.len();
        if scale > 0.0 {
            self.values.extend((0..n).map(|_| rng.gen_range(-scale..scale)));
        } else {
            self.values.extend(std::iter::repeat(0.0).take(n));
        }
        self.layout.push(spec);
        self.layout.len() - 1
    }

    pub fn slice(&self, t: &TensorSpec) -> &[f64] {
        &self.values[t.offset..t.offset + t.len()]
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.layout.iter().find(|t| t.name == name)
    }

    /// Checks names and shapes against an expected layout.
    pub fn check_layout(&self, expected: &[(String, Vec<usize>)]) -> Result<(), PredictorError> {
        if self.layout.len() != expected.len() {
            return Err(PredictorError::Model(format!("{} tensors, expected {}", self.layout.len(), expected.len())));
        }
        for (t, (name, shape)) in self.layout.iter().zip(expected) {
            if &t.name != name || &t.shape != shape {
                return Err(PredictorError::Model(format!("tensor {} {:?}, expected {name} {shape:?}", t.name, t.shape)));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform bound.
pub(crate) fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of records held out for evaluation.
    pub holdout_fraction: f64,
}

impl TrainConfig {
    pub fn classifier_default() -> Self {
        TrainConfig { seed: 1, epochs: 30, learning_rate: 3e-3, batch_size: 16, holdout_fraction: 0.2 }
    }

    pub fn regressor_default() -> Self {
        TrainConfig { seed: 1, epochs: 120, learning_rate: 5e-4, batch_size: 16, holdout_fraction: 0.2 }
    }

    pub(crate) fn validate(&self) -> Result<(), PredictorError> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(PredictorError::Dataset("epochs, batch size and learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(PredictorError::Dataset("holdout fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Seeded shuffle split into (train, holdout) index sets.
    pub(crate) fn split(&self, n: usize) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed));
        let n_hold = ((n as f64) * self.holdout_fraction).round() as usize;
        let hold = idx.split_off(n - n_hold);
        (idx, hold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_holdout: usize,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Holdout accuracy (classifier) or RMSE in target units (regressor).
    pub holdout_metric: f64,
    /// Same metric on the training split.
    pub train_metric: f64,
}

/// Mini-batch loop shared by both networks. `grad_of` adds the gradient of
/// one sample to the buffer and returns its loss.
pub(crate) fn run_training(
    params: &mut Params,
    train: &[usize],
    cfg: &TrainConfig,
    mut grad_of: impl FnMut(&Params, usize, &mut [f64]) -> f64,
) -> Result<Vec<f64>, PredictorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(params.values.len(), cfg.learning_rate);
    let mut grad = vec![0.0; params.values.len()];
    let mut order = train.to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &i in chunk {
                loss += grad_of(params, i, &mut grad);
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(PredictorError::Diverged { epoch, batch });
            }
            let inv = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            adam.step(&mut params.values, &grad);
            total += loss;
        }
        let mean = total / order.len().max(1) as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    Ok(history)
}
