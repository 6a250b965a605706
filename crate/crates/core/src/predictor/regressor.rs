use super::nn::{glorot, run_training};
use super::{predict_tis, CnnAtt, DatasetRecord, FeatureWindow, Matrix, Params, PredictorError, TrainConfig, TrainReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const HIDDEN: [usize; 3] = [400, 300, 300];
/// Time bins the regressor sees per feature row.
pub const POOLED_COLUMNS: usize = 10;
/// Smallest classifier confidence at which a frequency is predicted.
pub const CONFIDENCE_GATE: f64 = 0.90;

/// Dense tanh network with a linear scalar output. Inputs and target are
/// standardised with statistics from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub params: Params,
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
    /// Window shape the pooled input came from, when trained on windows.
    #[serde(default)]
    pub window_shape: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FrequencyPrediction {
    /// Δf in Hz with the classifier verdict that admitted it.
    Value { delta_f: f64, class: u8, confidence: f64 },
    /// The classifier was not confident enough.
    NoPrediction { confidence: f64 },
}

/// Row-wise means over [`POOLED_COLUMNS`] equal time bins.
pub fn pool_time(m: &Matrix) -> Vec<f64> {
    let bins = POOLED_COLUMNS.min(m.cols.max(1));
    let mut out = Vec::with_capacity(m.rows * bins);
    for r in 0..m.rows {
        let row = m.row(r);
        for b in 0..bins {
            let (lo, hi) = (b * m.cols / bins, (b + 1) * m.cols / bins);
            out.push(row[lo..hi].iter().sum::<f64>() / (hi - lo) as f64);
        }
    }
    out
}

fn standardise(v: &[Vec<f64>], idx: &[usize], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; n];
    for &i in idx {
        for (m, x) in mean.iter_mut().zip(&v[i]) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= idx.len() as f64);
    let mut var = vec![0.0; n];
    for &i in idx {
        for k in 0..n {
            var[k] += (v[i][k] - mean[k]).powi(2);
        }
    }
    let std = var.iter().map(|s| (s / idx.len() as f64).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
    (mean, std)
}

impl Mlp {
    pub fn new(n_in: usize, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::default();
        for l in 0..sizes.len() - 1 {
            // A zero output layer starts the fit at the target mean.
            let scale = if l + 2 == sizes.len() { 0.0 } else { glorot(sizes[l], sizes[l + 1]) };
            p.push(&format!("w{l}"), &[sizes[l + 1], sizes[l]], scale, &mut rng);
            p.push(&format!("b{l}"), &[sizes[l + 1]], 0.0, &mut rng);
        }
        Mlp { sizes, seed, params: p, in_mean: vec![0.0; n_in], in_std: vec![1.0; n_in], y_mean: 0.0, y_std: 1.0, window_shape: None }
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn normalise(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.in_mean).zip(&self.in_std).map(|((v, m), s)| (v - m) / s).collect()
    }

    /// Activations of every layer for a standardised input.
    fn forward(&self, pv: &[f64], x: Vec<f64>) -> Vec<Vec<f64>> {
        let mut acts = vec![x];
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = (&self.params.layout[2 * l], &self.params.layout[2 * l + 1]);
            let (w, b) = (&pv[w.offset..w.offset + w.len()], &pv[b.offset..b.offset + b.len()]);
            let a = acts.last().unwrap();
            let last = l + 1 == self.n_layers();
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let s = b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(a).map(|(p, q)| p * q).sum::<f64>();
                    if last { s } else { s.tanh() }
                })
                .collect();
            acts.push(z);
        }
        acts
    }

    fn backward(&self, pv: &[f64], x: Vec<f64>, y: f64, grad: &mut [f64]) -> f64 {
        let acts = self.forward(pv, x);
        let err = acts.last().unwrap()[0] - y;
        let mut delta = vec![err];
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (ws, bs) = (&self.params.layout[2 * l], &self.params.layout[2 * l + 1]);
            let w = &pv[ws.offset..ws.offset + ws.len()];
            let a = &acts[l];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                grad[bs.offset + o] += d;
                let g = &mut grad[ws.offset + o * n_in..ws.offset + (o + 1) * n_in];
                for (gv, av) in g.iter_mut().zip(a) {
                    *gv += d * av;
                }
                if l > 0 {
                    for (pv_, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *pv_ += d * wv;
                    }
                }
            }
            if l > 0 {
                for (p, av) in prev.iter_mut().zip(a) {
                    *p *= 1.0 - av * av;
                }
            }
            delta = prev;
        }
        0.5 * err * err
    }

    /// Half squared error in standardised units for a raw input and target;
    /// adds its gradient to `grad`.
    pub fn loss_and_grad(&self, x: &[f64], y: f64, grad: &mut [f64]) -> Result<f64, PredictorError> {
        self.check(x)?;
        if grad.len() != self.params.values.len() {
            return Err(PredictorError::Shape("gradient buffer length".into()));
        }
        Ok(self.backward(&self.params.values, self.normalise(x), (y - self.y_mean) / self.y_std, grad))
    }

    fn check(&self, x: &[f64]) -> Result<(), PredictorError> {
        if x.len() != self.sizes[0] {
            return Err(PredictorError::Shape(format!("input has {} values, model expects {}", x.len(), self.sizes[0])));
        }
        Ok(())
    }

    /// Prediction in target units.
    pub fn predict(&self, x: &[f64]) -> Result<f64, PredictorError> {
        self.check(x)?;
        let acts = self.forward(&self.params.values, self.normalise(x));
        Ok(acts.last().unwrap()[0] * self.y_std + self.y_mean)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, PredictorError> {
        let m: Mlp = serde_json::from_str(text)?;
        let expected: Vec<(String, Vec<usize>)> = (0..m.sizes.len().saturating_sub(1))
            .flat_map(|l| [(format!("w{l}"), vec![m.sizes[l + 1], m.sizes[l]]), (format!("b{l}"), vec![m.sizes[l + 1]])])
            .collect();
        m.params.check_layout(&expected)?;
        if m.in_mean.len() != m.sizes[0] || m.in_std.len() != m.sizes[0] {
            return Err(PredictorError::Model("normalisation length".into()));
        }
        Ok(m)
    }
}

fn rmse(model: &Mlp, x: &[Vec<f64>], y: &[f64], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    let s: f64 = idx.iter().map(|&i| (model.predict(&x[i]).unwrap() - y[i]).powi(2)).sum();
    (s / idx.len() as f64).sqrt()
}

/// Trains a dense network on plain input vectors.
pub fn train_mlp(inputs: &[Vec<f64>], targets: &[f64], hidden: &[usize], cfg: &TrainConfig) -> Result<(Mlp, TrainReport), PredictorError> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(PredictorError::Dataset("empty dataset".into()));
    }
    if inputs.len() != targets.len() {
        return Err(PredictorError::Dataset("inputs and targets differ in length".into()));
    }
    let n_in = inputs[0].len();
    if inputs.iter().any(|x| x.len() != n_in) {
        return Err(PredictorError::Shape("inputs differ in length".into()));
    }
    if targets.iter().chain(inputs.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(PredictorError::Dataset("non-finite value in the data".into()));
    }
    let (train, hold) = cfg.split(inputs.len());
    let mut model = Mlp::new(n_in, hidden, cfg.seed);
    let (mean, std) = standardise(inputs, &train, n_in);
    model.in_mean = mean;
    model.in_std = std;
    let ys: Vec<Vec<f64>> = targets.iter().map(|&y| vec![y]).collect();
    let (ym, ysd) = standardise(&ys, &train, 1);
    model.y_mean = ym[0];
    model.y_std = ysd[0];

    let xn: Vec<Vec<f64>> = inputs.iter().map(|x| model.normalise(x)).collect();
    let yn: Vec<f64> = targets.iter().map(|y| (y - model.y_mean) / model.y_std).collect();
    let mut params = model.params.clone();
    let epoch_loss = run_training(&mut params, &train, cfg, |p, i, g| model.backward(&p.values, xn[i].clone(), yn[i], g))?;
    model.params = params;
    let report = TrainReport {
        n_train: train.len(),
        n_holdout: hold.len(),
        epoch_loss,
        holdout_metric: rmse(&model, inputs, targets, &hold),
        train_metric: rmse(&model, inputs, targets, &train),
    };
    log::info!("regressor: train rmse {:.5}, holdout rmse {:.5}", report.train_metric, report.holdout_metric);
    Ok((model, report))
}

/// Trains the 400-300-300 regressor on time-pooled windows against the
/// first-swing frequency deviation.
pub fn train_regressor(records: &[DatasetRecord], cfg: &TrainConfig) -> Result<(Mlp, TrainReport), PredictorError> {
    if records.is_empty() {
        return Err(PredictorError::Dataset("empty dataset".into()));
    }
    let inputs: Vec<Vec<f64>> = records.iter().map(|r| pool_time(&r.window_matrix())).collect();
    let targets: Vec<f64> = records.iter().map(|r| r.delta_f).collect();
    let (mut model, report) = train_mlp(&inputs, &targets, &HIDDEN, cfg)?;
    model.window_shape = Some((records[0].rows, records[0].cols));
    Ok((model, report))
}

/// Δf for a window, or a no-prediction marker when the classifier's
/// confidence is below [`CONFIDENCE_GATE`].
pub fn predict_frequency_deviation(reg: &Mlp, clf: &CnnAtt, window: &FeatureWindow) -> Result<FrequencyPrediction, PredictorError> {
    let m = &window.matrix;
    if let Some(shape) = reg.window_shape {
        if shape != (m.rows, m.cols) {
            return Err(PredictorError::Shape(format!("window {}×{}, regressor expects {shape:?}", m.rows, m.cols)));
        }
    }
    let tis = predict_tis(clf, window)?;
    if tis.probability < CONFIDENCE_GATE {
        return Ok(FrequencyPrediction::NoPrediction { confidence: tis.probability });
    }
    Ok(FrequencyPrediction::Value { delta_f: reg.predict(&pool_time(m))?, class: tis.class, confidence: tis.probability })
}
