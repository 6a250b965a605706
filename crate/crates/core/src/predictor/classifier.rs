use super::nn::{glorot, run_training};
use super::{intensity_map, DatasetRecord, FeatureWindow, Matrix, Params, PredictorError, TrainConfig, TrainReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

/// Fewest records a classifier is trained on.
pub const MIN_RECORDS: usize = 100;

const CONV_W: usize = 0;
const CONV_B: usize = 1;
const PROJ: usize = 2;
const PROJ_B: usize = 3;
const EMB_W: usize = 4;
const EMB_B: usize = 5;
const POS: usize = 6;
const KEY: usize = 7;
const QUERY: usize = 8;
const VALUE: usize = 9;
const OUT_W: usize = 10;
const OUT_B: usize = 11;

/// Convolution-plus-attention TIS classifier.
///
/// Filters slide along the feature axis at every time position and their
/// tanh maps are stacked with the input. Each stacked channel is projected
/// onto a few row mixtures, embedded per time position (with a learned
/// positional term), pooled by dot-product attention over time and read out
/// by a dense softmax layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnAtt {
    pub rows: usize,
    pub cols: usize,
    pub filters: usize,
    pub kernel: usize,
    /// Row mixtures per channel.
    pub mixtures: usize,
    /// Attention dimension.
    pub dim: usize,
    pub seed: u64,
    pub params: Params,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TisPrediction {
    pub class: u8,
    /// Softmax probability of `class`.
    pub probability: f64,
    pub probs: [f64; 2],
}

struct Cache {
    conv: Vec<f64>,
    z: Vec<f64>,
    h: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    alpha: Vec<f64>,
    o: Vec<f64>,
    p: [f64; 2],
}

fn softmax_in_place(s: &mut [f64]) {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in s.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    s.iter_mut().for_each(|v| *v /= sum);
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

impl CnnAtt {
    pub const FILTERS: usize = 5;
    pub const KERNEL: usize = 7;
    pub const MIXTURES: usize = 4;
    pub const DIM: usize = 32;

    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        Self::with_sizes(rows, cols, Self::FILTERS, Self::KERNEL, Self::MIXTURES, Self::DIM, seed)
    }

    pub fn with_sizes(rows: usize, cols: usize, filters: usize, kernel: usize, mixtures: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::default();
        let nz = (filters + 1) * mixtures;
        p.push("conv_w", &[filters, kernel], glorot(kernel, kernel), &mut rng);
        p.push("conv_b", &[filters], 0.0, &mut rng);
        p.push("proj", &[filters + 1, mixtures, rows], glorot(rows, mixtures), &mut rng);
        p.push("proj_b", &[nz], 0.0, &mut rng);
        p.push("embed_w", &[dim, nz], glorot(nz, dim), &mut rng);
        p.push("embed_b", &[dim], 0.0, &mut rng);
        p.push("pos", &[dim, cols], 0.0, &mut rng);
        p.push("key", &[dim, dim], glorot(dim, dim), &mut rng);
        p.push("query", &[dim], glorot(dim, 1), &mut rng);
        p.push("value", &[dim, dim], glorot(dim, dim), &mut rng);
        p.push("out_w", &[2, dim], glorot(dim, 2), &mut rng);
        p.push("out_b", &[2], 0.0, &mut rng);
        CnnAtt { rows, cols, filters, kernel, mixtures, dim, seed, params: p }
    }

    fn expected_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (f, j, d) = (self.filters, self.mixtures, self.dim);
        let nz = (f + 1) * j;
        [
            ("conv_w", vec![f, self.kernel]),
            ("conv_b", vec![f]),
            ("proj", vec![f + 1, j, self.rows]),
            ("proj_b", vec![nz]),
            ("embed_w", vec![d, nz]),
            ("embed_b", vec![d]),
            ("pos", vec![d, self.cols]),
            ("key", vec![d, d]),
            ("query", vec![d]),
            ("value", vec![d, d]),
            ("out_w", vec![2, d]),
            ("out_b", vec![2]),
        ]
        .into_iter()
        .map(|(n, s)| (n.to_string(), s))
        .collect()
    }

    fn w<'a>(&self, pv: &'a [f64], id: usize) -> &'a [f64] {
        let t = &self.params.layout[id];
        &pv[t.offset..t.offset + t.len()]
    }

    fn off(&self, id: usize) -> usize {
        self.params.layout[id].offset
    }

    fn check_input(&self, x: &[f64]) -> Result<(), PredictorError> {
        if x.len() != self.rows * self.cols {
            return Err(PredictorError::Shape(format!("input has {} values, model expects {}×{}", x.len(), self.rows, self.cols)));
        }
        Ok(())
    }

    fn forward_cache(&self, pv: &[f64], x: &[f64]) -> Cache {
        let (r, t, f, kl, j, d) = (self.rows, self.cols, self.filters, self.kernel, self.mixtures, self.dim);
        let half = (kl / 2) as isize;
        let (cw, cb) = (self.w(pv, CONV_W), self.w(pv, CONV_B));
        let mut conv = vec![0.0; f * r * t];
        for k in 0..f {
            for row in 0..r {
                let out = &mut conv[(k * r + row) * t..(k * r + row + 1) * t];
                out.fill(cb[k]);
                for u in 0..kl {
                    let src = row as isize + u as isize - half;
                    if src >= 0 && (src as usize) < r {
                        let s = src as usize;
                        axpy(cw[k * kl + u], &x[s * t..(s + 1) * t], out);
                    }
                }
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        let chan = |c: usize, row: usize| -> &[f64] {
            if c == 0 { &x[row * t..(row + 1) * t] } else { &conv[((c - 1) * r + row) * t..((c - 1) * r + row + 1) * t] }
        };

        let nz = (f + 1) * j;
        let (pw, pb) = (self.w(pv, PROJ), self.w(pv, PROJ_B));
        let mut z = vec![0.0; nz * t];
        for c in 0..=f {
            for jj in 0..j {
                let fz = c * j + jj;
                let out = &mut z[fz * t..(fz + 1) * t];
                out.fill(pb[fz]);
                for row in 0..r {
                    axpy(pw[fz * r + row], chan(c, row), out);
                }
            }
        }

        let (ew, eb, pos) = (self.w(pv, EMB_W), self.w(pv, EMB_B), self.w(pv, POS));
        let mut h = vec![0.0; d * t];
        for i in 0..d {
            let out = &mut h[i * t..(i + 1) * t];
            out.copy_from_slice(&pos[i * t..(i + 1) * t]);
            out.iter_mut().for_each(|v| *v += eb[i]);
            for fz in 0..nz {
                axpy(ew[i * nz + fz], &z[fz * t..(fz + 1) * t], out);
            }
            out.iter_mut().for_each(|v| *v = v.tanh());
        }

        let (wk, wv, q) = (self.w(pv, KEY), self.w(pv, VALUE), self.w(pv, QUERY));
        let mut k = vec![0.0; d * t];
        let mut v = vec![0.0; d * t];
        for i in 0..d {
            for l in 0..d {
                axpy(wk[i * d + l], &h[l * t..(l + 1) * t], &mut k[i * t..(i + 1) * t]);
                axpy(wv[i * d + l], &h[l * t..(l + 1) * t], &mut v[i * t..(i + 1) * t]);
            }
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut alpha = vec![0.0; t];
        for i in 0..d {
            axpy(q[i] * scale, &k[i * t..(i + 1) * t], &mut alpha);
        }
        softmax_in_place(&mut alpha);
        let o: Vec<f64> = (0..d).map(|i| dot(&alpha, &v[i * t..(i + 1) * t])).collect();

        let (ow, ob) = (self.w(pv, OUT_W), self.w(pv, OUT_B));
        let mut p = [ob[0] + dot(&ow[..d], &o), ob[1] + dot(&ow[d..2 * d], &o)];
        softmax_in_place(&mut p);
        Cache { conv, z, h, k, v, alpha, o, p }
    }

    /// Class probabilities of a preprocessed input (row-major, rows × cols).
    pub fn probabilities(&self, x: &[f64]) -> Result<[f64; 2], PredictorError> {
        self.check_input(x)?;
        Ok(self.forward_cache(&self.params.values, x).p)
    }

    /// Cross-entropy of one sample; adds its gradient to `grad`.
    pub fn loss_and_grad(&self, x: &[f64], y: u8, grad: &mut [f64]) -> Result<f64, PredictorError> {
        self.check_input(x)?;
        if grad.len() != self.params.values.len() {
            return Err(PredictorError::Shape("gradient buffer length".into()));
        }
        Ok(self.backward(&self.params.values, x, y, grad))
    }

    fn backward(&self, pv: &[f64], x: &[f64], y: u8, grad: &mut [f64]) -> f64 {
        let (r, t, f, kl, j, d) = (self.rows, self.cols, self.filters, self.kernel, self.mixtures, self.dim);
        let nz = (f + 1) * j;
        let c = self.forward_cache(pv, x);
        let loss = -c.p[y as usize].max(1e-300).ln();

        let mut dl = c.p;
        dl[y as usize] -= 1.0;
        let ow = self.w(pv, OUT_W);
        let (o_ow, o_ob) = (self.off(OUT_W), self.off(OUT_B));
        for cls in 0..2 {
            axpy(dl[cls], &c.o, &mut grad[o_ow + cls * d..o_ow + (cls + 1) * d]);
            grad[o_ob + cls] += dl[cls];
        }
        let d_o: Vec<f64> = (0..d).map(|i| ow[i] * dl[0] + ow[d + i] * dl[1]).collect();

        let mut d_alpha = vec![0.0; t];
        for i in 0..d {
            axpy(d_o[i], &c.v[i * t..(i + 1) * t], &mut d_alpha);
        }
        let mean = dot(&c.alpha, &d_alpha);
        let ds: Vec<f64> = c.alpha.iter().zip(&d_alpha).map(|(a, g)| a * (g - mean)).collect();

        let scale = 1.0 / (d as f64).sqrt();
        let q = self.w(pv, QUERY);
        let (wk, wv) = (self.w(pv, KEY), self.w(pv, VALUE));
        let (o_k, o_q, o_v) = (self.off(KEY), self.off(QUERY), self.off(VALUE));
        let mut dk = vec![0.0; d * t];
        let mut dv = vec![0.0; d * t];
        for i in 0..d {
            grad[o_q + i] += scale * dot(&ds, &c.k[i * t..(i + 1) * t]);
            for tt in 0..t {
                dk[i * t + tt] = ds[tt] * q[i] * scale;
                dv[i * t + tt] = c.alpha[tt] * d_o[i];
            }
        }
        let mut dh = vec![0.0; d * t];
        for i in 0..d {
            let (dki, dvi) = (&dk[i * t..(i + 1) * t], &dv[i * t..(i + 1) * t]);
            for l in 0..d {
                let hl = &c.h[l * t..(l + 1) * t];
                grad[o_k + i * d + l] += dot(dki, hl);
                grad[o_v + i * d + l] += dot(dvi, hl);
                let dhl = &mut dh[l * t..(l + 1) * t];
                axpy(wk[i * d + l], dki, dhl);
                axpy(wv[i * d + l], dvi, dhl);
            }
        }
        // Through the embedding tanh.
        for (g, hv) in dh.iter_mut().zip(&c.h) {
            *g *= 1.0 - hv * hv;
        }
        let dg = dh;
        let ew = self.w(pv, EMB_W);
        let (o_ew, o_eb, o_pos) = (self.off(EMB_W), self.off(EMB_B), self.off(POS));
        let mut dz = vec![0.0; nz * t];
        for i in 0..d {
            let dgi = &dg[i * t..(i + 1) * t];
            grad[o_eb + i] += dgi.iter().sum::<f64>();
            for (gp, v) in grad[o_pos + i * t..o_pos + (i + 1) * t].iter_mut().zip(dgi) {
                *gp += v;
            }
            for fz in 0..nz {
                grad[o_ew + i * nz + fz] += dot(dgi, &c.z[fz * t..(fz + 1) * t]);
                axpy(ew[i * nz + fz], dgi, &mut dz[fz * t..(fz + 1) * t]);
            }
        }

        let pw = self.w(pv, PROJ);
        let (o_p, o_pb) = (self.off(PROJ), self.off(PROJ_B));
        let mut dconv = vec![0.0; f * r * t];
        for ch in 0..=f {
            for jj in 0..j {
                let fz = ch * j + jj;
                let dzf = &dz[fz * t..(fz + 1) * t];
                grad[o_pb + fz] += dzf.iter().sum::<f64>();
                for row in 0..r {
                    let src = if ch == 0 { &x[row * t..(row + 1) * t] } else { &c.conv[((ch - 1) * r + row) * t..((ch - 1) * r + row + 1) * t] };
                    grad[o_p + fz * r + row] += dot(dzf, src);
                    if ch > 0 {
                        axpy(pw[fz * r + row], dzf, &mut dconv[((ch - 1) * r + row) * t..((ch - 1) * r + row + 1) * t]);
                    }
                }
            }
        }
        for (g, a) in dconv.iter_mut().zip(&c.conv) {
            *g *= 1.0 - a * a;
        }
        let half = (kl / 2) as isize;
        let (o_cw, o_cb) = (self.off(CONV_W), self.off(CONV_B));
        for k in 0..f {
            for row in 0..r {
                let da = &dconv[(k * r + row) * t..(k * r + row + 1) * t];
                grad[o_cb + k] += da.iter().sum::<f64>();
                for u in 0..kl {
                    let src = row as isize + u as isize - half;
                    if src >= 0 && (src as usize) < r {
                        let s = src as usize;
                        grad[o_cw + k * kl + u] += dot(da, &x[s * t..(s + 1) * t]);
                    }
                }
            }
        }
        loss
    }

    pub fn predict_input(&self, x: &[f64]) -> Result<TisPrediction, PredictorError> {
        let probs = self.probabilities(x)?;
        let class = (probs[1] > probs[0]) as u8;
        Ok(TisPrediction { class, probability: probs[class as usize], probs })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, PredictorError> {
        let m: CnnAtt = serde_json::from_str(text)?;
        m.params.check_layout(&m.expected_layout())?;
        Ok(m)
    }
}

fn input_hash(x: &[f64]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for v in x {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Rejects inputs that occur with both labels.
fn check_degenerate(inputs: &[Matrix], labels: &[u8]) -> Result<(), PredictorError> {
    let mut seen: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, x) in inputs.iter().enumerate() {
        let bucket = seen.entry(input_hash(&x.data)).or_default();
        for &k in bucket.iter() {
            if inputs[k].data == x.data && labels[k] != labels[i] {
                return Err(PredictorError::Dataset(format!("records {k} and {i} are identical but labelled differently")));
            }
        }
        bucket.push(i);
    }
    Ok(())
}

fn accuracy(model: &CnnAtt, inputs: &[Matrix], labels: &[u8], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    let hits = idx.iter().filter(|&&i| model.predict_input(&inputs[i].data).map_or(false, |p| p.class == labels[i])).count();
    hits as f64 / idx.len() as f64
}

/// Trains on preprocessed inputs.
pub fn train_cnn(inputs: &[Matrix], labels: &[u8], cfg: &TrainConfig) -> Result<(CnnAtt, TrainReport), PredictorError> {
    cfg.validate()?;
    if inputs.len() != labels.len() {
        return Err(PredictorError::Dataset("inputs and labels differ in length".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(PredictorError::Dataset("labels must be 0 or 1".into()));
    }
    check_degenerate(inputs, labels)?;
    if inputs.len() < MIN_RECORDS {
        return Err(PredictorError::Dataset(format!("{} records, at least {MIN_RECORDS} needed", inputs.len())));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(PredictorError::Dataset("only one class present".into()));
    }
    let (rows, cols) = (inputs[0].rows, inputs[0].cols);
    if inputs.iter().any(|m| m.rows != rows || m.cols != cols) {
        return Err(PredictorError::Shape("inputs differ in shape".into()));
    }
    let (train, hold) = cfg.split(inputs.len());
    let mut model = CnnAtt::new(rows, cols, cfg.seed);
    let mut params = model.params.clone();
    let epoch_loss = run_training(&mut params, &train, cfg, |p, i, g| model.backward(&p.values, &inputs[i].data, labels[i], g))?;
    model.params = params;
    let report = TrainReport {
        n_train: train.len(),
        n_holdout: hold.len(),
        epoch_loss,
        holdout_metric: accuracy(&model, inputs, labels, &hold),
        train_metric: accuracy(&model, inputs, labels, &train),
    };
    log::info!("classifier: train acc {:.4}, holdout acc {:.4}", report.train_metric, report.holdout_metric);
    Ok((model, report))
}

/// Trains on dataset records through their intensity maps.
pub fn train_classifier(records: &[DatasetRecord], cfg: &TrainConfig) -> Result<(CnnAtt, TrainReport), PredictorError> {
    let inputs: Vec<Matrix> = records.iter().map(|r| intensity_map(&r.window_matrix())).collect();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    train_cnn(&inputs, &labels, cfg)
}

/// Class and confidence for a feature window.
pub fn predict_tis(model: &CnnAtt, window: &FeatureWindow) -> Result<TisPrediction, PredictorError> {
    let m = &window.matrix;
    if m.rows != model.rows || m.cols != model.cols {
        return Err(PredictorError::Shape(format!("window {}×{}, model {}×{}", m.rows, m.cols, model.rows, model.cols)));
    }
    model.predict_input(&intensity_map(m).data)
}
