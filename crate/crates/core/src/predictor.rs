//! Multi-turn prediction for history-free first requests: a small MLP over
//! hand-crafted request features, plus oracle and fixed predictors.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Category;
use crate::workload::{Request, Trace};

pub const MODEL_FORMAT: &str = "prefixsim-mlp";
pub const MODEL_VERSION: u32 = 1;

/// Names of [`extract_features`] outputs, in order.
pub const FEATURE_NAMES: [&str; 9] = [
    "open_ended_score",
    "prompt_sentences",
    "enthusiastic",
    "response_length",
    "multistep_response",
    "has_code",
    "resp_ends_question",
    "prompt_length",
    "turn_index",
];

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("trace carries no continuation labels")]
    OracleUnavailable,
    #[error("mlp mode requires a trained model")]
    MissingModel,
    #[error("unsupported model file: {0}")]
    BadModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PredictorError>;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy computed from the logit.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Layer { rows, cols, w: vec![0.0; rows * cols], b: vec![0.0; rows] }
    }

    fn he(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (2.0 / cols as f64).sqrt();
        let w = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Layer { rows, cols, w, b: vec![0.0; rows] }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.b[r] + self.w[r * self.cols..(r + 1) * self.cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

/// Three-layer perceptron `d → h1 → h2 → 1` with rectifiers and a logistic output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    format: String,
    version: u32,
    dim: usize,
    l1: Layer,
    l2: Layer,
    l3: Layer,
    #[serde(default)]
    standardizer: Option<Standardizer>,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fit per-feature standardization on the training set.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 50, lr: 1e-2, batch_size: 32, seed: 0, standardize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.tn + self.fn_;
        if n == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / n as f64
        }
    }
}

impl MlpModel {
    /// Randomly initialized model with the standard 256/64 hidden widths.
    pub fn new(dim: usize, seed: u64) -> Self {
        Self::with_hidden(dim, 256, 64, seed)
    }

    pub fn with_hidden(dim: usize, h1: usize, h2: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            dim,
            l1: Layer::he(h1, dim, &mut rng),
            l2: Layer::he(h2, h1, &mut rng),
            l3: Layer::he(1, h2, &mut rng),
            standardizer: None,
            threshold: 0.5,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        MlpModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            dim,
            l1: Layer::zeros(256, dim),
            l2: Layer::zeros(64, 256),
            l3: Layer::zeros(1, 64),
            standardizer: None,
            threshold: 0.5,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_params(&self) -> usize {
        self.l1.len() + self.l2.len() + self.l3.len()
    }

    fn prepare(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(PredictorError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(match &self.standardizer {
            Some(s) => x.iter().zip(&s.mean).zip(&s.scale).map(|((v, m), sd)| (v - m) / sd).collect(),
            None => x.to_vec(),
        })
    }

    /// Pre-squash output `W₃·relu(W₂·relu(W₁x + b₁) + b₂) + b₃`.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        let x = self.prepare(x)?;
        let h1 = relu(&self.l1.apply(&x));
        let h2 = relu(&self.l2.apply(&h1));
        Ok(self.l3.apply(&h2)[0])
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<bool> {
        Ok(self.forward(x)? >= self.threshold)
    }

    /// Scales the output layer; used to probe output linearity.
    pub fn scale_output_layer(&mut self, f: f64) {
        self.l3.w.iter_mut().for_each(|w| *w *= f);
        self.l3.b.iter_mut().for_each(|b| *b *= f);
    }

    /// All weights and biases, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in [&self.l1, &self.l2, &self.l3] {
            v.extend(&l.w);
            v.extend(&l.b);
        }
        v
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let mut off = 0;
        for l in [&mut self.l1, &mut self.l2, &mut self.l3] {
            let n = l.w.len();
            l.w.copy_from_slice(&p[off..off + n]);
            off += n;
            let m = l.b.len();
            l.b.copy_from_slice(&p[off..off + m]);
            off += m;
        }
    }

    /// Mean loss and its gradient (flattened like [`MlpModel::params`]) over `batch`.
    pub fn loss_and_grad(&self, batch: &[(Vec<f64>, bool)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(PredictorError::EmptyDataset);
        }
        let mut g1 = Layer::zeros(self.l1.rows, self.l1.cols);
        let mut g2 = Layer::zeros(self.l2.rows, self.l2.cols);
        let mut g3 = Layer::zeros(1, self.l3.cols);
        let mut loss = 0.0;
        for (x, label) in batch {
            let x = self.prepare(x)?;
            let y = if *label { 1.0 } else { 0.0 };
            let a1 = self.l1.apply(&x);
            let h1 = relu(&a1);
            let a2 = self.l2.apply(&h1);
            let h2 = relu(&a2);
            let z = self.l3.apply(&h2)[0];
            loss += bce_with_logit(z, y);
            let dz = sigmoid(z) - y;
            for j in 0..h2.len() {
                g3.w[j] += dz * h2[j];
            }
            g3.b[0] += dz;
            let d2: Vec<f64> = (0..a2.len()).map(|j| if a2[j] > 0.0 { dz * self.l3.w[j] } else { 0.0 }).collect();
            let mut d1 = vec![0.0; a1.len()];
            for (r, &d) in d2.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &self.l2.w[r * self.l2.cols..(r + 1) * self.l2.cols];
                let grow = &mut g2.w[r * self.l2.cols..(r + 1) * self.l2.cols];
                for c in 0..self.l2.cols {
                    grow[c] += d * h1[c];
                    d1[c] += d * row[c];
                }
                g2.b[r] += d;
            }
            for (r, d) in d1.iter_mut().enumerate() {
                if a1[r] <= 0.0 {
                    continue;
                }
                let grow = &mut g1.w[r * self.l1.cols..(r + 1) * self.l1.cols];
                for c in 0..self.l1.cols {
                    grow[c] += *d * x[c];
                }
                g1.b[r] += *d;
            }
        }
        let n = batch.len() as f64;
        let mut grad = Vec::with_capacity(self.num_params());
        for l in [&g1, &g2, &g3] {
            grad.extend(l.w.iter().map(|v| v / n));
            grad.extend(l.b.iter().map(|v| v / n));
        }
        Ok((loss / n, grad))
    }

    pub fn evaluate(&self, data: &[(Vec<f64>, bool)]) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(PredictorError::EmptyDataset);
        }
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (x, label) in data {
            let z = self.logit(x)?;
            loss += bce_with_logit(z, if *label { 1.0 } else { 0.0 });
            if (sigmoid(z) >= self.threshold) == *label {
                correct += 1;
            }
        }
        Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
    }

    pub fn confusion(&self, data: &[(Vec<f64>, bool)]) -> Result<Confusion> {
        let mut c = Confusion::default();
        for (x, label) in data {
            match (self.predict(x)?, *label) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    /// Mini-batch SGD on binary cross-entropy. The curve records the
    /// full-dataset loss and accuracy after each epoch.
    pub fn train(&mut self, data: &[(Vec<f64>, bool)], cfg: &TrainConfig) -> Result<TrainingCurve> {
        if data.is_empty() {
            return Err(PredictorError::EmptyDataset);
        }
        if let Some((x, _)) = data.iter().find(|(x, _)| x.len() != self.dim) {
            return Err(PredictorError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if cfg.standardize {
            let n = data.len() as f64;
            let mean: Vec<f64> = (0..self.dim).map(|j| data.iter().map(|(x, _)| x[j]).sum::<f64>() / n).collect();
            let scale = (0..self.dim)
                .map(|j| {
                    let var = data.iter().map(|(x, _)| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
                    if var > 1e-12 { var.sqrt() } else { 1.0 }
                })
                .collect();
            self.standardizer = Some(Standardizer { mean, scale });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut curve = TrainingCurve::default();
        let mut params = self.params();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let batch: Vec<(Vec<f64>, bool)> = chunk.iter().map(|&i| data[i].clone()).collect();
                let (_, grad) = self.loss_and_grad(&batch)?;
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= cfg.lr * g;
                }
                self.set_params(&params);
            }
            let (loss, acc) = self.evaluate(data)?;
            curve.loss.push(loss);
            curve.accuracy.push(acc);
        }
        Ok(curve)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: MlpModel = serde_json::from_str(s)?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(PredictorError::BadModel(format!("{} v{}", m.format, m.version)));
        }
        if m.l1.cols != m.dim || m.l2.cols != m.l1.rows || m.l3.cols != m.l2.rows || m.l3.rows != 1 {
            return Err(PredictorError::BadModel("inconsistent layer shapes".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Feature vector in [`FEATURE_NAMES`] order.
pub fn extract_features(request: &Request, response_len: usize) -> Vec<f64> {
    let m = &request.meta;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    vec![
        m.open_ended,
        m.prompt_sentences as f64,
        m.enthusiasm,
        (response_len as f64).ln_1p(),
        flag(m.multistep),
        flag(m.has_code || request.category == Category::Programming),
        m.ends_question,
        (request.prompt_len() as f64).ln_1p(),
        request.turn_index as f64,
    ]
}

/// Labelled first-turn examples from a trace.
pub fn dataset_from_trace(trace: &Trace) -> Vec<(Vec<f64>, bool)> {
    trace
        .requests
        .iter()
        .filter(|r| r.turn_index == 0)
        .filter_map(|r| r.continues.map(|y| (extract_features(r, r.response_len()), y)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    Mlp,
    #[default]
    Oracle,
    AlwaysSingle,
    AlwaysMulti,
}

impl std::str::FromStr for PredictorMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mlp" => Ok(PredictorMode::Mlp),
            "oracle" => Ok(PredictorMode::Oracle),
            "always_single" => Ok(PredictorMode::AlwaysSingle),
            "always_multi" => Ok(PredictorMode::AlwaysMulti),
            _ => Err(format!("unknown predictor mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Predictor {
    pub mode: PredictorMode,
    pub model: Option<MlpModel>,
    /// Continuation probability reported by non-probabilistic modes.
    pub confidence: f64,
}

impl Predictor {
    pub fn new(mode: PredictorMode) -> Self {
        Predictor { mode, model: None, confidence: 0.9 }
    }

    pub fn with_model(model: MlpModel) -> Self {
        Predictor { mode: PredictorMode::Mlp, model: Some(model), confidence: 0.9 }
    }

    /// Probability that the request's conversation continues.
    pub fn probability(&self, request: &Request) -> Result<f64> {
        let (hi, lo) = (self.confidence, 1.0 - self.confidence);
        match self.mode {
            PredictorMode::Oracle => {
                request.continues.map(|y| if y { hi } else { lo }).ok_or(PredictorError::OracleUnavailable)
            }
            PredictorMode::AlwaysSingle => Ok(lo),
            PredictorMode::AlwaysMulti => Ok(hi),
            PredictorMode::Mlp => {
                let m = self.model.as_ref().ok_or(PredictorError::MissingModel)?;
                m.forward(&extract_features(request, request.response_len()))
            }
        }
    }

    /// Routing decision for a history-free first request.
    pub fn predict_first_turn(&self, request: &Request) -> Result<bool> {
        match self.mode {
            PredictorMode::Oracle => request.continues.ok_or(PredictorError::OracleUnavailable),
            PredictorMode::AlwaysSingle => Ok(false),
            PredictorMode::AlwaysMulti => Ok(true),
            PredictorMode::Mlp => {
                let m = self.model.as_ref().ok_or(PredictorError::MissingModel)?;
                m.predict(&extract_features(request, request.response_len()))
            }
        }
    }
}

/// Linearly separable 2-D points labelled by the side of `x + y = 0`, with a margin.
pub fn separable_dataset(n: usize, seed: u64) -> Vec<(Vec<f64>, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: f64 = rng.random_range(-1.0..1.0);
        let y: f64 = rng.random_range(-1.0..1.0);
        if (x + y).abs() < 0.1 {
            continue;
        }
        out.push((vec![x, y], x + y > 0.0));
    }
    out
}
