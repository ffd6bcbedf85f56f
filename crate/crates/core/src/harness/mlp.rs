//! A fully connected classifier with optional batch-whitening layers,
//! trained by hand-written backpropagation.
//!
//! Hidden block: `linear → BW (optional) → ReLU`; the output block is a
//! linear map followed by softmax cross-entropy.

use crate::error::{Error, Result};
use crate::gradients::BackwardOptions;
use crate::layer::{BwLayer, LayerCache, RecoveryGrads};
use crate::linalg::Matrix;
use crate::rng::{standard_normal_matrix, stream};
use crate::transforms::WhiteningSpec;

use super::data::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    /// Input width, hidden widths, class count.
    pub widths: Vec<usize>,
    /// Whitening applied after every hidden linear layer.
    pub norm: Option<WhiteningSpec>,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub clamp_eigengap: bool,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            widths: vec![784, 256, 256, 256, 256, 10],
            norm: None,
            lr: 1.0,
            batch: 1024,
            epochs: 50,
            clamp_eigengap: false,
        }
    }
}

impl MlpConfig {
    pub fn hidden_layers(&self) -> usize {
        self.widths.len().saturating_sub(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::Validation(format!("invalid layer widths {:?}", self.widths)));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Validation(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch < 2 {
            return Err(Error::Validation("training batch must hold at least 2 samples".into()));
        }
        if let Some(spec) = &self.norm {
            for &w in &self.widths[1..self.widths.len() - 1] {
                spec.resolve(w)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    fn forward(&self, h: &Matrix) -> Matrix {
        (&self.weight * h).add_row_vector(&self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub linear: Vec<(Matrix, Vec<f64>)>,
    pub recovery: Vec<Option<RecoveryGrads>>,
}

/// Per-layer intermediates of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Matrix>,
    activations: Vec<Matrix>,
    norm: Vec<Option<(Vec<f64>, LayerCache)>>,
    probs: Matrix,
    pub loss: f64,
}

impl Tape {
    /// Batch mean and whitening cache of hidden layer `l`, if it is whitened.
    pub fn norm_cache(&self, l: usize) -> Option<&(Vec<f64>, LayerCache)> {
        self.norm.get(l).and_then(Option::as_ref)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub linears: Vec<Linear>,
    pub norms: Vec<Option<BwLayer>>,
}

/// Mean cross-entropy and softmax probabilities of `logits` (classes × m).
fn softmax_cross_entropy(logits: &Matrix, labels: &[u8]) -> (f64, Matrix) {
    let (k, m) = logits.shape();
    let mut probs = Matrix::zeros(k, m);
    let mut loss = 0.0;
    for j in 0..m {
        let col = logits.column(j);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = col.iter().map(|v| (v - max).exp()).sum();
        for c in 0..k {
            probs[(c, j)] = (col[c] - max).exp() / sum;
        }
        loss += sum.ln() + max - col[labels[j] as usize];
    }
    (loss / m as f64, probs)
}

fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

impl Mlp {
    /// He-initialized weights (`N(0, 2/fan_in)`), zero biases, fresh BW layers.
    pub fn new(config: &MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let opts = BackwardOptions {
            clamp_eigengap: config.clamp_eigengap,
            ..BackwardOptions::default()
        };
        let n = config.widths.len() - 1;
        let mut linears = Vec::with_capacity(n);
        let mut norms = Vec::with_capacity(n - 1);
        for l in 0..n {
            let (fan_in, fan_out) = (config.widths[l], config.widths[l + 1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let weight = standard_normal_matrix(&mut stream(seed, &[0x1417, l as u64]), fan_out, fan_in).scale(std);
            linears.push(Linear {
                weight,
                bias: vec![0.0; fan_out],
            });
            if l + 1 < n {
                norms.push(match &config.norm {
                    Some(spec) => Some(BwLayer::new(fan_out, *spec)?.with_backward_options(opts)),
                    None => None,
                });
            }
        }
        Ok(Self { linears, norms })
    }

    pub fn input_dim(&self) -> usize {
        self.linears[0].weight.cols()
    }

    pub fn classes(&self) -> usize {
        self.linears.last().map(|l| l.weight.rows()).unwrap_or(0)
    }

    /// Training-mode forward pass using batch statistics; running statistics
    /// are left untouched.
    pub fn forward(&self, x: &Matrix, labels: &[u8]) -> Result<Tape> {
        if x.rows() != self.input_dim() || labels.len() != x.cols() {
            return Err(Error::Validation(format!(
                "batch {:?} with {} labels does not fit a network with input width {}",
                x.shape(),
                labels.len(),
                self.input_dim()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= self.classes()) {
            return Err(Error::Validation(format!("label {bad} outside 0..{}", self.classes())));
        }
        let hidden = self.norms.len();
        let mut inputs = Vec::with_capacity(hidden + 1);
        let mut activations = Vec::with_capacity(hidden);
        let mut norm = Vec::with_capacity(hidden);
        let mut h = x.clone();
        for l in 0..hidden {
            let z = self.linears[l].forward(&h);
            let (y, cache) = match &self.norms[l] {
                Some(bw) => {
                    let (y, cache, mu) = bw.forward_batch(&z)?;
                    (y, Some((mu, cache)))
                }
                None => (z, None),
            };
            inputs.push(h);
            h = relu(&y);
            activations.push(y);
            norm.push(cache);
        }
        let logits = self.linears[hidden].forward(&h);
        inputs.push(h);
        let (loss, probs) = softmax_cross_entropy(&logits, labels);
        Ok(Tape {
            inputs,
            activations,
            norm,
            probs,
            loss,
        })
    }

    pub fn backward(&self, tape: &Tape, labels: &[u8]) -> Result<MlpGrads> {
        let m = labels.len() as f64;
        let mut dlogits = tape.probs.clone();
        for (j, &c) in labels.iter().enumerate() {
            dlogits[(c as usize, j)] -= 1.0;
        }
        let mut delta = dlogits.scale(1.0 / m);
        let hidden = self.norms.len();
        let mut linear = vec![(Matrix::zeros(1, 1), Vec::new()); hidden + 1];
        let mut recovery = vec![None; hidden];
        for l in (0..=hidden).rev() {
            if l < hidden {
                let mask = &tape.activations[l];
                let mut dy = delta;
                for (g, &a) in dy.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                delta = match (&self.norms[l], &tape.norm[l]) {
                    (Some(bw), Some((_, cache))) => {
                        let g = bw.backward_train(cache, &dy)?;
                        recovery[l] = Some(g.recovery);
                        g.dx
                    }
                    _ => dy,
                };
            }
            let dw = delta.matmul_t(&tape.inputs[l]);
            let db = delta.row_sums();
            linear[l] = (dw, db);
            if l > 0 {
                delta = self.linears[l].weight.t_matmul(&delta);
            }
        }
        Ok(MlpGrads { linear, recovery })
    }

    /// Batch loss and gradients without changing any state.
    pub fn loss_and_grads(&self, x: &Matrix, labels: &[u8]) -> Result<(f64, MlpGrads)> {
        let tape = self.forward(x, labels)?;
        let grads = self.backward(&tape, labels)?;
        Ok((tape.loss, grads))
    }

    /// Folds the batch statistics of `tape` into every BW layer's running
    /// averages.
    pub fn record_statistics(&mut self, tape: &Tape) -> Result<()> {
        for (bw, cache) in self.norms.iter_mut().zip(&tape.norm) {
            if let (Some(bw), Some((mu, cache))) = (bw, cache) {
                bw.record_batch(mu, &cache.whitened)?;
            }
        }
        Ok(())
    }

    pub fn sgd_step(&mut self, grads: &MlpGrads, lr: f64) {
        for (lin, (dw, db)) in self.linears.iter_mut().zip(&grads.linear) {
            for (w, g) in lin.weight.as_mut_slice().iter_mut().zip(dw.as_slice()) {
                *w -= lr * g;
            }
            for (b, g) in lin.bias.iter_mut().zip(db) {
                *b -= lr * g;
            }
        }
        for (bw, g) in self.norms.iter_mut().zip(&grads.recovery) {
            if let (Some(bw), Some(g)) = (bw, g) {
                bw.recovery_mut().sgd_step(g, lr);
            }
        }
    }

    /// One SGD step on a batch; returns the tape so callers can inspect the
    /// batch statistics.
    pub fn train_step(&mut self, x: &Matrix, labels: &[u8], lr: f64) -> Result<Tape> {
        let tape = self.forward(x, labels)?;
        if !tape.loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss is {}", tape.loss)));
        }
        let grads = self.backward(&tape, labels)?;
        self.record_statistics(&tape)?;
        self.sgd_step(&grads, lr);
        Ok(tape)
    }

    /// Switches every BW layer to inference with frozen statistics.
    pub fn finalize(&mut self) -> Result<()> {
        for bw in self.norms.iter_mut().flatten() {
            bw.finalize()?;
        }
        Ok(())
    }

    pub fn train_mode(&mut self) {
        for bw in self.norms.iter_mut().flatten() {
            bw.train();
        }
    }

    /// Inference-mode logits; BW layers must be finalized.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let hidden = self.norms.len();
        let mut h = x.clone();
        for l in 0..hidden {
            let z = self.linears[l].forward(&h);
            let y = match &self.norms[l] {
                Some(bw) => bw.forward_infer(&z)?,
                None => z,
            };
            h = relu(&y);
        }
        Ok(self.linears[hidden].forward(&h))
    }

    /// Error rate, mean loss and accuracy over `data`, `eval_batch` samples
    /// at a time, in inference mode.
    pub fn evaluate(&self, data: &Dataset, eval_batch: usize) -> Result<Evaluation> {
        if data.is_empty() {
            return Err(Error::Validation("cannot evaluate on an empty dataset".into()));
        }
        let mut wrong = 0usize;
        let mut loss = 0.0;
        let indices: Vec<usize> = (0..data.len()).collect();
        for chunk in indices.chunks(eval_batch.max(1)) {
            let (x, labels) = data.batch(chunk)?;
            let logits = self.logits(&x)?;
            let (l, _) = softmax_cross_entropy(&logits, &labels);
            loss += l * chunk.len() as f64;
            for (j, &c) in labels.iter().enumerate() {
                let col = logits.column(j);
                let best = (0..col.len()).fold(0, |b, k| if col[k] > col[b] { k } else { b });
                if best != c as usize {
                    wrong += 1;
                }
            }
        }
        let n = data.len() as f64;
        Ok(Evaluation {
            error_rate: wrong as f64 / n,
            loss: loss / n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub error_rate: f64,
    pub loss: f64,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.error_rate
    }
}
