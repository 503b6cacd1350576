//! Two-class multilayer perceptron on sparse count vectors.
//!
//! One ReLU hidden layer feeds a two-unit softmax. Training minimizes mean
//! cross-entropy plus an L2 penalty with mini-batch Adam, and stops early
//! once the epoch loss stops improving by `tol` for `patience` epochs.
//!
//! The input layer is evaluated by walking the nonzeros of each sample, so
//! internally the first weight matrix is stored feature-major (one row of
//! `hidden` weights per input feature). The persisted file uses the
//! conventional `hidden x input` row-major layout, with that matrix encoded
//! as base64 of little-endian IEEE-754 doubles to keep files small and
//! bit-exact.

pub mod gradcheck;

use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{rng_for, write_atomic, RngStream};
use crate::vectorizer::SparseVector;
use crate::Class;

pub use gradcheck::{gradient_check, gradient_check_with, GradCheckShape};

pub const MODEL_FORMAT: &str = "linkgap/mlp@1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpHyperparams {
    pub hidden_units: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub tol: f64,
    pub patience: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for MlpHyperparams {
    fn default() -> Self {
        Self {
            hidden_units: 100,
            activation: Activation::Relu,
            learning_rate: 0.001,
            batch_size: 200,
            max_epochs: 200,
            tol: 1e-4,
            patience: 10,
            l2: 1e-4,
            seed: 0,
        }
    }
}

impl MlpHyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = self.hidden_units >= 1
            && self.batch_size >= 1
            && self.max_epochs >= 1
            && self.patience >= 1
            && self.learning_rate > 0.0
            && self.tol > 0.0
            && self.l2 >= 0.0;
        if !positive {
            return Err(Error::Config(format!("invalid MLP hyperparameters: {self:?}")));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub seed: u64,
    pub loss_curve: Vec<f64>,
    pub hyperparams: MlpHyperparams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    input_dim: usize,
    hidden: usize,
    /// input_dim x hidden, feature-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// 2 x hidden.
    w2: Vec<f64>,
    b2: [f64; 2],
    pub meta: TrainingMeta,
}

/// Parameter-shaped buffers, also used for gradients.
#[derive(Clone, Debug)]
pub(crate) struct Params {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: [f64; 2],
}

impl Params {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w1: vec![0.0; input_dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; 2 * hidden],
            b2: [0.0; 2],
        }
    }
}

fn log_sum_exp(z: [f64; 2]) -> f64 {
    let m = z[0].max(z[1]);
    m + ((z[0] - m).exp() + (z[1] - m).exp()).ln()
}

fn softmax(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

impl MlpModel {
    /// Glorot-uniform initialization of weights and biases.
    pub fn initialize(input_dim: usize, hp: &MlpHyperparams) -> Self {
        let hidden = hp.hidden_units;
        let mut rng = rng_for(hp.seed, RngStream::WeightInit);
        let b1_bound = (6.0 / (input_dim + hidden) as f64).sqrt();
        let b2_bound = (6.0 / (hidden + 2) as f64).sqrt();
        let mut draw = |n: usize, bound: f64| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        let w1 = draw(input_dim * hidden, b1_bound);
        let b1 = draw(hidden, b1_bound);
        let w2 = draw(2 * hidden, b2_bound);
        let b2v = draw(2, b2_bound);
        Self {
            input_dim,
            hidden,
            w1,
            b1,
            w2,
            b2: [b2v[0], b2v[1]],
            meta: TrainingMeta {
                epochs_run: 0,
                final_loss: f64::NAN,
                seed: hp.seed,
                loss_curve: Vec::new(),
                hyperparams: hp.clone(),
            },
        }
    }

    /// A model whose every parameter is zero.
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let mut m = Self::initialize(
            input_dim,
            &MlpHyperparams {
                hidden_units: hidden,
                ..Default::default()
            },
        );
        m.w1.iter_mut().for_each(|w| *w = 0.0);
        m.b1.iter_mut().for_each(|w| *w = 0.0);
        m.w2.iter_mut().for_each(|w| *w = 0.0);
        m.b2 = [0.0; 2];
        m
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.input_dim, self.hidden, 2]
    }

    pub(crate) fn params(&self) -> Params {
        Params {
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2,
        }
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64; 2]) {
        (&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2)
    }

    fn check_dim(&self, x: &SparseVector) -> Result<()> {
        if x.dim != self.input_dim {
            return Err(Error::Data(format!(
                "vector dimension {} does not match model input {}",
                x.dim, self.input_dim
            )));
        }
        Ok(())
    }

    fn hidden_pre(&self, x: &SparseVector, out: &mut [f64]) {
        let h = self.hidden;
        out.copy_from_slice(&self.b1);
        for &(idx, count) in &x.entries {
            let row = &self.w1[idx as usize * h..(idx as usize + 1) * h];
            let c = count as f64;
            for (o, w) in out.iter_mut().zip(row) {
                *o += c * w;
            }
        }
    }

    fn logits(&self, hidden_act: &[f64]) -> [f64; 2] {
        let h = self.hidden;
        let mut z = self.b2;
        for (c, zc) in z.iter_mut().enumerate() {
            *zc += self.w2[c * h..(c + 1) * h]
                .iter()
                .zip(hidden_act)
                .map(|(w, a)| w * a)
                .sum::<f64>();
        }
        z
    }

    fn forward_logits(&self, x: &SparseVector, pre: &mut [f64], act: &mut [f64]) -> [f64; 2] {
        self.hidden_pre(x, pre);
        for (a, p) in act.iter_mut().zip(pre.iter()) {
            *a = p.max(0.0);
        }
        self.logits(act)
    }

    /// Which hidden units are active (pre-activation > 0), sample-major.
    pub(crate) fn activation_pattern(&self, xs: &[SparseVector]) -> Vec<bool> {
        let mut pre = vec![0.0; self.hidden];
        let mut out = Vec::with_capacity(xs.len() * self.hidden);
        for x in xs {
            self.hidden_pre(x, &mut pre);
            out.extend(pre.iter().map(|&p| p > 0.0));
        }
        out
    }

    /// Class probabilities, `[negative, positive]`.
    pub fn predict_proba(&self, xs: &[SparseVector]) -> Result<Vec<[f64; 2]>> {
        let mut pre = vec![0.0; self.hidden];
        let mut act = vec![0.0; self.hidden];
        xs.iter()
            .map(|x| {
                self.check_dim(x)?;
                Ok(softmax(self.forward_logits(x, &mut pre, &mut act)))
            })
            .collect()
    }

    pub fn predict_positive(&self, xs: &[SparseVector]) -> Result<Vec<f64>> {
        Ok(self.predict_proba(xs)?.into_iter().map(|p| p[1]).collect())
    }

    /// Reference forward pass via a dense matrix-vector product.
    pub fn predict_proba_dense(&self, x: &[f64]) -> [f64; 2] {
        assert_eq!(x.len(), self.input_dim);
        let h = self.hidden;
        let mut act = vec![0.0; h];
        for (j, a) in act.iter_mut().enumerate() {
            let mut s = self.b1[j];
            for (i, xi) in x.iter().enumerate() {
                s += self.w1[i * h + j] * xi;
            }
            *a = s.max(0.0);
        }
        softmax(self.logits(&act))
    }

    /// Mean cross-entropy plus `0.5 * l2 * |W|^2 / batch`, forward only.
    pub fn loss(&self, xs: &[SparseVector], ys: &[Class], l2: f64) -> f64 {
        let mut pre = vec![0.0; self.hidden];
        let mut act = vec![0.0; self.hidden];
        let ce: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let z = self.forward_logits(x, &mut pre, &mut act);
                log_sum_exp(z) - z[y.index()]
            })
            .sum();
        let sq: f64 = self.w1.iter().chain(&self.w2).map(|w| w * w).sum();
        let n = xs.len() as f64;
        ce / n + 0.5 * l2 * sq / n
    }

    /// Adds the summed (not averaged) cross-entropy gradients of the listed
    /// samples into `grads`; returns the summed cross-entropy.
    pub(crate) fn accumulate_gradients(
        &self,
        xs: &[SparseVector],
        ys: &[Class],
        batch: &[usize],
        grads: &mut Params,
        scratch: &mut Scratch,
    ) -> f64 {
        let h = self.hidden;
        let mut ce = 0.0;
        for &i in batch {
            let x = &xs[i];
            let z = self.forward_logits(x, &mut scratch.pre, &mut scratch.act);
            let y = ys[i].index();
            ce += log_sum_exp(z) - z[y];
            let p = softmax(z);
            let mut dz = p;
            dz[y] -= 1.0;

            for c in 0..2 {
                grads.b2[c] += dz[c];
                let gw = &mut grads.w2[c * h..(c + 1) * h];
                for (g, a) in gw.iter_mut().zip(&scratch.act) {
                    *g += dz[c] * a;
                }
            }
            for j in 0..h {
                scratch.dh[j] = if scratch.pre[j] > 0.0 {
                    self.w2[j] * dz[0] + self.w2[h + j] * dz[1]
                } else {
                    0.0
                };
                grads.b1[j] += scratch.dh[j];
            }
            for &(idx, count) in &x.entries {
                let c = count as f64;
                let row = &mut grads.w1[idx as usize * h..(idx as usize + 1) * h];
                for (g, d) in row.iter_mut().zip(&scratch.dh) {
                    *g += c * d;
                }
            }
        }
        ce
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let (v, h) = (self.input_dim, self.hidden);
        let mut w1 = vec![0.0; v * h];
        for i in 0..v {
            for j in 0..h {
                w1[j * v + i] = self.w1[i * h + j];
            }
        }
        let mut bytes = Vec::with_capacity(w1.len() * 8);
        for w in &w1 {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            dims: self.dims(),
            w1: BASE64.encode(bytes),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.to_vec(),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_vec(&file)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("model: {e}")))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unsupported model format `{}`", file.format)));
        }
        let [v, h, out] = file.dims;
        let raw = BASE64
            .decode(file.w1.as_bytes())
            .map_err(|e| Error::Format(format!("model w1: {e}")))?;
        if raw.len() % 8 != 0 {
            return Err(Error::Format("model w1 is not a whole number of doubles".into()));
        }
        let file_w1: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let shapes_ok = out == 2
            && h >= 1
            && file_w1.len() == v * h
            && file.b1.len() == h
            && file.w2.len() == 2 * h
            && file.b2.len() == 2;
        if !shapes_ok {
            return Err(Error::Format(format!(
                "model dimensions {:?} do not match weight arrays",
                file.dims
            )));
        }
        let all_finite = file_w1
            .iter()
            .chain(&file.b1)
            .chain(&file.w2)
            .chain(&file.b2)
            .all(|w| w.is_finite());
        if !all_finite {
            return Err(Error::Format("model contains non-finite weights".into()));
        }
        let mut w1 = vec![0.0; v * h];
        for j in 0..h {
            for i in 0..v {
                w1[i * h + j] = file_w1[j * v + i];
            }
        }
        Ok(Self {
            input_dim: v,
            hidden: h,
            w1,
            b1: file.b1,
            w2: file.w2,
            b2: [file.b2[0], file.b2[1]],
            meta: file.meta,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    /// [input, hidden, output]
    dims: [usize; 3],
    /// hidden x input, row-major, base64 of little-endian f64.
    w1: String,
    b1: Vec<f64>,
    /// output x hidden, row-major.
    w2: Vec<f64>,
    b2: Vec<f64>,
    meta: TrainingMeta,
}

pub(crate) struct Scratch {
    pre: Vec<f64>,
    act: Vec<f64>,
    dh: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(hidden: usize) -> Self {
        Self {
            pre: vec![0.0; hidden],
            act: vec![0.0; hidden],
            dh: vec![0.0; hidden],
        }
    }
}

/// Adam step on one parameter block; also clears the gradient buffer and
/// returns the block's squared norm before the update.
#[allow(clippy::too_many_arguments)]
fn adam_block(
    w: &mut [f64],
    g: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    l2: f64,
    inv_batch: f64,
    step_size: f64,
) -> f64 {
    let mut sq = 0.0;
    for (((wi, gi), mi), vi) in w.iter_mut().zip(g.iter_mut()).zip(m.iter_mut()).zip(v.iter_mut()) {
        sq += *wi * *wi;
        let grad = (*gi + l2 * *wi) * inv_batch;
        *gi = 0.0;
        *mi = BETA1 * *mi + (1.0 - BETA1) * grad;
        *vi = BETA2 * *vi + (1.0 - BETA2) * grad * grad;
        *wi -= step_size * *mi / (vi.sqrt() + ADAM_EPS);
    }
    sq
}

fn adam_bias(w: &mut [f64], g: &mut [f64], m: &mut [f64], v: &mut [f64], inv_batch: f64, step_size: f64) {
    adam_block(w, g, m, v, 0.0, inv_batch, step_size);
}

/// Trains a fresh model. Deterministic for a fixed seed and input order.
pub fn train(xs: &[SparseVector], ys: &[Class], hp: &MlpHyperparams) -> Result<MlpModel> {
    hp.validate()?;
    if xs.len() != ys.len() {
        return Err(Error::Data(format!(
            "{} vectors but {} labels",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Data("need at least two training samples".into()));
    }
    let n_pos = ys.iter().filter(|&&y| y == Class::Positive).count();
    if n_pos == 0 || n_pos == ys.len() {
        return Err(Error::Data("training data holds a single class".into()));
    }
    let dim = xs[0].dim;
    if let Some(bad) = xs.iter().find(|x| x.dim != dim) {
        return Err(Error::Data(format!(
            "dimension mismatch: {} vs {}",
            bad.dim, dim
        )));
    }

    let mut model = MlpModel::initialize(dim, hp);
    let h = hp.hidden_units;
    let mut grads = Params::zeros(dim, h);
    let mut m = Params::zeros(dim, h);
    let mut v = Params::zeros(dim, h);
    let mut scratch = Scratch::new(h);
    let mut rng = rng_for(hp.seed, RngStream::EpochShuffle);
    let mut order: Vec<usize> = (0..xs.len()).collect();

    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut step = 0i32;
    let mut curve = Vec::new();

    for epoch in 0..hp.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let ce = model.accumulate_gradients(xs, ys, batch, &mut grads, &mut scratch);
            step += 1;
            let bs = batch.len() as f64;
            let step_size = hp.learning_rate * (1.0 - BETA2.powi(step)).sqrt() / (1.0 - BETA1.powi(step));
            let inv = 1.0 / bs;
            let (w1, b1, w2, b2) = model.params_mut();
            let mut sq = adam_block(w1, &mut grads.w1, &mut m.w1, &mut v.w1, hp.l2, inv, step_size);
            sq += adam_block(w2, &mut grads.w2, &mut m.w2, &mut v.w2, hp.l2, inv, step_size);
            adam_bias(b1, &mut grads.b1, &mut m.b1, &mut v.b1, inv, step_size);
            adam_bias(b2, &mut grads.b2, &mut m.b2, &mut v.b2, inv, step_size);
            let batch_loss = ce / bs + 0.5 * hp.l2 * sq / bs;
            epoch_loss += batch_loss * bs;
        }
        epoch_loss /= xs.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite training loss at epoch {} (lr {}, {} samples, dim {})",
                epoch + 1,
                hp.learning_rate,
                xs.len(),
                dim
            )));
        }
        curve.push(epoch_loss);
        if epoch_loss > best - hp.tol {
            stale += 1;
        } else {
            stale = 0;
        }
        if epoch_loss < best {
            best = epoch_loss;
        }
        if stale > hp.patience {
            log::debug!("early stop after {} epochs (loss {epoch_loss:.6})", epoch + 1);
            break;
        }
    }

    model.meta.epochs_run = curve.len();
    model.meta.final_loss = *curve.last().expect("at least one epoch");
    model.meta.loss_curve = curve;
    Ok(model)
}
