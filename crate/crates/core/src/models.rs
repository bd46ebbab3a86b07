//! One-hidden-layer tanh classifier with a flat parameter vector.
//!
//! Flat layout, row-major: `W1 (hidden x input)`, `b1 (hidden)`,
//! `W2 (classes x hidden)`, `b2 (classes)`. The hidden activations are the
//! embedding used for shift detection.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::rng::{rng_for, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
}

impl ModelShape {
    pub fn new(input_dim: usize, hidden_dim: usize, classes: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || classes < 2 {
            return Err(Error::invalid(
                "model needs input, hidden >= 1 and classes >= 2",
            ));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            classes,
        })
    }

    pub fn param_count(&self) -> usize {
        self.input_dim * self.hidden_dim
            + self.hidden_dim
            + self.hidden_dim * self.classes
            + self.classes
    }

    fn b1(&self) -> usize {
        self.input_dim * self.hidden_dim
    }

    fn w2(&self) -> usize {
        self.b1() + self.hidden_dim
    }

    fn b2(&self) -> usize {
        self.w2() + self.hidden_dim * self.classes
    }

    /// Start of the classification head in the flat vector.
    pub fn head_offset(&self) -> usize {
        self.w2()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    shape: ModelShape,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub prox_coefficient: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.prox_coefficient >= 0.0 && self.prox_coefficient.is_finite()) {
            return Err(Error::invalid("prox_coefficient must be non-negative"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            local_epochs: 5,
            batch_size: 16,
            prox_coefficient: 0.0,
        }
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SXMP";
const CHECKPOINT_VERSION: u32 = 1;

impl ModelParams {
    pub fn from_weights(shape: ModelShape, weights: Vec<f64>) -> Result<Self> {
        check_dim(shape.param_count(), weights.len())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("model weights must be finite"));
        }
        Ok(Self { shape, weights })
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn embedding_dim(&self) -> usize {
        self.shape.hidden_dim
    }

    fn hidden_into(&self, x: &[f64], h: &mut [f64]) {
        let s = &self.shape;
        let w1 = &self.weights[..s.b1()];
        let b1 = &self.weights[s.b1()..s.w2()];
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &w1[j * s.input_dim..(j + 1) * s.input_dim];
            let a: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[j];
            *hj = a.tanh();
        }
    }

    fn logits_into(&self, h: &[f64], z: &mut [f64]) {
        let s = &self.shape;
        let w2 = &self.weights[s.w2()..s.b2()];
        let b2 = &self.weights[s.b2()..];
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &w2[c * s.hidden_dim..(c + 1) * s.hidden_dim];
            *zc = row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + b2[c];
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.shape.input_dim, x.len())?;
        let mut h = vec![0.0; self.shape.hidden_dim];
        let mut z = vec![0.0; self.shape.classes];
        self.hidden_into(x, &mut h);
        self.logits_into(&h, &mut z);
        Ok(z)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Little-endian binary checkpoint: magic, version, shape, length, weights.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 8 * self.weights.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for dim in [
            self.shape.input_dim,
            self.shape.hidden_dim,
            self.shape.classes,
        ] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("checkpoint: {m}"));
        if bytes.len() < 28 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if u32_at(4) != CHECKPOINT_VERSION {
            return Err(bad("unsupported version"));
        }
        let shape = ModelShape::new(u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize)?;
        let len = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
        if bytes.len() != 28 + 8 * len {
            return Err(bad("truncated weights"));
        }
        let weights = bytes[28..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_weights(shape, weights)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Xavier-uniform weights, zero biases.
pub fn init_model(shape: ModelShape, seed: u64) -> ModelParams {
    let mut rng = rng_for(seed, &[tag::INIT]);
    let mut weights = vec![0.0; shape.param_count()];
    let a1 = (6.0 / (shape.input_dim + shape.hidden_dim) as f64).sqrt();
    for w in &mut weights[..shape.b1()] {
        *w = rng.random_range(-a1..a1);
    }
    let a2 = (6.0 / (shape.hidden_dim + shape.classes) as f64).sqrt();
    for w in &mut weights[shape.w2()..shape.b2()] {
        *w = rng.random_range(-a2..a2);
    }
    ModelParams { shape, weights }
}

/// Penultimate-layer activations.
pub fn embed(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(params.shape.input_dim, x.len())?;
    let mut h = vec![0.0; params.shape.hidden_dim];
    params.hidden_into(x, &mut h);
    Ok(h)
}

/// Mean cross-entropy over `indices` plus `(prox/2) * |params - anchor|^2`,
/// and its gradient.
pub fn loss_and_gradient(
    params: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    prox: Option<(f64, &ModelParams)>,
) -> Result<(f64, Vec<f64>)> {
    let s = params.shape;
    check_dim(s.input_dim, data.dim())?;
    check_dim(s.classes, data.classes())?;
    if indices.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let mut grad = vec![0.0; s.param_count()];
    let mut h = vec![0.0; s.hidden_dim];
    let mut z = vec![0.0; s.classes];
    let mut dh = vec![0.0; s.hidden_dim];
    let scale = 1.0 / indices.len() as f64;
    let mut loss = 0.0;
    for &i in indices {
        let x = data.feature(i);
        let y = data.label(i);
        params.hidden_into(x, &mut h);
        params.logits_into(&h, &mut z);
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        loss += scale * (norm.ln() + zmax - z[y]);
        dh.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..s.classes {
            let p = (z[c] - zmax).exp() / norm;
            let dz = scale * (p - if c == y { 1.0 } else { 0.0 });
            let w2_row = s.w2() + c * s.hidden_dim;
            for j in 0..s.hidden_dim {
                grad[w2_row + j] += dz * h[j];
                dh[j] += dz * params.weights[w2_row + j];
            }
            grad[s.b2() + c] += dz;
        }
        for j in 0..s.hidden_dim {
            let da = dh[j] * (1.0 - h[j] * h[j]);
            let w1_row = j * s.input_dim;
            for (k, xv) in x.iter().enumerate() {
                grad[w1_row + k] += da * xv;
            }
            grad[s.b1() + j] += da;
        }
    }
    if let Some((mu, anchor)) = prox {
        check_dim(s.param_count(), anchor.weights.len())?;
        if mu > 0.0 {
            for ((g, w), a) in grad.iter_mut().zip(&params.weights).zip(&anchor.weights) {
                loss += 0.5 * mu * (w - a) * (w - a);
                *g += mu * (w - a);
            }
        }
    }
    Ok((loss, grad))
}

/// Mini-batch SGD on cross-entropy, optionally with a proximal pull towards
/// `anchor`. Batch order is a seeded shuffle per epoch.
pub fn local_train<R: Rng + ?Sized>(
    params: &ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    anchor: Option<&ModelParams>,
    rng: &mut R,
) -> Result<ModelParams> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let prox = if cfg.prox_coefficient > 0.0 {
        let anchor = anchor
            .ok_or_else(|| Error::invalid("prox_coefficient > 0 requires an anchor model"))?;
        check_dim(params.weights.len(), anchor.weights.len())?;
        Some((cfg.prox_coefficient, anchor))
    } else {
        None
    };
    let mut out = params.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.local_epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, grad) = loss_and_gradient(&out, data, batch, prox)?;
            // A huge proximal coefficient makes a plain step overshoot; cap
            // the step on the proximal component at the anchor itself.
            let step = match prox {
                Some((mu, _)) if cfg.learning_rate * mu > 1.0 => 1.0 / mu,
                _ => cfg.learning_rate,
            };
            for (w, g) in out.weights.iter_mut().zip(&grad) {
                *w -= step * g;
            }
        }
    }
    if out.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("training diverged to non-finite weights"));
    }
    Ok(out)
}

/// Weighted mean of parameter vectors.
///
/// Inputs are put in a canonical order before reduction and the mean is
/// accumulated as offsets from the first canonical element, so the result
/// does not depend on input order and `k` copies of the same vector
/// reproduce it exactly.
pub fn fed_aggregate(updates: &[(&ModelParams, f64)]) -> Result<ModelParams> {
    let first = updates.first().ok_or(Error::Empty("aggregation input"))?;
    let shape = first.0.shape;
    for (p, w) in updates {
        if p.shape != shape {
            return Err(Error::invalid(
                "cannot aggregate models of different shapes",
            ));
        }
        if !(*w >= 0.0 && w.is_finite()) {
            return Err(Error::invalid("aggregation weights must be non-negative"));
        }
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, wa) = updates[a];
        let (pb, wb) = updates[b];
        wa.total_cmp(&wb).then_with(|| {
            pa.weights
                .iter()
                .zip(&pb.weights)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let total: f64 = order.iter().map(|&i| updates[i].1).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("aggregation weights sum to zero"));
    }
    let base = &updates[order[0]].0.weights;
    let mut acc = vec![0.0; base.len()];
    for &i in &order {
        let (p, w) = updates[i];
        let frac = w / total;
        for ((a, v), b) in acc.iter_mut().zip(&p.weights).zip(base) {
            *a += frac * (v - b);
        }
    }
    let weights = base.iter().zip(&acc).map(|(b, a)| b + a).collect();
    Ok(ModelParams { shape, weights })
}

pub fn evaluate(params: &ModelParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    check_dim(params.shape.input_dim, data.dim())?;
    let correct = (0..data.len())
        .filter(|&i| {
            params
                .predict(data.feature(i))
                .map(|p| p == data.label(i))
                .unwrap_or(false)
        })
        .count();
    Ok(correct as f64 / data.len() as f64)
}
