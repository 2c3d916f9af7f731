//! Small dense classifiers trained by SGD: a linear softmax model or a
//! one-hidden-layer ReLU network, with hand-derived gradients and a
//! finite-difference checker to keep them honest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Hidden width of the one-hidden-layer variant.
pub const DEFAULT_HIDDEN: usize = 32;

/// Floor applied to the predicted probability before taking its log.
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "linear")]
    Linear,
    #[serde(rename = "one-hidden-layer")]
    OneHiddenLayer,
}

/// One dense layer; `weights[out][in]`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(input: usize, output: usize) -> Layer {
        Layer {
            weights: vec![vec![0.0; input]; output],
            bias: vec![0.0; output],
        }
    }

    fn seeded(input: usize, output: usize, rng: &mut Rng) -> Layer {
        // Variance-preserving gaussian fan-in scaling for the ReLU stack.
        let scale = (2.0 / input as f64).sqrt();
        Layer {
            weights: (0..output)
                .map(|_| (0..input).map(|_| scale * rng.gaussian()).collect())
                .collect(),
            bias: vec![0.0; output],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// A classifier over target classes: either a single softmax layer or one
/// ReLU hidden layer followed by a softmax layer.
#[derive(Debug, Clone)]
pub struct Model {
    pub(crate) layers: Vec<Layer>,
}

pub(crate) struct ForwardCache {
    /// Pre-activation of the hidden layer, when one exists.
    pub hidden_pre: Option<Vec<f64>>,
    /// Post-ReLU hidden activation, when one exists.
    pub hidden_post: Option<Vec<f64>>,
    pub probs: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

impl Model {
    /// Zero-initialized linear softmax classifier.
    pub fn linear(input: usize, classes: usize) -> Model {
        Model {
            layers: vec![Layer::zeros(input, classes)],
        }
    }

    /// One-hidden-layer ReLU network with seeded gaussian weights.
    pub fn one_hidden_layer(input: usize, hidden: usize, classes: usize, rng: &mut Rng) -> Model {
        Model {
            layers: vec![Layer::seeded(input, hidden, rng), Layer::seeded(hidden, classes, rng)],
        }
    }

    pub fn kind(&self) -> ModelKind {
        if self.layers.len() == 1 {
            ModelKind::Linear
        } else {
            ModelKind::OneHiddenLayer
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights[0].len()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().expect("at least one layer").bias.len()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.bias.iter().all(|b| b.is_finite())
                && l.weights.iter().flatten().all(|w| w.is_finite())
        })
    }

    pub(crate) fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        match self.layers.as_slice() {
            [out] => Ok(ForwardCache {
                hidden_pre: None,
                hidden_post: None,
                probs: softmax(&out.affine(x)),
            }),
            [hidden, out] => {
                let pre = hidden.affine(x);
                let post: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
                let probs = softmax(&out.affine(&post));
                Ok(ForwardCache {
                    hidden_pre: Some(pre),
                    hidden_post: Some(post),
                    probs,
                })
            }
            _ => unreachable!("models have one or two layers"),
        }
    }

    /// Class probabilities for one feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.probs)
    }

    /// Index of the most probable class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let probs = self.forward(x)?;
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate().skip(1) {
            if p > probs[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub(crate) fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) {
        for (layer, grad) in self.layers.iter_mut().zip(&grads.layers) {
            for (row, grow) in layer.weights.iter_mut().zip(&grad.weights) {
                for (w, g) in row.iter_mut().zip(grow) {
                    *w -= learning_rate * g;
                }
            }
            for (b, g) in layer.bias.iter_mut().zip(&grad.bias) {
                *b -= learning_rate * g;
            }
        }
    }
}

/// Per-sample training loss on softmax outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Loss {
    #[serde(rename = "CE")]
    Ce,
    /// Generalized cross entropy `(1 - p_y^q) / q`; `q = 1` recovers
    /// `1 - p_y`, and `q -> 0` recovers plain cross entropy.
    #[serde(rename = "GCE")]
    Gce { q: f64 },
}

impl Loss {
    pub fn validate(&self) -> Result<()> {
        if let Loss::Gce { q } = self {
            if !q.is_finite() || *q <= 0.0 || *q > 1.0 {
                return Err(Error::InvalidParams {
                    reason: format!("GCE q = {q} must lie in (0, 1]"),
                });
            }
        }
        Ok(())
    }

    pub fn value(&self, probs: &[f64], label: usize) -> f64 {
        let p_y = probs[label];
        match self {
            Loss::Ce => -p_y.max(LOG_FLOOR).ln(),
            Loss::Gce { q } => (1.0 - p_y.powf(*q)) / q,
        }
    }

    /// Gradient of the loss with respect to the logits.
    fn dlogits(&self, probs: &[f64], label: usize) -> Vec<f64> {
        let scale = match self {
            Loss::Ce => 1.0,
            Loss::Gce { q } => probs[label].powf(*q),
        };
        probs
            .iter()
            .enumerate()
            .map(|(i, &p)| scale * (p - f64::from(u8::from(i == label))))
            .collect()
    }
}

/// Cross entropy of one prediction, floored before the log.
pub fn ce_loss(probs: &[f64], label: usize) -> f64 {
    Loss::Ce.value(probs, label)
}

/// Generalized cross entropy of one prediction.
pub fn gce_loss(probs: &[f64], label: usize, q: f64) -> f64 {
    Loss::Gce { q }.value(probs, label)
}

/// Parameter gradients shaped like a [`Model`].
#[derive(Debug, Clone)]
pub(crate) struct Gradients {
    layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Gradients {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weights[0].len(), l.bias.len()))
                .collect(),
        }
    }

    /// Adds `factor` times this sample's loss gradient, computed by
    /// backpropagation from the cached forward pass.
    pub fn accumulate(
        &mut self,
        model: &Model,
        x: &[f64],
        cache: &ForwardCache,
        loss: &Loss,
        label: usize,
        factor: f64,
    ) {
        let dlogits = loss.dlogits(&cache.probs, label);
        match model.layers.as_slice() {
            [_] => {
                let g = &mut self.layers[0];
                for (o, &d) in dlogits.iter().enumerate() {
                    for (gw, &xi) in g.weights[o].iter_mut().zip(x) {
                        *gw += factor * d * xi;
                    }
                    g.bias[o] += factor * d;
                }
            }
            [_, out] => {
                let pre = cache.hidden_pre.as_ref().expect("two-layer cache");
                let post = cache.hidden_post.as_ref().expect("two-layer cache");
                for (o, &d) in dlogits.iter().enumerate() {
                    for (gw, &h) in self.layers[1].weights[o].iter_mut().zip(post) {
                        *gw += factor * d * h;
                    }
                    self.layers[1].bias[o] += factor * d;
                }
                for (h, &z) in pre.iter().enumerate() {
                    if z <= 0.0 {
                        continue; // ReLU gate closed
                    }
                    let dh: f64 = dlogits
                        .iter()
                        .enumerate()
                        .map(|(o, &d)| d * out.weights[o][h])
                        .sum();
                    for (gw, &xi) in self.layers[0].weights[h].iter_mut().zip(x) {
                        *gw += factor * dh * xi;
                    }
                    self.layers[0].bias[h] += factor * dh;
                }
            }
            _ => unreachable!("models have one or two layers"),
        }
    }
}

/// Compares the analytic gradient of `loss` at `(x, label)` against central
/// finite differences over every parameter and returns the largest relative
/// error, `|a - n| / max(|a| + |n|, 1e-8)`.
///
/// # Errors
///
/// `InvalidParams` if `eps` falls outside [1e-7, 1e-3] or the label is out
/// of range; `DimensionMismatch` if `x` has the wrong width.
pub fn grad_check(model: &Model, loss: &Loss, x: &[f64], label: usize, eps: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidParams {
            reason: format!("eps = {eps} must lie in [1e-7, 1e-3]"),
        });
    }
    if label >= model.n_classes() {
        return Err(Error::InvalidParams {
            reason: format!("label {label} out of range for {} classes", model.n_classes()),
        });
    }
    loss.validate()?;

    let cache = model.forward_cached(x)?;
    let mut analytic = Gradients::zeros_like(model);
    analytic.accumulate(model, x, &cache, loss, label, 1.0);

    let mut perturbed = model.clone();
    let mut worst: f64 = 0.0;
    for l in 0..model.layers.len() {
        let rows = model.layers[l].weights.len();
        let cols = model.layers[l].weights[0].len();
        for o in 0..rows {
            for i in 0..=cols {
                let read = |m: &Model| {
                    if i < cols {
                        m.layers[l].weights[o][i]
                    } else {
                        m.layers[l].bias[o]
                    }
                };
                let write = |m: &mut Model, v: f64| {
                    if i < cols {
                        m.layers[l].weights[o][i] = v;
                    } else {
                        m.layers[l].bias[o] = v;
                    }
                };
                let original = read(model);
                write(&mut perturbed, original + eps);
                let up = loss.value(&perturbed.forward(x)?, label);
                write(&mut perturbed, original - eps);
                let down = loss.value(&perturbed.forward(x)?, label);
                write(&mut perturbed, original);

                let numeric = (up - down) / (2.0 * eps);
                let a = if i < cols {
                    analytic.layers[l].weights[o][i]
                } else {
                    analytic.layers[l].bias[o]
                };
                worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8));
            }
        }
    }
    Ok(worst)
}
