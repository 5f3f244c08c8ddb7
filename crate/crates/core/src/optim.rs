//! Class-balanced binary cross-entropy and Adam.

use crate::error::{Error, Result};
use crate::nn::{Gradients, Model};
use crate::tensor::Real;

/// Scores are clamped to `[SCORE_CLAMP, 1 - SCORE_CLAMP]` before the log.
pub const SCORE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_pos: f64,
    pub w_neg: f64,
}

impl LossWeights {
    pub fn uniform() -> Self {
        Self { w_pos: 1.0, w_neg: 1.0 }
    }

    pub fn weight(&self, label: bool) -> f64 {
        if label {
            self.w_pos
        } else {
            self.w_neg
        }
    }
}

/// `w_c = N / (2 n_c)`, so both classes carry the same total weight.
pub fn class_weights(n_pos: usize, n_neg: usize) -> Result<LossWeights> {
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::EmptyClass { n_pos, n_neg });
    }
    let n = (n_pos + n_neg) as f64;
    Ok(LossWeights {
        w_pos: n / (2.0 * n_pos as f64),
        w_neg: n / (2.0 * n_neg as f64),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WbceOutput {
    /// Batch-mean weighted loss.
    pub loss: f64,
    /// d loss / d score per sample.
    pub grads: Vec<f64>,
    /// Summed weighted loss from positive and negative samples.
    pub pos_mass: f64,
    pub neg_mass: f64,
}

/// Weighted binary cross-entropy averaged over the batch. The gradient is
/// taken at the clamped score, so saturated outputs still get a finite push.
pub fn wbce(scores: &[f64], labels: &[bool], w: LossWeights) -> Result<WbceOutput> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let b = scores.len() as f64;
    let (mut pos_mass, mut neg_mass) = (0.0, 0.0);
    let mut grads = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        let p = s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
        let wy = w.weight(y);
        if y {
            pos_mass -= wy * p.ln();
            grads.push(-wy / (p * b));
        } else {
            neg_mass -= wy * (1.0 - p).ln();
            grads.push(wy / ((1.0 - p) * b));
        }
    }
    Ok(WbceOutput {
        loss: (pos_mass + neg_mass) / b,
        grads,
        pos_mass,
        neg_mass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    /// First and second moments per parameter; `None` for frozen ones.
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &Model<T>, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: model
                .params()
                .iter()
                .map(|p| (!p.frozen()).then(|| (vec![T::zero(); p.tensor.len()], vec![T::zero(); p.tensor.len()])))
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every trainable parameter. `grads`
    /// must cover exactly the trainable parameters.
    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>) -> Result<()> {
        let params = model.params();
        if grads.len() != params.len() || self.moments.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            let ok = match (grads.get(i), &self.moments[i]) {
                (Some(g), Some((m, _))) => g.shape() == p.tensor.shape() && m.len() == g.len(),
                (None, None) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for `{}` does not match the trainable set",
                    p.name()
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let step_size = T::from_f64(c.lr / bc1);
        let sqrt_bc2 = T::from_f64(bc2.sqrt());
        let eps = T::from_f64(c.eps);
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            let (Some(g), Some((m, v))) = (grads.get(i), self.moments[i].as_mut()) else {
                continue;
            };
            for (((w, &g), m), v) in p.tensor.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *w = *w - step_size * *m / ((*v).sqrt() / sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
