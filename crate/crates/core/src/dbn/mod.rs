//! Stacked RBMs with a softmax output head.
//!
//! Layer `l`'s hidden probabilities are layer `l + 1`'s visible input; at
//! inference the stack is evaluated as a deterministic sigmoid network.

mod finetune;
mod io;
mod pretrain;

pub use finetune::{finetune, loss_and_gradient, mean_cross_entropy, FinetuneReport, Gradients};
pub use io::{load, read_model, save, write_model, MAGIC};
pub use pretrain::{pretrain, train_adaptive_rbm, LayerTraining, TrainConfig};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{softmax, Matrix};
use crate::rbm::RbmLayer;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveDbn {
    layers: Vec<RbmLayer>,
    /// `last hidden size × n_classes`
    out_weights: Matrix,
    out_bias: Vec<f64>,
    /// `(width, height)` in pixels.
    input_shape: (usize, usize),
}

impl AdaptiveDbn {
    /// Builds a model after checking that the stack is chain-compatible.
    pub fn new(
        layers: Vec<RbmLayer>,
        out_weights: Matrix,
        out_bias: Vec<f64>,
        input_shape: (usize, usize),
    ) -> Result<Self> {
        let model = AdaptiveDbn {
            layers,
            out_weights,
            out_bias,
            input_shape,
        };
        model.validate()?;
        Ok(model)
    }

    /// Model with a zero-initialised softmax head on top of `layers`.
    pub fn with_zero_head(
        layers: Vec<RbmLayer>,
        n_classes: usize,
        input_shape: (usize, usize),
    ) -> Result<Self> {
        let last = layers.last().map(RbmLayer::n_hidden).unwrap_or(0);
        AdaptiveDbn::new(
            layers,
            Matrix::zeros(last, n_classes),
            vec![0.0; n_classes],
            input_shape,
        )
    }

    /// Chain compatibility: every layer's hidden size feeds the next layer's
    /// visible size, the input shape matches layer 0 and the head matches the
    /// last layer.
    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::Inconsistent("model has no RBM layers".into()))?;
        let (w, h) = self.input_shape;
        if w * h != first.n_visible() {
            return Err(Error::Inconsistent(format!(
                "input shape {w}x{h} does not match {} visible units",
                first.n_visible()
            )));
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[0].n_hidden() != pair[1].n_visible() {
                return Err(Error::Inconsistent(format!(
                    "layer {l} has {} hidden units but layer {} has {} visible units",
                    pair[0].n_hidden(),
                    l + 1,
                    pair[1].n_visible()
                )));
            }
        }
        let last = self.layers.last().unwrap().n_hidden();
        if self.out_weights.rows() != last {
            return Err(Error::Inconsistent(format!(
                "output head expects {} inputs, last layer has {last}",
                self.out_weights.rows()
            )));
        }
        if self.out_weights.cols() != self.out_bias.len() {
            return Err(Error::Inconsistent(
                "output weights and bias disagree on class count".into(),
            ));
        }
        if self.out_bias.len() < 2 {
            return Err(Error::Inconsistent(
                "at least two classes are required".into(),
            ));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[RbmLayer] {
        &self.layers
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(RbmLayer::n_hidden).collect()
    }

    pub fn out_weights(&self) -> &Matrix {
        &self.out_weights
    }

    pub fn out_bias(&self) -> &[f64] {
        &self.out_bias
    }

    pub fn n_classes(&self) -> usize {
        self.out_bias.len()
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.0 * self.input_shape.1
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [RbmLayer], &mut Matrix, &mut Vec<f64>) {
        (&mut self.layers, &mut self.out_weights, &mut self.out_bias)
    }

    fn check_input(&self, image: &[f64]) -> Result<()> {
        Error::check_dim("model input", self.input_len(), image.len())
    }

    /// Hidden probabilities of every layer, first layer first.
    pub fn forward_hidden(&self, image: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(image)?;
        Ok(self.forward_unchecked(image))
    }

    pub(crate) fn forward_unchecked(&self, image: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = acts.last().map(Vec::as_slice).unwrap_or(image);
            acts.push(layer.hidden_probs_unchecked(input));
        }
        acts
    }

    /// `out_Wᵀ h + out_b` for a last-layer activation `h`.
    pub fn logits_from_hidden(&self, hidden: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("output head input", self.out_weights.rows(), hidden.len())?;
        let mut z = self.out_bias.clone();
        self.out_weights.vec_mul(hidden, &mut z);
        Ok(z)
    }

    pub fn predict_proba(&self, image: &[f64]) -> Result<Vec<f64>> {
        let acts = self.forward_hidden(image)?;
        softmax(&self.logits_from_hidden(acts.last().unwrap())?)
    }

    /// Probabilities for many images, evaluated in parallel.
    pub fn predict_proba_batch<V: AsRef<[f64]> + Sync>(
        &self,
        images: &[V],
    ) -> Result<Vec<Vec<f64>>> {
        images
            .par_iter()
            .map(|img| self.predict_proba(img.as_ref()))
            .collect()
    }

    /// Most probable class and its probability; ties go to the lowest index.
    pub fn classify(&self, image: &[f64]) -> Result<(usize, f64)> {
        Ok(argmax(&self.predict_proba(image)?))
    }
}

/// First maximal entry.
pub fn argmax(p: &[f64]) -> (usize, f64) {
    let mut best = (0, p[0]);
    for (k, &v) in p.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}
