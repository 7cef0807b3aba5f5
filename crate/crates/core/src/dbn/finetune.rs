//! Supervised fine-tuning: cross-entropy of the softmax head, back-propagated
//! through the unrolled sigmoid stack, minimised by minibatch SGD. The stack's
//! structure is frozen here.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{softmax, Matrix, Rng};

use super::{AdaptiveDbn, TrainConfig};

/// Gradient of the mean cross-entropy with respect to every parameter that
/// takes part in the feed-forward pass (visible biases do not).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layer_weights: Vec<Matrix>,
    pub layer_hidden_bias: Vec<Vec<f64>>,
    pub out_weights: Matrix,
    pub out_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    /// Mean training cross-entropy accumulated during each epoch.
    pub epoch_loss: Vec<f64>,
}

fn check_batch<V: AsRef<[f64]>>(model: &AdaptiveDbn, inputs: &[V], labels: &[usize]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("fine-tuning batch"));
    }
    Error::check_dim("labels", inputs.len(), labels.len())?;
    for x in inputs {
        Error::check_dim("model input", model.input_len(), x.as_ref().len())?;
    }
    let k = model.n_classes();
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    Ok(())
}

pub fn mean_cross_entropy<V: AsRef<[f64]> + Sync>(
    model: &AdaptiveDbn,
    inputs: &[V],
    labels: &[usize],
) -> Result<f64> {
    check_batch(model, inputs, labels)?;
    let losses: Vec<f64> = inputs
        .par_iter()
        .zip(labels)
        .map(|(x, &y)| {
            let acts = model.forward_unchecked(x.as_ref());
            let z = model
                .logits_from_hidden(acts.last().unwrap())
                .expect("validated");
            -log_softmax_at(&z, y)
        })
        .collect();
    Ok(losses.iter().sum::<f64>() / inputs.len() as f64)
}

fn log_softmax_at(z: &[f64], k: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z[k] - lse
}

/// Per-example activations and back-propagated deltas.
struct Trace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    out_delta: Vec<f64>,
    loss: f64,
}

fn backprop_one(model: &AdaptiveDbn, x: &[f64], y: usize) -> Trace {
    let acts = model.forward_unchecked(x);
    let z = model
        .logits_from_hidden(acts.last().unwrap())
        .expect("validated");
    let loss = -log_softmax_at(&z, y);
    let mut out_delta = softmax(&z).expect("finite logits");
    out_delta[y] -= 1.0;

    let n_layers = model.layers.len();
    let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
    let top = &acts[n_layers - 1];
    let mut upstream = vec![0.0; top.len()];
    model.out_weights.mul_vec(&out_delta, &mut upstream);
    deltas[n_layers - 1] = upstream
        .iter()
        .zip(top)
        .map(|(g, a)| g * a * (1.0 - a))
        .collect();
    for l in (1..n_layers).rev() {
        let below = &acts[l - 1];
        let mut g = vec![0.0; below.len()];
        model.layers[l].weights().mul_vec(&deltas[l], &mut g);
        deltas[l - 1] = g
            .iter()
            .zip(below)
            .map(|(g, a)| g * a * (1.0 - a))
            .collect();
    }
    Trace {
        acts,
        deltas,
        out_delta,
        loss,
    }
}

/// `Σ_b left[b]ᵀ right[b] / n` as a dense matrix; rows filled in parallel,
/// each summed in batch order.
fn outer_mean(left: &[&[f64]], right: &[&[f64]], rows: usize, cols: usize) -> Matrix {
    let n = left.len() as f64;
    let mut m = Matrix::zeros(rows, cols);
    m.as_mut_slice()
        .par_chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| {
            for (l, r) in left.iter().zip(right) {
                let li = l[i];
                if li != 0.0 {
                    for (o, rv) in row.iter_mut().zip(*r) {
                        *o += li * rv;
                    }
                }
            }
            row.iter_mut().for_each(|o| *o /= n);
        });
    m
}

fn column_mean(rows: &[&[f64]], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for r in rows {
        for (o, v) in out.iter_mut().zip(*r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= rows.len() as f64);
    out
}

/// Mean cross-entropy over the batch and its exact gradient.
pub fn loss_and_gradient<V: AsRef<[f64]> + Sync>(
    model: &AdaptiveDbn,
    inputs: &[V],
    labels: &[usize],
) -> Result<(f64, Gradients)> {
    check_batch(model, inputs, labels)?;
    let traces: Vec<Trace> = inputs
        .par_iter()
        .zip(labels)
        .map(|(x, &y)| backprop_one(model, x.as_ref(), y))
        .collect();
    let loss = traces.iter().map(|t| t.loss).sum::<f64>() / traces.len() as f64;

    let mut layer_weights = Vec::with_capacity(model.layers.len());
    let mut layer_hidden_bias = Vec::with_capacity(model.layers.len());
    for (l, layer) in model.layers.iter().enumerate() {
        let below: Vec<&[f64]> = if l == 0 {
            inputs.iter().map(|x| x.as_ref()).collect()
        } else {
            traces.iter().map(|t| t.acts[l - 1].as_slice()).collect()
        };
        let delta: Vec<&[f64]> = traces.iter().map(|t| t.deltas[l].as_slice()).collect();
        layer_weights.push(outer_mean(
            &below,
            &delta,
            layer.n_visible(),
            layer.n_hidden(),
        ));
        layer_hidden_bias.push(column_mean(&delta, layer.n_hidden()));
    }
    let top: Vec<&[f64]> = traces
        .iter()
        .map(|t| t.acts.last().unwrap().as_slice())
        .collect();
    let out_delta: Vec<&[f64]> = traces.iter().map(|t| t.out_delta.as_slice()).collect();
    let k = model.n_classes();
    let out_weights = outer_mean(&top, &out_delta, model.out_weights.rows(), k);
    let out_bias = column_mean(&out_delta, k);
    Ok((
        loss,
        Gradients {
            layer_weights,
            layer_hidden_bias,
            out_weights,
            out_bias,
        },
    ))
}

fn descend(model: &mut AdaptiveDbn, grad: &Gradients, lr: f64) -> Result<()> {
    let (layers, out_w, out_b) = model.parts_mut();
    for ((layer, gw), gc) in layers
        .iter_mut()
        .zip(&grad.layer_weights)
        .zip(&grad.layer_hidden_bias)
    {
        let (w, _, c) = layer.parts_mut();
        crate::numerics::axpy(-lr, gw.as_slice(), w.as_mut_slice());
        crate::numerics::axpy(-lr, gc, c);
    }
    crate::numerics::axpy(-lr, grad.out_weights.as_slice(), out_w.as_mut_slice());
    crate::numerics::axpy(-lr, &grad.out_bias, out_b);
    let finite = model
        .layers
        .iter()
        .all(|l| l.weights().is_finite() && l.hidden_bias().iter().all(|v| v.is_finite()))
        && model.out_weights.is_finite()
        && model.out_bias.iter().all(|v| v.is_finite());
    if finite {
        Ok(())
    } else {
        Err(Error::NonFinite("fine-tuned parameters"))
    }
}

/// Minibatch SGD on the cross-entropy for `cfg.finetune_epochs` epochs at
/// `cfg.finetune_learning_rate`. Shuffling uses a stream derived from
/// `cfg.seed`.
pub fn finetune<V: AsRef<[f64]> + Sync>(
    model: &mut AdaptiveDbn,
    inputs: &[V],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<FinetuneReport> {
    check_batch(model, inputs, labels)?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut rng = Rng::new(cfg.seed ^ 0x5EED_F1AE_70E5_0000);
    let lr = cfg.finetune_learning_rate;
    let batch_size = cfg.batch_size.min(inputs.len());
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.finetune_epochs);
    for _ in 0..cfg.finetune_epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_ref()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = loss_and_gradient(model, &xs, &ys)?;
            total += loss * chunk.len() as f64;
            if lr > 0.0 {
                descend(model, &grad, lr)?;
            }
        }
        epoch_loss.push(total / inputs.len() as f64);
    }
    Ok(FinetuneReport { epoch_loss })
}
