//! Relevance heatmaps: a class's output weights, gated by the last hidden
//! layer, are pushed back through the stack to pixels, normalised to bytes
//! and rendered with a jet colour ramp.

use crate::dbn::AdaptiveDbn;
use crate::error::{Error, Result};

/// Per-pixel bytes of the same size as the source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
}

/// `r_j = ĥ_j · out_W[j, k]` over the last hidden layer. In discrete mode
/// `ĥ_j` is 1 when the activation is at least 0.5 and 0 otherwise.
pub fn relevance_seed(
    model: &AdaptiveDbn,
    image: &[f64],
    class_id: usize,
    discrete: bool,
) -> Result<Vec<f64>> {
    if class_id >= model.n_classes() {
        return Err(Error::LabelOutOfRange {
            label: class_id,
            classes: model.n_classes(),
        });
    }
    let acts = model.forward_hidden(image)?;
    let last = acts.last().expect("model has at least one layer");
    Ok(last
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            let gate = if discrete {
                f64::from(u8::from(a >= 0.5))
            } else {
                a
            };
            gate * model.out_weights().get(j, class_id)
        })
        .collect())
}

/// Pushes `seed` down the stack: `r_i = a_i · Σ_j W_ij r_j` at every layer,
/// where `a` is the layer input (pixel values at the bottom). Returns one
/// value per pixel, row-major.
pub fn backproject(model: &AdaptiveDbn, image: &[f64], seed: &[f64]) -> Result<Vec<f64>> {
    let acts = model.forward_hidden(image)?;
    let layers = model.layers();
    Error::check_dim(
        "relevance seed",
        layers.last().unwrap().n_hidden(),
        seed.len(),
    )?;
    let mut r = seed.to_vec();
    for l in (0..layers.len()).rev() {
        let input: &[f64] = if l == 0 { image } else { &acts[l - 1] };
        let mut below = vec![0.0; input.len()];
        layers[l].weights().mul_vec(&r, &mut below);
        for (b, a) in below.iter_mut().zip(input) {
            *b *= a;
        }
        r = below;
    }
    Ok(r)
}

fn round_half_up(x: f64) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Min-max scales to `[0, 255]`, rounding half up; a constant map becomes
/// all zeros.
pub fn normalize_bytes(values: &[f64], width: usize, height: usize) -> Result<Heatmap> {
    Error::check_dim("relevance map", width * height, values.len())?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("relevance map"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bytes = if values.is_empty() || hi == lo {
        vec![0; values.len()]
    } else {
        values
            .iter()
            .map(|&v| round_half_up((v - lo) / (hi - lo) * 255.0))
            .collect()
    };
    Ok(Heatmap {
        width,
        height,
        values: bytes,
    })
}

/// Jet colour of one byte.
pub fn jet(value: u8) -> [u8; 3] {
    let t = value as f64 / 255.0;
    let ramp = |a: f64, b: f64| round_half_up((a.min(b)).clamp(0.0, 1.0) * 255.0);
    [
        ramp(4.0 * t - 1.5, -4.0 * t + 4.5),
        ramp(4.0 * t - 0.5, -4.0 * t + 3.5),
        ramp(4.0 * t + 0.5, -4.0 * t + 2.5),
    ]
}

/// Interleaved RGB bytes, one triple per heatmap pixel.
pub fn render_jet(hm: &Heatmap) -> Vec<u8> {
    let table: Vec<[u8; 3]> = (0..=255u8).map(jet).collect();
    hm.values.iter().flat_map(|&v| table[v as usize]).collect()
}

/// Seed, backprojection and normalisation in one call.
pub fn heatmap(
    model: &AdaptiveDbn,
    image: &[f64],
    class_id: usize,
    discrete: bool,
) -> Result<Heatmap> {
    let seed = relevance_seed(model, image, class_id, discrete)?;
    let r = backproject(model, image, &seed)?;
    let (w, h) = model.input_shape();
    normalize_bytes(&r, w, h)
}
