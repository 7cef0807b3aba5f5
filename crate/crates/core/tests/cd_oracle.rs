//! Contrastive divergence against the exact log-likelihood gradient of a
//! tiny RBM, obtained by enumerating every joint state.

use adbn_core::numerics::{sigmoid, Matrix, Rng};
use adbn_core::rbm::{CdUpdate, RbmLayer};

const N_VISIBLE: usize = 3;
const N_HIDDEN: usize = 2;

fn bits(code: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| ((code >> i) & 1) as f64).collect()
}

fn fixture_layer(seed: u64, scale: f64) -> RbmLayer {
    let mut rng = Rng::new(seed);
    let w = Matrix::from_fn(N_VISIBLE, N_HIDDEN, |_, _| scale * rng.normal());
    let b = (0..N_VISIBLE).map(|_| scale * rng.normal()).collect();
    let c = (0..N_HIDDEN).map(|_| scale * rng.normal()).collect();
    RbmLayer::from_parts(w, b, c).unwrap()
}

fn fixture_data() -> Vec<Vec<f64>> {
    vec![
        vec![1.0, 1.0, 0.0],
        vec![1.0, 0.0, 1.0],
        vec![1.0, 1.0, 1.0],
        vec![0.0, 0.0, 1.0],
    ]
}

/// Exact gradient of the mean data log-likelihood, flattened as
/// `[dW (row-major), db, dc]`. Independent of the crate's conditionals:
/// everything is recomputed from the energy with naive loops.
fn exact_gradient(layer: &RbmLayer, data: &[Vec<f64>]) -> Vec<f64> {
    let w = |i: usize, j: usize| layer.weights().get(i, j);
    let energy = |v: &[f64], h: &[f64]| {
        let mut e = 0.0;
        for i in 0..N_VISIBLE {
            e -= layer.visible_bias()[i] * v[i];
            for j in 0..N_HIDDEN {
                e -= v[i] * w(i, j) * h[j];
            }
        }
        for j in 0..N_HIDDEN {
            e -= layer.hidden_bias()[j] * h[j];
        }
        e
    };
    let n_params = N_VISIBLE * N_HIDDEN + N_VISIBLE + N_HIDDEN;
    let stats = |v: &[f64], h: &[f64]| {
        let mut s = Vec::with_capacity(n_params);
        for i in 0..N_VISIBLE {
            for j in 0..N_HIDDEN {
                s.push(v[i] * h[j]);
            }
        }
        s.extend_from_slice(v);
        s.extend_from_slice(h);
        s
    };

    // model expectation over all 2^(I+J) states
    let mut z = 0.0;
    let mut model = vec![0.0; n_params];
    for vc in 0..(1 << N_VISIBLE) {
        let v = bits(vc, N_VISIBLE);
        for hc in 0..(1 << N_HIDDEN) {
            let h = bits(hc, N_HIDDEN);
            let p = (-energy(&v, &h)).exp();
            z += p;
            for (m, s) in model.iter_mut().zip(stats(&v, &h)) {
                *m += p * s;
            }
        }
    }
    model.iter_mut().for_each(|m| *m /= z);

    // data expectation with h marginalised exactly under p(h | v)
    let mut positive = vec![0.0; n_params];
    for v in data {
        let mut zv = 0.0;
        let mut acc = vec![0.0; n_params];
        for hc in 0..(1 << N_HIDDEN) {
            let h = bits(hc, N_HIDDEN);
            let p = (-energy(v, &h)).exp();
            zv += p;
            for (a, s) in acc.iter_mut().zip(stats(v, &h)) {
                *a += p * s;
            }
        }
        for (pos, a) in positive.iter_mut().zip(acc) {
            *pos += a / zv / data.len() as f64;
        }
    }
    positive.iter().zip(&model).map(|(p, m)| p - m).collect()
}

fn flatten(u: &CdUpdate) -> Vec<f64> {
    let mut out = u.d_weights.as_slice().to_vec();
    out.extend_from_slice(&u.d_visible_bias);
    out.extend_from_slice(&u.d_hidden_bias);
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn averaged_cd1(layer: &RbmLayer, data: &[Vec<f64>], draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    let mut total = CdUpdate::zeros(N_VISIBLE, N_HIDDEN);
    for _ in 0..draws {
        let u = layer.cd_step(data, 1, &mut rng).unwrap();
        total.accumulate(&u, 1.0 / draws as f64).unwrap();
    }
    flatten(&total)
}

#[test]
fn exact_gradient_positive_phase_matches_conditionals() {
    // sanity check of the oracle itself: its data term equals v·sigmoid(...)
    let layer = fixture_layer(7, 1.0);
    let v = [1.0, 0.0, 1.0];
    let mut h1 = 0.0;
    let mut z = 0.0;
    for hc in 0..4 {
        let h = bits(hc, 2);
        let e = -(layer.visible_bias()[0] + layer.visible_bias()[2])
            - layer.hidden_bias()[0] * h[0]
            - layer.hidden_bias()[1] * h[1]
            - (0..2)
                .map(|j| (layer.weights().get(0, j) + layer.weights().get(2, j)) * h[j])
                .sum::<f64>();
        z += (-e).exp();
        h1 += h[0] * (-e).exp();
    }
    let expected =
        sigmoid(layer.hidden_bias()[0] + layer.weights().get(0, 0) + layer.weights().get(2, 0));
    assert!((h1 / z - expected).abs() < 1e-12);
    assert!((layer.hidden_probs(&v).unwrap()[0] - expected).abs() < 1e-12);
}

#[test]
fn cd1_points_along_the_exact_gradient() {
    let data = fixture_data();
    let layer = fixture_layer(7, 1.0);
    let exact = exact_gradient(&layer, &data);
    let cd = averaged_cd1(&layer, &data, 10_000, 7);
    let cos = cosine(&cd, &exact);
    assert!(cos >= 0.9, "cosine {cos}");
}

#[test]
fn cd1_direction_holds_across_parameter_scales() {
    let data = fixture_data();
    for (seed, scale) in [(1, 0.1), (2, 0.5), (3, 2.0)] {
        let layer = fixture_layer(seed, scale);
        let cos = cosine(
            &averaged_cd1(&layer, &data, 5_000, seed),
            &exact_gradient(&layer, &data),
        );
        assert!(cos >= 0.9, "seed {seed} scale {scale}: cosine {cos}");
    }
}
