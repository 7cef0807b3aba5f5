//! Seeded fixtures shared by the benchmarks.

use adbn_core::{AdaptiveDbn, Matrix, RbmLayer, Rng};

/// `count` images of `len` pixels, uniform in `[0, 1)`.
pub fn random_images(count: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| (0..len).map(|_| rng.next_f64()).collect())
        .collect()
}

/// Untrained model with small Gaussian weights and the given hidden sizes.
pub fn random_model(
    shape: (usize, usize),
    hidden: &[usize],
    classes: usize,
    seed: u64,
) -> AdaptiveDbn {
    let mut rng = Rng::new(seed);
    let mut sizes = vec![shape.0 * shape.1];
    sizes.extend_from_slice(hidden);
    let layers = sizes
        .windows(2)
        .map(|p| RbmLayer::new(p[0], p[1], &mut rng).expect("valid layer shape"))
        .collect();
    let last = *sizes.last().unwrap();
    let out = Matrix::from_fn(last, classes, |_, _| 0.1 * rng.normal());
    AdaptiveDbn::new(layers, out, vec![0.0; classes], shape).expect("consistent model")
}
