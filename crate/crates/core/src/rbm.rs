//! A single Restricted Boltzmann Machine with binary hidden units, trained
//! by k-step contrastive divergence.
//!
//! Visible inputs may be binary or grey levels in `[0, 1]`; during the Gibbs
//! chain only the hidden side is sampled, the visible side carries
//! reconstruction probabilities.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{bernoulli_sample, dot, sigmoid, Matrix, Rng};

/// Standard deviation of the Gaussian weight initialisation.
pub const INIT_WEIGHT_STDEV: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct RbmLayer {
    /// `n_visible × n_hidden`
    weights: Matrix,
    visible_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
}

/// Gradient estimate produced by one contrastive-divergence step.
#[derive(Debug, Clone, PartialEq)]
pub struct CdUpdate {
    pub d_weights: Matrix,
    pub d_visible_bias: Vec<f64>,
    pub d_hidden_bias: Vec<f64>,
    /// Mean per-pixel squared difference between the batch and its k-step
    /// reconstruction probabilities.
    pub recon_error: f64,
}

impl CdUpdate {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        CdUpdate {
            d_weights: Matrix::zeros(n_visible, n_hidden),
            d_visible_bias: vec![0.0; n_visible],
            d_hidden_bias: vec![0.0; n_hidden],
            recon_error: 0.0,
        }
    }

    pub fn n_visible(&self) -> usize {
        self.d_weights.rows()
    }

    pub fn n_hidden(&self) -> usize {
        self.d_weights.cols()
    }

    /// `self += scale * other`, including the reconstruction error.
    pub fn accumulate(&mut self, other: &CdUpdate, scale: f64) -> Result<()> {
        Error::check_dim("update visible size", self.n_visible(), other.n_visible())?;
        Error::check_dim("update hidden size", self.n_hidden(), other.n_hidden())?;
        crate::numerics::axpy(
            scale,
            other.d_weights.as_slice(),
            self.d_weights.as_mut_slice(),
        );
        crate::numerics::axpy(scale, &other.d_visible_bias, &mut self.d_visible_bias);
        crate::numerics::axpy(scale, &other.d_hidden_bias, &mut self.d_hidden_bias);
        self.recon_error += scale * other.recon_error;
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.d_weights.is_finite()
            && self.d_visible_bias.iter().all(|v| v.is_finite())
            && self.d_hidden_bias.iter().all(|v| v.is_finite())
    }
}

impl RbmLayer {
    /// Gaussian weights (mean 0, stdev [`INIT_WEIGHT_STDEV`]) and zero biases.
    pub fn new(n_visible: usize, n_hidden: usize, rng: &mut Rng) -> Result<Self> {
        check_sizes(n_visible, n_hidden)?;
        let weights = Matrix::from_fn(n_visible, n_hidden, |_, _| INIT_WEIGHT_STDEV * rng.normal());
        Ok(RbmLayer {
            weights,
            visible_bias: vec![0.0; n_visible],
            hidden_bias: vec![0.0; n_hidden],
        })
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Result<Self> {
        check_sizes(n_visible, n_hidden)?;
        Ok(RbmLayer {
            weights: Matrix::zeros(n_visible, n_hidden),
            visible_bias: vec![0.0; n_visible],
            hidden_bias: vec![0.0; n_hidden],
        })
    }

    pub fn from_parts(
        weights: Matrix,
        visible_bias: Vec<f64>,
        hidden_bias: Vec<f64>,
    ) -> Result<Self> {
        check_sizes(weights.rows(), weights.cols())?;
        Error::check_dim("visible bias", weights.rows(), visible_bias.len())?;
        Error::check_dim("hidden bias", weights.cols(), hidden_bias.len())?;
        if !weights.is_finite()
            || visible_bias
                .iter()
                .chain(&hidden_bias)
                .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("RBM parameters"));
        }
        Ok(RbmLayer {
            weights,
            visible_bias,
            hidden_bias,
        })
    }

    #[inline]
    pub fn n_visible(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn n_hidden(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.visible_bias
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.hidden_bias
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Matrix, &mut Vec<f64>, &mut Vec<f64>) {
        (
            &mut self.weights,
            &mut self.visible_bias,
            &mut self.hidden_bias,
        )
    }

    /// `E(v, h) = -bᵀv - cᵀh - vᵀWh`
    pub fn energy(&self, v: &[f64], h: &[f64]) -> Result<f64> {
        Error::check_dim("energy visible", self.n_visible(), v.len())?;
        Error::check_dim("energy hidden", self.n_hidden(), h.len())?;
        let interaction: f64 = v
            .iter()
            .enumerate()
            .filter(|(_, &vi)| vi != 0.0)
            .map(|(i, &vi)| vi * dot(self.weights.row(i), h))
            .sum();
        Ok(-dot(&self.visible_bias, v) - dot(&self.hidden_bias, h) - interaction)
    }

    /// `p(h_j = 1 | v)` for every hidden unit.
    pub fn hidden_probs(&self, v: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("hidden_probs input", self.n_visible(), v.len())?;
        Ok(self.hidden_probs_unchecked(v))
    }

    /// `p(v_i = 1 | h)` for every visible unit.
    pub fn visible_probs(&self, h: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("visible_probs input", self.n_hidden(), h.len())?;
        Ok(self.visible_probs_unchecked(h))
    }

    pub(crate) fn hidden_probs_unchecked(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.hidden_bias.clone();
        self.weights.vec_mul(v, &mut out);
        out.iter_mut().for_each(|x| *x = sigmoid(*x));
        out
    }

    pub(crate) fn visible_probs_unchecked(&self, h: &[f64]) -> Vec<f64> {
        let mut out = self.visible_bias.clone();
        self.weights.mul_vec(h, &mut out);
        out.iter_mut().for_each(|x| *x = sigmoid(*x));
        out
    }

    /// Hidden probabilities for a whole batch; rows evaluated in parallel.
    pub fn hidden_probs_batch<V: AsRef<[f64]> + Sync>(&self, batch: &[V]) -> Result<Vec<Vec<f64>>> {
        for v in batch {
            Error::check_dim("hidden_probs input", self.n_visible(), v.as_ref().len())?;
        }
        Ok(batch
            .par_iter()
            .map(|v| self.hidden_probs_unchecked(v.as_ref()))
            .collect())
    }

    /// One CD-k gradient estimate averaged over `batch`.
    ///
    /// Positive and negative statistics both use hidden probabilities; hidden
    /// states are sampled between Gibbs half-steps. Random draws are taken
    /// sequentially in batch order so the result does not depend on the
    /// number of worker threads.
    pub fn cd_step<V: AsRef<[f64]> + Sync>(
        &self,
        batch: &[V],
        k: usize,
        rng: &mut Rng,
    ) -> Result<CdUpdate> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("CD batch"));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("CD-k requires k >= 1".into()));
        }
        for v in batch {
            let v = v.as_ref();
            Error::check_dim("CD batch row", self.n_visible(), v.len())?;
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::InvalidArgument(
                    "visible inputs must lie in [0, 1]".into(),
                ));
            }
        }

        let pos_hidden = self.hidden_probs_batch(batch)?;
        let mut hidden_state = sample_rows(&pos_hidden, rng)?;
        let mut recon: Vec<Vec<f64>> = Vec::new();
        let mut neg_hidden: Vec<Vec<f64>> = Vec::new();
        for step in 0..k {
            recon = hidden_state
                .par_iter()
                .map(|h| self.visible_probs_unchecked(h))
                .collect();
            neg_hidden = self.hidden_probs_batch(&recon)?;
            if step + 1 < k {
                hidden_state = sample_rows(&neg_hidden, rng)?;
            }
        }

        let n = batch.len() as f64;
        let n_hidden = self.n_hidden();
        let mut d_weights = Matrix::zeros(self.n_visible(), n_hidden);
        d_weights
            .as_mut_slice()
            .par_chunks_mut(n_hidden)
            .enumerate()
            .for_each(|(i, row)| {
                for b in 0..batch.len() {
                    let vp = batch[b].as_ref()[i];
                    let vn = recon[b][i];
                    for ((r, hp), hn) in row.iter_mut().zip(&pos_hidden[b]).zip(&neg_hidden[b]) {
                        *r += vp * hp - vn * hn;
                    }
                }
                row.iter_mut().for_each(|r| *r /= n);
            });

        let mut d_visible_bias = vec![0.0; self.n_visible()];
        let mut d_hidden_bias = vec![0.0; n_hidden];
        let mut sq_err = 0.0;
        for b in 0..batch.len() {
            for ((d, &vp), &vn) in d_visible_bias
                .iter_mut()
                .zip(batch[b].as_ref())
                .zip(&recon[b])
            {
                *d += vp - vn;
                sq_err += (vp - vn) * (vp - vn);
            }
            for ((d, &hp), &hn) in d_hidden_bias
                .iter_mut()
                .zip(&pos_hidden[b])
                .zip(&neg_hidden[b])
            {
                *d += hp - hn;
            }
        }
        d_visible_bias.iter_mut().for_each(|d| *d /= n);
        d_hidden_bias.iter_mut().for_each(|d| *d /= n);

        Ok(CdUpdate {
            d_weights,
            d_visible_bias,
            d_hidden_bias,
            recon_error: sq_err / (n * self.n_visible() as f64),
        })
    }

    /// `θ ← θ + learning_rate · Δθ`
    pub fn apply_update(&mut self, update: &CdUpdate, learning_rate: f64) -> Result<()> {
        Error::check_dim("update visible size", self.n_visible(), update.n_visible())?;
        Error::check_dim("update hidden size", self.n_hidden(), update.n_hidden())?;
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {learning_rate}"
            )));
        }
        if !update.is_finite() {
            return Err(Error::NonFinite("CD update"));
        }
        if learning_rate == 0.0 {
            return Ok(());
        }
        let mut next = self.clone();
        crate::numerics::axpy(
            learning_rate,
            update.d_weights.as_slice(),
            next.weights.as_mut_slice(),
        );
        crate::numerics::axpy(
            learning_rate,
            &update.d_visible_bias,
            &mut next.visible_bias,
        );
        crate::numerics::axpy(learning_rate, &update.d_hidden_bias, &mut next.hidden_bias);
        if !next.weights.is_finite()
            || next
                .visible_bias
                .iter()
                .chain(&next.hidden_bias)
                .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("updated RBM parameters"));
        }
        *self = next;
        Ok(())
    }
}

fn check_sizes(n_visible: usize, n_hidden: usize) -> Result<()> {
    if n_visible == 0 || n_hidden == 0 {
        return Err(Error::InvalidArgument(format!(
            "RBM needs at least one visible and one hidden unit, got {n_visible}x{n_hidden}"
        )));
    }
    Ok(())
}

fn sample_rows(probs: &[Vec<f64>], rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    probs.iter().map(|p| bernoulli_sample(p, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn random_layer(n_visible: usize, n_hidden: usize, scale: f64, rng: &mut Rng) -> RbmLayer {
        RbmLayer::from_parts(
            Matrix::from_fn(n_visible, n_hidden, |_, _| scale * rng.normal()),
            (0..n_visible).map(|_| scale * rng.normal()).collect(),
            (0..n_hidden).map(|_| scale * rng.normal()).collect(),
        )
        .unwrap()
    }

    fn naive_energy(layer: &RbmLayer, v: &[f64], h: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..v.len() {
            e -= layer.visible_bias()[i] * v[i];
        }
        for j in 0..h.len() {
            e -= layer.hidden_bias()[j] * h[j];
        }
        for i in 0..v.len() {
            for j in 0..h.len() {
                e -= v[i] * layer.weights().get(i, j) * h[j];
            }
        }
        e
    }

    #[test]
    fn energy_examples() {
        let zero = RbmLayer::zeros(3, 2).unwrap();
        assert_eq!(zero.energy(&[0.0; 3], &[0.0; 2]).unwrap(), 0.0);
        let one = RbmLayer::from_parts(
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            vec![0.0],
            vec![0.0],
        )
        .unwrap();
        assert_eq!(one.energy(&[1.0], &[1.0]).unwrap(), -1.0);
        assert!(matches!(
            zero.energy(&[0.0; 2], &[0.0; 2]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn energy_matches_naive_loops() {
        let mut rng = Rng::new(11);
        for _ in 0..1000 {
            let nv = 1 + rng.below(5);
            let nh = 1 + rng.below(5);
            let layer = random_layer(nv, nh, 1.0, &mut rng);
            let v: Vec<f64> = (0..nv).map(|_| rng.below(2) as f64).collect();
            let h: Vec<f64> = (0..nh).map(|_| rng.below(2) as f64).collect();
            let e = layer.energy(&v, &h).unwrap();
            assert!((e - naive_energy(&layer, &v, &h)).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_examples() {
        let zero = RbmLayer::zeros(4, 3).unwrap();
        assert!(zero
            .hidden_probs(&[1.0, 0.0, 1.0, 1.0])
            .unwrap()
            .iter()
            .all(|&p| p == 0.5));
        assert!(zero
            .visible_probs(&[1.0, 0.0, 1.0])
            .unwrap()
            .iter()
            .all(|&p| p == 0.5));
        let strong = RbmLayer::from_parts(
            Matrix::from_vec(1, 1, vec![10.0]).unwrap(),
            vec![0.0],
            vec![0.0],
        )
        .unwrap();
        assert!((strong.hidden_probs(&[1.0]).unwrap()[0] - 0.999_954_6).abs() < 1e-6);
        assert!(zero.hidden_probs(&[0.0; 3]).is_err());
        assert!(zero.visible_probs(&[0.0; 4]).is_err());
    }

    #[test]
    fn conditionals_flip_under_negation_and_complement() {
        // With (W, b, c) -> (-W, b', c') chosen so that the energy is
        // preserved under v -> 1 - v, p(h | v) must equal p(h | 1 - v) of the
        // transformed layer. Checked exhaustively on tiny layers.
        let mut rng = Rng::new(5);
        for nv in 1..=3 {
            for nh in 1..=3 {
                let layer = random_layer(nv, nh, 1.5, &mut rng);
                let w = layer.weights();
                let mut c2 = layer.hidden_bias().to_vec();
                for (j, c) in c2.iter_mut().enumerate() {
                    *c += (0..nv).map(|i| w.get(i, j)).sum::<f64>();
                }
                let neg = Matrix::from_fn(nv, nh, |i, j| -w.get(i, j));
                let b2: Vec<f64> = layer.visible_bias().iter().map(|b| -b).collect();
                let flipped = RbmLayer::from_parts(neg, b2, c2).unwrap();
                for code in 0..(1usize << nv) {
                    let v: Vec<f64> = (0..nv).map(|i| ((code >> i) & 1) as f64).collect();
                    let vc: Vec<f64> = v.iter().map(|x| 1.0 - x).collect();
                    let a = layer.hidden_probs(&v).unwrap();
                    let b = flipped.hidden_probs(&vc).unwrap();
                    for (x, y) in a.iter().zip(&b) {
                        assert!((x - y).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn untrained_reconstruction_error_is_a_quarter() {
        let layer = RbmLayer::zeros(8, 4).unwrap();
        let mut rng = Rng::new(9);
        let batch: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..8).map(|_| rng.below(2) as f64).collect())
            .collect();
        let upd = layer.cd_step(&batch, 1, &mut rng).unwrap();
        assert!((upd.recon_error - 0.25).abs() < 0.02);
    }

    #[test]
    fn saturated_layer_gives_vanishing_update() {
        // One pattern, hidden unit pinned on and weights reproducing the
        // pattern: data and model statistics coincide.
        let pattern = [1.0, 0.0, 1.0, 0.0];
        let w = Matrix::from_vec(4, 1, vec![40.0, -40.0, 40.0, -40.0]).unwrap();
        let layer = RbmLayer::from_parts(w, vec![-20.0; 4], vec![60.0]).unwrap();
        let batch = vec![pattern.to_vec(); 10];
        let mut rng = Rng::new(1);
        let upd = layer.cd_step(&batch, 1, &mut rng).unwrap();
        assert!(upd.d_weights.max_abs() < 1e-6);
        assert!(upd
            .d_visible_bias
            .iter()
            .chain(&upd.d_hidden_bias)
            .all(|d| d.abs() < 1e-6));
        assert!(upd.recon_error < 1e-6);
    }

    #[test]
    fn cd_step_rejects_bad_batches() {
        let layer = RbmLayer::zeros(3, 2).unwrap();
        let mut rng = Rng::new(0);
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(
            layer.cd_step(&empty, 1, &mut rng),
            Err(Error::EmptyInput(_))
        ));
        assert!(layer.cd_step(&[vec![0.0; 2]], 1, &mut rng).is_err());
        assert!(layer.cd_step(&[vec![0.0; 3]], 0, &mut rng).is_err());
        assert!(layer.cd_step(&[vec![0.0, 2.0, 0.0]], 1, &mut rng).is_err());
    }

    #[test]
    fn apply_update_scales_exactly() {
        let mut rng = Rng::new(2);
        let layer = random_layer(3, 2, 0.3, &mut rng);
        let mut upd = CdUpdate::zeros(3, 2);
        let mut same = layer.clone();
        same.apply_update(&upd, 0.005).unwrap();
        assert_eq!(same, layer);

        upd.d_weights = Matrix::from_fn(3, 2, |i, j| (i as f64) - 0.5 * j as f64);
        upd.d_hidden_bias = vec![1.0, -1.0];
        let mut lr0 = layer.clone();
        lr0.apply_update(&upd, 0.0).unwrap();
        assert_eq!(lr0, layer);

        let mut moved = layer.clone();
        moved.apply_update(&upd, 0.005).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let expected = layer.weights().get(i, j) + 0.005 * upd.d_weights.get(i, j);
                assert_eq!(moved.weights().get(i, j), expected);
            }
        }

        upd.d_visible_bias[0] = f64::INFINITY;
        assert!(matches!(
            moved.apply_update(&upd, 0.1),
            Err(Error::NonFinite(_))
        ));
        assert!(moved.apply_update(&CdUpdate::zeros(2, 2), 0.1).is_err());
    }

    #[test]
    fn reconstruction_improves_with_training() {
        let patterns = vec![
            vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
        ];
        let mut rng = Rng::new(42);
        let mut layer = RbmLayer::new(6, 4, &mut rng).unwrap();
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..200 {
            let upd = layer.cd_step(&patterns, 1, &mut rng).unwrap();
            first.get_or_insert(upd.recon_error);
            last = upd.recon_error;
            layer.apply_update(&upd, 0.1).unwrap();
        }
        assert!(last < first.unwrap(), "first {first:?} last {last}");
    }

    proptest! {
        #[test]
        fn probabilities_stay_in_open_interval(
            seed in any::<u64>(),
            scale in 0.0f64..1.0,
        ) {
            let mut rng = Rng::new(seed);
            let layer = random_layer(5, 4, scale, &mut rng);
            let v: Vec<f64> = (0..5).map(|_| rng.next_f64()).collect();
            let h = layer.hidden_probs(&v).unwrap();
            let r = layer.visible_probs(&h).unwrap();
            prop_assert!(h.iter().chain(&r).all(|&p| p > 0.0 && p < 1.0));
        }
    }
}
