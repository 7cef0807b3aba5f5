//! Structure control for a single RBM layer: hidden-neuron generation from
//! parameter-update fluctuation, annihilation of inactive neurons, and the
//! condition for stacking another layer.
//!
//! Two statistics are tracked from the [`CdUpdate`]s of training:
//!
//! * per hidden neuron and per minibatch, an exponentially smoothed variance
//!   of `dc_j` and the total variance (sum of per-entry variances) of the
//!   column `dW[·, j]`; visible biases are not monitored;
//! * per layer and per epoch, the Walking Distance: for every monitored
//!   parameter the population variance of its epoch-mean update over a
//!   sliding window of `window` epochs is compared with the same quantity one
//!   epoch earlier, and the absolute differences are summed over the layer.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::rbm::{CdUpdate, RbmLayer};

/// Decay of the exponentially smoothed per-neuron variances.
pub const VARIANCE_DECAY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveConfig {
    /// Neuron generation threshold on `var_c[j] * var_w[j]`.
    pub theta_g: f64,
    /// Neurons whose mean activation falls below this are removed.
    pub theta_a: f64,
    /// Layer generation threshold on the final-window Walking Distance.
    pub theta_l1: f64,
    /// Layer generation threshold on the reconstruction error.
    pub theta_l2: f64,
    pub max_hidden: usize,
    pub max_layers: usize,
    /// Walking-Distance window and generation-check period, in epochs.
    pub window: usize,
    /// Half-width of the uniform noise added to an inherited neuron.
    pub inherit_noise: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            theta_g: 0.001,
            theta_a: 0.1,
            theta_l1: 0.05,
            theta_l2: 0.05,
            max_hidden: 2000,
            max_layers: 8,
            window: 5,
            inherit_noise: 0.01,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self, initial_hidden: usize) -> Result<()> {
        let thresholds = [
            ("theta_g", self.theta_g),
            ("theta_a", self.theta_a),
            ("theta_l1", self.theta_l1),
            ("theta_l2", self.theta_l2),
        ];
        for (name, v) in thresholds {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.window == 0 {
            return Err(Error::InvalidArgument("window must be >= 1".into()));
        }
        if self.max_layers == 0 {
            return Err(Error::InvalidArgument("max_layers must be >= 1".into()));
        }
        if self.max_hidden < initial_hidden {
            return Err(Error::InvalidArgument(format!(
                "max_hidden ({}) is below the initial hidden count ({initial_hidden})",
                self.max_hidden
            )));
        }
        if !(self.inherit_noise.is_finite() && self.inherit_noise >= 0.0) {
            return Err(Error::InvalidArgument("inherit_noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// Exponentially smoothed mean and variance; the first observation seeds the
/// mean with zero variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct EwStat {
    count: usize,
    mean: f64,
    var: f64,
}

impl EwStat {
    fn push(&mut self, x: f64) {
        if self.count == 0 {
            self.mean = x;
            self.var = 0.0;
        } else {
            let diff = x - self.mean;
            let incr = (1.0 - VARIANCE_DECAY) * diff;
            self.mean += incr;
            self.var = VARIANCE_DECAY * (self.var + diff * incr);
        }
        self.count += 1;
    }
}

/// Monitored parameter updates of one epoch: `dW` and `dc`.
#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    d_weights: Matrix,
    d_hidden_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureMonitor {
    window: usize,
    neuron_c: Vec<EwStat>,
    /// One entry per visible unit for each hidden neuron.
    neuron_w: Vec<Vec<EwStat>>,
    history: VecDeque<Snapshot>,
    /// Sum and count of the current epoch's minibatch updates.
    pending: Option<(CdUpdate, usize)>,
    wd_hist: Vec<f64>,
    e_norm: f64,
}

impl StructureMonitor {
    pub fn new(n_hidden: usize, window: usize) -> Self {
        StructureMonitor {
            window: window.max(1),
            neuron_c: vec![EwStat::default(); n_hidden],
            neuron_w: vec![Vec::new(); n_hidden],
            history: VecDeque::new(),
            pending: None,
            wd_hist: Vec::new(),
            e_norm: 0.0,
        }
    }

    pub fn n_hidden(&self) -> usize {
        self.neuron_c.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn epochs_observed(&self) -> usize {
        self.wd_hist.len()
    }

    pub fn var_c(&self) -> Vec<f64> {
        self.neuron_c.iter().map(|s| s.var).collect()
    }

    pub fn var_w(&self) -> Vec<f64> {
        self.neuron_w
            .iter()
            .map(|col| col.iter().map(|s| s.var).sum())
            .collect()
    }

    /// Walking Distance per observed epoch, oldest first.
    pub fn wd_history(&self) -> &[f64] {
        &self.wd_hist
    }

    pub fn e_norm(&self) -> f64 {
        self.e_norm
    }

    /// Mean Walking Distance over the last `window` epochs.
    pub fn final_window_wd(&self) -> f64 {
        let n = self.wd_hist.len().min(self.window);
        if n == 0 {
            return 0.0;
        }
        self.wd_hist[self.wd_hist.len() - n..].iter().sum::<f64>() / n as f64
    }

    /// Overrides the per-neuron variances; used by tests and tooling that
    /// replay externally computed statistics.
    pub fn set_neuron_variances(&mut self, var_c: &[f64], var_w: &[f64]) -> Result<()> {
        Error::check_dim("var_c", self.n_hidden(), var_c.len())?;
        Error::check_dim("var_w", self.n_hidden(), var_w.len())?;
        for (s, &v) in self.neuron_c.iter_mut().zip(var_c) {
            s.var = v;
            s.count = s.count.max(self.window);
        }
        for (col, &v) in self.neuron_w.iter_mut().zip(var_w) {
            *col = vec![EwStat {
                count: self.window,
                mean: 0.0,
                var: v,
            }];
        }
        Ok(())
    }

    /// Feeds one minibatch update into the per-neuron statistics and the
    /// running epoch mean.
    pub fn observe_batch(&mut self, update: &CdUpdate) -> Result<()> {
        Error::check_dim("monitored hidden size", self.n_hidden(), update.n_hidden())?;
        if let Some(prev) = self.history.back() {
            Error::check_dim(
                "monitored visible size",
                prev.d_weights.rows(),
                update.n_visible(),
            )?;
        }
        if let Some((sum, _)) = &self.pending {
            Error::check_dim(
                "monitored visible size",
                sum.n_visible(),
                update.n_visible(),
            )?;
        }
        let n_visible = update.n_visible();
        for j in 0..self.n_hidden() {
            self.neuron_c[j].push(update.d_hidden_bias[j]);
            let col = &mut self.neuron_w[j];
            if col.len() != n_visible {
                *col = vec![EwStat::default(); n_visible];
            }
            for (i, s) in col.iter_mut().enumerate() {
                s.push(update.d_weights.get(i, j));
            }
        }
        match &mut self.pending {
            Some((sum, n)) => {
                sum.accumulate(update, 1.0)?;
                *n += 1;
            }
            None => self.pending = Some((update.clone(), 1)),
        }
        Ok(())
    }

    /// Closes an epoch: the mean of the minibatch updates seen since the last
    /// call enters the Walking-Distance window, and `recon_error` becomes
    /// `E_norm`. An epoch without batches records a zero update.
    pub fn finish_epoch(&mut self, recon_error: f64) -> Result<()> {
        let mean = match self.pending.take() {
            Some((mut sum, n)) => {
                let scale = 1.0 / n as f64;
                sum.d_weights
                    .as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v *= scale);
                sum.d_hidden_bias.iter_mut().for_each(|v| *v *= scale);
                Snapshot {
                    d_weights: sum.d_weights,
                    d_hidden_bias: sum.d_hidden_bias,
                }
            }
            None => {
                let rows = self.history.back().map_or(0, |s| s.d_weights.rows());
                Snapshot {
                    d_weights: Matrix::zeros(rows, self.n_hidden()),
                    d_hidden_bias: vec![0.0; self.n_hidden()],
                }
            }
        };
        self.history.push_back(mean);
        if self.history.len() > self.window + 1 {
            self.history.pop_front();
        }
        let wd = if self.history.len() == self.window + 1 {
            let n = self.history.len();
            let current = self.history.range(1..n);
            let previous = self.history.range(0..n - 1);
            walking_distance(previous, current, self.window)
        } else {
            0.0
        };
        self.wd_hist.push(wd);
        self.e_norm = recon_error.max(0.0);
        Ok(())
    }

    /// An epoch consisting of the single update `update`.
    pub fn observe_epoch(&mut self, update: &CdUpdate, recon_error: f64) -> Result<()> {
        self.observe_batch(update)?;
        self.finish_epoch(recon_error)
    }

    /// Registers a child appended after the existing neurons; its statistics
    /// start from zero.
    pub fn add_neuron(&mut self) {
        self.neuron_c.push(EwStat::default());
        self.neuron_w.push(Vec::new());
        for snap in &mut self.history {
            let rows = snap.d_weights.rows();
            snap.d_weights
                .push_column(&vec![0.0; rows])
                .expect("column length equals row count");
            snap.d_hidden_bias.push(0.0);
        }
        if let Some((sum, _)) = &mut self.pending {
            let rows = sum.d_weights.rows();
            sum.d_weights
                .push_column(&vec![0.0; rows])
                .expect("column length equals row count");
            sum.d_hidden_bias.push(0.0);
        }
    }

    /// Drops the statistics of removed neurons, keeping survivors in order.
    pub fn retain_neurons(&mut self, keep: &[bool]) -> Result<()> {
        Error::check_dim("neuron mask", self.n_hidden(), keep.len())?;
        let mut it = keep.iter();
        self.neuron_c.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.neuron_w.retain(|_| *it.next().unwrap());
        for snap in &mut self.history {
            snap.d_weights.retain_columns(keep)?;
            let mut it = keep.iter();
            snap.d_hidden_bias.retain(|_| *it.next().unwrap());
        }
        if let Some((sum, _)) = &mut self.pending {
            sum.d_weights.retain_columns(keep)?;
            let mut it = keep.iter();
            sum.d_hidden_bias.retain(|_| *it.next().unwrap());
        }
        Ok(())
    }
}

/// `Σ_p |var_p(current) − var_p(previous)|` over all monitored parameters,
/// each variance taken over the `window` epochs of its window.
fn walking_distance<'a>(
    previous: impl Iterator<Item = &'a Snapshot> + Clone,
    current: impl Iterator<Item = &'a Snapshot> + Clone,
    window: usize,
) -> f64 {
    let prev = window_variances(previous, window);
    let curr = window_variances(current, window);
    prev.iter().zip(&curr).map(|(a, b)| (a - b).abs()).sum()
}

fn window_variances<'a>(
    snaps: impl Iterator<Item = &'a Snapshot> + Clone,
    window: usize,
) -> Vec<f64> {
    let flat = |s: &'a Snapshot| s.d_weights.as_slice().iter().chain(&s.d_hidden_bias);
    let first = snaps.clone().next().expect("non-empty window");
    let n_params = first.d_weights.as_slice().len() + first.d_hidden_bias.len();
    let mut mean = vec![0.0; n_params];
    for s in snaps.clone() {
        for (m, &x) in mean.iter_mut().zip(flat(s)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= window as f64);
    let mut var = vec![0.0; n_params];
    for s in snaps {
        for ((v, &x), m) in var.iter_mut().zip(flat(s)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= window as f64);
    var
}

/// Parents whose smoothed variance product exceeds `theta_g`, lowest index
/// first, capped so the layer never grows beyond `max_hidden`.
pub fn neuron_generation_check(monitor: &StructureMonitor, cfg: &AdaptiveConfig) -> Vec<usize> {
    let room = cfg.max_hidden.saturating_sub(monitor.n_hidden());
    let var_w = monitor.var_w();
    monitor
        .neuron_c
        .iter()
        .zip(var_w)
        .enumerate()
        .filter(|(_, (c, _))| c.count >= monitor.window)
        .filter(|(_, (c, w))| c.var * w > cfg.theta_g)
        .map(|(j, _)| j)
        .take(room)
        .collect()
}

/// Appends a child of hidden neuron `parent`: its weight column and bias are
/// copies of the parent's, each entry perturbed by uniform noise in
/// `[-noise, noise]`.
pub fn generate_neuron(
    layer: &RbmLayer,
    parent: usize,
    noise: f64,
    max_hidden: usize,
    rng: &mut Rng,
) -> Result<RbmLayer> {
    if parent >= layer.n_hidden() {
        return Err(Error::InvalidArgument(format!(
            "parent {parent} out of range for {} hidden neurons",
            layer.n_hidden()
        )));
    }
    if layer.n_hidden() + 1 > max_hidden {
        return Err(Error::CapacityReached(max_hidden));
    }
    let mut jitter = || {
        if noise > 0.0 {
            rng.uniform(-noise, noise)
        } else {
            0.0
        }
    };
    let column: Vec<f64> = layer
        .weights()
        .column(parent)
        .into_iter()
        .map(|w| w + jitter())
        .collect();
    let bias = layer.hidden_bias()[parent] + jitter();

    let mut child = layer.clone();
    let (weights, _, hidden_bias) = child.parts_mut();
    weights.push_column(&column)?;
    hidden_bias.push(bias);
    Ok(child)
}

/// Mean of `p(h_j = 1 | v)` over the batch, per hidden neuron.
pub fn mean_activation<V: AsRef<[f64]> + Sync>(layer: &RbmLayer, batch: &[V]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("annihilation batch"));
    }
    let probs = layer.hidden_probs_batch(batch)?;
    let mut mean = vec![0.0; layer.n_hidden()];
    for p in &probs {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= batch.len() as f64);
    Ok(mean)
}

/// Hidden neurons whose mean activation over `batch` is below `theta_a`.
pub fn neuron_annihilation_check<V: AsRef<[f64]> + Sync>(
    layer: &RbmLayer,
    batch: &[V],
    theta_a: f64,
) -> Result<Vec<usize>> {
    Ok(mean_activation(layer, batch)?
        .into_iter()
        .enumerate()
        .filter(|&(_, a)| a < theta_a)
        .map(|(j, _)| j)
        .collect())
}

/// Removes the listed hidden neurons; surviving parameters are untouched and
/// keep their order.
pub fn annihilate_neurons(layer: &RbmLayer, indices: &[usize]) -> Result<RbmLayer> {
    let keep = removal_mask(layer.n_hidden(), indices)?;
    let mut out = layer.clone();
    let (weights, _, hidden_bias) = out.parts_mut();
    weights.retain_columns(&keep)?;
    let mut it = keep.iter();
    hidden_bias.retain(|_| *it.next().unwrap());
    Ok(out)
}

pub(crate) fn removal_mask(n_hidden: usize, indices: &[usize]) -> Result<Vec<bool>> {
    let mut keep = vec![true; n_hidden];
    for &j in indices {
        if j >= n_hidden {
            return Err(Error::InvalidArgument(format!(
                "neuron index {j} out of range for {n_hidden} hidden neurons"
            )));
        }
        keep[j] = false;
    }
    if !keep.iter().any(|&k| k) {
        return Err(Error::WouldRemoveAllNeurons);
    }
    Ok(keep)
}

/// Whether another RBM should be stacked on a layer that finished training:
/// both the final-window Walking Distance and the reconstruction error must
/// stay above their thresholds, and the stack must be below `max_layers`.
pub fn layer_generation_check(
    wd: f64,
    e_norm: f64,
    current_layers: usize,
    cfg: &AdaptiveConfig,
) -> bool {
    current_layers < cfg.max_layers && wd > cfg.theta_l1 && e_norm > cfg.theta_l2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEventKind {
    Generate,
    Annihilate,
    NewLayer,
}

impl TraceEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceEventKind::Generate => "generate",
            TraceEventKind::Annihilate => "annihilate",
            TraceEventKind::NewLayer => "new_layer",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub epoch: usize,
    pub layer: usize,
    /// Hidden count of the layer after the event.
    pub hidden: usize,
    pub wd: f64,
    pub e_norm: f64,
    pub kind: TraceEventKind,
}

/// Structural events in the order they happened.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GrowthTrace {
    pub events: Vec<TraceEvent>,
}

impl GrowthTrace {
    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn count(&self, kind: TraceEventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,layer,J,WD,E_norm,event")?;
        for e in &self.events {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch,
                e.layer,
                e.hidden,
                e.wd,
                e.e_norm,
                e.kind.as_str()
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}
