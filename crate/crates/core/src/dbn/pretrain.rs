use crate::adaptive::{
    annihilate_neurons, generate_neuron, layer_generation_check, mean_activation,
    neuron_generation_check, removal_mask, AdaptiveConfig, GrowthTrace, StructureMonitor,
    TraceEvent, TraceEventKind,
};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::rbm::RbmLayer;

use super::AdaptiveDbn;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Step size for contrastive divergence.
    pub learning_rate: f64,
    /// Step size for supervised fine-tuning.
    pub finetune_learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_layer: usize,
    pub finetune_epochs: usize,
    pub initial_hidden: usize,
    pub cd_k: usize,
    pub adaptive: AdaptiveConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            finetune_learning_rate: 0.005,
            batch_size: 100,
            epochs_per_layer: 50,
            finetune_epochs: 50,
            initial_hidden: 400,
            cd_k: 1,
            adaptive: AdaptiveConfig::default(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("finetune_learning_rate", self.finetune_learning_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs_per_layer", self.epochs_per_layer),
            ("initial_hidden", self.initial_hidden),
            ("cd_k", self.cd_k),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        self.adaptive.validate(self.initial_hidden)
    }
}

/// Outcome of training one adaptive RBM.
#[derive(Debug, Clone)]
pub struct LayerTraining {
    pub layer: RbmLayer,
    pub monitor: StructureMonitor,
}

/// Trains one RBM on `data` while growing and pruning its hidden layer.
///
/// Every `window` epochs (except the last) neurons flagged by
/// [`neuron_generation_check`] spawn a child. After the final epoch, neurons
/// whose mean activation falls below `theta_a` are removed; if every neuron
/// would go, the most active one is kept.
pub fn train_adaptive_rbm<V: AsRef<[f64]> + Sync>(
    data: &[V],
    initial_hidden: usize,
    cfg: &TrainConfig,
    layer_index: usize,
    rng: &mut Rng,
    trace: &mut GrowthTrace,
) -> Result<LayerTraining> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    let n_visible = data[0].as_ref().len();
    let acfg = &cfg.adaptive;
    let mut layer = RbmLayer::new(n_visible, initial_hidden, rng)?;
    let mut monitor = StructureMonitor::new(initial_hidden, acfg.window);
    let batch_size = cfg.batch_size.min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=cfg.epochs_per_layer {
        rng.shuffle(&mut order);
        let mut recon = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| data[i].as_ref()).collect();
            let upd = layer.cd_step(&batch, cfg.cd_k, rng)?;
            layer.apply_update(&upd, cfg.learning_rate)?;
            monitor.observe_batch(&upd)?;
            recon += upd.recon_error * chunk.len() as f64;
        }
        monitor.finish_epoch(recon / data.len() as f64)?;

        if epoch % acfg.window == 0 && epoch < cfg.epochs_per_layer {
            for parent in neuron_generation_check(&monitor, acfg) {
                layer = generate_neuron(&layer, parent, acfg.inherit_noise, acfg.max_hidden, rng)?;
                monitor.add_neuron();
                trace.push(TraceEvent {
                    epoch,
                    layer: layer_index,
                    hidden: layer.n_hidden(),
                    wd: monitor.final_window_wd(),
                    e_norm: monitor.e_norm(),
                    kind: TraceEventKind::Generate,
                });
            }
        }
    }

    let activation = mean_activation(&layer, data)?;
    let mut dead: Vec<usize> = (0..activation.len())
        .filter(|&j| activation[j] < acfg.theta_a)
        .collect();
    if dead.len() == layer.n_hidden() {
        let (best, _) = super::argmax(&activation);
        dead.retain(|&j| j != best);
    }
    if !dead.is_empty() {
        let keep = removal_mask(layer.n_hidden(), &dead)?;
        layer = annihilate_neurons(&layer, &dead)?;
        monitor.retain_neurons(&keep)?;
        trace.push(TraceEvent {
            epoch: cfg.epochs_per_layer,
            layer: layer_index,
            hidden: layer.n_hidden(),
            wd: monitor.final_window_wd(),
            e_norm: monitor.e_norm(),
            kind: TraceEventKind::Annihilate,
        });
    }
    Ok(LayerTraining { layer, monitor })
}

/// Greedy layer-wise pre-training with adaptive structure.
///
/// Layer 0 is trained on the images; while [`layer_generation_check`] holds
/// for the newest layer, another RBM is stacked and trained on the hidden
/// probabilities of the layer below. A `new_layer` trace event carries the
/// Walking Distance and reconstruction error that triggered it (zero for the
/// first layer). The softmax head starts at zero.
pub fn pretrain<V: AsRef<[f64]> + Sync>(
    images: &[V],
    input_shape: (usize, usize),
    n_classes: usize,
    cfg: &TrainConfig,
    trace: &mut GrowthTrace,
) -> Result<AdaptiveDbn> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyInput("pre-training images"));
    }
    let n_pixels = input_shape.0 * input_shape.1;
    for img in images {
        Error::check_dim("training image", n_pixels, img.as_ref().len())?;
    }
    let mut rng = Rng::new(cfg.seed);
    let mut layers: Vec<RbmLayer> = Vec::new();
    let mut inputs: Option<Vec<Vec<f64>>> = None;

    let mut deciding = (0.0, 0.0);
    loop {
        let index = layers.len();
        trace.push(TraceEvent {
            epoch: 0,
            layer: index,
            hidden: cfg.initial_hidden,
            wd: deciding.0,
            e_norm: deciding.1,
            kind: TraceEventKind::NewLayer,
        });
        let trained = match &inputs {
            None => train_adaptive_rbm(images, cfg.initial_hidden, cfg, index, &mut rng, trace)?,
            Some(x) => train_adaptive_rbm(x, cfg.initial_hidden, cfg, index, &mut rng, trace)?,
        };
        deciding = (trained.monitor.final_window_wd(), trained.monitor.e_norm());
        let grow = layer_generation_check(deciding.0, deciding.1, index + 1, &cfg.adaptive);
        let next_inputs = if grow {
            Some(match &inputs {
                None => trained.layer.hidden_probs_batch(images)?,
                Some(x) => trained.layer.hidden_probs_batch(x)?,
            })
        } else {
            None
        };
        layers.push(trained.layer);
        match next_inputs {
            Some(x) => inputs = Some(x),
            None => break,
        }
    }
    AdaptiveDbn::with_zero_head(layers, n_classes, input_shape)
}
