use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backprop::{loss_and_grads, GradScope, Gradients};
use super::{Dataset, Model};
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 20, step_size: 0.02, batch_size: 32, momentum: 0.9, seed: 0 }
    }
}

/// Which parameters an update may touch.
#[derive(Debug, Clone, PartialEq)]
pub enum Trainable {
    All,
    /// Weights and biases of the listed layers.
    Layers(Vec<usize>),
    /// Only the flagged weight positions of each listed layer; biases frozen.
    Positions(Vec<(usize, Vec<bool>)>),
}

pub fn train(model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    train_scoped(model, data, cfg, &Trainable::All)
}

/// Minibatch SGD with heavy-ball momentum on the mean batch loss. The batch
/// order is a fresh shuffle per epoch from `cfg.seed`, so runs are
/// reproducible bit for bit.
pub fn train_scoped(model: &Model, data: &Dataset, cfg: &TrainConfig, which: &Trainable) -> Result<Model> {
    if !(cfg.step_size > 0.0) || cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(domain("training needs step_size > 0, batch_size > 0, momentum in [0, 1)"));
    }
    if data.is_empty() {
        return Err(domain("training set is empty"));
    }
    let mut model = model.clone();
    if cfg.epochs == 0 {
        return Ok(model);
    }
    let layers: Vec<usize> = match which {
        Trainable::All => (0..model.layers.len()).collect(),
        Trainable::Layers(ls) => ls.clone(),
        Trainable::Positions(ps) => ps.iter().map(|(l, _)| *l).collect(),
    };
    for &l in &layers {
        if l >= model.layers.len() {
            return Err(Error::Layer { layer: l, detail: "no such layer".into() });
        }
    }
    if let Trainable::Positions(ps) = which {
        for (l, mask) in ps {
            if mask.len() != model.layers[*l].weight.len() {
                return Err(Error::Shape { layer: Some(*l), detail: "position mask length differs from weight count".into() });
            }
        }
    }
    let scope = GradScope::layers(&model, &layers);
    let loss = model.task.loss();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = Gradients::zeros_like(&model);
    let mut velocity = Gradients::zeros_like(&model);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                let v = loss_and_grads(&model, &data.inputs[i], &data.targets[i], loss, &scope, &mut grads)
                    .map_err(|e| match e {
                        Error::NonFinite { .. } => Error::NonFinite { context: "training loss", index: i },
                        other => other,
                    })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { context: "training loss", index: i });
                }
            }
            let k = 1.0 / batch.len() as f64;
            for &l in &layers {
                let (g, v, layer) = (&grads.layers[l], &mut velocity.layers[l], &mut model.layers[l]);
                let mask = match which {
                    Trainable::Positions(ps) => ps.iter().find(|(pl, _)| *pl == l).map(|(_, m)| m.as_slice()),
                    _ => None,
                };
                let w = layer.weight.data_mut();
                for j in 0..w.len() {
                    if mask.is_some_and(|m| !m[j]) {
                        continue;
                    }
                    v.weight[j] = cfg.momentum * v.weight[j] - cfg.step_size * k * g.weight[j];
                    w[j] += v.weight[j];
                }
                if mask.is_none() {
                    let b = layer.bias.data_mut();
                    for j in 0..b.len() {
                        v.bias[j] = cfg.momentum * v.bias[j] - cfg.step_size * k * g.bias[j];
                        b[j] += v.bias[j];
                    }
                }
                if layer.weight.data().iter().chain(layer.bias.data()).any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite { context: "parameters after update", index: l });
                }
            }
        }
    }
    Ok(model)
}
