//! Probabilistic parameter selection.
//!
//! Every weight of a layer gets a hard-concrete removal gate. The gate
//! logits are trained to make the frozen model as wrong as possible while a
//! penalty on the expected number of open gates keeps the removal sparse.
//! The resulting per-weight probabilities rank the layer; the top `phi`
//! weights form the dominated set, which is then cut into importance tiers.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Error, Result};
use crate::gates::{gate_and_grad, prob_nonzero, prob_nonzero_grad, GateParams};
use crate::math::sigmoid;
use crate::nn::{loss_and_grads, Dataset, GradScope, Gradients, Model};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectConfig {
    /// Share of each layer's weights to select; `phi = ceil(fraction * n)`.
    pub fraction: f64,
    /// Weight of the mean open-gate probability in the objective.
    pub lambda: f64,
    pub tiers: usize,
    pub epochs: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub gate: GateParams,
    /// Starting logit for every gate.
    pub init_logit: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            fraction: 0.10,
            lambda: 1e-2,
            tiers: 5,
            epochs: 3,
            step_size: 1.0,
            batch_size: 32,
            momentum: 0.9,
            seed: 0,
            gate: GateParams::default(),
            init_logit: 0.0,
        }
    }
}

impl SelectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(domain("selection fraction must lie in (0, 1]"));
        }
        if !(self.lambda >= 0.0) || self.tiers == 0 || self.batch_size == 0 || !(self.step_size > 0.0) {
            return Err(domain("selection needs lambda >= 0, tiers >= 1, batch_size >= 1, step_size > 0"));
        }
        Ok(())
    }

    pub fn phi(&self, layer_len: usize) -> usize {
        phi_for(self.fraction, layer_len)
    }
}

/// `ceil(fraction * n)` clamped to `1..=n`.
pub fn phi_for(fraction: f64, n: usize) -> usize {
    let k = libm::ceil(fraction * n as f64 - 1e-9) as usize;
    k.clamp(1, n.max(1))
}

/// Importance of every weight of one layer, indexed by flat weight position.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    pub layer: usize,
    pub values: Vec<f64>,
}

/// Fit the gate logits of `layer` against the frozen `model`.
pub fn fit_importance(model: &Model, layer: usize, data: &Dataset, cfg: &SelectConfig) -> Result<ImportanceMap> {
    cfg.validate()?;
    if !model.considered().contains(&layer) {
        return Err(Error::Layer { layer, detail: "not a considered layer".into() });
    }
    let theta = model.layers[layer].weight.data().to_vec();
    if theta.is_empty() {
        return Err(Error::Layer { layer, detail: "layer has no weights".into() });
    }
    if data.is_empty() {
        return Err(domain("selection data is empty"));
    }
    let n = theta.len();
    let gp = cfg.gate;
    let mut logits = vec![cfg.init_logit; n];
    let mut velocity = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut dz = vec![0.0; n];
    let mut scratch = model.clone();
    let scope = GradScope::layers(model, &[layer]);
    let mut wgrads = Gradients::zeros_like(model);
    let loss = model.task.loss();
    let reg_scale = cfg.lambda / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                {
                    let w = scratch.layers[layer].weight.data_mut();
                    for j in 0..n {
                        let u = open_unit(&mut rng);
                        let (z, dzj) = gate_and_grad(logits[j], u, &gp);
                        w[j] = (1.0 - z) * theta[j];
                        dz[j] = dzj;
                    }
                }
                wgrads.layers[layer].weight.iter_mut().for_each(|g| *g = 0.0);
                let l = loss_and_grads(&scratch, &data.inputs[i], &data.targets[i], loss, &scope, &mut wgrads)
                    .map_err(|e| match e {
                        Error::NonFinite { .. } => Error::NonFinite { context: "selection objective", index: i },
                        other => other,
                    })?;
                if !l.is_finite() {
                    return Err(Error::NonFinite { context: "selection objective", index: i });
                }
                // d(-loss)/d(logit) = theta * dL/dw * dz/dlogit
                let dw = &wgrads.layers[layer].weight;
                for j in 0..n {
                    grad[j] += theta[j] * dw[j] * dz[j];
                }
            }
            let k = 1.0 / batch.len() as f64;
            for j in 0..n {
                let g = grad[j] * k + reg_scale * prob_nonzero_grad(logits[j], &gp);
                if !g.is_finite() {
                    return Err(Error::NonFinite { context: "selection gradient", index: j });
                }
                velocity[j] = cfg.momentum * velocity[j] - cfg.step_size * g;
                logits[j] += velocity[j];
            }
        }
    }
    Ok(ImportanceMap { layer, values: logits.iter().map(|&a| sigmoid(a)).collect() })
}

/// Value of the relaxed objective (mean of -loss plus the penalty) for given
/// logits, averaged over `draws` gate samples per input.
pub fn objective(model: &Model, layer: usize, data: &Dataset, logits: &[f64], cfg: &SelectConfig, draws: usize) -> Result<f64> {
    let theta = model.layers[layer].weight.data();
    let mut scratch = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut total = 0.0;
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        for _ in 0..draws {
            let w = scratch.layers[layer].weight.data_mut();
            for j in 0..theta.len() {
                let (z, _) = gate_and_grad(logits[j], open_unit(&mut rng), &cfg.gate);
                w[j] = (1.0 - z) * theta[j];
            }
            total -= crate::nn::loss_eval(&scratch.forward(x)?, t, model.task.loss())?;
        }
    }
    let pen = logits.iter().map(|&a| prob_nonzero(a, &cfg.gate)).sum::<f64>() / theta.len() as f64;
    Ok(total / (data.len() * draws) as f64 + cfg.lambda * pen)
}

/// Uniform draw strictly inside (0, 1).
pub(crate) fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Indices of the `phi` largest importances, ties to the lower index,
/// returned in ascending index order.
pub fn select_dominated(imp: &ImportanceMap, phi: usize) -> Result<Vec<usize>> {
    top_k(&imp.values, phi)
}

pub(crate) fn top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(domain(alloc::format!("phi = {k} outside 1..={}", scores.len())));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// Dominated set of a model split into importance tiers.
///
/// `cells[m][i]` holds the ascending flat weight indices of tier `m + 1`
/// in model layer `layers[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DominatedPartition {
    pub tiers: usize,
    pub layers: Vec<usize>,
    pub cells: Vec<Vec<Vec<usize>>>,
}

impl DominatedPartition {
    pub fn empty(tiers: usize, layers: Vec<usize>) -> Self {
        let cells = vec![vec![Vec::new(); layers.len()]; tiers];
        DominatedPartition { tiers, layers, cells }
    }

    /// Selected count per layer.
    pub fn phi(&self) -> Vec<usize> {
        (0..self.layers.len()).map(|i| self.cells.iter().map(|t| t[i].len()).sum()).collect()
    }

    pub fn total(&self) -> usize {
        self.cells.iter().flatten().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// `(tier, layer)` pairs, 1-based tier, whose cell is empty.
    pub fn empty_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (m, tier) in self.cells.iter().enumerate() {
            for (i, cell) in tier.iter().enumerate() {
                if cell.is_empty() {
                    out.push((m + 1, self.layers[i]));
                }
            }
        }
        out
    }

    /// All selected indices of layer position `i`, ascending.
    pub fn selected(&self, i: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.cells.iter().flat_map(|t| t[i].iter().copied()).collect();
        v.sort_unstable();
        v
    }

    /// Single-tier partition from explicit per-layer selections.
    pub fn single_tier(layers: Vec<usize>, selected: Vec<Vec<usize>>) -> Self {
        let mut cells = selected;
        cells.iter_mut().for_each(|c| c.sort_unstable());
        DominatedPartition { tiers: 1, layers, cells: vec![cells] }
    }
}

/// Tier thresholds of one layer: `q[m]` for tiers `m = 2..=tiers` is the
/// nearest-rank `(tiers - m + 1) / tiers` quantile of the selected
/// importances. Tier of `p` is one plus the number of thresholds above it.
fn tier_of(p: f64, thresholds: &[f64]) -> usize {
    1 + thresholds.iter().filter(|&&q| p < q).count()
}

fn thresholds(sorted_asc: &[f64], tiers: usize) -> Vec<f64> {
    let n = sorted_asc.len();
    (2..=tiers).map(|m| sorted_asc[((tiers - m + 1) * n / tiers).min(n - 1)]).collect()
}

/// Split per-layer selections into `tiers` importance tiers, tier 1 the most
/// important. `selected[i]` and `imps[i]` describe the same layer.
pub fn partition_by_importance(selected: &[Vec<usize>], imps: &[ImportanceMap], tiers: usize) -> Result<DominatedPartition> {
    if tiers == 0 {
        return Err(domain("tier count must be at least 1"));
    }
    if selected.len() != imps.len() {
        return Err(domain("one selection per importance map required"));
    }
    let layers: Vec<usize> = imps.iter().map(|m| m.layer).collect();
    let mut part = DominatedPartition::empty(tiers, layers);
    for (i, (sel, imp)) in selected.iter().zip(imps).enumerate() {
        if sel.is_empty() {
            return Err(domain(alloc::format!("layer {} has no selected weights", imp.layer)));
        }
        let mut vals: Vec<f64> = sel.iter().map(|&j| imp.values[j]).collect();
        vals.sort_by(f64::total_cmp);
        let q = thresholds(&vals, tiers);
        for &j in sel {
            let m = tier_of(imp.values[j], &q);
            part.cells[m - 1][i].push(j);
        }
        for tier in &mut part.cells {
            tier[i].sort_unstable();
        }
    }
    Ok(part)
}

/// Location table: per tier, `(layer, flat index)` pairs, ascending by layer
/// then index.
pub fn locate(part: &DominatedPartition) -> Vec<Vec<(usize, usize)>> {
    part.cells
        .iter()
        .map(|tier| {
            let mut locs: Vec<(usize, usize)> = tier
                .iter()
                .zip(&part.layers)
                .flat_map(|(cell, &l)| cell.iter().map(move |&j| (l, j)))
                .collect();
            locs.sort_unstable();
            locs
        })
        .collect()
}

/// Fit every considered layer, select `phi` per layer and tier the result.
pub fn select_model(model: &Model, data: &Dataset, cfg: &SelectConfig) -> Result<(Vec<ImportanceMap>, DominatedPartition)> {
    let mut maps = Vec::new();
    for (k, &l) in model.considered().iter().enumerate() {
        let layer_cfg = SelectConfig { seed: cfg.seed.wrapping_add(k as u64), ..*cfg };
        maps.push(fit_importance(model, l, data, &layer_cfg)?);
    }
    let part = partition_from_maps(&maps, cfg.fraction, cfg.tiers)?;
    Ok((maps, part))
}

/// Selection and tiering for already fitted importance maps.
pub fn partition_from_maps(maps: &[ImportanceMap], fraction: f64, tiers: usize) -> Result<DominatedPartition> {
    let selected = maps
        .iter()
        .map(|m| select_dominated(m, phi_for(fraction, m.values.len())))
        .collect::<Result<Vec<_>>>()?;
    partition_by_importance(&selected, maps, tiers)
}
