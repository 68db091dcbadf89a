//! Hierarchical decryption permissions.
//!
//! A level-`m` permission carries the locations, scale bounds and key of
//! tiers `1..=m` plus the shared layer statistics. Permissions nest: the
//! items of a lower level are a prefix of every higher level.

use alloc::vec::Vec;

use crate::dprm::{Bounds, CipherBundle, LayerStats, SecretKey};
use crate::error::{domain, Error, Result};
use crate::nn::Model;

#[derive(Debug, Clone, PartialEq)]
pub struct PermissionItem {
    pub key: SecretKey,
    /// Per layer position; `None` where the tier has no weights in that layer.
    pub bounds: Vec<Option<Bounds>>,
    /// Ascending flat weight indices per layer position.
    pub cells: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Permission {
    pub level: usize,
    pub tiers: usize,
    pub stats: LayerStats,
    pub rho: f64,
    pub items: Vec<PermissionItem>,
}

impl Permission {
    pub fn layer_count(&self) -> usize {
        self.stats.mu.len()
    }

    /// Structural checks, independent of any model.
    pub fn validate(&self) -> Result<()> {
        let l = self.layer_count();
        if self.level == 0 || self.level > self.tiers {
            return Err(domain(alloc::format!("permission level {} outside 1..={}", self.level, self.tiers)));
        }
        if self.items.len() != self.level || self.stats.sigma.len() != l {
            return Err(Error::Geometry("permission item count or statistics length inconsistent".into()));
        }
        for (m, item) in self.items.iter().enumerate() {
            if item.bounds.len() != l || item.cells.len() != l {
                return Err(Error::Geometry(alloc::format!("tier {} does not cover {l} layers", m + 1)));
            }
            for (b, cell) in item.bounds.iter().zip(&item.cells) {
                match b {
                    Some(b) if !(b.lower < b.upper) => {
                        return Err(Error::Geometry(alloc::format!("tier {} has empty scale interval", m + 1)));
                    }
                    None if !cell.is_empty() => {
                        return Err(Error::Geometry(alloc::format!("tier {} lacks bounds for a nonempty cell", m + 1)));
                    }
                    Some(_) if cell.is_empty() => {
                        return Err(Error::Geometry(alloc::format!("tier {} has bounds for an empty cell", m + 1)));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Checks that this permission addresses `protected`.
    pub fn check_against(&self, protected: &Model) -> Result<()> {
        self.validate()?;
        let layers = protected.considered();
        if layers.len() != self.layer_count() {
            return Err(Error::Geometry(alloc::format!(
                "permission covers {} layers, model considers {}",
                self.layer_count(),
                layers.len()
            )));
        }
        for item in &self.items {
            for (cell, &l) in item.cells.iter().zip(layers) {
                let n = protected.layers[l].weight.len();
                if cell.iter().any(|&j| j >= n) {
                    return Err(Error::Geometry(alloc::format!("location beyond the {n} weights of layer {l}")));
                }
            }
        }
        Ok(())
    }
}

/// Release tiers `1..=level` of `bundle`.
pub fn assign(bundle: &CipherBundle, level: usize) -> Result<Permission> {
    let tiers = bundle.tiers();
    if level == 0 || level > tiers {
        return Err(domain(alloc::format!("permission level {level} outside 1..={tiers}")));
    }
    let mut items = Vec::with_capacity(level);
    for m in 0..level {
        let cells = bundle.partition.cells[m].clone();
        let key = match bundle.keys.get(m) {
            Some(k) => k.clone(),
            None if cells.iter().all(Vec::is_empty) => SecretKey([0; 32]),
            None => return Err(Error::MissingKey { tier: m + 1 }),
        };
        items.push(PermissionItem { key, bounds: bundle.bounds[m].clone(), cells });
    }
    Ok(Permission { level, tiers, stats: bundle.stats.clone(), rho: bundle.rho, items })
}

/// Nominal permission size in bits for `level` of `tiers` tiers over
/// `layers` layers with `phi` selected weights per layer and `key_bits`-bit
/// keys: `(key_bits + 64 L) m + (16 L m / M) phi`.
pub fn size_bits(level: usize, tiers: usize, layers: usize, phi: usize, key_bits: usize) -> f64 {
    if level == 0 || tiers == 0 {
        return 0.0;
    }
    let (m, big_m, l) = (level as f64, tiers as f64, layers as f64);
    (key_bits as f64 + 64.0 * l) * m + (16.0 * l * m / big_m) * phi as f64
}
