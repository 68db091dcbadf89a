//! Distribution-preserving random mask.
//!
//! Encryption of one tier: add a key-derived uniform mask to the selected
//! weights, min-max scale each layer's masked values into the open unit
//! interval, and push them through the inverse CDF of the layer's Gaussian
//! fit. The ciphertext therefore follows the same normal law as the layer's
//! plaintext weights. Decryption reverses the three steps exactly.
//!
//! There is no authentication: a wrong key decrypts to plausible-looking
//! garbage without any error.

use alloc::vec;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{domain, Error, Result};
use crate::math::{mean, sample_std};
use crate::nn::{LayerKind, Model};
use crate::permission::Permission;
use crate::pss::{locate, DominatedPartition};

/// 256-bit tier key.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey(pub [u8; 32]);

impl core::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl SecretKey {
    pub fn from_rng(rng: &mut impl RngCore) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        SecretKey(k)
    }

    /// `count` keys from a seeded ChaCha20 stream, for reproducible runs.
    pub fn derive_set(seed: u64, count: usize) -> Vec<SecretKey> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..count).map(|_| SecretKey::from_rng(&mut rng)).collect()
    }
}

/// Forward-secure generator: a SHA-256 hash chain. Each step emits
/// `H(state || 0x01)` and moves to `H(state || 0x00)`; the old state is
/// overwritten and no operation walks the chain backwards.
pub struct Fsprng {
    state: [u8; 32],
    blocks: u64,
    pending: [f64; 4],
    used: usize,
}

impl Fsprng {
    pub fn new(key: &SecretKey) -> Self {
        Self::resume(key.0)
    }

    /// Continue from a chain state taken at a block boundary.
    pub fn resume(state: [u8; 32]) -> Self {
        Fsprng { state, blocks: 0, pending: [0.0; 4], used: 4 }
    }

    /// Current chain state. Values already emitted cannot be recomputed from it.
    pub fn state(&self) -> [u8; 32] {
        self.state
    }

    pub fn blocks_emitted(&self) -> u64 {
        self.blocks
    }

    /// Next 32-byte block as four big-endian words mapped into [0, 1).
    pub fn next_block(&mut self) -> [f64; 4] {
        let out: [u8; 32] = Sha256::new().chain_update(self.state).chain_update([0x01]).finalize().into();
        self.state = Sha256::new().chain_update(self.state).chain_update([0x00]).finalize().into();
        self.blocks += 1;
        let mut vals = [0.0; 4];
        for (v, word) in vals.iter_mut().zip(out.chunks_exact(8)) {
            let w = u64::from_be_bytes(word.try_into().unwrap());
            // Top 53 bits so the result is exactly representable and below 1.
            *v = (w >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        }
        vals
    }

    pub fn next_unit(&mut self) -> f64 {
        if self.used == 4 {
            self.pending = self.next_block();
            self.used = 0;
        }
        self.used += 1;
        self.pending[self.used - 1]
    }
}

/// First `n` uniforms of the stream keyed by `key`.
pub fn fsprng_stream(key: &SecretKey, n: usize) -> Vec<f64> {
    let mut g = Fsprng::new(key);
    (0..n).map(|_| g.next_unit()).collect()
}

const SQRT_2: f64 = core::f64::consts::SQRT_2;

pub fn gaussian_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc(-(x - mu) / (sigma * SQRT_2))
}

fn std_lower_tail(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Inverse normal CDF: rational approximation (relative error about 1e-9)
/// polished by one Newton step against the erfc-based CDF.
pub fn gaussian_icdf(p: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(alloc::format!("probability {p} outside (0, 1)")));
    }
    if !(sigma > 0.0) {
        return Err(domain("sigma must be positive"));
    }
    // Work in the lower tail; 1 - p is exact for p >= 0.5.
    let (q, sign) = if p < 0.5 { (p, 1.0) } else { (1.0 - p, -1.0) };
    let mut z = lower_tail_approx(q);
    let pdf = libm::exp(-0.5 * z * z) / libm::sqrt(2.0 * core::f64::consts::PI);
    if pdf > 0.0 {
        z -= (std_lower_tail(z) - q) / pdf;
    }
    Ok(mu + sigma * sign * z)
}

/// Acklam's approximation for `q <= 0.5`.
fn lower_tail_approx(q: f64) -> f64 {
    const A: [f64; 6] = [-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02, 1.383_577_518_672_69e2, -3.066479806614716e+01, 2.506628277459239e+00];
    const B: [f64; 5] = [-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02, 6.680131188771972e+01, -1.328068155288572e+01];
    const C: [f64; 6] = [-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00, -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00];
    const D: [f64; 4] = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
    const P_LOW: f64 = 0.02425;
    if q < P_LOW {
        let r = libm::sqrt(-2.0 * libm::log(q));
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5]) / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    } else {
        let s = q - 0.5;
        let r = s * s;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * s
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Mean and sample standard deviation of each considered layer's weights,
/// taken from the original model.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LayerStats {
    pub fn of(model: &Model, layers: &[usize]) -> Result<Self> {
        let mut mu = Vec::with_capacity(layers.len());
        let mut sigma = Vec::with_capacity(layers.len());
        for &l in layers {
            let w = model.layers.get(l).ok_or_else(|| Error::Layer { layer: l, detail: "no such layer".into() })?.weight.data();
            let s = sample_std(w);
            if !(s > 0.0) {
                return Err(Error::Layer { layer: l, detail: "weights have zero spread".into() });
            }
            mu.push(mean(w));
            sigma.push(s);
        }
        Ok(LayerStats { mu, sigma })
    }
}

/// Mask values `r_j = (2 u_j - 1) * rho * sigma[layer_of[j]]` for one tier.
pub fn mask_values(key: &SecretKey, layer_of: &[usize], stats: &LayerStats, rho: f64) -> Vec<f64> {
    let mut g = Fsprng::new(key);
    layer_of.iter().map(|&l| (2.0 * g.next_unit() - 1.0) * rho * stats.sigma[l]).collect()
}

/// Additive masking of one tier's values; `layer_of[j]` is the layer
/// position (into `stats`) of `values[j]`.
pub fn rand_mask(values: &[f64], layer_of: &[usize], key: &SecretKey, stats: &LayerStats, rho: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(domain("nothing to mask"));
    }
    if values.len() != layer_of.len() {
        return Err(domain("one layer position per value required"));
    }
    let r = mask_values(key, layer_of, stats, rho);
    Ok(values.iter().zip(r).map(|(v, r)| v + r).collect())
}

/// Scale bounds of one tier-layer cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

/// Min-max scale into the open unit interval and map through the inverse
/// Gaussian CDF. The stored bounds are padded past the extremes so every
/// scaled value is interior.
pub fn mapping(masked: &[f64], mu: f64, sigma: f64) -> Result<(Vec<f64>, Bounds)> {
    if masked.is_empty() {
        return Err(domain("mapping needs at least one value"));
    }
    let lo = masked.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = masked.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = f64::max(1e-9, 1e-6 * (hi - lo));
    let b = Bounds { lower: lo - pad, upper: hi + pad };
    let width = b.upper - b.lower;
    let out = masked
        .iter()
        .map(|&c| gaussian_icdf((c - b.lower) / width, mu, sigma))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, b))
}

/// Inverse of [`mapping`].
pub fn unmapping(cipher: &[f64], b: Bounds, mu: f64, sigma: f64) -> Vec<f64> {
    let width = b.upper - b.lower;
    cipher.iter().map(|&c| gaussian_cdf(c, mu, sigma) * width + b.lower).collect()
}

/// Everything encryption produces besides the protected model.
#[derive(Debug, Clone, PartialEq)]
pub struct CipherBundle {
    pub keys: Vec<SecretKey>,
    /// `bounds[m][i]`: bounds of tier `m + 1` in layer position `i`; `None`
    /// for empty cells.
    pub bounds: Vec<Vec<Option<Bounds>>>,
    pub stats: LayerStats,
    pub rho: f64,
    pub partition: DominatedPartition,
}

impl CipherBundle {
    pub fn tiers(&self) -> usize {
        self.partition.tiers
    }

    pub fn is_empty(&self) -> bool {
        self.partition.is_empty()
    }
}

/// Mask half-width in units of the layer's standard deviation. Min-max
/// scaling of `theta + mask` is only close to uniform when the mask is much
/// wider than the weight spread; at 8 the ramps at both ends are still
/// visible to a two-sample KS test.
pub const DEFAULT_RHO: f64 = 64.0;

/// Per-tier value lists in location order, with each value's layer position.
fn tier_layout(part: &DominatedPartition, m: usize) -> (Vec<(usize, usize)>, Vec<usize>) {
    let pos_of = |l: usize| part.layers.iter().position(|&x| x == l).unwrap();
    let locs = locate(part).swap_remove(m);
    let layer_of = locs.iter().map(|&(l, _)| pos_of(l)).collect();
    (locs, layer_of)
}

fn check_geometry(model: &Model, part: &DominatedPartition) -> Result<()> {
    if part.layers != model.considered() {
        return Err(Error::Geometry(alloc::format!(
            "partition covers layers {:?}, model considers {:?}",
            part.layers,
            model.considered()
        )));
    }
    for tier in &part.cells {
        if tier.len() != part.layers.len() {
            return Err(Error::Geometry("tier does not list every layer".into()));
        }
        for (cell, &l) in tier.iter().zip(&part.layers) {
            let layer = &model.layers[l];
            if layer.kind != LayerKind::Conv2d {
                return Err(Error::Layer { layer: l, detail: "only conv weights are encrypted".into() });
            }
            if let Some(&j) = cell.iter().find(|&&j| j >= layer.weight.len()) {
                return Err(Error::Geometry(alloc::format!("index {j} beyond layer {l}")));
            }
        }
    }
    Ok(())
}

/// Encrypt every tier of `part` in place of the original weights.
pub fn encrypt_model(model: &Model, part: &DominatedPartition, keys: &[SecretKey], rho: f64) -> Result<(Model, CipherBundle)> {
    check_geometry(model, part)?;
    if !(rho >= 0.0) {
        return Err(domain("mask scale must be non-negative"));
    }
    let stats = LayerStats::of(model, &part.layers)?;
    let mut protected = model.clone();
    let mut bounds = vec![vec![None; part.layers.len()]; part.tiers];
    for m in 0..part.tiers {
        let (locs, layer_of) = tier_layout(part, m);
        if locs.is_empty() {
            continue;
        }
        let key = keys.get(m).ok_or(Error::MissingKey { tier: m + 1 })?;
        let plain: Vec<f64> = locs.iter().map(|&(l, j)| model.layers[l].weight.data()[j]).collect();
        let masked = rand_mask(&plain, &layer_of, key, &stats, rho)?;
        for (i, &l) in part.layers.iter().enumerate() {
            let sel: Vec<usize> = (0..locs.len()).filter(|&k| layer_of[k] == i).collect();
            if sel.is_empty() {
                continue;
            }
            let cell: Vec<f64> = sel.iter().map(|&k| masked[k]).collect();
            let (cipher, b) = mapping(&cell, stats.mu[i], stats.sigma[i])?;
            let w = protected.layers[l].weight.data_mut();
            for (&k, c) in sel.iter().zip(cipher) {
                w[locs[k].1] = c;
            }
            bounds[m][i] = Some(b);
        }
    }
    let keys = keys.iter().take(part.tiers).cloned().collect();
    Ok((protected, CipherBundle { keys, bounds, stats, rho, partition: part.clone() }))
}

/// Decrypt the tiers a permission releases. Always apply to the pristine
/// protected model: decrypting an already decrypted tier again scrambles it.
pub fn decrypt_with_permission(protected: &Model, perm: &Permission) -> Result<Model> {
    perm.check_against(protected)?;
    let mut out = protected.clone();
    let layers = protected.considered();
    for item in &perm.items {
        let mut values = Vec::new();
        let mut layer_of = Vec::new();
        for (i, cell) in item.cells.iter().enumerate() {
            if cell.is_empty() {
                continue;
            }
            let b = item.bounds[i].ok_or_else(|| Error::Geometry(alloc::format!("missing bounds for layer position {i}")))?;
            let w = protected.layers[layers[i]].weight.data();
            let cipher: Vec<f64> = cell.iter().map(|&j| w[j]).collect();
            values.extend(unmapping(&cipher, b, perm.stats.mu[i], perm.stats.sigma[i]));
            layer_of.extend(core::iter::repeat_n(i, cell.len()));
        }
        let r = mask_values(&item.key, &layer_of, &perm.stats, perm.rho);
        let mut k = 0;
        for (i, cell) in item.cells.iter().enumerate() {
            let w = out.layers[layers[i]].weight.data_mut();
            for &j in cell {
                w[j] = values[k] - r[k];
                k += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::ks_two_sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn key(b: u8) -> SecretKey {
        SecretKey([b; 32])
    }

    #[test]
    fn stream_is_deterministic_and_key_sensitive() {
        assert_eq!(fsprng_stream(&key(7), 16), fsprng_stream(&key(7), 16));
        let mut k2 = key(7);
        k2.0[31] ^= 1;
        let (a, b) = (fsprng_stream(&key(7), 4), fsprng_stream(&k2, 4));
        assert!(a.iter().zip(&b).all(|(x, y)| x != y));
        assert!(a.iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn chain_continues_from_evolved_state() {
        let full = fsprng_stream(&key(3), 8);
        let mut g = Fsprng::new(&key(3));
        let first: Vec<f64> = (0..4).map(|_| g.next_unit()).collect();
        assert_eq!(first, full[..4]);
        assert_eq!(g.blocks_emitted(), 1);
        let mut resumed = Fsprng::resume(g.state());
        let rest: Vec<f64> = (0..4).map(|_| resumed.next_unit()).collect();
        assert_eq!(rest, full[4..]);
        assert_ne!(g.state(), key(3).0);
    }

    #[test]
    fn first_block_matches_hash_definition() {
        let mut input = [7u8; 33];
        input[32] = 0x01;
        let out: [u8; 32] = Sha256::digest(input).into();
        let w = u64::from_be_bytes(out[..8].try_into().unwrap());
        assert_eq!(fsprng_stream(&key(7), 1)[0], (w >> 11) as f64 / (1u64 << 53) as f64);
    }

    #[test]
    fn cdf_reference_values() {
        assert_eq!(gaussian_cdf(1.5, 1.5, 0.3), 0.5);
        assert_eq!(gaussian_icdf(0.5, 1.5, 0.3).unwrap(), 1.5);
        // Frozen from 50-digit quadrature of the normal density.
        assert!((gaussian_cdf(1.0, 0.0, 1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((gaussian_cdf(-0.2 + 2.0 * 0.7, -0.2, 0.7) - 0.977_249_868_051_820_8).abs() < 1e-15);
        assert!(gaussian_icdf(0.0, 0.0, 1.0).is_err());
        assert!(gaussian_icdf(1.0, 0.0, 1.0).is_err());
        assert!(gaussian_icdf(0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn icdf_inverts_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let mu: f64 = rng.random_range(-2.0..2.0);
            let sigma: f64 = rng.random_range(0.01..3.0);
            // cdf(x) rounds toward 1 in the upper tail, so icdf(cdf(x)) is
            // only checked where cdf keeps full resolution.
            let z: f64 = rng.random_range(-8.0..3.0);
            let x = mu + sigma * z;
            let back = gaussian_icdf(gaussian_cdf(x, mu, sigma), mu, sigma).unwrap();
            assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0), "z {z}: {x} -> {back}");
            let p: f64 = rng.random_range(1e-12..1.0);
            let q = gaussian_cdf(gaussian_icdf(p, mu, sigma).unwrap(), mu, sigma);
            assert!((q - p).abs() <= 4e-16 + 1e-13 * p, "{p} -> {q}");
        }
    }

    #[test]
    fn mask_examples() {
        let stats = LayerStats { mu: vec![0.0, 0.0], sigma: vec![0.2, 0.5] };
        let vals = [0.1, -0.3, 0.7, 0.05];
        let layer_of = [0, 1, 1, 0];
        assert_eq!(rand_mask(&vals, &layer_of, &key(1), &stats, 0.0).unwrap(), vals);
        let masked = rand_mask(&vals, &layer_of, &key(1), &stats, 8.0).unwrap();
        let r = mask_values(&key(1), &layer_of, &stats, 8.0);
        for ((m, r), (v, &l)) in masked.iter().zip(&r).zip(vals.iter().zip(&layer_of)) {
            assert!((m - r - v).abs() <= 1e-12 * 8.0 * stats.sigma[l]);
            assert!(r.abs() <= 8.0 * stats.sigma[l]);
        }
    }

    #[test]
    fn large_mask_decorrelates() {
        // corr(theta, theta + r) = 1 / sqrt(1 + rho^2 / 3) for theta with the
        // layer's spread: 0.2116 at rho = 8, 0.0270 at the default.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 10_000;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let vals: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let stats = LayerStats { mu: vec![0.0], sigma: vec![1.0] };
        let corr = |rho: f64| {
            let masked = rand_mask(&vals, &vec![0; n], &key(9), &stats, rho).unwrap();
            crate::analysis::pearson(&vals, &masked)
        };
        assert!((corr(8.0) - 0.2116).abs() < 0.02);
        assert!(corr(DEFAULT_RHO).abs() < 0.2);
    }

    #[test]
    fn mapping_examples() {
        let (c, b) = mapping(&[0.37], 0.1, 0.2).unwrap();
        assert_eq!(c, vec![0.1]);
        assert_eq!((b.lower, b.upper), (0.37 - 1e-9, 0.37 + 1e-9));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..5.0)).collect();
        let (cipher, b) = mapping(&vals, -0.01, 0.05).unwrap();
        for (v, back) in vals.iter().zip(unmapping(&cipher, b, -0.01, 0.05)) {
            assert!((v - back).abs() <= 1e-10);
        }
    }

    #[test]
    fn masked_mapping_is_gaussian() {
        // Plaintexts from three unrelated laws; after masking and mapping the
        // ciphertext should be indistinguishable from the target normal.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mu, sigma) = (0.02, 0.15);
        let stats = LayerStats { mu: vec![mu], sigma: vec![sigma] };
        let target = Normal::new(mu, sigma).unwrap();
        let mut passes = 0;
        for trial in 0..50u8 {
            let vals: Vec<f64> = (0..2000)
                .map(|i| match trial % 3 {
                    0 => rng.random_range(-0.3..0.3),
                    1 => target.sample(&mut rng),
                    _ => (if i % 2 == 0 { 0.3 } else { -0.2 }) + 0.01 * target.sample(&mut rng),
                })
                .collect();
            let masked = rand_mask(&vals, &vec![0; vals.len()], &key(trial), &stats, DEFAULT_RHO).unwrap();
            let (cipher, _) = mapping(&masked, mu, sigma).unwrap();
            let fresh: Vec<f64> = (0..2000).map(|_| target.sample(&mut rng)).collect();
            let (_, p) = ks_two_sample(&cipher, &fresh).unwrap();
            passes += (p >= 0.01) as usize;
        }
        assert!(passes >= 45, "{passes}/50 trials kept p >= 0.01");
    }
}
