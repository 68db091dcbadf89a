//! Statistical checks on protected models: two-sample KS tests and a binned
//! mutual-information proxy for ciphertext imperceptibility, degradation
//! curves per selection strategy, and the per-level hierarchy table.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dprm::{decrypt_with_permission, encrypt_model, mask_values, CipherBundle, LayerStats, SecretKey};
use crate::error::{domain, Result};
use crate::math::{mean, population_std};
use crate::nn::{evaluate, Dataset, Model};
use crate::permission::assign;
use crate::pss::{partition_from_maps, phi_for, top_k, DominatedPartition, ImportanceMap};

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / libm::sqrt(saa * sbb)
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-transformed series, fast for small lambda.
        let pi2 = core::f64::consts::PI * core::f64::consts::PI;
        let s: f64 = (1..=20)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                libm::exp(-j * j * pi2 / (8.0 * lambda * lambda))
            })
            .sum();
        (1.0 - libm::sqrt(2.0 * core::f64::consts::PI) / lambda * s).clamp(0.0, 1.0)
    } else {
        let mut p = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = 2.0 * libm::exp(-2.0 * kf * kf * lambda * lambda);
            p += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        p.clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov-Smirnov statistic and its asymptotic p-value with
/// effective size `n m / (n + m)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 8 || b.len() < 8 {
        return Err(domain(alloc::format!("KS needs at least 8 values per sample, got {} and {}", a.len(), b.len())));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    Ok((d, kolmogorov_sf(libm::sqrt(ne) * d)))
}

pub const MI_BINS: usize = 64;

fn bin_of(x: f64, lo: f64, width: f64) -> usize {
    if width <= 0.0 {
        return 0;
    }
    (((x - lo) / width * MI_BINS as f64) as usize).min(MI_BINS - 1)
}

/// Plug-in mutual information (nats) of paired samples and the entropy of
/// `x`, both over 64 equal-width bins spanning the joint range.
pub fn binned_mi(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len().min(y.len());
    if n == 0 {
        return (0.0, 0.0);
    }
    let lo = x.iter().chain(y).cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().chain(y).cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    let mut joint = vec![0usize; MI_BINS * MI_BINS];
    let mut px = vec![0usize; MI_BINS];
    let mut py = vec![0usize; MI_BINS];
    for k in 0..n {
        let (a, b) = (bin_of(x[k], lo, width), bin_of(y[k], lo, width));
        joint[a * MI_BINS + b] += 1;
        px[a] += 1;
        py[b] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for a in 0..MI_BINS {
        for b in 0..MI_BINS {
            let c = joint[a * MI_BINS + b];
            if c > 0 {
                let pxy = c as f64 / nf;
                mi += pxy * libm::log(pxy * nf * nf / (px[a] as f64 * py[b] as f64));
            }
        }
    }
    let hx = -px.iter().filter(|&&c| c > 0).map(|&c| c as f64 / nf).map(|p| p * libm::log(p)).sum::<f64>();
    (mi.max(0.0), hx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerKs {
    pub layer: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub n_cipher: usize,
    pub n_plain: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImperceptibilityReport {
    pub layers: Vec<LayerKs>,
    /// Layers with fewer than 8 ciphertext values.
    pub skipped: Vec<usize>,
    /// Binned MI between the effective noise `c - theta` and the ciphertext.
    pub mutual_information: f64,
    pub noise_entropy: f64,
    /// `mutual_information / noise_entropy`.
    pub equivocation: f64,
    /// Every tested layer kept `p >= 0.01`.
    pub indistinguishable: bool,
}

/// Ciphertext values and non-selected plaintext of each partition layer.
fn split_layer(model: &Model, part: &DominatedPartition, i: usize) -> (Vec<f64>, Vec<f64>) {
    let w = model.layers[part.layers[i]].weight.data();
    let sel = part.selected(i);
    let mut flag = vec![false; w.len()];
    sel.iter().for_each(|&j| flag[j] = true);
    let cipher = sel.iter().map(|&j| w[j]).collect();
    let plain = (0..w.len()).filter(|&j| !flag[j]).map(|j| w[j]).collect();
    (cipher, plain)
}

fn ks_by_layer(values_of: impl Fn(usize) -> (Vec<f64>, Vec<f64>), part: &DominatedPartition) -> (Vec<LayerKs>, Vec<usize>) {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (i, &l) in part.layers.iter().enumerate() {
        let (c, p) = values_of(i);
        match ks_two_sample(&c, &p) {
            Ok((d, pv)) => out.push(LayerKs { layer: l, statistic: d, p_value: pv, n_cipher: c.len(), n_plain: p.len() }),
            Err(_) => skipped.push(l),
        }
    }
    (out, skipped)
}

/// KS of ciphertext against non-selected plaintext per layer, plus the
/// binned MI proxy. The plaintext for the noise term is recovered with the
/// bundle's keys.
pub fn imperceptibility_report(protected: &Model, bundle: &CipherBundle) -> Result<ImperceptibilityReport> {
    let part = &bundle.partition;
    if part.is_empty() {
        return Ok(ImperceptibilityReport { indistinguishable: true, ..Default::default() });
    }
    let (layers, skipped) = ks_by_layer(|i| split_layer(protected, part, i), part);
    let plain = decrypt_with_permission(protected, &assign(bundle, bundle.tiers())?)?;
    let mut noise = Vec::new();
    let mut cipher = Vec::new();
    for (i, &l) in part.layers.iter().enumerate() {
        let (c, t) = (protected.layers[l].weight.data(), plain.layers[l].weight.data());
        for j in part.selected(i) {
            noise.push(c[j] - t[j]);
            cipher.push(c[j]);
        }
    }
    let (mi, h) = binned_mi(&noise, &cipher);
    let indistinguishable = layers.iter().all(|r| r.p_value >= 0.01);
    Ok(ImperceptibilityReport {
        layers,
        skipped,
        mutual_information: mi,
        noise_entropy: h,
        equivocation: if h > 0.0 { mi / h } else { 0.0 },
        indistinguishable,
    })
}

/// Ablation: KS of mask-only values (no mapping) against non-selected plaintext.
pub fn mask_only_ks(model: &Model, part: &DominatedPartition, keys: &[SecretKey], rho: f64) -> Result<Vec<LayerKs>> {
    let stats = LayerStats::of(model, &part.layers)?;
    let mut masked: Vec<Vec<f64>> = vec![Vec::new(); part.layers.len()];
    for (m, tier) in part.cells.iter().enumerate() {
        let layer_of: Vec<usize> = tier.iter().enumerate().flat_map(|(i, c)| core::iter::repeat_n(i, c.len())).collect();
        if layer_of.is_empty() {
            continue;
        }
        let key = keys.get(m).ok_or(crate::error::Error::MissingKey { tier: m + 1 })?;
        let r = mask_values(key, &layer_of, &stats, rho);
        let mut k = 0;
        for (i, cell) in tier.iter().enumerate() {
            let w = model.layers[part.layers[i]].weight.data();
            for &j in cell {
                masked[i].push(w[j] + r[k]);
                k += 1;
            }
        }
    }
    let (rows, _) = ks_by_layer(|i| (masked[i].clone(), split_layer(model, part, i).1), part);
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Pss,
    Random,
    /// Weights closest to the layer mean.
    Mean,
    /// Largest weights first.
    Descending,
    /// Smallest weights first.
    Ascending,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::Pss, Strategy::Random, Strategy::Mean, Strategy::Descending, Strategy::Ascending];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Pss => "pss",
            Strategy::Random => "random",
            Strategy::Mean => "mean",
            Strategy::Descending => "descending",
            Strategy::Ascending => "ascending",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Strategy::ALL.into_iter().find(|st| st.name() == s)
    }
}

/// Single-tier selection of `fraction` of every considered layer under a
/// strategy. `maps` is required for [`Strategy::Pss`].
pub fn select_by_strategy(
    model: &Model,
    strategy: Strategy,
    fraction: f64,
    maps: Option<&[ImportanceMap]>,
    seed: u64,
) -> Result<DominatedPartition> {
    let layers = model.considered().to_vec();
    if strategy == Strategy::Pss {
        let maps = maps.ok_or_else(|| domain("PSS strategy needs importance maps"))?;
        let mut p = partition_from_maps(maps, fraction, 1)?;
        p.layers = layers;
        return Ok(p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = Vec::new();
    for &l in &layers {
        let w = model.layers[l].weight.data();
        let k = phi_for(fraction, w.len());
        let idx = match strategy {
            Strategy::Random => {
                let mut v = sample(&mut rng, w.len(), k).into_vec();
                v.sort_unstable();
                v
            }
            Strategy::Mean => {
                let mu = mean(w);
                top_k(&w.iter().map(|x| -(x - mu).abs()).collect::<Vec<_>>(), k)?
            }
            Strategy::Descending => top_k(w, k)?,
            Strategy::Ascending => top_k(&w.iter().map(|x| -x).collect::<Vec<_>>(), k)?,
            Strategy::Pss => unreachable!(),
        };
        selected.push(idx);
    }
    Ok(DominatedPartition::single_tier(layers, selected))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub strategy: Strategy,
    pub fraction: f64,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveTable {
    pub rows: Vec<CurveRow>,
}

impl CurveTable {
    pub fn get(&self, strategy: Strategy, fraction: f64) -> Option<&CurveRow> {
        self.rows.iter().find(|r| r.strategy == strategy && r.fraction == fraction)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy,fraction,mean,std,trials\n");
        for r in &self.rows {
            s.push_str(&alloc::format!("{},{},{},{},{}\n", r.strategy.name(), r.fraction, r.mean, r.std, r.trials));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveConfig {
    pub trials: usize,
    pub rho: f64,
    pub seed: u64,
}

/// Score of one encrypted trial.
pub fn encrypted_score(model: &Model, data: &Dataset, part: &DominatedPartition, rho: f64, key_seed: u64) -> Result<f64> {
    let keys = SecretKey::derive_set(key_seed, part.tiers);
    let (protected, _) = encrypt_model(model, part, &keys, rho)?;
    evaluate(&protected, data)
}

/// Mean and spread of the encrypted score over trials, for every strategy
/// and fraction. Trial `t` uses key seed `seed + t`; random selection draws
/// from the same seed.
pub fn degradation_curve(
    model: &Model,
    data: &Dataset,
    maps: Option<&[ImportanceMap]>,
    strategies: &[Strategy],
    fractions: &[f64],
    cfg: &CurveConfig,
) -> Result<CurveTable> {
    if cfg.trials == 0 {
        return Err(domain("at least one trial required"));
    }
    let mut fr = fractions.to_vec();
    fr.sort_by(f64::total_cmp);
    if fr.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
        return Err(domain("fractions must lie in [0, 1]"));
    }
    let base = evaluate(model, data)?;
    let mut rows = Vec::new();
    for &strategy in strategies {
        for &f in &fr {
            let scores = if f == 0.0 {
                vec![base; cfg.trials]
            } else {
                let mut fixed = None;
                let mut v = Vec::with_capacity(cfg.trials);
                for t in 0..cfg.trials as u64 {
                    let part = match (strategy, &fixed) {
                        (Strategy::Random, _) => select_by_strategy(model, strategy, f, maps, cfg.seed + t)?,
                        (_, Some(p)) => DominatedPartition::clone(p),
                        (_, None) => {
                            let p = select_by_strategy(model, strategy, f, maps, cfg.seed)?;
                            fixed = Some(p.clone());
                            p
                        }
                    };
                    v.push(encrypted_score(model, data, &part, cfg.rho, cfg.seed + t)?);
                }
                v
            };
            rows.push(CurveRow { strategy, fraction: f, mean: mean(&scores), std: population_std(&scores), trials: cfg.trials });
        }
    }
    Ok(CurveTable { rows })
}

/// Scores of the models released at levels `0..=M`; level 0 is the
/// protected model itself.
pub fn hierarchy_table(protected: &Model, bundle: &CipherBundle, data: &Dataset) -> Result<Vec<f64>> {
    let mut out = vec![evaluate(protected, data)?];
    for m in 1..=bundle.tiers() {
        let perm = assign(bundle, m)?;
        out.push(evaluate(&decrypt_with_permission(protected, &perm)?, data)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn ks_examples() {
        let a: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        assert_eq!(ks_two_sample(&a, &a).unwrap(), (0.0, 1.0));
        let (d, p) = ks_two_sample(&[0.0; 8], &[1.0; 8]).unwrap();
        assert_eq!(d, 1.0);
        assert!(p < 0.01);
        assert!(ks_two_sample(&[0.0; 7], &[1.0; 8]).is_err());
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // Both series are valid everywhere; compare them near the switch.
        for lam in [0.9, 1.0, 1.1, 1.18, 1.3] {
            let a = kolmogorov_sf(lam);
            let mut b = 0.0;
            for k in 1..=200 {
                let kf = k as f64;
                b += if k % 2 == 1 { 2.0 } else { -2.0 } * libm::exp(-2.0 * kf * kf * lam * lam);
            }
            assert!((a - b).abs() < 1e-12, "{lam}: {a} vs {b}");
        }
        // Reference values from scipy.special.kolmogorov.
        assert!((kolmogorov_sf(1.36) - 0.049_485_876_755_378).abs() < 1e-12);
        assert!((kolmogorov_sf(1.63) - 0.009_846_364_888_487).abs() < 1e-12);
    }

    /// D for every interleaving of two 4-point samples, computed by walking
    /// the lattice path of the merged order.
    #[test]
    fn ks_matches_exact_enumeration_for_four_by_four() {
        let mut hist = [0usize; 5];
        for mask in 0u32..256 {
            if mask.count_ones() != 4 {
                continue;
            }
            let (mut a, mut b) = (Vec::new(), Vec::new());
            let (mut ia, mut ib, mut dmax) = (0i32, 0i32, 0i32);
            for pos in 0..8 {
                if mask >> pos & 1 == 1 {
                    a.push(pos as f64);
                    ia += 1;
                } else {
                    b.push(pos as f64);
                    ib += 1;
                }
                dmax = dmax.max((ia - ib).abs());
            }
            // Two copies of each point keep the sample size legal without
            // changing either ECDF.
            let a2: Vec<f64> = a.iter().chain(&a).copied().collect();
            let b2: Vec<f64> = b.iter().chain(&b).copied().collect();
            let (d, _) = ks_two_sample(&a2, &b2).unwrap();
            assert_eq!(d, dmax as f64 / 4.0);
            hist[dmax as usize] += 1;
        }
        // Exact null distribution of 4*D for m = n = 4 over C(8,4) = 70 orderings.
        assert_eq!(hist, [0, 16, 38, 14, 2]);
    }

    #[test]
    fn ks_calibration_under_the_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let trials = 1000;
        let kept = (0..trials)
            .filter(|_| {
                let a: Vec<f64> = (0..500).map(|_| normal.sample(&mut rng)).collect();
                let b: Vec<f64> = (0..500).map(|_| normal.sample(&mut rng)).collect();
                ks_two_sample(&a, &b).unwrap().1 > 0.01
            })
            .count();
        assert!(kept >= 990, "{kept}/1000");
    }

    #[test]
    fn mi_is_small_for_independent_and_large_for_dependent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..20_000).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..20_000).map(|_| rng.random_range(0.0..1.0)).collect();
        let (mi, h) = binned_mi(&x, &y);
        assert!((0.0..0.15).contains(&mi), "{mi}");
        assert!((h - libm::log(64.0)).abs() < 0.01);
        let (mi_dep, _) = binned_mi(&x, &x);
        assert!((mi_dep - h).abs() < 1e-9);
    }
}
