//! Attacks on a protected model by someone who knows the architecture and
//! which layers are protected but not where the ciphertext sits: denoising
//! of the flattened weights (wavelets, 1-D filters) and retraining on a
//! small data slice.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{domain, Error, Result};
use crate::math::median;
use crate::nn::{evaluate, train_scoped, Dataset, Model, TrainConfig, Trainable};
use crate::pss::{select_model, DominatedPartition, SelectConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wavelet {
    Haar,
    Db2,
}

impl Wavelet {
    /// Orthonormal low-pass analysis filter.
    pub fn lowpass(self) -> Vec<f64> {
        let r2 = core::f64::consts::SQRT_2;
        match self {
            Wavelet::Haar => vec![1.0 / r2, 1.0 / r2],
            Wavelet::Db2 => {
                let s3 = libm::sqrt(3.0);
                let d = 4.0 * r2;
                vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
            }
        }
    }

    /// Quadrature mirror of the low-pass filter.
    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let n = h.len();
        (0..n).map(|j| if j % 2 == 0 { h[n - 1 - j] } else { -h[n - 1 - j] }).collect()
    }
}

/// One analysis step with periodic extension; `x.len()` must be even.
pub fn dwt_step(x: &[f64], wavelet: Wavelet) -> (Vec<f64>, Vec<f64>) {
    let (h, g) = (wavelet.lowpass(), wavelet.highpass());
    let n = x.len();
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for k in 0..half {
        for j in 0..h.len() {
            let v = x[(2 * k + j) % n];
            a[k] += h[j] * v;
            d[k] += g[j] * v;
        }
    }
    (a, d)
}

/// Inverse of [`dwt_step`].
pub fn idwt_step(a: &[f64], d: &[f64], wavelet: Wavelet) -> Vec<f64> {
    let (h, g) = (wavelet.lowpass(), wavelet.highpass());
    let n = 2 * a.len();
    let mut x = vec![0.0; n];
    for k in 0..a.len() {
        for j in 0..h.len() {
            x[(2 * k + j) % n] += h[j] * a[k] + g[j] * d[k];
        }
    }
    x
}

/// Multi-level decomposition: coarsest approximation plus details, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
}

/// `levels` analysis steps on a signal whose length is a power of two; the
/// depth is capped so every step sees at least as many samples as taps.
pub fn dwt(x: &[f64], wavelet: Wavelet, levels: usize) -> Result<Decomposition> {
    let taps = wavelet.lowpass().len();
    if x.len() < taps {
        return Err(domain(alloc::format!("signal of length {} is shorter than the {taps}-tap filter", x.len())));
    }
    if !x.len().is_power_of_two() {
        return Err(domain("DWT length must be a power of two"));
    }
    let mut approx = x.to_vec();
    let mut details = Vec::new();
    while details.len() < levels && approx.len() >= taps.max(2) {
        let (a, d) = dwt_step(&approx, wavelet);
        approx = a;
        details.push(d);
    }
    Ok(Decomposition { approx, details })
}

pub fn idwt(dec: &Decomposition, wavelet: Wavelet) -> Vec<f64> {
    let mut x = dec.approx.clone();
    for d in dec.details.iter().rev() {
        x = idwt_step(&x, d, wavelet);
    }
    x
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// `sigma * sqrt(2 ln n)` with `sigma = median(|d1|) / 0.6745`.
    Universal,
    Fixed(f64),
}

pub const WAVELET_LEVELS: usize = 3;

/// Edge-replicate to the next power of two, shrink the detail coefficients,
/// reconstruct and crop.
pub fn wavelet_denoise(x: &[f64], wavelet: Wavelet, levels: usize, rule: ThresholdRule) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(domain("empty signal"));
    }
    let n = x.len().next_power_of_two();
    let mut padded = x.to_vec();
    padded.resize(n, x[x.len() - 1]);
    let mut dec = dwt(&padded, wavelet, levels)?;
    let t = match rule {
        ThresholdRule::Fixed(t) => t,
        ThresholdRule::Universal => {
            let finest: Vec<f64> = dec.details.first().map(|d| d.iter().map(|v| v.abs()).collect()).unwrap_or_default();
            let sigma = if finest.is_empty() { 0.0 } else { median(&finest) / 0.6745 };
            sigma * libm::sqrt(2.0 * libm::log(n as f64))
        }
    };
    for d in &mut dec.details {
        d.iter_mut().for_each(|v| *v = soft_threshold(*v, t));
    }
    let mut y = idwt(&dec, wavelet);
    y.truncate(x.len());
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Average,
    Gaussian,
    Median,
}

/// Normalized Gaussian taps with `sigma = window / 6`.
pub fn gaussian_kernel(window: usize) -> Vec<f64> {
    let sigma = window as f64 / 6.0;
    let r = (window / 2) as f64;
    let k: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - r;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter().map(|v| v / s).collect()
}

/// Sliding-window filter with replicated edges.
pub fn filter_1d(x: &[f64], kind: FilterKind, window: usize) -> Result<Vec<f64>> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(domain(alloc::format!("filter window must be odd and at least 3, got {window}")));
    }
    let r = (window / 2) as isize;
    let n = x.len() as isize;
    let at = |i: isize| x[i.clamp(0, n - 1) as usize];
    let kernel = gaussian_kernel(window);
    let mut buf = vec![0.0; window];
    Ok((0..n)
        .map(|i| {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = at(i + k as isize - r);
            }
            match kind {
                FilterKind::Average => buf.iter().sum::<f64>() / window as f64,
                FilterKind::Gaussian => buf.iter().zip(&kernel).map(|(a, b)| a * b).sum(),
                FilterKind::Median => median(&buf),
            }
        })
        .collect())
}

fn map_considered(protected: &Model, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Model> {
    let mut out = protected.clone();
    for &l in protected.considered() {
        let y = f(protected.layers[l].weight.data())?;
        out.layers[l].weight.data_mut().copy_from_slice(&y);
    }
    Ok(out)
}

pub fn wavelet_attack(protected: &Model, wavelet: Wavelet, levels: usize, rule: ThresholdRule) -> Result<Model> {
    map_considered(protected, |w| wavelet_denoise(w, wavelet, levels, rule))
}

pub fn filter_attack(protected: &Model, kind: FilterKind, window: usize) -> Result<Model> {
    map_considered(protected, |w| filter_1d(w, kind, window))
}

#[derive(Debug, Clone, PartialEq)]
pub enum RetrainMode {
    /// Each considered layer in turn, weights and bias, everything else frozen.
    Layerwise,
    /// Only the given locations, found by selection on a surrogate model.
    Transfer(DominatedPartition),
}

pub fn retrain_attack(protected: &Model, data: &Dataset, mode: &RetrainMode, cfg: &TrainConfig) -> Result<Model> {
    if data.is_empty() {
        return Err(domain("attacker dataset is empty"));
    }
    match mode {
        RetrainMode::Layerwise => {
            let mut m = protected.clone();
            for &l in protected.considered() {
                m = train_scoped(&m, data, cfg, &Trainable::Layers(vec![l]))?;
            }
            Ok(m)
        }
        RetrainMode::Transfer(part) => {
            let mut masks = Vec::new();
            for (i, &l) in part.layers.iter().enumerate() {
                let n = protected.layers.get(l).ok_or(Error::Layer { layer: l, detail: "no such layer".into() })?.weight.len();
                let mut mask = vec![false; n];
                for j in part.selected(i) {
                    *mask.get_mut(j).ok_or(Error::Layer { layer: l, detail: "location out of range".into() })? = true;
                }
                masks.push((l, mask));
            }
            train_scoped(protected, data, cfg, &Trainable::Positions(masks))
        }
    }
}

/// Data family the reference transfer attacker trains its surrogate on; its
/// prototypes share nothing with the seed-42 classes.
pub const SURROGATE_FAMILY: u64 = 1042;

/// Dominated locations of a surrogate, all in one tier.
pub fn transfer_locations(surrogate: &Model, data: &Dataset, cfg: &SelectConfig) -> Result<DominatedPartition> {
    let (_, part) = select_model(surrogate, data, &SelectConfig { tiers: 1, ..*cfg })?;
    Ok(part)
}

/// Share of `truth`'s selected locations that `guess` also selects.
pub fn location_overlap(guess: &DominatedPartition, truth: &DominatedPartition) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, &l) in truth.layers.iter().enumerate() {
        let t = truth.selected(i);
        total += t.len();
        if let Some(gi) = guess.layers.iter().position(|&g| g == l) {
            let g = guess.selected(gi);
            hit += t.iter().filter(|j| g.binary_search(j).is_ok()).count();
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackKind {
    Wavelet(Wavelet),
    Filter(FilterKind),
    Layerwise,
    Transfer,
}

impl AttackKind {
    pub const ALL: [AttackKind; 7] = [
        AttackKind::Wavelet(Wavelet::Haar),
        AttackKind::Wavelet(Wavelet::Db2),
        AttackKind::Filter(FilterKind::Average),
        AttackKind::Filter(FilterKind::Gaussian),
        AttackKind::Filter(FilterKind::Median),
        AttackKind::Layerwise,
        AttackKind::Transfer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Wavelet(Wavelet::Haar) => "wavelet:haar",
            AttackKind::Wavelet(Wavelet::Db2) => "wavelet:db2",
            AttackKind::Filter(FilterKind::Average) => "filter:average",
            AttackKind::Filter(FilterKind::Gaussian) => "filter:gaussian",
            AttackKind::Filter(FilterKind::Median) => "filter:median",
            AttackKind::Layerwise => "retrain:layerwise",
            AttackKind::Transfer => "retrain:transfer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        AttackKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Attacker capabilities and budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Filter window; odd, at least 3.
    pub window: usize,
    pub levels: usize,
    /// Share of the training set the attacker holds.
    pub data_fraction: f64,
    pub retrain: TrainConfig,
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, seed: u64) -> Self {
        AttackSpec {
            kind,
            window: 3,
            levels: WAVELET_LEVELS,
            data_fraction: 0.10,
            retrain: TrainConfig { epochs: 10, seed, ..TrainConfig::default() },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(domain("attack window must be odd and at least 3"));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(domain("attacker data fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub attack: String,
    pub attacked: f64,
    pub baseline: f64,
    pub goal: f64,
    pub success: bool,
}

/// Success means reaching the goal; equality counts.
pub fn evaluate_attack(attack: &str, attacked: &Model, data: &Dataset, goal: f64, baseline: f64) -> Result<AttackReport> {
    let score = evaluate(attacked, data)?;
    Ok(AttackReport { attack: attack.into(), attacked: score, baseline, goal, success: score >= goal })
}

/// Apply one attack. `attacker_data` is the attacker's slice; `transfer`
/// supplies surrogate locations for [`AttackKind::Transfer`].
pub fn run_attack(spec: &AttackSpec, protected: &Model, attacker_data: &Dataset, transfer: Option<&DominatedPartition>) -> Result<Model> {
    spec.validate()?;
    match spec.kind {
        AttackKind::Wavelet(w) => wavelet_attack(protected, w, spec.levels, ThresholdRule::Universal),
        AttackKind::Filter(f) => filter_attack(protected, f, spec.window),
        AttackKind::Layerwise => retrain_attack(protected, attacker_data, &RetrainMode::Layerwise, &spec.retrain),
        AttackKind::Transfer => {
            let part = transfer.ok_or_else(|| domain("transfer attack needs surrogate locations"))?;
            retrain_attack(protected, attacker_data, &RetrainMode::Transfer(part.clone()), &spec.retrain)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn haar_hand_example() {
        let r2 = core::f64::consts::SQRT_2;
        let (a, d) = dwt_step(&[4.0, 2.0], Wavelet::Haar);
        assert!((a[0] - 3.0 * r2).abs() < 1e-12);
        assert!((d[0] - r2).abs() < 1e-12);
        assert_eq!(soft_threshold(r2, 2.0), 0.0);
        let y = wavelet_denoise(&[4.0, 2.0], Wavelet::Haar, 1, ThresholdRule::Fixed(2.0)).unwrap();
        assert!((y[0] - 3.0).abs() < 1e-12 && (y[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn soft_threshold_shrinks_toward_zero() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn filters_are_orthonormal() {
        for w in [Wavelet::Haar, Wavelet::Db2] {
            let (h, g) = (w.lowpass(), w.highpass());
            assert!((h.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(h.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-14);
            assert!((h.iter().sum::<f64>() - core::f64::consts::SQRT_2).abs() < 1e-14);
        }
    }

    #[test]
    fn perfect_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for w in [Wavelet::Haar, Wavelet::Db2] {
            for k in 2..11 {
                let x: Vec<f64> = (0..1usize << k).map(|_| rng.random_range(-3.0..3.0)).collect();
                let y = idwt(&dwt(&x, w, 5).unwrap(), w);
                let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err <= 1e-10, "{w:?} 2^{k}: {err}");
                // Zero threshold on an odd-length signal is also the identity.
                let z = wavelet_denoise(&x[..x.len() - 1], w, 3, ThresholdRule::Fixed(0.0)).unwrap();
                assert!(z.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 1e-10));
            }
        }
    }

    #[test]
    fn short_signal_is_rejected() {
        assert!(dwt(&[1.0, 2.0], Wavelet::Db2, 1).is_err());
        assert!(wavelet_denoise(&[1.0], Wavelet::Haar, 1, ThresholdRule::Universal).is_err());
    }

    #[test]
    fn filter_examples() {
        assert_eq!(filter_1d(&[1.0, 9.0, 1.0], FilterKind::Median, 3).unwrap(), vec![1.0, 1.0, 1.0]);
        let c = vec![2.5; 11];
        let avg = filter_1d(&c, FilterKind::Average, 3).unwrap();
        assert!(avg.iter().all(|v| (v - 2.5).abs() < 1e-15));
        for w in [3, 5, 9, 21] {
            assert!((gaussian_kernel(w).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(filter_1d(&c, FilterKind::Average, 4).is_err());
        assert!(filter_1d(&c, FilterKind::Median, 1).is_err());
    }

    #[test]
    fn report_boundary_is_inclusive() {
        use crate::nn::{Layer, Target, Task};
        use crate::tensor::Tensor;
        // Always predicts class 0 on a balanced 4-class set.
        let b = Tensor::new(&[4], vec![5.0, 0.0, 0.0, 0.0]).unwrap();
        let dense = Layer::dense(Tensor::zeros(&[4, 1]), b).unwrap();
        let m = Model::new(vec![dense, Layer::softmax()], vec![], Task::Classification).unwrap();
        let x = Tensor::new(&[1], vec![1.0]).unwrap();
        let data = Dataset::new(vec![x; 8], (0..8).map(|i| Target::Class(i % 4)).collect()).unwrap();
        let r = evaluate_attack("x", &m, &data, 0.25, 1.0).unwrap();
        assert_eq!(r.attacked, 0.25);
        assert!(r.success);
    }

    #[test]
    fn attack_names_round_trip() {
        for k in AttackKind::ALL {
            assert_eq!(AttackKind::parse(k.name()), Some(k));
        }
        assert_eq!(AttackKind::parse("wavelet:sym9"), None);
    }
}
