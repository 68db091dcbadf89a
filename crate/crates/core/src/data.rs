//! Seeded synthetic image classification data.
//!
//! Each class is a smooth 8x8 prototype built from a handful of signed
//! Gaussian blobs. Samples are randomly shifted, rescaled and noised copies
//! of their class prototype. A "family" seed picks the prototypes, so two
//! families give disjoint label sets over the same input space.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::{Dataset, Target};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub side: usize,
    pub blobs: usize,
    pub max_shift: i32,
    pub noise: f64,
    /// Chooses the class prototypes.
    pub family: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { classes: 10, side: 8, blobs: 3, max_shift: 1, noise: 1.2, family: 42 }
    }
}

impl SyntheticSpec {
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.family ^ 0x5eed_0f_c1a55);
        let s = self.side;
        (0..self.classes)
            .map(|_| {
                let mut img = alloc::vec![0.0; s * s];
                for _ in 0..self.blobs {
                    let cy = rng.random_range(0.0..s as f64);
                    let cx = rng.random_range(0.0..s as f64);
                    let width = rng.random_range(0.8..2.0);
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    for y in 0..s {
                        for x in 0..s {
                            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                            let d2 = dy * dy + dx * dx;
                            img[y * s + x] += sign * libm::exp(-d2 / (2.0 * width * width));
                        }
                    }
                }
                let norm = libm::sqrt(img.iter().map(|v| v * v).sum::<f64>() / (s * s) as f64);
                img.iter().map(|v| v / norm.max(1e-12)).collect()
            })
            .collect()
    }

    /// `n` samples with balanced, shuffled labels.
    pub fn generate(&self, n: usize, seed: u64) -> Dataset {
        let protos = self.prototypes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.noise).unwrap();
        let s = self.side;
        let mut inputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % self.classes;
            let dy = rng.random_range(-self.max_shift..=self.max_shift);
            let dx = rng.random_range(-self.max_shift..=self.max_shift);
            let amp = rng.random_range(0.8..1.2);
            let mut img = alloc::vec![0.0; s * s];
            for y in 0..s as i32 {
                for x in 0..s as i32 {
                    let (sy, sx) = (y - dy, x - dx);
                    let base = if sy >= 0 && sy < s as i32 && sx >= 0 && sx < s as i32 {
                        protos[c][sy as usize * s + sx as usize]
                    } else {
                        0.0
                    };
                    img[y as usize * s + x as usize] = amp * base + noise.sample(&mut rng);
                }
            }
            inputs.push(Tensor::new(&[1, s, s], img).expect("finite synthetic pixels"));
            targets.push(Target::Class(c));
        }
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        Dataset { inputs: order.iter().map(|&i| inputs[i].clone()).collect(), targets: order.iter().map(|&i| targets[i].clone()).collect() }
    }
}

/// Seeded sample of `ceil(fraction * len)` distinct samples, in ascending index order.
pub fn fraction_slice(data: &Dataset, fraction: f64, seed: u64) -> Dataset {
    let k = (libm::ceil(fraction * data.len() as f64) as usize).clamp(1, data.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, data.len(), k).into_vec();
    idx.sort_unstable();
    data.subset(&idx)
}

/// The pinned reference data: train and held-out test sets from one family.
#[derive(Debug, Clone)]
pub struct DeskData {
    pub train: Dataset,
    pub test: Dataset,
}

pub const DESK_SEED: u64 = 42;
pub const DESK_TRAIN: usize = 3000;
pub const DESK_TEST: usize = 1000;

impl DeskData {
    pub fn new(seed: u64) -> Self {
        let spec = SyntheticSpec { family: seed, ..SyntheticSpec::default() };
        DeskData { train: spec.generate(DESK_TRAIN, seed.wrapping_mul(2) + 1), test: spec.generate(DESK_TEST, seed.wrapping_mul(2) + 2) }
    }
}
