use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use selcrypt_core::analysis::*;
use selcrypt_core::data::SyntheticSpec;
use selcrypt_core::dprm::{encrypt_model, LayerStats, SecretKey, DEFAULT_RHO};
use selcrypt_core::pss::{phi_for, DominatedPartition};
use selcrypt_core::Model;

fn random_single_tier(model: &Model, fraction: f64, seed: u64) -> DominatedPartition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sel = model
        .considered()
        .iter()
        .map(|&l| {
            let n = model.layers[l].weight.len();
            sample(&mut rng, n, phi_for(fraction, n)).into_vec()
        })
        .collect();
    DominatedPartition::single_tier(model.considered().to_vec(), sel)
}

#[test]
fn empty_partition_gives_empty_report() {
    let model = Model::desk_reference(0);
    let part = DominatedPartition::empty(1, model.considered().to_vec());
    let (protected, bundle) = encrypt_model(&model, &part, &[], DEFAULT_RHO).unwrap();
    let r = imperceptibility_report(&protected, &bundle).unwrap();
    assert!(r.layers.is_empty() && r.skipped.is_empty());
    assert_eq!(r.mutual_information, 0.0);
}

#[test]
fn ideal_ciphertext_is_not_rejected() {
    // Gaussian draws in place of the selected weights of a Gaussian layer.
    let model = Model::desk_reference(1);
    let stats = LayerStats::of(&model, &[2]).unwrap();
    let normal = Normal::new(stats.mu[0], stats.sigma[0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = model.layers[2].weight.data();
    let kept = (0..100)
        .filter(|&t| {
            let part = random_single_tier(&model, 0.5, t);
            let sel = part.selected(1);
            let cipher: Vec<f64> = sel.iter().map(|_| normal.sample(&mut rng)).collect();
            let plain: Vec<f64> = (0..w.len()).filter(|j| sel.binary_search(j).is_err()).map(|j| w[j]).collect();
            ks_two_sample(&cipher, &plain).unwrap().1 >= 0.01
        })
        .count();
    assert!(kept >= 95, "{kept}/100");
}

#[test]
fn report_on_real_ciphertext() {
    let model = Model::desk_reference(2);
    let part = random_single_tier(&model, 0.5, 3);
    let (protected, bundle) = encrypt_model(&model, &part, &SecretKey::derive_set(3, 1), DEFAULT_RHO).unwrap();
    let r = imperceptibility_report(&protected, &bundle).unwrap();
    assert_eq!(r.layers.len(), 2);
    assert!(r.skipped.is_empty());
    for row in &r.layers {
        assert!((0.0..=1.0).contains(&row.statistic) && (0.0..=1.0).contains(&row.p_value));
    }
    assert_eq!(r.layers[1].n_cipher, 576);
    assert!(r.mutual_information >= 0.0 && r.equivocation <= 1.0);
}

#[test]
fn tiny_layers_are_skipped() {
    let model = Model::desk_reference(2);
    let part = random_single_tier(&model, 0.05, 3);
    let (protected, bundle) = encrypt_model(&model, &part, &SecretKey::derive_set(3, 1), DEFAULT_RHO).unwrap();
    let r = imperceptibility_report(&protected, &bundle).unwrap();
    // conv1 has 4 ciphertext values.
    assert_eq!(r.skipped, vec![0]);
    assert_eq!(r.layers.len(), 1);
}

#[test]
fn mask_without_mapping_is_detected() {
    let model = Model::desk_reference(4);
    let rejected = (0..20)
        .filter(|&t| {
            let part = random_single_tier(&model, 0.5, t);
            let rows = mask_only_ks(&model, &part, &SecretKey::derive_set(t, 1), 8.0).unwrap();
            rows.iter().find(|r| r.layer == 2).unwrap().p_value < 0.01
        })
        .count();
    assert_eq!(rejected, 20);
}

#[test]
fn curves_are_reproducible_and_anchored() {
    let model = Model::desk_reference(5);
    let data = SyntheticSpec::default().generate(60, 1);
    let cfg = CurveConfig { trials: 1, rho: DEFAULT_RHO, seed: 4 };
    let strategies = [Strategy::Random, Strategy::Mean, Strategy::Descending, Strategy::Ascending];
    let a = degradation_curve(&model, &data, None, &strategies, &[0.5, 0.0, 0.2], &cfg).unwrap();
    assert_eq!(a, degradation_curve(&model, &data, None, &strategies, &[0.5, 0.0, 0.2], &cfg).unwrap());
    let base = selcrypt_core::nn::evaluate(&model, &data).unwrap();
    for s in strategies {
        assert_eq!(a.get(s, 0.0).unwrap().mean, base);
    }
    let fr: Vec<f64> = a.rows.iter().take(3).map(|r| r.fraction).collect();
    assert_eq!(fr, vec![0.0, 0.2, 0.5]);
    assert!(a.to_csv().starts_with("strategy,fraction,mean,std,trials\nrandom,0,"));
    assert!(degradation_curve(&model, &data, None, &[Strategy::Pss], &[0.1], &cfg).is_err());
    assert!(degradation_curve(&model, &data, None, &strategies, &[0.1], &CurveConfig { trials: 0, ..cfg }).is_err());
}

#[test]
fn strategies_select_what_they_claim() {
    let model = Model::desk_reference(6);
    let w = model.layers[0].weight.data();
    let top = select_by_strategy(&model, Strategy::Descending, 0.1, None, 0).unwrap().selected(0);
    let bottom = select_by_strategy(&model, Strategy::Ascending, 0.1, None, 0).unwrap().selected(0);
    let min_top = top.iter().map(|&j| w[j]).fold(f64::INFINITY, f64::min);
    let max_bottom = bottom.iter().map(|&j| w[j]).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(top.len(), 8);
    assert_eq!(w.iter().filter(|&&v| v >= min_top).count(), 8);
    assert_eq!(w.iter().filter(|&&v| v <= max_bottom).count(), 8);
    let r1 = select_by_strategy(&model, Strategy::Random, 0.1, None, 1).unwrap();
    let r2 = select_by_strategy(&model, Strategy::Random, 0.1, None, 2).unwrap();
    assert_ne!(r1, r2);
    assert_eq!(Strategy::parse("mean"), Some(Strategy::Mean));
}
