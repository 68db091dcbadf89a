use std::sync::OnceLock;

use selcrypt_core::attacks::*;
use selcrypt_core::data::{fraction_slice, DeskData};
use selcrypt_core::dprm::{encrypt_model, SecretKey, DEFAULT_RHO};
use selcrypt_core::nn::{evaluate, train, TrainConfig};
use selcrypt_core::pss::{select_model, DominatedPartition, SelectConfig};
use selcrypt_core::{Dataset, Model};

struct Fixture {
    data: DeskData,
    model: Model,
    part: DominatedPartition,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let data = DeskData::new(42);
        let cfg = TrainConfig { epochs: 10, step_size: 0.02, seed: 42, ..TrainConfig::default() };
        let model = train(&Model::desk_reference(42), &data.train, &cfg).unwrap();
        let (_, part) = select_model(&model, &data.train, &SelectConfig::default()).unwrap();
        Fixture { data, model, part }
    })
}

#[test]
fn attacks_leave_other_layers_alone() {
    let f = fixture();
    let (protected, _) = encrypt_model(&f.model, &f.part, &SecretKey::derive_set(1, 5), DEFAULT_RHO).unwrap();
    let slice = fraction_slice(&f.data.train, 0.1, 0);
    for kind in [AttackKind::Wavelet(Wavelet::Haar), AttackKind::Wavelet(Wavelet::Db2), AttackKind::Filter(FilterKind::Median), AttackKind::Layerwise] {
        let mut spec = AttackSpec::new(kind, 0);
        spec.retrain.epochs = 1;
        let out = run_attack(&spec, &protected, &slice, None).unwrap();
        for l in [1, 3, 4, 5, 6] {
            assert_eq!(out.layers[l], protected.layers[l], "{} touched layer {l}", kind.name());
        }
    }
}

#[test]
fn zero_budget_retraining_is_a_no_op() {
    let f = fixture();
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let out = retrain_attack(&f.model, &f.data.train, &RetrainMode::Layerwise, &cfg).unwrap();
    assert_eq!(out, f.model);
    let empty = Dataset { inputs: vec![], targets: vec![] };
    assert!(retrain_attack(&f.model, &empty, &RetrainMode::Layerwise, &cfg).is_err());
}

#[test]
fn layerwise_retraining_does_not_damage_a_clear_model() {
    let f = fixture();
    let before = evaluate(&f.model, &f.data.test).unwrap();
    let cfg = AttackSpec::new(AttackKind::Layerwise, 1).retrain;
    let out = retrain_attack(&f.model, &f.data.train, &RetrainMode::Layerwise, &cfg).unwrap();
    let after = evaluate(&out, &f.data.test).unwrap();
    assert!(after >= before - 0.02, "{before} -> {after}");
}

#[test]
fn surrogate_locations_differ_from_the_truth() {
    let f = fixture();
    let other = DeskData::new(1042);
    let cfg = TrainConfig { epochs: 10, step_size: 0.02, seed: 1042, ..TrainConfig::default() };
    let surrogate = train(&Model::desk_reference(1042), &other.train, &cfg).unwrap();
    let guess = transfer_locations(&surrogate, &other.train, &SelectConfig::default()).unwrap();
    assert_eq!(guess.phi(), f.part.phi());
    let overlap = location_overlap(&guess, &f.part);
    assert!(overlap < 1.0, "{overlap}");
    assert_eq!(location_overlap(&f.part, &f.part), 1.0);
}

#[test]
fn attack_reports() {
    let f = fixture();
    let base = evaluate(&f.model, &f.data.test).unwrap();
    let (protected, _) = encrypt_model(&f.model, &f.part, &SecretKey::derive_set(2, 5), DEFAULT_RHO).unwrap();
    let goal = 0.25;
    assert!(evaluate_attack("none", &f.model, &f.data.test, goal, base).unwrap().success);
    assert!(!evaluate_attack("none", &protected, &f.data.test, goal, base).unwrap().success);
}
