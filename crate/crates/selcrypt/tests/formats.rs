use proptest::prelude::*;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand::rngs::StdRng;

use selcrypt::formats::*;
use selcrypt_core::data::SyntheticSpec;
use selcrypt_core::dprm::{encrypt_model, Bounds, LayerStats, SecretKey, DEFAULT_RHO};
use selcrypt_core::permission::{assign, size_bits, Permission, PermissionItem};
use selcrypt_core::pss::{partition_by_importance, phi_for, ImportanceMap};
use selcrypt_core::{Dataset, Model, Target, Tensor};

fn desk_bundle(seed: u64, fraction: f64, tiers: usize) -> (Model, selcrypt_core::dprm::CipherBundle, Vec<ImportanceMap>) {
    let model = Model::desk_reference(seed);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut maps = Vec::new();
    let mut sel = Vec::new();
    for &l in model.considered() {
        let n = model.layers[l].weight.len();
        maps.push(ImportanceMap { layer: l, values: (0..n).map(|_| rng.random_range(0.0..1.0)).collect() });
        let mut s = sample(&mut rng, n, phi_for(fraction, n)).into_vec();
        s.sort_unstable();
        sel.push(s);
    }
    let part = partition_by_importance(&sel, &maps, tiers).unwrap();
    let (protected, bundle) = encrypt_model(&model, &part, &SecretKey::derive_set(seed, tiers), DEFAULT_RHO).unwrap();
    (protected, bundle, maps)
}

#[test]
fn model_round_trip_is_byte_exact() {
    let (protected, _, _) = desk_bundle(1, 0.2, 3);
    let bytes = write_model(&protected);
    let back = read_model(&bytes).unwrap();
    assert_eq!(back, protected);
    assert_eq!(write_model(&back), bytes);
    // Plain models use the same layout.
    let plain = Model::desk_reference(1);
    assert_eq!(write_model(&plain).len(), bytes.len());
    assert_eq!(&write_model(&plain)[..4], b"SENC");
}

#[test]
fn model_header_errors() {
    let mut bytes = write_model(&Model::desk_reference(0));
    bytes[4] = 2;
    let e = read_model(&bytes).unwrap_err();
    assert_eq!(e, FormatError::Version { format: "SENC", found: 2 });
    assert!(e.to_string().contains("version 2"));
    bytes[4] = 1;
    bytes[1] ^= 0xff;
    assert_eq!(read_model(&bytes).unwrap_err().offset(), 0);
    bytes[1] ^= 0xff;
    let e = read_model(&bytes[..100]).unwrap_err();
    assert!(matches!(e, FormatError::Truncated { offset: 100, .. }), "{e}");
    bytes.push(0);
    assert!(matches!(read_model(&bytes).unwrap_err(), FormatError::Trailing { count: 1, .. }));
}

#[test]
fn considered_layers_are_validated_on_load() {
    let mut bytes = write_model(&Model::desk_reference(0));
    // The trailer ends with the u16 index of the last considered layer.
    let n = bytes.len();
    bytes[n - 2] = 5;
    assert!(matches!(read_model(&bytes).unwrap_err(), FormatError::Invalid { .. }));
}

#[test]
fn dataset_round_trips() {
    let d = SyntheticSpec::default().generate(25, 3);
    let bytes = write_dataset(&d);
    assert_eq!(read_dataset(&bytes).unwrap(), d);
    assert_eq!(bytes.len(), 5 + 4 + 16 + 1 + 25 * 64 * 8 + 25 * 4);

    let x = |v: f64| Tensor::new(&[2], vec![v, -v]).unwrap();
    let reg = Dataset::new(vec![x(1.0), x(2.0)], vec![Target::Values(x(0.5)), Target::Values(x(0.25))]).unwrap();
    assert_eq!(read_dataset(&write_dataset(&reg)).unwrap(), reg);
}

#[test]
fn importance_round_trips_with_and_without_partition() {
    let (_, bundle, maps) = desk_bundle(2, 0.1, 5);
    let f = ImportanceFile { maps: maps.clone(), partition: Some(bundle.partition.clone()) };
    assert_eq!(read_importance(&write_importance(&f)).unwrap(), f);
    let g = ImportanceFile { maps, partition: None };
    assert_eq!(read_importance(&write_importance(&g)).unwrap(), g);
}

#[test]
fn bundle_round_trips() {
    let (_, bundle, _) = desk_bundle(3, 0.1, 5);
    assert_eq!(read_bundle(&write_bundle(&bundle)).unwrap(), bundle);
}

#[test]
fn permission_errors_locate_the_problem() {
    let (_, bundle, _) = desk_bundle(4, 0.1, 5);
    let bytes = write_permission(&assign(&bundle, 3).unwrap());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(read_permission(&bad).unwrap_err().offset(), 0);

    // Header: magic, version, level, tiers, L, mu, sigma, rho.
    let l = 2;
    let header = 4 + 1 + 1 + 1 + 2 + 16 * l + 8;
    let e = read_permission(&bytes[..header + 10]).unwrap_err();
    assert!(e.to_string().contains("key of tier 1"), "{e}");
    // Skip tier 1 to land inside the key of tier 2.
    let p = assign(&bundle, 1).unwrap();
    let tier1 = write_permission(&p).len() - header;
    let e = read_permission(&bytes[..header + tier1 + 5]).unwrap_err();
    assert!(e.to_string().contains("key of tier 2"), "{e}");
    assert_eq!(e.offset(), header + tier1 + 5);
}

#[test]
fn serialized_permission_is_near_the_nominal_size() {
    let (_, bundle, _) = desk_bundle(5, 0.1, 5);
    let phi = bundle.partition.phi();
    let mean_phi = phi.iter().sum::<usize>() / phi.len();
    for level in 1..=5 {
        let bytes = write_permission(&assign(&bundle, level).unwrap()).len() as f64;
        let nominal = size_bits(level, 5, 2, mean_phi, 256) / 8.0;
        assert!(bytes <= 3.0 * nominal, "level {level}: {bytes} bytes vs nominal {nominal}");
    }
}

fn arb_permission() -> impl Strategy<Value = Permission> {
    (1usize..4, 1usize..6, any::<u64>()).prop_map(|(l, tiers, seed)| {
        let mut rng = StdRng::seed_from_u64(seed);
        let level = rng.random_range(1..=tiers);
        let items = (0..level)
            .map(|_| {
                let mut key = [0u8; 32];
                rng.fill(&mut key);
                let cells: Vec<Vec<usize>> = (0..l)
                    .map(|_| {
                        let n = rng.random_range(0..5);
                        let mut c = sample(&mut rng, 100, n).into_vec();
                        c.sort_unstable();
                        c
                    })
                    .collect();
                let bounds = cells
                    .iter()
                    .map(|c| (!c.is_empty()).then(|| Bounds { lower: rng.random_range(-1.0..0.0), upper: rng.random_range(0.0..1.0) }))
                    .collect();
                PermissionItem { key: SecretKey(key), bounds, cells }
            })
            .collect();
        let stats = LayerStats { mu: (0..l).map(|_| rng.random_range(-0.1..0.1)).collect(), sigma: (0..l).map(|_| rng.random_range(0.01..1.0)).collect() };
        Permission { level, tiers, stats, rho: 64.0, items }
    })
}

proptest! {
    #[test]
    fn permission_round_trip(p in arb_permission()) {
        let bytes = write_permission(&p);
        prop_assert_eq!(read_permission(&bytes).unwrap(), p);
    }

    #[test]
    fn distinct_permissions_serialize_differently(a in arb_permission(), b in arb_permission()) {
        prop_assume!(a != b);
        prop_assert_ne!(write_permission(&a), write_permission(&b));
    }

    #[test]
    fn truncation_never_panics(p in arb_permission(), cut in 0usize..400) {
        let bytes = write_permission(&p);
        let cut = cut.min(bytes.len().saturating_sub(1));
        prop_assert!(read_permission(&bytes[..cut]).is_err());
    }
}
