mod common;

use std::collections::BTreeSet;

use common::*;
use kgdomain::domains::{fit_all_domains_with_stats, load_domains, save_domains};
use kgdomain::model::{Dissimilarity, Variant};
use kgdomain::{domain_penalty, fit_all_domains, DomainModel, FitConfig, Side};
use proptest::prelude::*;

fn quick_fit() -> FitConfig {
    FitConfig {
        epochs: 8,
        learning_rate: 1e-3,
        ..FitConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pipeline_covers_every_training_domain(seed in any::<u64>(), v in 0usize..3, min_members in 1usize..4) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 30, 5);
        let variant = [Variant::TransE, Variant::TransR, Variant::STransE][v];
        let m = random_model(&mut r, &g, variant, Dissimilarity::L1, 4, 3);
        let before = m.fingerprint();
        let cfg = FitConfig { min_members, ..quick_fit() };
        let (dm, stats) = fit_all_domains_with_stats(&g, &m, &cfg).unwrap();
        prop_assert_eq!(m.fingerprint(), before);
        prop_assert_eq!(dm.model_fingerprint, before);

        let expected = brute_force_domains(&g);
        let fitted: BTreeSet<_> = dm.ellipsoids.keys().copied().collect();
        prop_assert!(fitted.is_disjoint(&dm.skipped));
        let covered: BTreeSet<_> = fitted.union(&dm.skipped).copied().collect();
        let keys: BTreeSet<_> = expected.keys().copied().collect();
        prop_assert_eq!(covered, keys);
        for (key, members) in &expected {
            prop_assert_eq!(dm.skipped.contains(key), members.len() < min_members);
        }
        for e in dm.ellipsoids.values() {
            prop_assert_eq!(e.dim(), m.final_dim());
        }
        for s in &stats {
            if let (Some(a), Some(b)) = (s.initial_mean, s.final_mean) {
                prop_assert!(b <= a);
            }
        }
    }

    #[test]
    fn penalty_is_test_score_of_projection(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 25, 3);
        let m = random_model(&mut r, &g, Variant::STransE, Dissimilarity::L2, 3, 3);
        let dm = fit_all_domains(&g, &m, &quick_fit()).unwrap();
        for rel in 0..g.num_relations() as u32 {
            for side in Side::BOTH {
                for c in 0..g.num_entities() as u32 {
                    let p = domain_penalty(&dm, &m, c, rel, side).unwrap();
                    prop_assert_eq!(p, domain_penalty(&dm, &m, c, rel, side).unwrap());
                    let expected = match dm.get(rel, side) {
                        None => 0.0,
                        Some(e) => penalty(e, &project(&m, c, rel, side)),
                    };
                    prop_assert!((p - expected).abs() <= 1e-12 * (1.0 + expected));
                    prop_assert!(p >= 0.0);
                }
            }
        }
    }

    #[test]
    fn domain_file_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 25, 4);
        let m = random_model(&mut r, &g, Variant::TransR, Dissimilarity::L1, 3, 2);
        let dm = fit_all_domains(&g, &m, &FitConfig { min_members: 3, ..quick_fit() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        save_domains(&dm, &path).unwrap();
        prop_assert_eq!(load_domains(&path).unwrap(), dm);
    }
}

#[test]
fn fit_is_independent_of_thread_count() {
    let mut r = rng(3);
    let g = random_graph(&mut r, 40, 5);
    let m = random_model(&mut r, &g, Variant::TransE, Dissimilarity::L1, 6, 6);
    let run = |n: usize| -> DomainModel {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| fit_all_domains(&g, &m, &quick_fit()).unwrap())
    };
    assert_eq!(run(1).to_bytes(), run(4).to_bytes());
}

#[test]
fn loaded_against_another_model_is_stale() {
    let mut r = rng(8);
    let g = random_graph(&mut r, 20, 2);
    let m = random_model(&mut r, &g, Variant::TransE, Dissimilarity::L1, 3, 3);
    let other = random_model(&mut r, &g, Variant::TransE, Dissimilarity::L1, 3, 3);
    let dm = fit_all_domains(&g, &m, &quick_fit()).unwrap();
    let back = DomainModel::from_bytes(&dm.to_bytes()).unwrap();
    assert!(matches!(
        domain_penalty(&back, &other, 0, 0, Side::Tail),
        Err(kgdomain::Error::StaleDomainModel { .. })
    ));
}
