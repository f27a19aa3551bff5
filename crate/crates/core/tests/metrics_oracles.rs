use dclnet_core::metrics::{
    ahd, ahd_brute_force, aggregate, evaluate_case, mask_points, overlap_scores, ConfusionCounts,
};
use dclnet_core::volume::{Geometry, LabelVolume};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(rng: &mut impl Rng, n: usize, p: f64) -> Vec<u8> {
    (0..n).map(|_| u8::from(rng.random_bool(p))).collect()
}

#[test]
fn jaccard_dice_identity_and_ahd_oracle() {
    let g = Geometry::with_spacing([10, 10, 10], [1.0, 1.5, 0.8]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..60 {
        let p = rng.random_range(0.01..0.4);
        let a = random_mask(&mut rng, g.len(), p);
        let b = random_mask(&mut rng, g.len(), p);
        let s = overlap_scores(&ConfusionCounts::from_masks(&a, &b));
        let (d, j) = (s.dice.unwrap(), s.jaccard.unwrap());
        assert!((j - d / (2.0 - d)).abs() <= 1e-9);
        let (pa, pb) = (mask_points(&a, &g), mask_points(&b, &g));
        if pa.len() <= 500 && pb.len() <= 500 {
            let fast = ahd(&pa, &pb, g.spacing()).unwrap();
            assert_eq!(fast, ahd_brute_force(&pa, &pb, g.spacing()).unwrap());
            assert_eq!(fast, ahd(&pb, &pa, g.spacing()).unwrap());
        }
        assert_eq!(ahd(&pa, &pa, g.spacing()), Some(0.0));
    }
}

#[test]
fn ahd_on_far_apart_sparse_sets() {
    let a = vec![[0, 0, 0], [0, 0, 1]];
    let b = vec![[40, 40, 40], [39, 0, 0], [0, 33, 2]];
    let s = [0.7, 1.0, 2.0];
    assert_eq!(ahd(&a, &b, s), ahd_brute_force(&a, &b, s));
}

#[test]
fn aggregate_is_mean_of_subject_means() {
    let g = Geometry::unit([6, 6, 6]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let names = vec!["a".to_string(), "b".to_string()];
    let reports: Vec<_> = (0..4)
        .map(|i| {
            let mk = |rng: &mut ChaCha8Rng| {
                LabelVolume::new(g.clone(), names.clone(), vec![random_mask(rng, g.len(), 0.2), random_mask(rng, g.len(), 0.2)])
                    .unwrap()
            };
            let (p, t) = (mk(&mut rng), mk(&mut rng));
            (format!("s{i}"), evaluate_case(&p, &t).unwrap())
        })
        .collect();
    let agg = aggregate(&reports);
    let direct = reports.iter().map(|(_, r)| r.mean.dice.unwrap()).sum::<f64>() / 4.0;
    assert!((agg.dice.unwrap().mean - direct).abs() < 1e-15);
    assert_eq!(agg.dice.unwrap().n, 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_lie_in_unit_interval(a in proptest::collection::vec(0u8..2, 64), b in proptest::collection::vec(0u8..2, 64)) {
        let s = overlap_scores(&ConfusionCounts::from_masks(&a, &b));
        for v in [s.dice, s.jaccard, s.precision].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if let (Some(d), Some(j)) = (s.dice, s.jaccard) {
            prop_assert!(j <= d + 1e-15);
        }
    }

    #[test]
    fn grid_ahd_matches_brute_force(
        a in proptest::collection::vec((0i64..30, 0i64..30, 0i64..30), 1..60),
        b in proptest::collection::vec((0i64..30, 0i64..30, 0i64..30), 1..60),
    ) {
        let a: Vec<[i64; 3]> = a.into_iter().map(|(x, y, z)| [x, y, z]).collect();
        let b: Vec<[i64; 3]> = b.into_iter().map(|(x, y, z)| [x, y, z]).collect();
        let s = [1.0, 0.5, 2.0];
        prop_assert_eq!(ahd(&a, &b, s), ahd_brute_force(&a, &b, s));
    }
}
