use dclnet_core::volume::{
    compose_affine, invert_affine, normalize_zscore, read_volume, resample_with_affine, scaling_affine,
    translation_affine, write_volume, Geometry, ResampleMode, Volume3D,
};
use proptest::prelude::*;

fn vol(dims: [usize; 3], data: Vec<f32>) -> Volume3D {
    Volume3D::new(Geometry::with_spacing(dims, [1.0, 1.2, 0.9]).unwrap(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn raw_round_trip_is_bit_exact(data in proptest::collection::vec(-1e6f32..1e6, 3 * 4 * 5)) {
        let v = vol([3, 4, 5], data);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        write_volume(&v, &p).unwrap();
        prop_assert_eq!(read_volume(&p).unwrap(), v);
    }

    #[test]
    fn zscore_is_idempotent_up_to_rounding(data in proptest::collection::vec(0.1f32..10.0, 2 * 3 * 4)) {
        let v = vol([2, 3, 4], data);
        let once = normalize_zscore(&v);
        let twice = normalize_zscore(&once);
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn nearest_resampling_only_produces_source_values(
        data in proptest::collection::vec(0u8..5, 4 * 4 * 4),
        shift in proptest::array::uniform3(-2.0f64..2.0),
    ) {
        let v = vol([4, 4, 4], data.iter().map(|&x| x as f32).collect());
        let t = translation_affine(shift);
        let out = resample_with_affine(&v, v.geometry(), Some(&t), ResampleMode::Nearest).unwrap();
        prop_assert!(out.data().iter().all(|x| data.iter().any(|&d| d as f32 == *x)));
        let id = resample_with_affine(&v, v.geometry(), None, ResampleMode::Trilinear).unwrap();
        prop_assert_eq!(id, v);
    }

    #[test]
    fn affine_inverse_composes_to_identity(s in proptest::array::uniform3(0.2f64..5.0), t in proptest::array::uniform3(-50.0f64..50.0)) {
        let a = compose_affine(&translation_affine(t), &scaling_affine(s));
        let i = compose_affine(&a, &invert_affine(&a).unwrap());
        for r in 0..4 {
            for c in 0..4 {
                let e = if r == c { 1.0 } else { 0.0 };
                prop_assert!((i[r][c] - e).abs() < 1e-12);
            }
        }
    }
}
