use dusty_inversion::{corrupt, kept_rows, Corruption, CorruptionSpec};
use dusty_lidar::{NormalizationSpec, RasterMap};
use proptest::prelude::*;

fn full(h: usize, w: usize, seed: u64) -> RasterMap {
    let values = (0..h * w)
        .map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f32 / 1000.0) * 1.9 - 0.95)
        .collect();
    RasterMap::new(h, w, values, NormalizationSpec::default()).unwrap()
}

#[test]
fn ninety_percent_drop_on_a_full_raster() {
    let x = full(64, 256, 0);
    for seed in 0..5 {
        let y = corrupt(&x, &CorruptionSpec::new(Corruption::random_drop(), seed)).unwrap();
        let kept = y.measured_count() as f64 / (64.0 * 256.0);
        assert!((kept - 0.1).abs() <= 0.01, "seed {seed}: kept {kept}");
    }
}

#[test]
fn eight_of_sixty_four_lines() {
    let x = full(64, 32, 1);
    let y = corrupt(&x, &CorruptionSpec::new(Corruption::keep_lines(64), 0)).unwrap();
    assert_eq!(y.measured_count(), 8 * 32);
    for r in kept_rows(64, 8) {
        assert_eq!(&y.values()[r * 32..(r + 1) * 32], &x.values()[r * 32..(r + 1) * 32]);
    }
}

#[test]
fn noise_has_the_requested_variance() {
    let x = RasterMap::new(64, 256, vec![0.0; 64 * 256], NormalizationSpec::default()).unwrap();
    let y = corrupt(&x, &CorruptionSpec::new(Corruption::noise(), 4)).unwrap();
    let n = y.values().len() as f64;
    let mean = y.values().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = y.values().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 3e-3, "mean {mean}");
    assert!((var - 0.01).abs() < 5e-4, "variance {var}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn same_seed_same_output(seed in any::<u64>(), p in 0.0f64..=1.0, k in 1usize..=16, var in 0.0f64..0.2) {
        let x = full(16, 24, seed % 97);
        for c in [Corruption::RandomDrop { p }, Corruption::KeepLines { k }, Corruption::Noise { variance: var, space: Default::default() }] {
            let spec = CorruptionSpec::new(c, seed);
            prop_assert_eq!(corrupt(&x, &spec).unwrap(), corrupt(&x, &spec).unwrap());
        }
    }

    #[test]
    fn drops_only_grow(seed in any::<u64>(), p in 0.0f64..=1.0, k in 1usize..=16) {
        let x = full(16, 24, seed % 89);
        for c in [Corruption::RandomDrop { p }, Corruption::KeepLines { k }] {
            let y = corrupt(&x, &CorruptionSpec::new(c, seed)).unwrap();
            for (a, b) in x.values().iter().zip(y.values()) {
                prop_assert!(b == a || *b == y.drop_value());
            }
        }
    }

    #[test]
    fn drop_masks_are_nested_in_p(seed in any::<u64>(), p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let x = full(16, 24, 3);
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let a = corrupt(&x, &CorruptionSpec::new(Corruption::RandomDrop { p: lo }, seed)).unwrap();
        let b = corrupt(&x, &CorruptionSpec::new(Corruption::RandomDrop { p: hi }, seed)).unwrap();
        prop_assert!(a.drop_indicator().drops_subset_of(&b.drop_indicator()));
    }
}
