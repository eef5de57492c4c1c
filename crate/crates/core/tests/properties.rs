//! Property tests over the crate's structural invariants.

use fgsa_core::adapter::FeaturePyramid;
use fgsa_core::fgsattn::build_ring_partition;
use fgsa_core::metrics;
use fgsa_core::tensor::{
    fft2, fftshift, ifft2, ifftshift, load_checkpoint, read_tensor, save_checkpoint, write_tensor,
    CheckpointRecord, Tensor,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_round_trip_and_parseval(
        h in 2usize..20,
        w in 2usize..20,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let x = Tensor::from_vec(data.clone(), &[h, w]).unwrap();
        let spec = fft2(&x).unwrap();

        let spatial: f64 = data.iter().map(|v| v * v).sum();
        let spectral: f64 = spec
            .real
            .data()
            .iter()
            .zip(spec.imag.data().iter())
            .map(|(r, i)| r * r + i * i)
            .sum();
        prop_assert!((spectral - spatial).abs() <= 1e-10 * spatial.max(1.0));

        let back = ifft2(&spec).unwrap().data();
        for (a, b) in back.iter().zip(&data) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn shift_round_trip_all_parities(h in 2usize..17, w in 2usize..17) {
        let data: Vec<f64> = (0..h * w).map(|k| k as f64 * 0.37 - 1.0).collect();
        let spec = fft2(&Tensor::from_vec(data, &[h, w]).unwrap()).unwrap();
        let rt = ifftshift(&fftshift(&spec).unwrap()).unwrap();
        prop_assert_eq!(rt.real.data(), spec.real.data());
        prop_assert_eq!(rt.imag.data(), spec.imag.data());
    }

    #[test]
    fn tensor_serialization_round_trips(
        shape in prop::collection::vec(1usize..5, 1..4),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-1e6..1e6)).collect();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &shape, &data).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.shape(), shape);
        prop_assert_eq!(back.data(), data);
    }

    #[test]
    fn checkpoint_record_stream_round_trips(
        names in prop::collection::vec("[a-z]{1,12}(/[a-z]{1,8}){0,2}", 1..6),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let records: Vec<CheckpointRecord> = names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let len = 1 + (i % 5);
                CheckpointRecord {
                    name: format!("{name}/{i}"),
                    trainable: i % 2 == 0,
                    data: (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    shape: vec![len],
                }
            })
            .collect();
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &records).unwrap();
        prop_assert_eq!(load_checkpoint(&mut buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn pyramid_flatten_is_a_bijection(
        base in 1usize..5,
        d in 1usize..9,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let shapes = [(base * 4, base * 4), (base * 2, base * 2), (base, base)];
        let levels: Vec<Tensor> = shapes
            .iter()
            .map(|&(h, w)| {
                Tensor::from_vec(
                    (0..h * w * d).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                    &[h, w, d],
                )
                .unwrap()
            })
            .collect();
        let pyr = FeaturePyramid::from_levels(&levels).unwrap();
        let rows: usize = shapes.iter().map(|&(h, w)| h * w).sum();
        prop_assert_eq!(pyr.flat.shape(), vec![rows, d]);
        for (orig, back) in levels.iter().zip(pyr.unflatten().unwrap()) {
            prop_assert_eq!(orig.data(), back.data());
        }
    }

    #[test]
    fn ring_partition_always_disjoint_and_covering(
        h in 2usize..33,
        w in 2usize..33,
        d in 1usize..6,
    ) {
        prop_assume!(d <= h.min(w) / 2);
        let part = build_ring_partition(h, w, d).unwrap();
        let mut seen = vec![false; h * w];
        for ring in 0..part.n_rings {
            for &idx in part.bin_indices(ring) {
                prop_assert!(!seen[idx]);
                seen[idx] = true;
            }
        }
        prop_assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn metric_scores_bounded(
        seed in any::<u64>(),
        density in 0.0f64..1.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pred = Tensor::from_vec(
            (0..144).map(|_| rng.gen_range(0.0..1.0)).collect(),
            &[12, 12],
        )
        .unwrap();
        let gt = Tensor::from_vec(
            (0..144)
                .map(|_| if rng.gen_bool(density) { 1.0 } else { 0.0 })
                .collect(),
            &[12, 12],
        )
        .unwrap();
        for score in [
            metrics::s_measure(&pred, &gt, 0.5).unwrap(),
            metrics::e_measure_mean(&pred, &gt).unwrap(),
            metrics::weighted_f_measure(&pred, &gt, 1.0).unwrap(),
            metrics::mae(&pred, &gt).unwrap(),
        ] {
            prop_assert!((0.0..=1.0).contains(&score));
        }
    }
}
