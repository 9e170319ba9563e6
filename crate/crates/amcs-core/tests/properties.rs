//! Randomized property tests for the spec-level invariants.

use proptest::prelude::*;

use amcs_core::dataset::patches_per_axis;
use amcs_core::evaluation::psnr;
use amcs_core::image_io::GrayImage;
use amcs_core::inference::{crop, pad_symmetric, reassemble, tile};
use amcs_core::measurement::{MeasurementOperator, BLOCK_LEN};
use amcs_core::model_file::ChunkFile;
use amcs_core::tensor::{matmul, relu, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relu_is_idempotent(values in proptest::collection::vec(-10.0f32..10.0, 1..200)) {
        let n = values.len();
        let t = Tensor::new(vec![n], values).unwrap();
        let once = relu(&t);
        let twice = relu(&once);
        prop_assert_eq!(once.data(), twice.data());
        prop_assert!(once.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn matmul_identity_is_exact(values in proptest::collection::vec(-100.0f32..100.0, 16)) {
        let a = Tensor::new(vec![4, 4], values).unwrap();
        let eye = Tensor::from_fn(vec![4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        let left = matmul(&eye, &a).unwrap();
        let right = matmul(&a, &eye).unwrap();
        prop_assert_eq!(left.data(), a.data());
        prop_assert_eq!(right.data(), a.data());
    }

    #[test]
    fn measure_is_linear(
        seed in 0u64..1000,
        a in -3.0f32..3.0,
        b in -3.0f32..3.0,
    ) {
        let op = MeasurementOperator::fixed_gaussian(0.05, None, seed).unwrap();
        let mut rng = amcs_core::rng::SeededRng::new(seed ^ 0x55);
        let mut x1 = vec![0.0f32; BLOCK_LEN];
        let mut x2 = vec![0.0f32; BLOCK_LEN];
        rng.fill_normal(&mut x1, 1.0);
        rng.fill_normal(&mut x2, 1.0);
        let combined: Vec<f32> = x1.iter().zip(&x2).map(|(p, q)| a * p + b * q).collect();
        let lhs = op.measure(&combined).unwrap();
        let y1 = op.measure(&x1).unwrap();
        let y2 = op.measure(&x2).unwrap();
        for (l, (p, q)) in lhs.iter().zip(y1.iter().zip(&y2)) {
            let r = a * p + b * q;
            prop_assert!((l - r).abs() < 1e-4, "{} vs {}", l, r);
        }
    }

    #[test]
    fn pipeline_round_trip_is_identity(
        w in 1usize..200,
        h in 1usize..200,
        seed in 0u64..10_000,
    ) {
        let mut rng = amcs_core::rng::SeededRng::new(seed);
        let img = GrayImage::new(
            w,
            h,
            (0..w * h).map(|_| (rng.next_u64() & 0xff) as u8).collect(),
        )
        .unwrap();
        let (padded, spec) = pad_symmetric(&img, 33).unwrap();
        let tiled = tile(&padded, h, w, spec).unwrap();
        let back = crop(&reassemble(&tiled).unwrap(), h, w).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn patch_count_follows_formula(
        w in 33usize..150,
        h in 33usize..150,
    ) {
        let img = GrayImage::new(w, h, vec![7u8; w * h]).unwrap();
        let ds = amcs_core::dataset::extract_patches(
            &[("img".to_string(), img)],
            33,
            14,
        )
        .unwrap();
        let want = patches_per_axis(h, 33, 14) * patches_per_axis(w, 33, 14);
        prop_assert_eq!(ds.len(), want);
    }

    #[test]
    fn stronger_noise_never_raises_psnr(
        seed in 0u64..1000,
        alpha in 1.0f64..8.0,
    ) {
        let mut rng = amcs_core::rng::SeededRng::new(seed);
        let w = 40;
        let h = 30;
        let base: Vec<u8> = (0..w * h).map(|_| (rng.next_u64() & 0xff) as u8).collect();
        let noise: Vec<f64> = (0..w * h).map(|_| rng.normal() * 4.0).collect();
        let perturb = |scale: f64| -> GrayImage {
            GrayImage::new(
                w,
                h,
                base.iter()
                    .zip(&noise)
                    .map(|(&p, &n)| (p as f64 + scale * n).clamp(0.0, 255.0).round() as u8)
                    .collect(),
            )
            .unwrap()
        };
        let reference = GrayImage::new(w, h, base.clone()).unwrap();
        let weak = psnr(&reference, &perturb(1.0), 255.0).unwrap();
        let strong = psnr(&reference, &perturb(alpha), 255.0).unwrap();
        prop_assert!(strong <= weak + 1e-9, "psnr rose from {} to {}", weak, strong);
    }

    #[test]
    fn chunk_file_round_trip(
        values in proptest::collection::vec(-1e6f32..1e6, 1..64),
        name in "[a-z][a-z0-9_.]{0,12}",
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.amcs");
        let n = values.len();
        let mut file = ChunkFile::default();
        file.metadata.insert("format".into(), "test".into());
        file.chunks.push((name, Tensor::new(vec![n], values).unwrap()));
        file.save(&path).unwrap();
        let back = ChunkFile::load(&path).unwrap();
        prop_assert_eq!(back.chunks[0].1.data(), file.chunks[0].1.data());
        prop_assert_eq!(&back.chunks[0].0, &file.chunks[0].0);
    }
}
