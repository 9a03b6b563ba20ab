use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{CameraIntrinsics, PoseSE3};
use crate::losses::{objective, LossWeights, ObjectiveInputs};

fn small(variant: Variant) -> NetworkConfig {
    NetworkConfig {
        variant,
        stage_channels: vec![4, 6],
        blocks_per_stage: 1,
        pac_kernel: 3,
        guidance_channels: 2,
        depth_range: (0.1, 100.0),
    }
}

fn random_image(seed: u64, h: usize, w: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[1, 3, h, w], |_| rng.gen_range(0.0..1.0))
}

fn random_sparse(seed: u64, h: usize, w: usize, keep: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[1, 1, h, w], |_| if rng.gen_bool(keep) { rng.gen_range(1.0..8.0) } else { 0.0 })
}

fn run(config: &NetworkConfig, store: &ParameterStore<f64>, image: &Tensor<f64>, sparse: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let tape = Tape::new();
    let p = store.bind(&tape);
    let img = tape.constant(image.clone());
    let pred = forward(config, &p, &img, sparse).unwrap();
    let inv = (*pred.inv_depth.value()).clone();
    let depth = (*pred.depth.value()).clone();
    (inv, depth)
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn inverse_depth_mapping() {
    let tape = Tape::<f64>::new();
    let d = tape.constant(Tensor::from_vec(vec![3], vec![0.5, 1e-12, 1.0 - 1e-12]).unwrap());
    let depth = invdepth_to_depth(&d, (0.1, 100.0)).value();
    assert!((depth.data()[0] - 1.0 / 5.005).abs() < 1e-12);
    assert!((depth.data()[1] - 100.0).abs() < 1e-6);
    assert!((depth.data()[2] - 0.1).abs() < 1e-9);
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Variant>(&json).unwrap(), v);
    }
    assert!("3e-2d".parse::<Variant>().is_err());
}

#[test]
fn config_json_rejects_unknown_keys_and_bad_values() {
    let c: NetworkConfig = serde_json::from_str(r#"{"variant": "2es-1d", "stage_channels": [8, 16]}"#).unwrap();
    assert_eq!(c.variant, Variant::DualSparse);
    assert_eq!(c.blocks_per_stage, 2);
    assert!(serde_json::from_str::<NetworkConfig>(r#"{"widht": 3}"#).is_err());
    for bad in [
        NetworkConfig {
            stage_channels: vec![8],
            ..Default::default()
        },
        NetworkConfig {
            pac_kernel: 4,
            ..Default::default()
        },
        NetworkConfig {
            depth_range: (1.0, 0.5),
            ..Default::default()
        },
        NetworkConfig {
            depth_range: (0.0, 10.0),
            ..Default::default()
        },
    ] {
        assert!(matches!(bad.validate(), Err(NetworkError::Config(_))));
    }
}

#[test]
fn output_shape_and_range_for_every_variant() {
    let (h, w) = (12, 16);
    for v in Variant::ALL {
        let config = small(v);
        let store = init_parameters::<f64>(&config, 3).unwrap();
        assert_eq!(store.scalar_count(), config.parameter_count().unwrap());
        store.check_layout(&config).unwrap();
        for keep in [0.0, 0.1, 1.0] {
            let (inv, depth) = run(&config, &store, &random_image(1, h, w), &random_sparse(2, h, w, keep));
            assert_eq!(inv.shape(), &[1, 1, h, w]);
            assert!(inv.data().iter().all(|x| *x > 0.0 && *x < 1.0), "{v}");
            assert!(depth.data().iter().all(|d| *d >= 0.1 && *d <= 100.0));
        }
    }
}

#[test]
fn indivisible_resolution_is_rejected() {
    let config = small(Variant::DualSparsePac);
    let store = init_parameters::<f64>(&config, 0).unwrap();
    let tape = Tape::new();
    let p = store.bind(&tape);
    let img = tape.constant(random_image(0, 10, 16));
    let err = forward(&config, &p, &img, &random_sparse(0, 10, 16, 0.5)).err().unwrap();
    assert!(matches!(err, NetworkError::Resolution { factor: 4, .. }));
}

#[test]
fn pac_variant_with_grey_image_equals_plain_fusion() {
    let pac = small(Variant::DualSparsePac);
    let plain = small(Variant::DualSparse);
    let store = init_parameters::<f64>(&pac, 4).unwrap();
    let grey = Tensor::full(&[1, 3, 12, 16], 0.5);
    let sparse = random_sparse(5, 12, 16, 0.2);
    let (a, _) = run(&pac, &store, &grey, &sparse);
    let (b, _) = run(&plain, &store, &grey, &sparse);
    assert!(max_diff(&a, &b) < 1e-12, "{}", max_diff(&a, &b));
    let (c, _) = run(&pac, &store, &random_image(6, 12, 16), &sparse);
    let (d, _) = run(&plain, &store, &random_image(6, 12, 16), &sparse);
    assert!(max_diff(&c, &d) > 1e-6);
}

#[test]
fn sparse_variant_with_full_mask_equals_dense_encoder() {
    let sparse_cfg = small(Variant::DualSparse);
    let dense_cfg = small(Variant::DualEncoder);
    let mut store = init_parameters::<f64>(&sparse_cfg, 7).unwrap();
    // zero biases would make masking a no-op on unobserved pixels
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    for (_, t) in store.iter_mut().filter(|(n, _)| n.ends_with(".b")) {
        t.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    let img = random_image(8, 12, 16);
    let full = random_sparse(9, 12, 16, 1.0);
    let (a, _) = run(&sparse_cfg, &store, &img, &full);
    let (b, _) = run(&dense_cfg, &store, &img, &full);
    assert!(max_diff(&a, &b) < 1e-12);
    let partial = random_sparse(9, 12, 16, 0.05);
    let (c, _) = run(&sparse_cfg, &store, &img, &partial);
    let (d, _) = run(&dense_cfg, &store, &img, &partial);
    assert!(max_diff(&c, &d) > 1e-9);
}

#[test]
fn init_is_seeded() {
    let config = small(Variant::DualSparsePac);
    let a = init_parameters::<f32>(&config, 11).unwrap();
    assert_eq!(a, init_parameters::<f32>(&config, 11).unwrap());
    assert_ne!(a, init_parameters::<f32>(&config, 12).unwrap());
    assert!(a
        .iter()
        .filter(|(n, _)| n.ends_with(".b") && *n != "head.b")
        .all(|(_, t)| t.max_abs() == 0.0));
}

#[test]
fn initial_depth_sits_inside_the_range() {
    let config = NetworkConfig::default();
    let store = init_parameters::<f32>(&config, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = Tensor::from_fn(&[1, 3, 32, 48], |_| rng.gen_range(0.0f32..1.0));
    let sparse = Tensor::from_fn(&[1, 1, 32, 48], |i| if i % 17 == 0 { 4.0f32 } else { 0.0 });
    let depth = predict_depth(&config, &store, &img, &sparse).unwrap();
    let mean = depth.data().iter().map(|d| *d as f64).sum::<f64>() / depth.len() as f64;
    assert!((1.0..=10.0).contains(&mean), "{mean}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let config = small(Variant::DualSparsePac);
    let store = init_parameters::<f32>(&config, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &config, &store).unwrap();
    let (cfg, back) = load_checkpoint(&path).unwrap();
    assert_eq!(cfg, config);
    for ((na, a), (nb, b)) in store.iter().zip(back.iter()) {
        assert_eq!(na, nb);
        assert_eq!(a.shape(), b.shape());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn corrupted_checkpoints_are_reported() {
    let config = small(Variant::DualSparse);
    let store = init_parameters::<f32>(&config, 2).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &config, &store).unwrap();

    let mut wrong_version = bytes.clone();
    wrong_version[4] = 9;
    assert!(matches!(
        read_checkpoint(wrong_version.as_slice()),
        Err(NetworkError::Version { found: 9, .. })
    ));
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(matches!(read_checkpoint(wrong_magic.as_slice()), Err(NetworkError::Checkpoint(_))));
    let truncated = &bytes[..bytes.len() - 3];
    assert!(matches!(read_checkpoint(truncated), Err(NetworkError::Checkpoint(_))));
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(read_checkpoint(trailing.as_slice()), Err(NetworkError::Checkpoint(_))));

    let other = NetworkConfig {
        stage_channels: vec![4, 8],
        ..config.clone()
    };
    match store.check_layout(&other) {
        Err(NetworkError::ParameterShape { name, .. }) => assert!(name.starts_with("rgb1"), "{name}"),
        r => panic!("unexpected {r:?}"),
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let (h, w) = (12, 16);
    let k = CameraIntrinsics::from_fov(w, h, 60f64.to_radians()).unwrap();
    let pose = PoseSE3::exp(&nalgebra::Vector6::new(0.05, 0.0, 0.02, 0.0, 0.01, 0.0));
    for v in Variant::ALL {
        let config = small(v);
        let store = init_parameters::<f64>(&config, 13).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let target = tape.constant(random_image(14, h, w));
        let sources = [tape.constant(random_image(15, h, w)), tape.constant(random_image(16, h, w))];
        let sparse = random_sparse(17, h, w, 0.3);
        let pred = forward(&config, &p, &target, &sparse).unwrap();
        let poses = [vec![pose], vec![pose.inverse()]];
        let inputs = ObjectiveInputs {
            target,
            sources: &sources,
            poses: &poses,
            intrinsics: &k,
            depth: pred.depth,
            inv_depth: pred.inv_depth,
            sparse: &sparse,
        };
        let (loss, report, _) = objective(&inputs, &LossWeights::default()).unwrap();
        assert!(report.total.is_finite());
        let grads = tape.backward(&loss).unwrap();
        for ((name, _), var) in store.iter().zip(p.vars()) {
            let g = grads.raw(var).unwrap_or(&[]);
            let norm: f64 = g.iter().map(|x| x * x).sum();
            assert!(norm > 0.0, "{v}: no gradient reaches {name}");
        }
    }
}
