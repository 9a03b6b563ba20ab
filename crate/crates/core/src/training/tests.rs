use super::*;
use crate::data::{render_scene, sample_uniform, SceneKind, SceneSpec};
use crate::network::Variant;

fn tiny_net() -> NetworkConfig {
    NetworkConfig {
        variant: Variant::DualSparsePac,
        stage_channels: vec![4, 6],
        blocks_per_stage: 1,
        pac_kernel: 3,
        guidance_channels: 2,
        depth_range: (0.1, 100.0),
    }
}

fn scene_triplets(frames: usize) -> (Vec<FrameTriplet>, CameraIntrinsics) {
    let spec = SceneSpec::preset(SceneKind::Planes, frames, 32, 24, 5).unwrap();
    let rendered = render_scene(&spec).unwrap();
    let triplets = (1..frames - 1)
        .map(|t| {
            let rel = |s: usize| rendered[s].pose.inverse().compose(&rendered[t].pose);
            FrameTriplet {
                index: t,
                target: rendered[t].image.clone(),
                sources: [rendered[t - 1].image.clone(), rendered[t + 1].image.clone()],
                poses: [rel(t - 1), rel(t + 1)],
                sparse: sample_uniform(&rendered[t].depth, 60, t as u64).unwrap(),
                gt: Some(rendered[t].depth.clone()),
            }
        })
        .collect();
    (triplets, spec.intrinsics)
}

fn single_param_store(values: &[f32]) -> ParameterStore<f32> {
    let mut s = ParameterStore::new();
    s.insert("p", Tensor::from_vec(vec![values.len()], values.to_vec()).unwrap())
        .unwrap();
    s
}

#[test]
fn learning_rate_halves_every_ten_epochs() {
    let c = TrainConfig::default();
    assert_eq!(lr_at(0, &c), 1e-4);
    assert_eq!(lr_at(9, &c), 1e-4);
    assert_eq!(lr_at(10, &c), 5e-5);
    assert_eq!(lr_at(29, &c), 2.5e-5);
}

#[test]
fn default_config_matches_reference_hyperparameters() {
    let c = TrainConfig::default();
    assert_eq!((c.epochs, c.lr0, c.beta1, c.beta2), (30, 1e-4, 0.9, 0.999));
    assert_eq!((c.weights.alpha, c.weights.lambda_d, c.weights.lambda_s), (0.85, 0.001, 0.1));
    c.validate().unwrap();
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epochs": 2, "lr": 0.1}"#).is_err());
    let bad = TrainConfig { beta2: 1.0, ..c };
    assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut store = single_param_store(&[1.0, -2.0]);
    let mut state = AdamState::new(&store, 0.9, 0.999, 1e-8);
    adam_step(&mut store, &[vec![0.0, 0.0]], &mut state, 0.1).unwrap();
    assert_eq!(store.get("p").unwrap().data(), &[1.0, -2.0]);
    assert_eq!(state.step, 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut store = ParameterStore::<f64>::new();
    store.insert("p", Tensor::from_vec(vec![3], vec![0.0, 0.0, 0.0]).unwrap()).unwrap();
    let mut state = AdamState::new(&store, 0.9, 0.999, 1e-8);
    adam_step(&mut store, &[vec![3.0, -0.01, 1e3]], &mut state, 1e-3).unwrap();
    for (x, sign) in store.get("p").unwrap().data().iter().zip([-1.0, 1.0, -1.0]) {
        assert!((x - sign * 1e-3).abs() < 1e-8, "{x}");
    }
}

#[test]
fn adam_two_steps_by_hand() {
    let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.01);
    let mut store = ParameterStore::<f64>::new();
    store.insert("p", Tensor::scalar(1.0)).unwrap();
    let mut state = AdamState::new(&store, b1, b2, eps);
    let (g1, g2) = (0.5, -2.0);
    adam_step(&mut store, &[vec![g1]], &mut state, lr).unwrap();
    adam_step(&mut store, &[vec![g2]], &mut state, lr).unwrap();

    let mut x = 1.0;
    let (mut m, mut v) = (0.0, 0.0);
    for (t, g) in [(1, g1), (2, g2)] {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - f64::powi(b1, t));
        let vh = v / (1.0 - f64::powi(b2, t));
        x -= lr * mh / (vh.sqrt() + eps);
    }
    assert!((store.get("p").unwrap().item() - x).abs() < 1e-12);
}

#[test]
fn non_finite_gradient_names_the_parameter() {
    let mut store = single_param_store(&[1.0]);
    let mut state = AdamState::new(&store, 0.9, 0.999, 1e-8);
    match adam_step(&mut store, &[vec![f64::NAN]], &mut state, 0.1) {
        Err(TrainError::NonFinite { what, .. }) => assert!(what.contains('p')),
        r => panic!("unexpected {r:?}"),
    }
    assert_eq!(store.get("p").unwrap().data(), &[1.0]);
    assert_eq!(state.step, 0);
}

#[test]
fn clipping_caps_the_global_norm() {
    let mut g = vec![vec![3.0], vec![4.0]];
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    let mut small = vec![vec![0.1]];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0][0], 0.1);
}

#[test]
fn static_triplet_has_zero_photometric_loss() {
    let (mut triplets, k) = scene_triplets(3);
    let t = &mut triplets[0];
    t.sources = [t.target.clone(), t.target.clone()];
    t.poses = [PoseSE3::identity(), PoseSE3::identity()];
    let net = tiny_net();
    let store = init_parameters::<f64>(&net, 0).unwrap();
    let batch = Batch::<f64>::new(&[&triplets[0]]).unwrap();
    let (report, grads) = loss_and_gradients(&net, &store, &batch, &k, &LossWeights::default()).unwrap();
    assert_eq!(report.photo, 0.0);
    assert!(report.total.is_finite() && report.depth > 0.0);
    assert!(grads.iter().flatten().all(|g| g.is_finite()));
}

#[test]
fn repeated_steps_fit_one_batch() {
    let (triplets, k) = scene_triplets(3);
    let config = TrainConfig {
        lr0: 2e-3,
        ..Default::default()
    };
    let mut trainer = Trainer::new(tiny_net(), config, k).unwrap();
    let first = trainer.train_step(&[&triplets[0]], 0).unwrap();
    let mut last = first.clone();
    for _ in 0..40 {
        last = trainer.train_step(&[&triplets[0]], 0).unwrap();
    }
    assert!(last.total < 0.7 * first.total, "{} -> {}", first.total, last.total);
    assert_eq!(last.step, 40);
}

#[test]
fn epochs_are_deterministic() {
    let (triplets, k) = scene_triplets(6);
    let run = || {
        let config = TrainConfig {
            batch_size: 2,
            seed: 3,
            ..Default::default()
        };
        let mut trainer = Trainer::new(tiny_net(), config, k).unwrap();
        let mut records = Vec::new();
        let summary = trainer.run_epoch(&triplets, 0, |r| records.push(r.clone())).unwrap();
        (trainer.store, records, summary)
    };
    let (a, ra, sa) = run();
    let (b, rb, sb) = run();
    assert_eq!(sa.steps, 2);
    assert_eq!(ra, rb);
    assert_eq!(sa, sb);
    for ((_, x), (_, y)) in a.iter().zip(b.iter()) {
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn empty_epoch_is_an_error() {
    let (_, k) = scene_triplets(3);
    let mut trainer = Trainer::new(tiny_net(), TrainConfig::default(), k).unwrap();
    assert!(matches!(trainer.run_epoch(&[], 0, |_| {}), Err(TrainError::NoData)));
}

#[test]
fn gradcheck_suite_passes() {
    let report = gradcheck_suite(0).unwrap();
    for row in &report.rows {
        assert!(
            row.passed,
            "{}: {:.3e} ({} checked, {} excluded)",
            row.component, row.max_rel_error, row.checked, row.excluded
        );
        assert_eq!(row.seeds.len() as u64, GRADCHECK_SEEDS);
    }
}
