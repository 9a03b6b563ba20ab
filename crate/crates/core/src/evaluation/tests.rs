use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{build_manifest, render_scene, write_dataset, DatasetWriteOptions, SamplingPattern, SceneKind, SceneSpec};

fn map(w: usize, h: usize, d: Vec<f32>) -> SparseDepthMap {
    SparseDepthMap::new(w, h, d).unwrap()
}

fn tensor(d: Vec<f64>) -> Tensor<f64> {
    let n = d.len();
    Tensor::from_vec(vec![1, 1, 1, n], d).unwrap()
}

/// Direct transcription of the metric definitions, one pass per metric.
fn naive(pred: &[f64], gt: &[f32]) -> [f64; 8] {
    let idx: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] > 0.0).collect();
    let n = idx.len() as f64;
    let g = |i: usize| gt[i] as f64;
    let mean = |f: &dyn Fn(usize) -> f64| idx.iter().map(|&i| f(i)).sum::<f64>() / n;
    let delta = |t: f64| mean(&|i| if f64::max(pred[i] / g(i), g(i) / pred[i]) < t { 1.0 } else { 0.0 });
    [
        1000.0 * mean(&|i| (pred[i] - g(i)).powi(2)).sqrt(),
        1000.0 * mean(&|i| (pred[i] - g(i)).abs()),
        mean(&|i| (pred[i] - g(i)).abs() / g(i)),
        delta(1.25),
        delta(1.5625),
        delta(1.953125),
        1000.0 * mean(&|i| (1.0 / pred[i] - 1.0 / g(i)).powi(2)).sqrt(),
        1000.0 * mean(&|i| (1.0 / pred[i] - 1.0 / g(i)).abs()),
    ]
}

fn as_array(r: &MetricReport) -> [f64; 8] {
    [r.rmse, r.mae, r.abs_rel, r.delta1, r.delta2, r.delta3, r.irmse, r.imae]
}

#[test]
fn perfect_prediction() {
    let gt = map(3, 1, vec![1.0, 2.5, 7.0]);
    let r = compute_metrics(&tensor(vec![1.0, 2.5, 7.0]), &gt).unwrap();
    assert_eq!((r.rmse, r.mae, r.abs_rel, r.irmse), (0.0, 0.0, 0.0, 0.0));
    assert_eq!((r.delta1, r.delta2, r.delta3, r.pixels), (1.0, 1.0, 1.0, 3));
}

#[test]
fn doubled_prediction() {
    let gt = map(2, 1, vec![1.0, 4.0]);
    let r = compute_metrics(&tensor(vec![2.0, 8.0]), &gt).unwrap();
    assert!((r.abs_rel - 1.0).abs() < 1e-12);
    assert_eq!((r.delta1, r.delta3), (0.0, 0.0));
}

#[test]
fn hand_computed_pair() {
    let gt = map(2, 1, vec![1.0, 2.0]);
    let r = compute_metrics(&tensor(vec![1.0, 3.0]), &gt).unwrap();
    assert!((r.rmse - 0.5f64.sqrt() * 1000.0).abs() < 1e-9);
    assert!((r.mae - 500.0).abs() < 1e-9);
    assert!((r.abs_rel - 0.25).abs() < 1e-12);
    assert_eq!(r.delta1, 0.5);
    // inverse errors: |1/3 − 1/2| = 1/6 on one pixel
    assert!((r.imae - 1000.0 / 12.0).abs() < 1e-9);
}

#[test]
fn invalid_inputs_are_errors() {
    let gt = map(2, 1, vec![1.0, 0.0]);
    assert!(matches!(compute_metrics(&tensor(vec![1.0]), &gt), Err(EvalError::Shape { .. })));
    assert!(matches!(
        compute_metrics(&tensor(vec![0.0, 1.0]), &gt),
        Err(EvalError::NonPositivePrediction { index: 0, .. })
    ));
    // invalid gt pixels do not care about the prediction
    compute_metrics(&tensor(vec![1.0, -5.0]), &gt).unwrap();
    assert!(matches!(
        compute_metrics(&tensor(vec![1.0, 1.0]), &map(2, 1, vec![0.0, 0.0])),
        Err(EvalError::NoValidPixels)
    ));
}

#[test]
fn matches_naive_oracle() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 200;
        let gt: Vec<f32> = (0..n)
            .map(|_| if rng.gen_bool(0.7) { rng.gen_range(0.5f32..20.0) } else { 0.0 })
            .collect();
        let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..25.0)).collect();
        let r = compute_metrics(&tensor(pred.clone()), &map(n, 1, gt.clone())).unwrap();
        for (a, b) in as_array(&r).iter().zip(naive(&pred, &gt)) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

proptest! {
    #[test]
    fn metrics_ignore_order_and_masked_values(seed in 0u64..1000, shift in 0usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 50;
        let gt: Vec<f32> = (0..n).map(|_| if rng.gen_bool(0.6) { rng.gen_range(0.5f32..10.0) } else { 0.0 }).collect();
        prop_assume!(gt.iter().any(|g| *g > 0.0));
        let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..12.0)).collect();
        let base = compute_metrics(&tensor(pred.clone()), &map(n, 1, gt.clone())).unwrap();

        let rot = |v: &[f64]| { let mut v = v.to_vec(); v.rotate_left(shift); v };
        let mut gt_rot = gt.clone();
        gt_rot.rotate_left(shift);
        let rotated = compute_metrics(&tensor(rot(&pred)), &map(n, 1, gt_rot)).unwrap();
        for (a, b) in as_array(&base).iter().zip(as_array(&rotated)) {
            prop_assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
        prop_assert_eq!(base.pixels, rotated.pixels);

        let scrambled: Vec<f64> = pred.iter().zip(&gt).map(|(p, g)| if *g > 0.0 { *p } else { 99.0 }).collect();
        let masked = compute_metrics(&tensor(scrambled), &map(n, 1, gt)).unwrap();
        prop_assert_eq!(base.clone(), masked);
        prop_assert!(base.delta1 <= base.delta2 && base.delta2 <= base.delta3 && base.delta3 <= 1.0);
    }
}

#[test]
fn merged_sums_are_pixel_weighted() {
    let a = metric_sums(&[1.0f64, 3.0], &map(2, 1, vec![1.0, 2.0])).unwrap();
    let b = metric_sums(&[4.0f64], &map(1, 1, vec![2.0])).unwrap();
    let mut t = a;
    t.merge(&b);
    let r = t.report().unwrap();
    // squared errors 0, 1, 4 over three pixels
    assert!((r.rmse - (5.0f64 / 3.0).sqrt() * 1000.0).abs() < 1e-9);
    assert!((r.abs_rel - (0.0 + 0.5 + 1.0) / 3.0).abs() < 1e-12);
    assert_eq!(r.pixels, 3);
}

fn brute_force_fill(s: &SparseDepthMap) -> Vec<f32> {
    let (w, h) = (s.width(), s.height());
    let valid: Vec<usize> = (0..w * h).filter(|&i| s.is_valid(i)).collect();
    (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            let best = valid
                .iter()
                .min_by_key(|&&j| {
                    let (jx, jy) = ((j % w) as i64, (j / w) as i64);
                    ((jx - x).pow(2) + (jy - y).pow(2), j)
                })
                .unwrap();
            s.data()[*best]
        })
        .collect()
}

#[test]
fn nn_fill_cases() {
    let single = map(4, 3, (0..12).map(|i| if i == 5 { 3.5 } else { 0.0 }).collect());
    assert!(nn_fill_baseline(&single).unwrap().data().iter().all(|d| *d == 3.5));

    let dense = map(4, 3, (0..12).map(|i| 1.0 + i as f32).collect());
    assert_eq!(nn_fill_baseline(&dense).unwrap().data(), dense.data());

    assert!(matches!(
        nn_fill_baseline(&SparseDepthMap::empty(4, 3)),
        Err(EvalError::EmptySparse)
    ));

    // equidistant pixels (0,0) and (2,0) from (1,0): the earlier wins
    let tie = map(3, 1, vec![1.0, 0.0, 2.0]);
    assert_eq!(nn_fill_baseline(&tie).unwrap().data(), &[1.0, 1.0, 2.0]);
    // (1,0) and (0,1) are equidistant from (0,0)... and (1,1); scan order picks (1,0)
    let diag = map(2, 2, vec![0.0, 5.0, 6.0, 0.0]);
    assert_eq!(nn_fill_baseline(&diag).unwrap().data(), &[5.0, 5.0, 6.0, 5.0]);
}

#[test]
fn nn_fill_matches_brute_force() {
    let (w, h) = (13, 9);
    let checker = map(
        w,
        h,
        (0..w * h)
            .map(|i| {
                if (i % w + i / w) % 2 == 0 {
                    1.0 + (i % w) as f32 * 0.5
                } else {
                    0.0
                }
            })
            .collect(),
    );
    assert_eq!(nn_fill_baseline(&checker).unwrap().data(), brute_force_fill(&checker).as_slice());
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = [0.01, 0.05, 0.3][seed as usize % 3];
        let mut d: Vec<f32> = (0..w * h)
            .map(|_| if rng.gen_bool(keep) { rng.gen_range(1.0..9.0) } else { 0.0 })
            .collect();
        d[rng.gen_range(0..w * h)] = 4.0;
        let s = map(w, h, d);
        assert_eq!(nn_fill_baseline(&s).unwrap().data(), brute_force_fill(&s).as_slice());
    }
}

#[test]
fn dataset_evaluation_of_ground_truth_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec::preset(SceneKind::Planes, 3, 32, 24, 2).unwrap();
    let frames = render_scene(&spec).unwrap();
    let opts = DatasetWriteOptions {
        sampling: SamplingPattern::Uniform { points: 40 },
        seed: 0,
        force: false,
    };
    write_dataset(dir.path(), &frames, &spec.intrinsics, &opts).unwrap();
    let m = build_manifest(dir.path()).unwrap();
    let eval = evaluate_frames(&m, &[0, 1, 2], |i| Ok(m.load_gt(i)?.unwrap().to_tensor())).unwrap();
    assert_eq!((eval.aggregate.rmse, eval.aggregate.abs_rel, eval.failed), (0.0, 0.0, 0));
    assert_eq!(eval.aggregate.pixels, 3 * 32 * 24);

    let nn = evaluate_nn_fill(&m, None).unwrap();
    assert!(nn.aggregate.rmse > 0.0 && nn.frames.len() == 3);

    // a failing frame is flagged and excluded
    let partial = evaluate_frames(&m, &[0, 1], |i| {
        let mut t = m.load_gt(i)?.unwrap().to_tensor::<f32>();
        if i == 1 {
            t.data_mut()[0] = -1.0;
        }
        Ok(t)
    })
    .unwrap();
    assert_eq!(partial.failed, 1);
    assert!(partial.frames[1].error.is_some());
    assert_eq!(partial.aggregate.pixels, 32 * 24);

    let path = dir.path().join("metrics.json");
    eval.save(&path).unwrap();
    let back: DatasetEvaluation = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, eval);
    assert!(matches!(evaluate_frames(&m, &[], |_| unreachable!()), Err(EvalError::Empty(_))));
}
