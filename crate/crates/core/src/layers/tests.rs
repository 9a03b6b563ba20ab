use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{finite_difference_check_many, Tape};

fn rand_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Reduces a layer output to a scalar through fixed random weights.
fn project<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> crate::tensor::Result<Var<'t, f64>> {
    let w = tape.constant(rand_tensor(&y.shape(), seed, 1.0));
    y.mul(&w)?.sum()
}

/// Evaluates `Σ_j K(f_i, f_j) W[o, c, j − i] v_j + b` pixel by pixel.
fn naive_pac(v: &Tensor<f64>, f: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], dil: usize) -> Tensor<f64> {
    let [n, cin, h, wd] = v.dims4().unwrap();
    let cf = f.shape()[1];
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(&[n, cout, h, wd]);
    for s in 0..n {
        for o in 0..cout {
            for y in 0..h {
                for x in 0..wd {
                    let mut acc = b[o];
                    for ky in 0..k {
                        for kx in 0..k {
                            let jy = y as isize + (ky as isize - r) * dil as isize;
                            let jx = x as isize + (kx as isize - r) * dil as isize;
                            if jy < 0 || jx < 0 || jy >= h as isize || jx >= wd as isize {
                                continue;
                            }
                            let (jy, jx) = (jy as usize, jx as usize);
                            let fi: Vec<f64> = (0..cf).map(|c| f.at4(s, c, y, x)).collect();
                            let fj: Vec<f64> = (0..cf).map(|c| f.at4(s, c, jy, jx)).collect();
                            let d2: f64 = fi.iter().zip(&fj).map(|(a, b)| (a - b) * (a - b)).sum();
                            let kern = (-0.5 * d2).exp();
                            for c in 0..cin {
                                acc += kern * w.data()[((o * cin + c) * k + ky) * k + kx] * v.at4(s, c, jy, jx);
                            }
                        }
                    }
                    out.data_mut()[((s * cout + o) * h + y) * wd + x] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn pac_kernel_values() {
    assert_eq!(pac_kernel(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
    let k: f64 = pac_kernel(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
    assert!((k - 0.367879441171).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let d2: f64 = (0..4).map(|i| (a[i] - b[i]).powi(2)).sum();
        let expected = (-d2 / 2.0).exp();
        assert!((pac_kernel(&a, &b).unwrap() - expected).abs() < 1e-15);
    }
    assert!(pac_kernel(&[1.0], &[1.0, 2.0]).is_err());
}

proptest! {
    #[test]
    fn pac_kernel_symmetric_and_bounded(a in prop::collection::vec(-50.0f64..50.0, 3), b in prop::collection::vec(-50.0f64..50.0, 3)) {
        let kab = pac_kernel(&a, &b).unwrap();
        let kba = pac_kernel(&b, &a).unwrap();
        prop_assert_eq!(kab, kba);
        prop_assert!((0.0..=1.0).contains(&kab));
        if a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() < 1000.0 {
            prop_assert!(kab > 0.0);
        }
    }
}

#[test]
fn footprint_validation() {
    assert!(PacKernelFootprint::new(4, 1).is_err());
    assert!(PacKernelFootprint::new(3, 0).is_err());
    let fp = PacKernelFootprint::new(5, 2).unwrap();
    assert_eq!(fp.size(), 25);
    assert_eq!(fp.offsets().len(), 25);
    assert_eq!(fp.offsets()[0], (-4, -4));
}

#[test]
fn pac_matches_naive_oracle() {
    // 1×1×3×3 toy instance
    let v = Tensor::from_vec(vec![1, 1, 3, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
    let f = Tensor::from_vec(vec![1, 1, 3, 3], vec![0.0, 0.5, 1.0, 0.0, 0.5, 1.0, 2.0, 2.0, 2.0]).unwrap();
    let w = Tensor::from_vec(vec![1, 1, 3, 3], vec![0.1, -0.2, 0.3, 0.4, 1.0, -0.5, 0.2, 0.0, 0.7]).unwrap();
    let tape = Tape::new();
    let out = pac_conv(
        &tape.constant(v.clone()),
        &tape.constant(f.clone()),
        &tape.constant(w.clone()),
        Some(&tape.constant(Tensor::from_vec(vec![1], vec![0.25]).unwrap())),
        PacKernelFootprint::default(),
    )
    .unwrap();
    let oracle = naive_pac(&v, &f, &w, &[0.25], 1);
    assert!(max_diff(out.value().data(), oracle.data()) < 1e-12);

    for seed in 0..10 {
        let dil = 1 + (seed as usize % 2);
        let v = rand_tensor(&[2, 3, 6, 5], seed, 1.0);
        let f = rand_tensor(&[2, 2, 6, 5], seed + 100, 1.5);
        let w = rand_tensor(&[4, 3, 3, 3], seed + 200, 1.0);
        let b = rand_tensor(&[4], seed + 300, 1.0);
        let out = pac_conv(
            &tape.constant(v.clone()),
            &tape.constant(f.clone()),
            &tape.constant(w.clone()),
            Some(&tape.constant(b.clone())),
            PacKernelFootprint::new(3, dil).unwrap(),
        )
        .unwrap();
        let oracle = naive_pac(&v, &f, &w, b.data(), dil);
        assert!(max_diff(out.value().data(), oracle.data()) < 1e-12, "seed {seed}");
    }
}

#[test]
fn pac_with_constant_guidance_is_conv() {
    let tape = Tape::new();
    let v = tape.constant(rand_tensor(&[1, 3, 7, 6], 1, 1.0));
    let f = tape.constant(Tensor::full(&[1, 4, 7, 6], 0.8));
    let w = tape.constant(rand_tensor(&[5, 3, 3, 3], 2, 1.0));
    let b = tape.constant(rand_tensor(&[5], 3, 1.0));
    let pac = pac_conv(&v, &f, &w, Some(&b), PacKernelFootprint::default()).unwrap();
    let conv = v.conv2d(&w, Some(&b), 1, 1).unwrap();
    assert!(max_diff(pac.value().data(), conv.value().data()) < 1e-12);

    let tape32 = Tape::<f32>::new();
    let cast = |x: &Var<f64>| tape32.constant(x.value().cast::<f32>());
    let (v32, f32_, w32, b32) = (cast(&v), cast(&f), cast(&w), cast(&b));
    let pac = pac_conv(&v32, &f32_, &w32, Some(&b32), PacKernelFootprint::default()).unwrap();
    let conv = v32.conv2d(&w32, Some(&b32), 1, 1).unwrap();
    let d = pac
        .value()
        .data()
        .iter()
        .zip(conv.value().data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(d < 1e-6);
}

#[test]
fn pac_blocks_information_across_guidance_edge() {
    let (h, w) = (6, 8);
    // two orthogonal guidance channels with a huge gap across column 4
    let f = Tensor::from_fn(&[1, 2, h, w], |i| {
        let c = i / (h * w);
        let x = i % w;
        match (c, x < 4) {
            (0, true) => 10.0,
            (1, false) => 10.0,
            _ => 0.0,
        }
    });
    let v = rand_tensor(&[1, 1, h, w], 9, 1.0);
    let mut v2 = v.clone();
    for y in 0..h {
        for x in 4..w {
            v2.data_mut()[y * w + x] += 100.0;
        }
    }
    let wt = rand_tensor(&[1, 1, 3, 3], 10, 1.0);
    let tape = Tape::new();
    let run = |v: &Tensor<f64>| {
        pac_conv(
            &tape.constant(v.clone()),
            &tape.constant(f.clone()),
            &tape.constant(wt.clone()),
            None,
            PacKernelFootprint::default(),
        )
        .unwrap()
        .value()
    };
    let (a, b) = (run(&v), run(&v2));
    for y in 0..h {
        for x in 0..4 {
            assert!((a.data()[y * w + x] - b.data()[y * w + x]).abs() < 1e-8 * 100.0 * 9.0);
        }
    }
    // kernel weight across the edge itself
    assert!(pac_kernel(&[10.0, 0.0], &[0.0, 10.0]).unwrap() < 1e-8);
}

#[test]
fn pac_spatial_mismatch_errors() {
    let tape = Tape::<f64>::new();
    let v = tape.constant(Tensor::zeros(&[1, 1, 4, 4]));
    let f = tape.constant(Tensor::zeros(&[1, 1, 4, 5]));
    let w = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
    assert!(pac_conv(&v, &f, &w, None, PacKernelFootprint::default()).is_err());
}

#[test]
fn pac_gradients_match_finite_differences() {
    for seed in 0..4 {
        let inputs = [
            rand_tensor(&[1, 2, 5, 4], seed, 1.0),
            rand_tensor(&[1, 2, 5, 4], seed + 10, 1.0),
            rand_tensor(&[3, 2, 3, 3], seed + 20, 1.0),
            rand_tensor(&[3], seed + 30, 1.0),
        ];
        let reports = finite_difference_check_many(
            |tape, x| {
                let y = pac_conv(&x[0], &x[1], &x[2], Some(&x[3]), PacKernelFootprint::default())?;
                project(tape, y, 77)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        for (i, r) in reports.iter().enumerate() {
            assert!(r.passes(1e-6), "seed {seed} input {i}: {r:?}");
        }
    }
}

#[test]
fn standardize_gradients_match_finite_differences() {
    let x = rand_tensor(&[1, 3, 4, 5], 4, 2.0);
    let reports = finite_difference_check_many(|tape, v| project(tape, standardize_channels(&v[0], 1e-5)?, 5), std::slice::from_ref(&x), 1e-5).unwrap();
    assert!(reports[0].passes(1e-6), "{:?}", reports[0]);
    let tape = Tape::new();
    let s = standardize_channels(&tape.constant(x), 1e-5).unwrap().value();
    for c in 0..3 {
        let ch = &s.data()[c * 20..(c + 1) * 20];
        let mean: f64 = ch.iter().sum::<f64>() / 20.0;
        let var: f64 = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn dense_mask_is_plain_conv() {
    let tape = Tape::new();
    let x = tape.constant(rand_tensor(&[2, 3, 7, 9], 1, 1.0));
    let w = tape.constant(rand_tensor(&[4, 3, 3, 3], 2, 1.0));
    let b = tape.constant(rand_tensor(&[4], 3, 1.0));
    let mask = ObservationMask::new(Tensor::ones(&[2, 1, 7, 9])).unwrap();
    for stride in [1, 2] {
        let (out, m) = sparse_conv_block(SparseFeature { feature: x, mask: &mask }, &w, Some(&b), stride).unwrap();
        let conv = x.conv2d(&w, Some(&b), stride, 1).unwrap();
        assert!(max_diff(out.value().data(), conv.value().data()) < 1e-12);
        assert_eq!(out.shape()[2..], m.tensor().shape()[2..]);
        assert!(m.tensor().data().iter().all(|&v| v == 1.0));
    }
}

#[test]
fn empty_mask_gives_bias() {
    let tape = Tape::new();
    let x = tape.constant(rand_tensor(&[1, 2, 5, 5], 1, 1.0));
    let w = tape.constant(rand_tensor(&[3, 2, 3, 3], 2, 1.0));
    let b = tape.constant(Tensor::from_vec(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
    let mask = ObservationMask::new(Tensor::zeros(&[1, 1, 5, 5])).unwrap();
    let (out, m) = sparse_conv_block(SparseFeature { feature: x, mask: &mask }, &w, Some(&b), 1).unwrap();
    for (i, v) in out.value().data().iter().enumerate() {
        assert_eq!(*v, b.value().data()[i / 25]);
    }
    assert_eq!(m.coverage(), 0.0);
}

#[test]
fn single_pixel_dilates_to_window() {
    let tape = Tape::new();
    let mut d = Tensor::zeros(&[1, 1, 5, 5]);
    d.data_mut()[12] = 3.0;
    let mask = ObservationMask::from_depth(&d).unwrap();
    let w = rand_tensor(&[1, 1, 3, 3], 4, 1.0);
    let (out, m) = sparse_conv_block(
        SparseFeature {
            feature: tape.constant(d),
            mask: &mask,
        },
        &tape.constant(w.clone()),
        Some(&tape.constant(Tensor::from_vec(vec![1], vec![0.1]).unwrap())),
        1,
    )
    .unwrap();
    for y in 0..5 {
        for x in 0..5 {
            let inside = (1..=3).contains(&y) && (1..=3).contains(&x);
            assert_eq!(m.tensor().data()[y * 5 + x], if inside { 1.0 } else { 0.0 });
        }
    }
    assert!((out.value().data()[12] - (w.data()[4] * 3.0 + 0.1)).abs() < 1e-15);
}

#[test]
fn misaligned_mask_errors() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::<f64>::zeros(&[1, 1, 4, 4]));
    let w = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
    let mask = ObservationMask::new(Tensor::zeros(&[1, 1, 4, 5])).unwrap();
    assert!(sparse_conv_block(SparseFeature { feature: x, mask: &mask }, &w, None, 1).is_err());
}

#[test]
fn observation_mask_rejects_bad_values() {
    assert!(ObservationMask::new(Tensor::<f64>::full(&[1, 1, 2, 2], 1.5)).is_err());
    assert!(ObservationMask::new(Tensor::<f64>::zeros(&[1, 2, 2, 2])).is_err());
    assert!(ObservationMask::new(Tensor::<f64>::full(&[1, 1, 2, 2], f64::NAN)).is_err());
}

proptest! {
    #[test]
    fn mask_coverage_never_shrinks(seed in 0u64..1000, density in 0.0f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Tensor::from_fn(&[1, 1, 12, 10], |_| if rng.gen::<f64>() < density { 1.0 } else { 0.0 });
        let tape = Tape::new();
        let w = tape.constant(rand_tensor(&[1, 1, 3, 3], seed, 1.0));
        let mut mask = ObservationMask::from_depth(&d).unwrap();
        let mut feat = tape.constant(d);
        for _ in 0..4 {
            let before = mask.coverage();
            let (f, m) = sparse_conv_block(SparseFeature { feature: feat, mask: &mask }, &w, None, 1).unwrap();
            prop_assert!(m.coverage() >= before);
            feat = f;
            mask = m;
        }
    }
}

#[test]
fn sparse_conv_gradients_match_finite_differences() {
    let mut d = rand_tensor(&[1, 1, 5, 6], 1, 1.0);
    let mut mrng = ChaCha8Rng::seed_from_u64(3);
    let m = Tensor::from_fn(&[1, 1, 5, 6], |_| if mrng.gen::<f64>() < 0.4 { 1.0 } else { 0.0 });
    d.data_mut().iter_mut().zip(m.data()).for_each(|(v, &k)| *v *= k);
    let mask = ObservationMask::new(m).unwrap();
    let inputs = [
        rand_tensor(&[1, 2, 5, 6], 2, 1.0),
        rand_tensor(&[3, 2, 3, 3], 4, 1.0),
        rand_tensor(&[3], 5, 1.0),
    ];
    let reports = finite_difference_check_many(
        |tape, x| {
            let (y, _) = sparse_conv_block(
                SparseFeature {
                    feature: x[0],
                    mask: &mask,
                },
                &x[1],
                Some(&x[2]),
                2,
            )?;
            project(tape, y, 6)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    for r in &reports {
        assert!(r.passes(1e-6), "{r:?}");
    }
}

fn residual_inputs(cin: usize, cout: usize, seed: u64, proj: bool) -> Vec<Tensor<f64>> {
    let mut v = vec![
        rand_tensor(&[cout, cin, 3, 3], seed, 0.5),
        rand_tensor(&[cout], seed + 1, 0.5),
        rand_tensor(&[cout, cout, 3, 3], seed + 2, 0.5),
        rand_tensor(&[cout], seed + 3, 0.5),
    ];
    if proj {
        v.push(rand_tensor(&[cout, cin, 1, 1], seed + 4, 0.5));
        v.push(rand_tensor(&[cout], seed + 5, 0.5));
    }
    v
}

fn residual_params<'t>(p: &[Var<'t, f64>]) -> ResidualParams<'t, f64> {
    ResidualParams {
        conv1_w: p[0],
        conv1_b: p[1],
        conv2_w: p[2],
        conv2_b: p[3],
        proj: (p.len() > 4).then(|| (p[4], p[5])),
    }
}

#[test]
fn zero_residual_is_identity() {
    let tape = Tape::new();
    let x = tape.constant(rand_tensor(&[1, 4, 6, 6], 1, 1.0));
    let p: Vec<_> = residual_inputs(4, 4, 0, false)
        .into_iter()
        .map(|t| tape.constant(t.map(|_| 0.0)))
        .collect();
    let y = residual_block(&x, &residual_params(&p), 1).unwrap();
    assert_eq!(y.value().data(), x.value().data());
}

#[test]
fn strided_residual_halves_resolution() {
    let tape = Tape::new();
    let x = tape.constant(rand_tensor(&[2, 3, 8, 10], 1, 1.0));
    let p: Vec<_> = residual_inputs(3, 5, 0, true).into_iter().map(|t| tape.constant(t)).collect();
    let y = residual_block(&x, &residual_params(&p), 2).unwrap();
    assert_eq!(y.shape(), vec![2, 5, 4, 5]);
}

#[test]
fn residual_gradients_match_finite_differences() {
    for (proj, stride) in [(false, 1), (true, 2)] {
        let mut inputs = vec![rand_tensor(&[1, 2, 6, 6], 9, 1.0)];
        inputs.extend(residual_inputs(2, if proj { 3 } else { 2 }, 11, proj));
        let reports = finite_difference_check_many(
            |tape, x| {
                let y = residual_block(&x[0], &residual_params(&x[1..]), stride)?;
                project(tape, y, 12)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        for r in &reports {
            assert!(r.checked > 0 && r.max_rel_error < 1e-6, "{r:?}");
        }
    }
}
