//! Finite-difference verification of every differentiable piece of the
//! pipeline, from single primitives up to a full network plus objective.

use std::time::Instant;

use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::geometry::{bilinear_sample, synthesize_view, warp_grid, CameraIntrinsics, PoseSE3};
use crate::layers::{
    pac_conv, residual_block, sparse_conv_block, standardize_channels, ObservationMask, PacKernelFootprint, ResidualParams, SparseFeature,
};
use crate::losses::{
    min_reprojection, objective, photometric_loss, smoothness_loss, sparse_depth_loss, ssim_map, LossWeights, ObjectiveInputs,
};
use crate::network::{forward, init_parameters, invdepth_to_depth, NetworkConfig, Variant};
use crate::tensor::{finite_difference_check_many, GradCheck, Result, Tape, Tensor, TensorError, Var};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_SEEDS: u64 = 20;

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckRow {
    pub component: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
    pub seeds: Vec<u64>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub tolerance: f64,
    pub step: f64,
    pub seconds: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

type Scalar = Box<dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>>;
type Built = (Vec<Tensor<f64>>, Scalar);

fn lift(e: impl std::fmt::Display) -> TensorError {
    TensorError::Invalid(e.to_string())
}

fn boxed<F>(f: F) -> Scalar
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> + 'static,
{
    Box::new(f)
}

struct Component {
    name: &'static str,
    build: fn(&mut ChaCha8Rng) -> Built,
}

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(14.0, 14.0, 7.5, 5.5, 16, 12).expect("valid intrinsics")
}

fn small_motion(rng: &mut ChaCha8Rng) -> PoseSE3 {
    let mut v = Vector6::zeros();
    for i in 0..6 {
        v[i] = rng.gen_range(-0.05..0.05);
    }
    PoseSE3::exp(&v)
}

fn weighted_sum<'t>(tape: &'t Tape<f64>, x: &Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(uniform(&mut rng, &x.shape(), -1.0, 1.0));
    x.mul(&w)?.sum()
}

const COMPONENTS: &[Component] = &[
    Component {
        name: "arithmetic (broadcast add/sub/mul/div)",
        build: |rng| {
            let a = uniform(rng, &[2, 3, 2, 3], -1.0, 1.0);
            let b = uniform(rng, &[1, 3, 1, 3], 0.5, 1.5);
            (
                vec![a, b],
                boxed(|t, v| {
                    let y = v[0].add(&v[1])?.mul(&v[0].sub(&v[1])?)?.div(&v[1])?;
                    weighted_sum(t, &y, 1)
                }),
            )
        },
    },
    Component {
        name: "minimum / maximum",
        build: |rng| {
            let a = uniform(rng, &[3, 4], -1.0, 1.0);
            let b = uniform(rng, &[3, 4], -1.0, 1.0);
            (
                vec![a, b],
                boxed(|t, v| {
                    let y = v[0].minimum(&v[1])?.add(&v[0].maximum(&v[1])?.mul_scalar(0.3))?;
                    weighted_sum(t, &y, 2)
                }),
            )
        },
    },
    Component {
        name: "unary (exp/ln/sqrt/square/recip/neg/scalars)",
        build: |rng| {
            let a = uniform(rng, &[2, 5], 0.3, 2.0);
            (
                vec![a],
                boxed(|t, v| {
                    let x = v[0];
                    let y = x.exp().add(&x.ln())?.add(&x.sqrt())?.add(&x.square().neg())?.add(&x.recip())?;
                    let y = y.add_scalar(0.5).mul_scalar(1.5).rsub_scalar(2.0);
                    weighted_sum(t, &y, 3)
                }),
            )
        },
    },
    Component {
        name: "activations (sigmoid/relu/abs)",
        build: |rng| {
            let a = uniform(rng, &[3, 5], -2.0, 2.0);
            (
                vec![a],
                boxed(|t, v| {
                    let y = v[0].sigmoid().add(&v[0].relu())?.add(&v[0].abs().mul_scalar(0.5))?;
                    weighted_sum(t, &y, 4)
                }),
            )
        },
    },
    Component {
        name: "reductions (sum/mean/mean_axes/masked_mean)",
        build: |rng| {
            let a = uniform(rng, &[2, 3, 3, 4], -1.0, 1.0);
            (
                vec![a],
                boxed(|t, v| {
                    let mut rng = ChaCha8Rng::seed_from_u64(5);
                    let mask = t.constant(Tensor::from_fn(&[2, 1, 3, 4], |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }));
                    let axes = weighted_sum(t, &v[0].mean_axes(&[2, 3])?.square(), 6)?.add(&weighted_sum(
                        t,
                        &v[0].sum_axes(&[1])?.square(),
                        20,
                    )?)?;
                    v[0].square()
                        .masked_mean(&mask)?
                        .add(&axes)?
                        .add(&v[0].mean()?)?
                        .add(&v[0].sum()?.mul_scalar(0.1))
                }),
            )
        },
    },
    Component {
        name: "shape ops (reshape/narrow/concat/upsample)",
        build: |rng| {
            let a = uniform(rng, &[1, 2, 3, 4], -1.0, 1.0);
            let b = uniform(rng, &[1, 1, 3, 4], -1.0, 1.0);
            (
                vec![a, b],
                boxed(|t, v| {
                    let c = t.concat(&[v[0], v[1]], 1)?;
                    let n = c.narrow(1, 1, 2)?.narrow(3, 1, 2)?;
                    let u = n.upsample_nearest2x()?.reshape(&[2, 6, 4])?;
                    weighted_sum(t, &u.square(), 7)
                }),
            )
        },
    },
    Component {
        name: "conv2d (stride 1 and 2, bias)",
        build: |rng| {
            let x = uniform(rng, &[2, 3, 6, 5], -1.0, 1.0);
            let w = uniform(rng, &[4, 3, 3, 3], -0.5, 0.5);
            let b = uniform(rng, &[4], -0.5, 0.5);
            (
                vec![x, w, b],
                boxed(|t, v| {
                    let s1 = v[0].conv2d(&v[1], Some(&v[2]), 1, 1)?;
                    let s2 = v[0].conv2d(&v[1], None, 2, 1)?;
                    weighted_sum(t, &s1, 8)?.add(&weighted_sum(t, &s2.square(), 9)?)
                }),
            )
        },
    },
    Component {
        name: "avg_pool_3x3 (reflection)",
        build: |rng| {
            let x = uniform(rng, &[1, 2, 5, 6], -1.0, 1.0);
            (vec![x], boxed(|t, v| weighted_sum(t, &v[0].avg_pool_3x3()?.square(), 10)))
        },
    },
    Component {
        name: "bilinear sampling (source image)",
        build: |rng| {
            let src = uniform(rng, &[1, 3, 12, 16], 0.0, 1.0);
            let depth = uniform(rng, &[1, 1, 12, 16], 2.0, 4.0);
            let pose = small_motion(rng);
            (
                vec![src],
                boxed(move |t, v| {
                    let grid = warp_grid(&t.constant(depth.clone()), &camera(), &[pose])?;
                    weighted_sum(t, &bilinear_sample(&v[0], &grid)?, 11)
                }),
            )
        },
    },
    Component {
        name: "view synthesis (depth)",
        build: |rng| {
            let src = smooth_image(rng, 3);
            let depth = uniform(rng, &[1, 1, 12, 16], 2.0, 4.0);
            let pose = small_motion(rng);
            (
                vec![depth],
                boxed(move |t, v| {
                    let (img, _) = synthesize_view(&t.constant(src.clone()), &v[0], &camera(), &[pose])?;
                    weighted_sum(t, &img, 12)
                }),
            )
        },
    },
    Component {
        name: "pac_conv",
        build: |rng| {
            let x = uniform(rng, &[1, 2, 5, 6], -1.0, 1.0);
            let f = uniform(rng, &[1, 2, 5, 6], -1.0, 1.0);
            let w = uniform(rng, &[3, 2, 3, 3], -0.5, 0.5);
            let b = uniform(rng, &[3], -0.5, 0.5);
            (
                vec![x, f, w, b],
                boxed(|t, v| {
                    let fp = PacKernelFootprint::new(3, 1)?;
                    weighted_sum(t, &pac_conv(&v[0], &v[1], &v[2], Some(&v[3]), fp)?, 13)
                }),
            )
        },
    },
    Component {
        name: "standardize_channels",
        build: |rng| {
            let x = uniform(rng, &[2, 2, 3, 4], -1.0, 1.0);
            (vec![x], boxed(|t, v| weighted_sum(t, &standardize_channels(&v[0], 1e-5)?, 14)))
        },
    },
    Component {
        name: "sparse_conv_block",
        build: |rng| {
            let x = uniform(rng, &[1, 2, 6, 6], -1.0, 1.0);
            let w = uniform(rng, &[3, 2, 3, 3], -0.5, 0.5);
            let b = uniform(rng, &[3], -0.5, 0.5);
            let mask = Tensor::from_fn(&[1, 1, 6, 6], |_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 });
            (
                vec![x, w, b],
                boxed(move |t, v| {
                    let m = ObservationMask::new(mask.clone())?;
                    let (y, _) = sparse_conv_block(SparseFeature { feature: v[0], mask: &m }, &v[1], Some(&v[2]), 2)?;
                    weighted_sum(t, &y, 15)
                }),
            )
        },
    },
    Component {
        name: "residual_block (projection, stride 2)",
        build: |rng| {
            let x = uniform(rng, &[1, 2, 6, 4], -1.0, 1.0);
            let shapes: [&[usize]; 6] = [&[3, 2, 3, 3], &[3], &[3, 3, 3, 3], &[3], &[3, 2, 1, 1], &[3]];
            let mut inputs = vec![x];
            inputs.extend(shapes.iter().map(|s| uniform(rng, s, -0.5, 0.5)));
            (
                inputs,
                boxed(|t, v| {
                    let p = ResidualParams {
                        conv1_w: v[1],
                        conv1_b: v[2],
                        conv2_w: v[3],
                        conv2_b: v[4],
                        proj: Some((v[5], v[6])),
                    };
                    weighted_sum(t, &residual_block(&v[0], &p, 2)?, 16)
                }),
            )
        },
    },
    Component {
        name: "ssim_map",
        build: |rng| {
            let a = uniform(rng, &[1, 3, 5, 6], 0.0, 1.0);
            let b = uniform(rng, &[1, 3, 5, 6], 0.0, 1.0);
            (
                vec![a, b],
                boxed(|t, v| weighted_sum(t, &ssim_map(&v[0], &v[1]).map_err(lift)?, 17)),
            )
        },
    },
    Component {
        name: "photometric loss",
        build: |rng| {
            let a = uniform(rng, &[1, 3, 5, 6], 0.0, 1.0);
            let b = uniform(rng, &[1, 3, 5, 6], 0.0, 1.0);
            (
                vec![a, b],
                boxed(|t, v| weighted_sum(t, &photometric_loss(&v[0], &v[1], 0.85).map_err(lift)?, 18)),
            )
        },
    },
    Component {
        name: "minimum reprojection with auto-mask",
        build: |rng| {
            let target = uniform(rng, &[1, 3, 5, 6], 0.0, 1.0);
            let w1 = uniform(rng, &[1, 3, 5, 6], 0.0, 1.0);
            let w2 = uniform(rng, &[1, 3, 5, 6], 0.0, 1.0);
            let raw = [uniform(rng, &[1, 3, 5, 6], 0.0, 1.0), uniform(rng, &[1, 3, 5, 6], 0.0, 1.0)];
            let valid = [
                Tensor::from_fn(&[1, 1, 5, 6], |_| if rng.gen_bool(0.8) { 1.0 } else { 0.0 }),
                Tensor::from_fn(&[1, 1, 5, 6], |_| if rng.gen_bool(0.8) { 1.0 } else { 0.0 }),
            ];
            (
                vec![target, w1, w2],
                boxed(move |t, v| {
                    let warped = [(v[1], valid[0].clone()), (v[2], valid[1].clone())];
                    let sources = [t.constant(raw[0].clone()), t.constant(raw[1].clone())];
                    Ok(min_reprojection(&v[0], &warped, &sources, 0.85).map_err(lift)?.loss)
                }),
            )
        },
    },
    Component {
        name: "sparse depth loss",
        build: |rng| {
            let pred = uniform(rng, &[2, 1, 4, 5], 1.0, 5.0);
            let sparse = Tensor::from_fn(&[2, 1, 4, 5], |_| if rng.gen_bool(0.4) { rng.gen_range(1.0..5.0) } else { 0.0 });
            (
                vec![pred],
                boxed(move |_, v| Ok(sparse_depth_loss(&v[0], &sparse).map_err(lift)?.0)),
            )
        },
    },
    Component {
        name: "edge-aware smoothness",
        build: |rng| {
            let inv = uniform(rng, &[2, 1, 4, 5], 0.1, 0.9);
            let img = uniform(rng, &[2, 3, 4, 5], 0.0, 1.0);
            (
                vec![inv],
                boxed(move |t, v| smoothness_loss(&v[0], &t.constant(img.clone())).map_err(lift)),
            )
        },
    },
    Component {
        name: "inverse-depth mapping",
        build: |rng| {
            let inv = uniform(rng, &[1, 1, 3, 4], 0.05, 0.95);
            (
                vec![inv],
                boxed(|t, v| weighted_sum(t, &invdepth_to_depth(&v[0], (0.1, 100.0)), 19)),
            )
        },
    },
    Component {
        name: "total objective (depth and inverse depth)",
        build: |rng| {
            let inv = uniform(rng, &[1, 1, 12, 16], 0.02, 0.06);
            let target = smooth_image(rng, 3);
            let sources = [smooth_image(rng, 3), smooth_image(rng, 3)];
            let poses = [vec![small_motion(rng)], vec![small_motion(rng)]];
            let sparse = Tensor::from_fn(&[1, 1, 12, 16], |_| if rng.gen_bool(0.1) { rng.gen_range(2.0..6.0) } else { 0.0 });
            (
                vec![inv],
                boxed(move |t, v| {
                    let depth = invdepth_to_depth(&v[0], (0.1, 100.0));
                    let srcs = [t.constant(sources[0].clone()), t.constant(sources[1].clone())];
                    let inputs = ObjectiveInputs {
                        target: t.constant(target.clone()),
                        sources: &srcs,
                        poses: &poses,
                        intrinsics: &camera(),
                        depth,
                        inv_depth: v[0],
                        sparse: &sparse,
                    };
                    Ok(objective(&inputs, &LossWeights::default()).map_err(lift)?.0)
                }),
            )
        },
    },
    Component {
        name: "end-to-end 16x12 (2es-1dp network + objective)",
        build: |rng| {
            let config = end_to_end_config();
            let mut store = init_parameters::<f64>(&config, rng.gen()).expect("valid config");
            // non-zero biases so that every path carries signal
            for (name, t) in store.iter_mut() {
                if name.ends_with(".b") && name != "head.b" {
                    t.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
                }
            }
            let inputs: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
            let target = smooth_image(rng, 3);
            let sources = [smooth_image(rng, 3), smooth_image(rng, 3)];
            let poses = [vec![small_motion(rng)], vec![small_motion(rng)]];
            let sparse = Tensor::from_fn(&[1, 1, 12, 16], |_| if rng.gen_bool(0.15) { rng.gen_range(2.0..6.0) } else { 0.0 });
            (
                inputs,
                boxed(move |t, v| {
                    let params = store.attach(v).map_err(lift)?;
                    let tgt = t.constant(target.clone());
                    let pred = forward(&config, &params, &tgt, &sparse).map_err(lift)?;
                    let srcs = [t.constant(sources[0].clone()), t.constant(sources[1].clone())];
                    let inputs = ObjectiveInputs {
                        target: tgt,
                        sources: &srcs,
                        poses: &poses,
                        intrinsics: &camera(),
                        depth: pred.depth,
                        inv_depth: pred.inv_depth,
                        sparse: &sparse,
                    };
                    Ok(objective(&inputs, &LossWeights::default()).map_err(lift)?.0)
                }),
            )
        },
    },
];

/// Tiny network used by the end-to-end check.
pub fn end_to_end_config() -> NetworkConfig {
    NetworkConfig {
        variant: Variant::DualSparsePac,
        stage_channels: vec![3, 4],
        blocks_per_stage: 1,
        pac_kernel: 3,
        guidance_channels: 2,
        depth_range: (0.1, 100.0),
    }
}

fn smooth_image(rng: &mut ChaCha8Rng, channels: usize) -> Tensor<f64> {
    let waves: Vec<[f64; 4]> = (0..channels * 3)
        .map(|_| {
            [
                rng.gen_range(0.2..0.9),
                rng.gen_range(0.2..0.9),
                rng.gen_range(0.0..6.3),
                rng.gen_range(0.05..0.15),
            ]
        })
        .collect();
    let (h, w) = (12, 16);
    Tensor::from_fn(&[1, channels, h, w], |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        0.5 + waves[c * 3..c * 3 + 3]
            .iter()
            .map(|[fx, fy, ph, a]| a * (fx * x as f64 + fy * y as f64 + ph).sin())
            .sum::<f64>()
    })
}

/// Runs every component for `GRADCHECK_SEEDS` consecutive seeds from `seed`.
pub fn gradcheck_suite(seed: u64) -> Result<GradcheckReport> {
    let start = Instant::now();
    let seeds: Vec<u64> = (seed..seed + GRADCHECK_SEEDS).collect();
    let mut rows = Vec::with_capacity(COMPONENTS.len());
    for component in COMPONENTS {
        let mut total = GradCheck::default();
        for &s in &seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (inputs, f) = (component.build)(&mut rng);
            for r in finite_difference_check_many(|t, v| f(t, v), &inputs, GRADCHECK_STEP)? {
                total.merge(&r);
            }
        }
        rows.push(GradcheckRow {
            component: component.name.to_string(),
            max_rel_error: total.max_rel_error,
            checked: total.checked,
            excluded: total.excluded,
            seeds: seeds.clone(),
            passed: total.passes(GRADCHECK_TOLERANCE),
        });
    }
    Ok(GradcheckReport {
        rows,
        tolerance: GRADCHECK_TOLERANCE,
        step: GRADCHECK_STEP,
        seconds: start.elapsed().as_secs_f64(),
    })
}
