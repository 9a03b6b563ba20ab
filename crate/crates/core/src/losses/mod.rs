//! Self-supervised training objective: photometric reconstruction with a
//! per-pixel minimum over source frames and auto-masking, a sparse depth
//! term, and edge-aware smoothness of normalized inverse depth.


use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{synthesize_view, CameraIntrinsics, PoseSE3};
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("min_reprojection needs at least one source frame")]
    NoSources,
    #[error("mean inverse depth must be positive, got {0}")]
    NonPositiveInverseDepth(f64),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Mixing of the objective's terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// SSIM share of the photometric error; `1 − alpha` goes to L1.
    pub alpha: f64,
    pub lambda_d: f64,
    pub lambda_s: f64,
    /// weight of the photometric term; 0 trains on sparse depth alone
    #[serde(default = "unit")]
    pub lambda_p: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            lambda_d: 0.001,
            lambda_s: 0.1,
            lambda_p: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.alpha, self.lambda_d, self.lambda_s, self.lambda_p]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !ok || self.alpha > 1.0 {
            return Err(LossError::InvalidWeights(format!(
                "need finite non-negative weights with alpha ≤ 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Scalar values of one evaluation of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub photo: f64,
    pub depth: f64,
    pub smooth: f64,
    pub total: f64,
    /// fraction of pixels kept by the auto-mask
    pub automask_coverage: f64,
    /// no pixel survived the auto-mask, so the photometric term is 0
    pub photo_empty: bool,
    /// no sparse observation, so the depth term is 0
    pub depth_empty: bool,
}

/// Per-pixel, per-channel SSIM from 3×3 reflection-padded box statistics.
pub fn ssim_map<'t, T: Real>(a: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "ssim_map",
            lhs: a.shape(),
            rhs: b.shape(),
        }
        .into());
    }
    let (c1, c2) = (T::lit(SSIM_C1), T::lit(SSIM_C2));
    let mu_a = a.avg_pool_3x3()?;
    let mu_b = b.avg_pool_3x3()?;
    let mu_ab = mu_a.mul(&mu_b)?;
    let mu_aa = mu_a.square();
    let mu_bb = mu_b.square();
    let sigma_a = a.square().avg_pool_3x3()?.sub(&mu_aa)?;
    let sigma_b = b.square().avg_pool_3x3()?.sub(&mu_bb)?;
    let sigma_ab = a.mul(b)?.avg_pool_3x3()?.sub(&mu_ab)?;
    let num = mu_ab
        .mul_scalar(T::lit(2.0))
        .add_scalar(c1)
        .mul(&sigma_ab.mul_scalar(T::lit(2.0)).add_scalar(c2))?;
    let den = mu_aa.add(&mu_bb)?.add_scalar(c1).mul(&sigma_a.add(&sigma_b)?.add_scalar(c2))?;
    Ok(num.div(&den)?)
}

/// Per-pixel photometric error `α(1 − SSIM)/2 + (1 − α)·L1`, both terms
/// averaged over channels. Returns `N×1×H×W`.
pub fn photometric_loss<'t, T: Real>(target: &Var<'t, T>, synth: &Var<'t, T>, alpha: f64) -> Result<Var<'t, T>> {
    let l1 = target.sub(synth)?.abs().mean_axes(&[1])?;
    if alpha == 0.0 {
        return Ok(l1);
    }
    let dssim = ssim_map(target, synth)?
        .rsub_scalar(T::one())
        .mul_scalar(T::lit(0.5))
        .mean_axes(&[1])?;
    Ok(dssim.mul_scalar(T::lit(alpha)).add(&l1.mul_scalar(T::lit(1.0 - alpha)))?)
}

/// Element-wise minimum over the candidates that are valid at each pixel.
/// Pixels with no valid candidate get 0 and are reported in the second
/// tensor as 0. Gradient goes to the first minimal candidate.
fn masked_min<'t, T: Real>(tape: &'t Tape<T>, parts: &[Var<'t, T>], valid: &[&Tensor<T>]) -> Result<(Var<'t, T>, Tensor<T>)> {
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let shape = values[0].shape().to_vec();
    for (v, m) in values.iter().zip(valid) {
        if v.shape() != shape.as_slice() || m.shape() != shape.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_min",
                lhs: shape,
                rhs: v.shape().to_vec(),
            }
            .into());
        }
    }
    let len = values[0].len();
    let mut out = vec![T::zero(); len];
    let mut any = vec![T::zero(); len];
    let mut arg = vec![usize::MAX; len];
    for i in 0..len {
        for (s, v) in values.iter().enumerate() {
            if valid[s].data()[i] <= T::zero() {
                continue;
            }
            if arg[i] == usize::MAX || v.data()[i] < out[i] {
                out[i] = v.data()[i];
                arg[i] = s;
            }
        }
        if arg[i] != usize::MAX {
            any[i] = T::one();
        }
    }
    let count = parts.len();
    let backward = Box::new(move |g: &[T]| {
        let mut grads = vec![vec![T::zero(); len]; count];
        for (i, &a) in arg.iter().enumerate() {
            if a != usize::MAX {
                grads[a][i] = g[i];
            }
        }
        grads.into_iter().map(Some).collect()
    });
    let value = Tensor::from_vec(shape.clone(), out)?;
    Ok((tape.record(parts, value, backward), Tensor::from_vec(shape, any)?))
}

/// Photometric term after the per-pixel minimum and auto-masking.
pub struct PhotoTerm<'t, T: Real> {
    /// scalar mean over kept pixels (0 when none is kept)
    pub loss: Var<'t, T>,
    /// `N×1×H×W`, 1 where the warped minimum beats the unwarped one
    pub automask: Tensor<T>,
    pub coverage: f64,
    pub empty: bool,
}

/// `warped[s]` is source `s` synthesized into the target view with its
/// validity mask; `sources[s]` is the raw source frame.
pub fn min_reprojection<'t, T: Real>(
    target: &Var<'t, T>,
    warped: &[(Var<'t, T>, Tensor<T>)],
    sources: &[Var<'t, T>],
    alpha: f64,
) -> Result<PhotoTerm<'t, T>> {
    if warped.is_empty() || sources.is_empty() {
        return Err(LossError::NoSources);
    }
    let tape = target.tape();
    let mut reproj = Vec::with_capacity(warped.len());
    let mut masks = Vec::with_capacity(warped.len());
    for (img, valid) in warped {
        reproj.push(photometric_loss(target, img, alpha)?);
        masks.push(valid);
    }
    let (min_warped, any_valid) = masked_min(tape, &reproj, &masks)?;

    let target_const = target.detach();
    let ones = Tensor::ones(any_valid.shape());
    let mut identity = Vec::with_capacity(sources.len());
    for s in sources {
        identity.push(photometric_loss(&target_const, &s.detach(), alpha)?);
    }
    let all: Vec<&Tensor<T>> = vec![&ones; identity.len()];
    let (min_identity, _) = masked_min(tape, &identity, &all)?;

    let (w, id) = (min_warped.value(), min_identity.value());
    let automask = Tensor::from_fn(any_valid.shape(), |i| {
        if any_valid.data()[i] > T::zero() && w.data()[i] < id.data()[i] {
            T::one()
        } else {
            T::zero()
        }
    });
    let kept = automask.data().iter().filter(|v| **v > T::zero()).count();
    let coverage = kept as f64 / automask.len().max(1) as f64;
    if kept == 0 {
        log::warn!("auto-mask removed every pixel; photometric term is 0");
        return Ok(PhotoTerm {
            loss: tape.scalar(T::zero()),
            automask,
            coverage,
            empty: true,
        });
    }
    let loss = min_warped.masked_mean(&tape.constant(automask.clone()))?;
    Ok(PhotoTerm {
        loss,
        automask,
        coverage,
        empty: false,
    })
}

/// Millimetres per depth unit in the sparse term.
pub const DEPTH_LOSS_SCALE: f64 = 1000.0;

/// Mean absolute error, in millimetres, between predicted depth (metres) and
/// the observed sparse depth over observed pixels (`sparse > 0`). Returns
/// `(loss, empty)`.
pub fn sparse_depth_loss<'t, T: Real>(pred: &Var<'t, T>, sparse: &Tensor<T>) -> Result<(Var<'t, T>, bool)> {
    if pred.shape() != sparse.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "sparse_depth_loss",
            lhs: pred.shape(),
            rhs: sparse.shape().to_vec(),
        }
        .into());
    }
    let tape = pred.tape();
    let mask = sparse.map(|v| if v > T::zero() { T::one() } else { T::zero() });
    if mask.data().iter().all(|v| *v == T::zero()) {
        log::warn!("no sparse depth observations; depth term is 0");
        return Ok((tape.scalar(T::zero()), true));
    }
    let diff = pred.sub(&tape.constant(sparse.clone()))?.abs();
    Ok((diff.masked_mean(&tape.constant(mask))?.mul_scalar(T::lit(DEPTH_LOSS_SCALE)), false))
}

/// Edge-aware smoothness of mean-normalized inverse depth (`N×1×H×W`)
/// against the target image, forward differences, pixel means.
pub fn smoothness_loss<'t, T: Real>(inv_depth: &Var<'t, T>, image: &Var<'t, T>) -> Result<Var<'t, T>> {
    let [_, _, h, w] = inv_depth.value().dims4()?;
    let mean = inv_depth.mean_axes(&[2, 3])?;
    if let Some(bad) = mean.value().data().iter().find(|m| !(**m > T::zero())) {
        return Err(LossError::NonPositiveInverseDepth(bad.to_f64_lossy()));
    }
    let d = inv_depth.div(&mean)?;
    let img = image.detach();
    let tape = inv_depth.tape();
    let mut total = tape.scalar(T::zero());
    for axis in [3usize, 2] {
        let extent = if axis == 3 { w } else { h };
        if extent < 2 {
            continue;
        }
        let dd = d.narrow(axis, 1, extent - 1)?.sub(&d.narrow(axis, 0, extent - 1)?)?.abs();
        let di = img
            .narrow(axis, 1, extent - 1)?
            .sub(&img.narrow(axis, 0, extent - 1)?)?
            .abs()
            .mean_axes(&[1])?;
        let term = dd.mul(&di.neg().exp())?.mean()?;
        total = total.add(&term)?;
    }
    Ok(total)
}

/// `λ_p·photo + λ_d·depth + λ_s·smooth` plus the report of its parts.
pub fn total_loss<'t, T: Real>(
    photo: &PhotoTerm<'t, T>,
    depth: (&Var<'t, T>, bool),
    smooth: &Var<'t, T>,
    weights: &LossWeights,
) -> Result<(Var<'t, T>, LossReport)> {
    let photo_term = if weights.lambda_p == 1.0 {
        photo.loss
    } else {
        photo.loss.mul_scalar(T::lit(weights.lambda_p))
    };
    let total = photo_term
        .add(&depth.0.mul_scalar(T::lit(weights.lambda_d)))?
        .add(&smooth.mul_scalar(T::lit(weights.lambda_s)))?;
    let report = LossReport {
        photo: photo.loss.item().to_f64_lossy(),
        depth: depth.0.item().to_f64_lossy(),
        smooth: smooth.item().to_f64_lossy(),
        total: total.item().to_f64_lossy(),
        automask_coverage: photo.coverage,
        photo_empty: photo.empty,
        depth_empty: depth.1,
    };
    Ok((total, report))
}

/// Everything needed to score one prediction for a target frame.
pub struct ObjectiveInputs<'a, 't, T: Real> {
    /// `N×3×H×W` target frame
    pub target: Var<'t, T>,
    /// source frames, each `N×3×H×W`
    pub sources: &'a [Var<'t, T>],
    /// `poses[s][n]` maps target camera coordinates into source `s` of item `n`
    pub poses: &'a [Vec<PoseSE3>],
    pub intrinsics: &'a CameraIntrinsics,
    /// predicted metric depth and inverse depth, `N×1×H×W`
    pub depth: Var<'t, T>,
    pub inv_depth: Var<'t, T>,
    /// observed sparse depth, 0 where missing
    pub sparse: &'a Tensor<T>,
}

/// Full objective for one batch.
pub fn objective<'t, T: Real>(inputs: &ObjectiveInputs<'_, 't, T>, weights: &LossWeights) -> Result<(Var<'t, T>, LossReport, Tensor<T>)> {
    weights.validate()?;
    if inputs.sources.len() != inputs.poses.len() {
        return Err(TensorError::Invalid(format!(
            "{} source frames but {} pose lists",
            inputs.sources.len(),
            inputs.poses.len()
        ))
        .into());
    }
    let mut warped = Vec::with_capacity(inputs.sources.len());
    for (src, poses) in inputs.sources.iter().zip(inputs.poses) {
        warped.push(synthesize_view(src, &inputs.depth, inputs.intrinsics, poses)?);
    }
    let photo = min_reprojection(&inputs.target, &warped, inputs.sources, weights.alpha)?;
    let depth = sparse_depth_loss(&inputs.depth, inputs.sparse)?;
    let smooth = smoothness_loss(&inputs.inv_depth, &inputs.target)?;
    let (total, report) = total_loss(&photo, (&depth.0, depth.1), &smooth, weights)?;
    Ok((total, report, photo.automask))
}
