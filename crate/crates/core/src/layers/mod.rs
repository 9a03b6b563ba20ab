//! Network building blocks: sparse convolution blocks for the depth
//! encoder, pixel-adaptive convolution for fusion, and residual blocks for
//! the RGB encoder.

mod pac;
#[cfg(test)]
mod tests;

pub use pac::{pac_conv, pac_kernel, standardize_channels, PacKernelFootprint};

use crate::tensor::{max_pool_mask, ConvGeometry, Real, Result, Tensor, TensorError, Var};

/// Per-pixel reliability of a feature map, `N×1×H×W` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMask<T: Real> {
    mask: Tensor<T>,
}

impl<T: Real> ObservationMask<T> {
    pub fn new(mask: Tensor<T>) -> Result<Self> {
        let [_, c, _, _] = mask.dims4()?;
        if c != 1 {
            return Err(TensorError::Invalid(format!(
                "observation mask must have one channel, got {:?}",
                mask.shape()
            )));
        }
        if let Some(bad) = mask.data().iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(TensorError::Invalid(format!("observation mask value {bad} outside [0, 1]")));
        }
        Ok(Self { mask })
    }

    /// Binary mask marking strictly positive entries of a depth map.
    pub fn from_depth(depth: &Tensor<T>) -> Result<Self> {
        Self::new(depth.map(|d| if d > T::zero() { T::one() } else { T::zero() }))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.mask
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.mask
    }

    /// Fraction of entries that are positive.
    pub fn coverage(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        let hits = self.mask.data().iter().filter(|v| **v > T::zero()).count();
        hits as f64 / self.mask.len() as f64
    }
}

/// A feature map paired with the mask saying where it is reliable.
#[derive(Clone, Copy)]
pub struct SparseFeature<'a, 't, T: Real> {
    pub feature: Var<'t, T>,
    pub mask: &'a ObservationMask<T>,
}

/// Convolves the masked feature and dilates the mask by the same window.
/// The result is not re-masked and there is no `1/Σm` normalization.
pub fn sparse_conv_block<'t, T: Real>(
    input: SparseFeature<'_, 't, T>,
    weight: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    stride: usize,
) -> Result<(Var<'t, T>, ObservationMask<T>)> {
    let fshape = input.feature.shape();
    let mshape = input.mask.tensor().shape();
    if fshape.len() != 4 || fshape[0] != mshape[0] || fshape[2..] != mshape[2..] {
        return Err(TensorError::ShapeMismatch {
            op: "sparse_conv_block",
            lhs: fshape,
            rhs: mshape.to_vec(),
        });
    }
    let k = weight.shape().get(2).copied().unwrap_or(0);
    let geom = ConvGeometry::new(k, stride, k / 2);
    let tape = input.feature.tape();
    let masked = input.feature.mul(&tape.constant(input.mask.tensor().clone()))?;
    let out = masked.conv2d_geom(weight, bias, geom)?;
    let mask = ObservationMask::new(max_pool_mask(input.mask.tensor(), &geom)?)?;
    Ok((out, mask))
}

/// Parameters of a two-convolution residual block; the projection is
/// present when the shortcut changes shape.
pub struct ResidualParams<'t, T: Real> {
    pub conv1_w: Var<'t, T>,
    pub conv1_b: Var<'t, T>,
    pub conv2_w: Var<'t, T>,
    pub conv2_b: Var<'t, T>,
    pub proj: Option<(Var<'t, T>, Var<'t, T>)>,
}

/// `shortcut(x) + conv2(relu(conv1(x)))`, with `conv1` carrying the stride.
/// Shortcut is identity or a strided 1×1 projection.
pub fn residual_block<'t, T: Real>(x: &Var<'t, T>, params: &ResidualParams<'t, T>, stride: usize) -> Result<Var<'t, T>> {
    let h = x
        .conv2d(&params.conv1_w, Some(&params.conv1_b), stride, 1)?
        .relu()
        .conv2d(&params.conv2_w, Some(&params.conv2_b), 1, 1)?;
    let shortcut = match &params.proj {
        Some((w, b)) => x.conv2d(w, Some(b), stride, 0)?,
        None => *x,
    };
    shortcut.add(&h)
}
