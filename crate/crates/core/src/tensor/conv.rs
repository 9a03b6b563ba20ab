//! 2-D cross-correlation via im2col + GEMM, zero padding.

use super::{Real, Result, Tensor, TensorError, Var};

/// Sliding-window geometry shared by convolution-like ops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            dilation: 1,
        }
    }

    /// Stride-1 "same" window of odd size `kernel` with the given dilation.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            padding: dilation * (kernel / 2),
            dilation,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span = self.dilation * (self.kernel - 1) + 1;
        if self.stride == 0 || h + 2 * self.padding < span || w + 2 * self.padding < span {
            return Err(TensorError::SpatialTooSmall {
                op: "conv2d",
                height: h,
                width: w,
            });
        }
        Ok((
            (h + 2 * self.padding - span) / self.stride + 1,
            (w + 2 * self.padding - span) / self.stride + 1,
        ))
    }

    /// Input coordinate read by output position `o` at kernel tap `k`,
    /// or `None` when it falls into the zero padding.
    #[inline]
    pub fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + k * self.dilation) as isize - self.padding as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

/// Unfolds one `C×H×W` image into a `(C·k·k) × (Ho·Wo)` column matrix.
pub fn im2col<T: Real>(src: &[T], c: usize, h: usize, w: usize, g: &ConvGeometry) -> Vec<T> {
    let (ho, wo) = g.output_size(h, w).expect("validated by caller");
    let k = g.kernel;
    let cols_n = ho * wo;
    let mut cols = vec![T::zero(); c * k * k * cols_n];
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * cols_n;
                let dst = &mut cols[row..row + cols_n];
                for oy in 0..ho {
                    let Some(iy) = g.source(oy, ky, h) else { continue };
                    let src_row = &plane[iy * w..(iy + 1) * w];
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if g.stride == 1 {
                        // contiguous run of valid x positions
                        let off = (kx * g.dilation) as isize - g.padding as isize;
                        let x0 = (-off).max(0) as usize;
                        let x1 = ((w as isize - off).min(wo as isize)).max(0) as usize;
                        if x0 < x1 {
                            let s0 = (x0 as isize + off) as usize;
                            dst_row[x0..x1].copy_from_slice(&src_row[s0..s0 + (x1 - x0)]);
                        }
                    } else {
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            if let Some(ix) = g.source(ox, kx, w) {
                                *d = src_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds columns back, adding into `dst`.
pub fn col2im_add<T: Real>(cols: &[T], c: usize, h: usize, w: usize, g: &ConvGeometry, dst: &mut [T]) {
    let (ho, wo) = g.output_size(h, w).expect("validated by caller");
    let k = g.kernel;
    let cols_n = ho * wo;
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * cols_n;
                let src = &cols[row..row + cols_n];
                for oy in 0..ho {
                    let Some(iy) = g.source(oy, ky, h) else { continue };
                    for ox in 0..wo {
                        if let Some(ix) = g.source(ox, kx, w) {
                            plane[iy * w + ix] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn check_conv_shapes(op: &'static str, input: &[usize], weight: &[usize], bias: Option<&[usize]>) -> Result<()> {
    if input.len() != 4 || weight.len() != 4 || weight[2] != weight[3] {
        return Err(TensorError::Invalid(format!(
            "{op}: expected N×C×H×W input and O×C×k×k weight, got {input:?} and {weight:?}"
        )));
    }
    if input[1] != weight[1] {
        return Err(TensorError::ChannelMismatch {
            op,
            input: input[1],
            weight: weight[1],
        });
    }
    if let Some(b) = bias {
        if b.iter().product::<usize>() != weight[0] {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: weight.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(())
}

impl<'t, T: Real> Var<'t, T> {
    /// Zero-padded cross-correlation of `N×C×H×W` input with an `O×C×k×k`
    /// weight.
    pub fn conv2d(&self, weight: &Var<'t, T>, bias: Option<&Var<'t, T>>, stride: usize, padding: usize) -> Result<Var<'t, T>> {
        let k = weight.value().shape().get(2).copied().unwrap_or(0);
        self.conv2d_geom(weight, bias, ConvGeometry::new(k, stride, padding))
    }

    pub fn conv2d_geom(&self, weight: &Var<'t, T>, bias: Option<&Var<'t, T>>, geom: ConvGeometry) -> Result<Var<'t, T>> {
        let xv = self.value();
        let wv = weight.value();
        let bv = bias.map(|b| b.value());
        check_conv_shapes("conv2d", xv.shape(), wv.shape(), bv.as_ref().map(|b| b.shape()))?;
        let [n, c, h, w] = xv.dims4()?;
        let cout = wv.shape()[0];
        let (ho, wo) = geom.output_size(h, w)?;
        let kk = c * geom.kernel * geom.kernel;
        let plane = ho * wo;
        let mut out = vec![T::zero(); n * cout * plane];
        for s in 0..n {
            let cols = im2col(&xv.data()[s * c * h * w..(s + 1) * c * h * w], c, h, w, &geom);
            let dst = &mut out[s * cout * plane..(s + 1) * cout * plane];
            if let Some(b) = &bv {
                for (o, &bo) in b.data().iter().enumerate() {
                    dst[o * plane..(o + 1) * plane].fill(bo);
                }
            }
            T::gemm(
                cout,
                kk,
                plane,
                T::one(),
                wv.data(),
                kk as isize,
                1,
                &cols,
                plane as isize,
                1,
                T::one(),
                dst,
                plane as isize,
                1,
            );
        }
        let value = Tensor::from_vec(vec![n, cout, ho, wo], out)?;
        let has_bias = bias.is_some();
        let backward = Box::new(move |g: &[T]| {
            let mut gx = vec![T::zero(); xv.len()];
            let mut gw = vec![T::zero(); wv.len()];
            let mut gb = vec![T::zero(); cout];
            let mut dcols = vec![T::zero(); kk * plane];
            for s in 0..n {
                let src = &xv.data()[s * c * h * w..(s + 1) * c * h * w];
                let gs = &g[s * cout * plane..(s + 1) * cout * plane];
                let cols = im2col(src, c, h, w, &geom);
                // dW += dOut · colsᵀ
                T::gemm(
                    cout,
                    plane,
                    kk,
                    T::one(),
                    gs,
                    plane as isize,
                    1,
                    &cols,
                    1,
                    plane as isize,
                    T::one(),
                    &mut gw,
                    kk as isize,
                    1,
                );
                // dcols = Wᵀ · dOut
                T::gemm(
                    kk,
                    cout,
                    plane,
                    T::one(),
                    wv.data(),
                    1,
                    kk as isize,
                    gs,
                    plane as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    plane as isize,
                    1,
                );
                col2im_add(&dcols, c, h, w, &geom, &mut gx[s * c * h * w..(s + 1) * c * h * w]);
                for o in 0..cout {
                    gb[o] += gs[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
                }
            }
            let mut grads = vec![Some(gx), Some(gw)];
            if has_bias {
                grads.push(Some(gb));
            }
            grads
        });
        let mut parents = vec![*self, *weight];
        if let Some(b) = bias {
            parents.push(*b);
        }
        Ok(self.tape.record(&parents, value, backward))
    }
}
