use super::{ConvGeometry, Real, Result, Tensor, TensorError, Var};

/// Reflect index into `[0, n)` (edge pixel not repeated), for offsets of ±1.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * n - 2 - i as usize
    } else {
        i as usize
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// 3×3 box filter, stride 1, reflection padding.
    pub fn avg_pool_3x3(&self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let [n, c, h, w] = xv.dims4()?;
        if h < 3 || w < 3 {
            return Err(TensorError::SpatialTooSmall {
                op: "avg_pool_3x3",
                height: h,
                width: w,
            });
        }
        let ninth = T::one() / T::lit(9.0);
        let planes = n * c;
        let d = xv.data();
        let mut out = vec![T::zero(); xv.len()];
        for p in 0..planes {
            let src = &d[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = T::zero();
                    for dy in -1..=1isize {
                        let yy = reflect(y as isize + dy, h);
                        for dx in -1..=1isize {
                            acc += src[yy * w + reflect(x as isize + dx, w)];
                        }
                    }
                    dst[y * w + x] = acc * ninth;
                }
            }
        }
        let len = xv.len();
        let backward = Box::new(move |g: &[T]| {
            let mut gx = vec![T::zero(); len];
            for p in 0..planes {
                let gs = &g[p * h * w..(p + 1) * h * w];
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for y in 0..h {
                    for x in 0..w {
                        let gi = gs[y * w + x] * ninth;
                        for dy in -1..=1isize {
                            let yy = reflect(y as isize + dy, h);
                            for dx in -1..=1isize {
                                dst[yy * w + reflect(x as isize + dx, w)] += gi;
                            }
                        }
                    }
                }
            }
            vec![Some(gx)]
        });
        Ok(self.tape.record(&[*self], Tensor::from_vec(xv.shape().to_vec(), out)?, backward))
    }
}

/// Binary dilation of a `N×1×H×W` mask: 1 where any value in the window is
/// positive. Padding never contributes.
pub fn max_pool_mask<T: Real>(mask: &Tensor<T>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    let [n, c, h, w] = mask.dims4()?;
    let (ho, wo) = geom.output_size(h, w)?;
    let mut out = vec![T::zero(); n * c * ho * wo];
    for p in 0..n * c {
        let src = &mask.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut hit = false;
                'win: for ky in 0..geom.kernel {
                    let Some(iy) = geom.source(oy, ky, h) else { continue };
                    for kx in 0..geom.kernel {
                        if let Some(ix) = geom.source(ox, kx, w) {
                            if src[iy * w + ix] > T::zero() {
                                hit = true;
                                break 'win;
                            }
                        }
                    }
                }
                if hit {
                    dst[oy * wo + ox] = T::one();
                }
            }
        }
    }
    Tensor::from_vec(vec![n, c, ho, wo], out)
}
