//! Pixel-adaptive convolution.
//!
//! `v′_i = Σ_{j∈Ω(i)} K(f_i, f_j) · W[p_i − p_j] · v_j + b` with the Gaussian
//! kernel `K(a, b) = exp(−½‖a − b‖²)` over guidance features `f`. Taps that
//! fall into the zero padding contribute nothing.

use crate::tensor::{col2im_add, im2col, ConvGeometry, Real, Result, Tensor, TensorError, Var};

/// Square window of odd size `kernel` around each pixel, sampled every
/// `dilation` pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PacKernelFootprint {
    kernel: usize,
    dilation: usize,
}

impl PacKernelFootprint {
    pub fn new(kernel: usize, dilation: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) || dilation == 0 {
            return Err(TensorError::Invalid(format!(
                "PAC footprint needs an odd kernel and dilation ≥ 1, got k={kernel} d={dilation}"
            )));
        }
        Ok(Self { kernel, dilation })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    /// Number of neighbours `|Ω(i)|`.
    pub fn size(&self) -> usize {
        self.kernel * self.kernel
    }

    /// `(dy, dx)` offsets of the window in tap order.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = (self.kernel / 2) as isize;
        let d = self.dilation as isize;
        let mut out = Vec::with_capacity(self.size());
        for ky in -r..=r {
            for kx in -r..=r {
                out.push((ky * d, kx * d));
            }
        }
        out
    }

    fn geometry(&self) -> ConvGeometry {
        ConvGeometry::same(self.kernel, self.dilation)
    }
}

impl Default for PacKernelFootprint {
    fn default() -> Self {
        Self { kernel: 3, dilation: 1 }
    }
}

/// Gaussian affinity between two guidance vectors, in `(0, 1]`.
pub fn pac_kernel<T: Real>(fi: &[T], fj: &[T]) -> Result<T> {
    if fi.len() != fj.len() {
        return Err(TensorError::ShapeMismatch {
            op: "pac_kernel",
            lhs: vec![fi.len()],
            rhs: vec![fj.len()],
        });
    }
    let d2: T = fi.iter().zip(fj).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok((-T::lit(0.5) * d2).exp())
}

/// Kernel values for every (tap, pixel) of one sample: `k² × H×W`, zero
/// where the neighbour is outside the image.
fn kernel_map<T: Real>(f: &[T], cf: usize, h: usize, w: usize, fp: &PacKernelFootprint) -> Vec<T> {
    let plane = h * w;
    let offsets = fp.offsets();
    let mut kern = vec![T::zero(); offsets.len() * plane];
    let mut d2 = vec![T::zero(); plane];
    for (tap, &(dy, dx)) in offsets.iter().enumerate() {
        d2.iter_mut().for_each(|v| *v = T::zero());
        let y0 = (-dy).max(0) as usize;
        let y1 = (h as isize - dy.max(0)).max(0) as usize;
        let x0 = (-dx).max(0) as usize;
        let x1 = (w as isize - dx.max(0)).max(0) as usize;
        for c in 0..cf {
            let fc = &f[c * plane..(c + 1) * plane];
            for y in y0..y1 {
                let jy = (y as isize + dy) as usize;
                for x in x0..x1 {
                    let jx = (x as isize + dx) as usize;
                    let diff = fc[y * w + x] - fc[jy * w + jx];
                    d2[y * w + x] += diff * diff;
                }
            }
        }
        let dst = &mut kern[tap * plane..(tap + 1) * plane];
        let half = T::lit(-0.5);
        for y in y0..y1 {
            for x in x0..x1 {
                dst[y * w + x] = (half * d2[y * w + x]).exp();
            }
        }
    }
    kern
}

/// Pixel-adaptive convolution of depth features `v` (`N×Cin×H×W`) guided by
/// `f` (`N×Cf×H×W`), weight `Cout×Cin×k×k`, stride 1, "same" zero padding.
pub fn pac_conv<'t, T: Real>(
    v: &Var<'t, T>,
    f: &Var<'t, T>,
    weight: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    footprint: PacKernelFootprint,
) -> Result<Var<'t, T>> {
    let vv = v.value();
    let fv = f.value();
    let wv = weight.value();
    let bv = bias.map(|b| b.value());
    let [n, cin, h, w] = vv.dims4()?;
    let [fnn, cf, fh, fw] = fv.dims4()?;
    if fnn != n || fh != h || fw != w {
        return Err(TensorError::ShapeMismatch {
            op: "pac_conv",
            lhs: vv.shape().to_vec(),
            rhs: fv.shape().to_vec(),
        });
    }
    crate::tensor::check_conv_shapes("pac_conv", vv.shape(), wv.shape(), bv.as_ref().map(|b| b.shape()))?;
    if wv.shape()[2] != footprint.kernel() {
        return Err(TensorError::Invalid(format!(
            "pac_conv: weight kernel {} does not match footprint {}",
            wv.shape()[2],
            footprint.kernel()
        )));
    }
    let geom = footprint.geometry();
    let cout = wv.shape()[0];
    let taps = footprint.size();
    let plane = h * w;
    let kk = cin * taps;
    let mut out = vec![T::zero(); n * cout * plane];
    let mut kernels = Vec::with_capacity(n);
    for s in 0..n {
        let kern = kernel_map(&fv.data()[s * cf * plane..(s + 1) * cf * plane], cf, h, w, &footprint);
        let mut cols = im2col(&vv.data()[s * cin * plane..(s + 1) * cin * plane], cin, h, w, &geom);
        modulate(&mut cols, &kern, cin, taps, plane);
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
        kernels.push(kern);
    }
    let value = Tensor::from_vec(vec![n, cout, h, w], out)?;
    let has_bias = bias.is_some();
    let offsets = footprint.offsets();
    let backward = Box::new(move |g: &[T]| {
        let mut gv = vec![T::zero(); vv.len()];
        let mut gf = vec![T::zero(); fv.len()];
        let mut gw = vec![T::zero(); wv.len()];
        let mut gb = vec![T::zero(); cout];
        let mut dmod = vec![T::zero(); kk * plane];
        for s in 0..n {
            let kern = &kernels[s];
            let gs = &g[s * cout * plane..(s + 1) * cout * plane];
            let raw = im2col(&vv.data()[s * cin * plane..(s + 1) * cin * plane], cin, h, w, &geom);
            let mut modded = raw.clone();
            modulate(&mut modded, kern, cin, taps, plane);
            T::gemm(
                cout,
                plane,
                kk,
                T::one(),
                gs,
                plane as isize,
                1,
                &modded,
                1,
                plane as isize,
                T::one(),
                &mut gw,
                kk as isize,
                1,
            );
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
                &mut dmod,
                plane as isize,
                1,
            );
            for o in 0..cout {
                gb[o] += gs[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
            }
            // d(kernel) = Σ_c dmod · raw, before dmod is modulated in place
            let mut dkern = vec![T::zero(); taps * plane];
            for c in 0..cin {
                for tap in 0..taps {
                    let row = (c * taps + tap) * plane;
                    let dk = &mut dkern[tap * plane..(tap + 1) * plane];
                    for p in 0..plane {
                        dk[p] += dmod[row + p] * raw[row + p];
                    }
                }
            }
            modulate(&mut dmod, kern, cin, taps, plane);
            col2im_add(&dmod, cin, h, w, &geom, &mut gv[s * cin * plane..(s + 1) * cin * plane]);

            let fs = &fv.data()[s * cf * plane..(s + 1) * cf * plane];
            let gfs = &mut gf[s * cf * plane..(s + 1) * cf * plane];
            for (tap, &(dy, dx)) in offsets.iter().enumerate() {
                let y0 = (-dy).max(0) as usize;
                let y1 = (h as isize - dy.max(0)).max(0) as usize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx.max(0)).max(0) as usize;
                for y in y0..y1 {
                    let jy = (y as isize + dy) as usize;
                    for x in x0..x1 {
                        let jx = (x as isize + dx) as usize;
                        let (i, j) = (y * w + x, jy * w + jx);
                        let coef = dkern[tap * plane + i] * kern[tap * plane + i];
                        if coef == T::zero() {
                            continue;
                        }
                        for c in 0..cf {
                            let diff = fs[c * plane + i] - fs[c * plane + j];
                            gfs[c * plane + i] -= coef * diff;
                            gfs[c * plane + j] += coef * diff;
                        }
                    }
                }
            }
        }
        let mut grads = vec![Some(gv), Some(gf), Some(gw)];
        if has_bias {
            grads.push(Some(gb));
        }
        grads
    });
    let mut parents = vec![*v, *f, *weight];
    if let Some(b) = bias {
        parents.push(*b);
    }
    Ok(v.tape().record(&parents, value, backward))
}

fn modulate<T: Real>(cols: &mut [T], kern: &[T], cin: usize, taps: usize, plane: usize) {
    for c in 0..cin {
        for tap in 0..taps {
            let row = (c * taps + tap) * plane;
            for (x, &k) in cols[row..row + plane].iter_mut().zip(&kern[tap * plane..(tap + 1) * plane]) {
                *x *= k;
            }
        }
    }
}

/// Zero-mean, unit-variance per channel over each image (`eps` inside the
/// square root). Keeps encoder feature magnitudes from collapsing the kernel.
pub fn standardize_channels<'t, T: Real>(f: &Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
    let mean = f.mean_axes(&[2, 3])?;
    let centered = f.sub(&mean)?;
    let var = centered.square().mean_axes(&[2, 3])?;
    centered.div(&var.add_scalar(eps).sqrt())
}
