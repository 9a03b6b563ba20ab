//! Differentiable view synthesis: back-project target pixels with a depth
//! map, move them into the source camera, project, and bilinearly sample
//! the source image there.

use crate::tensor::{Real, Result, Tensor, TensorError, Var};

use super::{CameraIntrinsics, PoseSE3, EPSILON_Z};

/// Per-pixel source coordinates (`N×2×H×W`, channel 0 = u, 1 = v) and an
/// `N×1×H×W` validity mask.
pub struct WarpGrid<'t, T: Real> {
    pub coords: Var<'t, T>,
    pub valid: Tensor<T>,
}

/// Warps every target pixel into the source view for each batch item.
///
/// `depth` is `N×1×H×W` in meters; `poses[n]` is `T_{t→s}` for item `n`.
/// Pixels whose transformed depth is not positive, whose own depth is not
/// positive, or that land outside `[0, W−1]×[0, H−1]` are invalid.
pub fn warp_grid<'t, T: Real>(depth: &Var<'t, T>, k: &CameraIntrinsics, poses: &[PoseSE3]) -> Result<WarpGrid<'t, T>> {
    let dv = depth.value();
    let [n, c, h, w] = dv.dims4()?;
    if c != 1 || poses.len() != n {
        return Err(TensorError::Invalid(format!(
            "warp_grid: depth {:?} needs one channel and {} poses (got {})",
            dv.shape(),
            n,
            poses.len()
        )));
    }
    let plane = h * w;
    let mut coords = vec![T::zero(); n * 2 * plane];
    let mut valid = vec![T::zero(); n * plane];
    // d(u,v)/d(depth), kept for the backward pass
    let mut jac = vec![T::zero(); n * 2 * plane];
    let (w_max, h_max) = ((w - 1) as f64, (h - 1) as f64);
    for (s, pose) in poses.iter().enumerate() {
        let identity = pose.is_identity();
        let r = pose.rotation();
        let t = pose.translation();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let d = dv.data()[s * plane + i].to_f64_lossy();
                let (u, v, du, dvv, ok) = if identity {
                    (x as f64, y as f64, 0.0, 0.0, d > 0.0)
                } else {
                    let a = k.ray(x as f64, y as f64);
                    let ra = r * a;
                    let p = ra * d + t;
                    if p.z <= EPSILON_Z || d <= 0.0 {
                        (-1.0, -1.0, 0.0, 0.0, false)
                    } else {
                        let iz = 1.0 / p.z;
                        let u = k.fx * p.x * iz + k.cx;
                        let v = k.fy * p.y * iz + k.cy;
                        let du = k.fx * (ra.x * p.z - p.x * ra.z) * iz * iz;
                        let dv_ = k.fy * (ra.y * p.z - p.y * ra.z) * iz * iz;
                        (u, v, du, dv_, true)
                    }
                };
                let inside = ok && u >= 0.0 && v >= 0.0 && u <= w_max && v <= h_max;
                coords[(s * 2) * plane + i] = T::lit(u);
                coords[(s * 2 + 1) * plane + i] = T::lit(v);
                jac[(s * 2) * plane + i] = T::lit(du);
                jac[(s * 2 + 1) * plane + i] = T::lit(dvv);
                if inside {
                    valid[s * plane + i] = T::one();
                }
            }
        }
    }
    let value = Tensor::from_vec(vec![n, 2, h, w], coords)?;
    let backward = Box::new(move |g: &[T]| {
        let mut gd = vec![T::zero(); n * plane];
        for s in 0..n {
            for i in 0..plane {
                gd[s * plane + i] =
                    g[(s * 2) * plane + i] * jac[(s * 2) * plane + i] + g[(s * 2 + 1) * plane + i] * jac[(s * 2 + 1) * plane + i];
            }
        }
        vec![Some(gd)]
    });
    Ok(WarpGrid {
        coords: depth.tape().record(&[*depth], value, backward),
        valid: Tensor::from_vec(vec![n, 1, h, w], valid)?,
    })
}

/// 4-neighbour bilinear lookup. Returns the value and its `(∂/∂u, ∂/∂v)`.
#[inline]
fn bilinear_at<T: Real>(plane: &[T], w: usize, h: usize, u: T, v: T) -> (T, T, T, [(usize, T); 4]) {
    let x0f = u.floor();
    let y0f = v.floor();
    let ax = u - x0f;
    let ay = v - y0f;
    let x0 = x0f.to_f64_lossy() as usize;
    let y0 = y0f.to_f64_lossy() as usize;
    // at the far edge the +1 neighbour has zero weight; clamp its index
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let one = T::one();
    let taps = [
        (y0 * w + x0, (one - ax) * (one - ay)),
        (y0 * w + x1, ax * (one - ay)),
        (y1 * w + x0, (one - ax) * ay),
        (y1 * w + x1, ax * ay),
    ];
    let s00 = plane[taps[0].0];
    let s01 = plane[taps[1].0];
    let s10 = plane[taps[2].0];
    let s11 = plane[taps[3].0];
    let val = if ax == T::zero() && ay == T::zero() {
        s00
    } else {
        taps.iter().map(|&(i, wt)| plane[i] * wt).sum()
    };
    let du = (one - ay) * (s01 - s00) + ay * (s11 - s10);
    let dv = (one - ax) * (s10 - s00) + ax * (s11 - s01);
    (val, du, dv, taps)
}

/// Samples `source` (`N×C×H×W`) at `grid`; invalid cells produce 0 and
/// receive no gradient. Differentiable w.r.t. source values and coordinates.
pub fn bilinear_sample<'t, T: Real>(source: &Var<'t, T>, grid: &WarpGrid<'t, T>) -> Result<Var<'t, T>> {
    let sv = source.value();
    let gv = grid.coords.value();
    let [n, c, h, w] = sv.dims4()?;
    let [gn, gc, gh, gw] = gv.dims4()?;
    if gn != n || gc != 2 || gh != h || gw != w || grid.valid.len() != n * h * w {
        return Err(TensorError::ShapeMismatch {
            op: "bilinear_sample",
            lhs: sv.shape().to_vec(),
            rhs: gv.shape().to_vec(),
        });
    }
    let plane = h * w;
    let valid = grid.valid.data().to_vec();
    let mut out = vec![T::zero(); sv.len()];
    for s in 0..n {
        for i in 0..plane {
            if valid[s * plane + i] <= T::zero() {
                continue;
            }
            let u = gv.data()[(s * 2) * plane + i];
            let v = gv.data()[(s * 2 + 1) * plane + i];
            for ch in 0..c {
                let src = &sv.data()[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                out[(s * c + ch) * plane + i] = bilinear_at(src, w, h, u, v).0;
            }
        }
    }
    let value = Tensor::from_vec(sv.shape().to_vec(), out)?;
    let backward = Box::new(move |g: &[T]| {
        let mut gs = vec![T::zero(); sv.len()];
        let mut gg = vec![T::zero(); gv.len()];
        for s in 0..n {
            for i in 0..plane {
                if valid[s * plane + i] <= T::zero() {
                    continue;
                }
                let u = gv.data()[(s * 2) * plane + i];
                let v = gv.data()[(s * 2 + 1) * plane + i];
                let (mut acc_u, mut acc_v) = (T::zero(), T::zero());
                for ch in 0..c {
                    let off = (s * c + ch) * plane;
                    let gi = g[off + i];
                    let (_, du, dv, taps) = bilinear_at(&sv.data()[off..off + plane], w, h, u, v);
                    for (idx, wt) in taps {
                        gs[off + idx] += gi * wt;
                    }
                    acc_u += gi * du;
                    acc_v += gi * dv;
                }
                gg[(s * 2) * plane + i] = acc_u;
                gg[(s * 2 + 1) * plane + i] = acc_v;
            }
        }
        vec![Some(gs), Some(gg)]
    });
    Ok(source.tape().record(&[*source, grid.coords], value, backward))
}

/// Reconstructs the target view from `source` using target depth and
/// `T_{t→s}`. Returns the synthesized image and its validity mask.
pub fn synthesize_view<'t, T: Real>(
    source: &Var<'t, T>,
    depth: &Var<'t, T>,
    k: &CameraIntrinsics,
    poses: &[PoseSE3],
) -> Result<(Var<'t, T>, Tensor<T>)> {
    let grid = warp_grid(depth, k, poses)?;
    let img = bilinear_sample(source, &grid)?;
    Ok((img, grid.valid))
}
