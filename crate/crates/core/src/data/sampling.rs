//! Sparse-depth patterns: uniform random pixels and simulated LiDAR rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result, SparseDepthMap};
use crate::geometry::CameraIntrinsics;

/// Keeps `n` distinct valid pixels drawn uniformly at random.
pub fn sample_uniform(depth: &SparseDepthMap, n: usize, seed: u64) -> Result<SparseDepthMap> {
    let valid: Vec<usize> = (0..depth.data().len()).filter(|&i| depth.is_valid(i)).collect();
    if n > valid.len() {
        return Err(DataError::TooManySamples {
            requested: n,
            available: valid.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; depth.data().len()];
    for j in rand::seq::index::sample(&mut rng, valid.len(), n) {
        keep[valid[j]] = true;
    }
    Ok(depth.masked(|i| keep[i]))
}

/// Keeps the pixels hit by `lines` laser beams of a spinning sensor at the
/// camera centre. Beam elevations are spread evenly over the vertical field
/// of view with per-beam jitter; a beam traces a curve `v = cy + fy·tanθ /
/// cos φ` across azimuth `φ`, with sub-pixel noise per return.
pub fn sample_scanlines(depth: &SparseDepthMap, lines: usize, k: &CameraIntrinsics, seed: u64) -> SparseDepthMap {
    let (w, h) = (depth.width(), depth.height());
    if lines == 0 || w == 0 || h == 0 {
        return SparseDepthMap::empty(w, h);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let elevation = |v: f64| ((v - k.cy) / k.fy).atan();
    let (lo, hi) = (elevation(-0.5), elevation(h as f64 - 0.5));
    let spacing = (hi - lo) / lines as f64;
    let mut keep = vec![false; w * h];
    for b in 0..lines {
        let theta = lo + (b as f64 + 0.5 + rng.gen_range(-0.25..0.25)) * spacing;
        for x in 0..w {
            let phi = ((x as f64 - k.cx) / k.fx).atan();
            let v = k.cy + k.fy * theta.tan() / phi.cos() + rng.gen_range(-0.3..0.3);
            let y = v.round();
            if y >= 0.0 && (y as usize) < h {
                keep[y as usize * w + x] = true;
            }
        }
    }
    depth.masked(|i| keep[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(w: usize, h: usize) -> SparseDepthMap {
        SparseDepthMap::new(w, h, (0..w * h).map(|i| 1.0 + (i % 7) as f32).collect()).unwrap()
    }

    #[test]
    fn uniform_counts_and_determinism() {
        let d = dense(40, 30);
        let s = sample_uniform(&d, 500, 3).unwrap();
        assert_eq!(s.valid_count(), 500);
        assert_eq!(s, sample_uniform(&d, 500, 3).unwrap());
        assert_ne!(s, sample_uniform(&d, 500, 4).unwrap());
        for i in 0..d.data().len() {
            assert!(s.data()[i] == 0.0 || s.data()[i] == d.data()[i]);
        }
        assert_eq!(sample_uniform(&d, 1200, 0).unwrap(), d);
        assert!(matches!(sample_uniform(&d, 1201, 0), Err(DataError::TooManySamples { .. })));
    }

    #[test]
    fn uniform_only_draws_valid_pixels() {
        let d = dense(10, 10).masked(|i| i % 3 == 0);
        let s = sample_uniform(&d, 20, 1).unwrap();
        assert!((0..100).all(|i| !s.is_valid(i) || i % 3 == 0));
    }

    #[test]
    fn scanline_coverage() {
        let k = CameraIntrinsics::from_fov(160, 128, 60f64.to_radians()).unwrap();
        let d = dense(160, 128);
        let s = sample_scanlines(&d, 16, &k, 7);
        let cov = s.coverage();
        assert!((0.05..=0.25).contains(&cov), "coverage {cov}");
        let rows = (0..128).filter(|y| (0..160).any(|x| s.get(x, *y) > 0.0)).count();
        assert!(rows >= 16);
        let full = sample_scanlines(&d, 128, &k, 7);
        assert!(full.coverage() > 0.8, "{}", full.coverage());
        assert_eq!(sample_scanlines(&SparseDepthMap::empty(160, 128), 16, &k, 7).valid_count(), 0);
    }
}
