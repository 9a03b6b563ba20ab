//! Relative camera pose from feature matches and sparse depth: descriptor
//! matching, depth lookup, Gauss-Newton PnP and RANSAC.

mod features;
mod pnp;

pub use features::{FeatureSet, Keypoint};
pub use pnp::{pnp_refine, ransac_pnp, reprojection_error, PnPPoint, RansacConfig, RansacResult};

use thiserror::Error;

use crate::data::SparseDepthMap;
use crate::geometry::{CameraIntrinsics, GeometryError, PoseSE3};

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("feature file: {0}")]
    Format(String),
    #[error("{0}: {1}")]
    Io(String, String),
    #[error("descriptor dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least 2 source descriptors for the ratio test, got {0}")]
    TooFewDescriptors(usize),
    #[error("only {found} depth-backed correspondences, need {needed}")]
    InsufficientCorrespondences { found: usize, needed: usize },
    #[error("PnP did not converge: {0}")]
    NoConvergence(String),
    #[error("degenerate geometry: no hypothesis reached {0} inliers")]
    DegenerateGeometry(usize),
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Nearest-to-second-nearest distance ratio a match must stay below.
pub const RATIO_TEST: f64 = 0.8;

/// A matched keypoint pair, by index into the two feature sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub target_index: usize,
    pub source_index: usize,
    pub target: (f64, f64),
    pub source: (f64, f64),
}

fn dist2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum()
}

/// `(nearest, nearest distance², second distance²)` by exhaustive search.
fn two_nearest(query: &[f32], pool: &[Keypoint]) -> (usize, f64, f64) {
    let (mut best, mut d1, mut d2) = (usize::MAX, f64::INFINITY, f64::INFINITY);
    for (j, k) in pool.iter().enumerate() {
        let d = dist2(query, &k.descriptor);
        if d < d1 {
            d2 = d1;
            d1 = d;
            best = j;
        } else if d < d2 {
            d2 = d;
        }
    }
    (best, d1, d2)
}

/// Exact nearest-neighbour matching with the ratio test and a mutual
/// consistency check.
pub fn match_descriptors(target: &FeatureSet, source: &FeatureSet) -> Result<Vec<Correspondence>, PoseError> {
    if target.dim() != source.dim() {
        return Err(PoseError::DimensionMismatch(target.dim(), source.dim()));
    }
    if source.len() < 2 {
        return Err(PoseError::TooFewDescriptors(source.len()));
    }
    let (tk, sk) = (target.keypoints(), source.keypoints());
    let mut out = Vec::new();
    for (i, k) in tk.iter().enumerate() {
        let (j, d1, d2) = two_nearest(&k.descriptor, sk);
        // ratio of distances, compared in squared form
        if !(d1 < RATIO_TEST * RATIO_TEST * d2) {
            continue;
        }
        let (back, _, _) = two_nearest(&sk[j].descriptor, tk);
        if back != i {
            continue;
        }
        out.push(Correspondence {
            target_index: i,
            source_index: j,
            target: (k.u as f64, k.v as f64),
            source: (sk[j].u as f64, sk[j].v as f64),
        });
    }
    Ok(out)
}

/// Depth of the valid sparse pixel nearest to the rounded keypoint, within
/// `radius` pixels; ties go to the first in row-major order.
pub fn lookup_sparse_depth(u: f64, v: f64, sparse: &SparseDepthMap, radius: f64) -> Option<f64> {
    let (w, h) = (sparse.width() as isize, sparse.height() as isize);
    let (cx, cy) = (u.round() as isize, v.round() as isize);
    let r = radius.max(0.0).floor() as isize;
    let mut best: Option<(f64, f64)> = None;
    for y in (cy - r).max(0)..=(cy + r).min(h - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(w - 1) {
            let d = sparse.get(x as usize, y as usize);
            if d <= 0.0 {
                continue;
            }
            let dist = (((x - cx).pow(2) + (y - cy).pow(2)) as f64).sqrt();
            if dist > radius {
                continue;
            }
            if best.is_none_or(|(bd, _)| dist < bd) {
                best = Some((dist, d as f64));
            }
        }
    }
    best.map(|(_, d)| d)
}

/// Outcome of [`estimate_relative_pose`].
#[derive(Clone, Debug)]
pub struct PoseEstimate {
    /// `T_{t→s}`
    pub pose: PoseSE3,
    pub matches: usize,
    pub depth_backed: usize,
    pub inliers: usize,
}

/// Matches features, lifts target keypoints with sparse depth and solves
/// RANSAC-PnP for `T_{t→s}`.
pub fn estimate_relative_pose(
    target: &FeatureSet,
    source: &FeatureSet,
    sparse_target: &SparseDepthMap,
    k: &CameraIntrinsics,
    config: &RansacConfig,
) -> Result<PoseEstimate, PoseError> {
    config.validate()?;
    let matches = if source.len() < 2 {
        Vec::new()
    } else {
        match_descriptors(target, source)?
    };
    let mut points = Vec::with_capacity(matches.len());
    for m in &matches {
        if let Some(d) = lookup_sparse_depth(m.target.0, m.target.1, sparse_target, config.lookup_radius) {
            points.push(PnPPoint {
                point: k.backproject(m.target.0, m.target.1, d)?,
                pixel: nalgebra::Vector2::new(m.source.0, m.source.1),
            });
        }
    }
    if points.len() < config.min_sample {
        return Err(PoseError::InsufficientCorrespondences {
            found: points.len(),
            needed: config.min_sample,
        });
    }
    let result = ransac_pnp(&points, k, config)?;
    Ok(PoseEstimate {
        pose: result.pose,
        matches: matches.len(),
        depth_backed: points.len(),
        inliers: result.inliers.iter().filter(|b| **b).count(),
    })
}
