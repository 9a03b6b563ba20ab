//! Perspective-n-point by Gauss-Newton on the SE(3) twist, wrapped in
//! RANSAC.

use nalgebra::{Matrix6, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PoseError;
use crate::geometry::{CameraIntrinsics, PoseSE3, EPSILON_Z};

const MAX_ITERATIONS: usize = 50;
const STEP_TOL: f64 = 1e-10;

/// A 3-D point in the target camera and where it is seen in the source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnPPoint {
    pub point: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// reprojection error in pixels below which a point is an inlier
    pub inlier_threshold: f64,
    pub confidence: f64,
    pub min_sample: usize,
    /// sparse-depth search radius around a keypoint, pixels
    pub lookup_radius: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            inlier_threshold: 2.0,
            confidence: 0.999,
            min_sample: 4,
            lookup_radius: 2.0,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), PoseError> {
        if self.min_sample < 4 {
            return Err(PoseError::InvalidConfig(format!("min_sample {} < 4", self.min_sample)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(PoseError::InvalidConfig(format!("confidence {} outside (0, 1)", self.confidence)));
        }
        if !(self.inlier_threshold > 0.0) || !(self.lookup_radius >= 0.0) || self.max_iterations == 0 {
            return Err(PoseError::InvalidConfig(format!(
                "need positive threshold and iterations, non-negative radius: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Reprojection error in pixels, or `None` behind the camera.
pub fn reprojection_error(pose: &PoseSE3, k: &CameraIntrinsics, p: &PnPPoint) -> Option<f64> {
    let q = pose.transform(&p.point);
    if q.z <= EPSILON_Z {
        return None;
    }
    let u = k.fx * q.x / q.z + k.cx;
    let v = k.fy * q.y / q.z + k.cy;
    Some(((u - p.pixel.x).powi(2) + (v - p.pixel.y).powi(2)).sqrt())
}

fn cost(pose: &PoseSE3, k: &CameraIntrinsics, pts: &[PnPPoint]) -> f64 {
    pts.iter()
        .map(|p| reprojection_error(pose, k, p).map_or(f64::INFINITY, |e| e * e))
        .sum()
}

/// Normal equations `JᵀJ`, `Jᵀr` for a left-multiplied twist update.
fn normal_equations(pose: &PoseSE3, k: &CameraIntrinsics, pts: &[PnPPoint]) -> Option<(Matrix6<f64>, Vector6<f64>)> {
    let mut jtj = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    for p in pts {
        let q = pose.transform(&p.point);
        if q.z <= EPSILON_Z {
            return None;
        }
        let iz = 1.0 / q.z;
        let r = Vector2::new(k.fx * q.x * iz + k.cx - p.pixel.x, k.fy * q.y * iz + k.cy - p.pixel.y);
        // d(proj)/dq
        let du = Vector3::new(k.fx * iz, 0.0, -k.fx * q.x * iz * iz);
        let dv = Vector3::new(0.0, k.fy * iz, -k.fy * q.y * iz * iz);
        // dq/dδ = [I | −[q]×]
        let row = |g: Vector3<f64>| Vector6::new(g.x, g.y, g.z, q.y * g.z - q.z * g.y, q.z * g.x - q.x * g.z, q.x * g.y - q.y * g.x);
        let (ju, jv) = (row(du), row(dv));
        jtj += ju * ju.transpose() + jv * jv.transpose();
        jtr += ju * r.x + jv * r.y;
    }
    Some((jtj, jtr))
}

/// Minimizes the summed squared reprojection error starting at `initial`.
/// Falls back to additive damping when a plain Gauss-Newton step does not
/// reduce the cost.
pub fn pnp_refine(pts: &[PnPPoint], k: &CameraIntrinsics, initial: &PoseSE3) -> Result<PoseSE3, PoseError> {
    if pts.len() < 4 {
        return Err(PoseError::InsufficientCorrespondences {
            found: pts.len(),
            needed: 4,
        });
    }
    let mut pose = *initial;
    let mut current = cost(&pose, k, pts);
    if !current.is_finite() {
        return Err(PoseError::NoConvergence("initial pose puts points behind the camera".into()));
    }
    for _ in 0..MAX_ITERATIONS {
        let (jtj, jtr) = normal_equations(&pose, k, pts).ok_or_else(|| PoseError::NoConvergence("point behind the camera".into()))?;
        let scale = jtj.trace() / 6.0;
        let mut accepted = None;
        for damping in std::iter::once(0.0).chain((0..12).map(|i| scale * 1e-6 * 10f64.powi(i))) {
            let a = jtj + Matrix6::identity() * damping;
            let Some(step) = a.cholesky().map(|c| -c.solve(&jtr)) else {
                continue;
            };
            if !step.iter().all(|v| v.is_finite()) {
                continue;
            }
            if step.norm() < STEP_TOL {
                return Ok(pose);
            }
            let candidate = PoseSE3::exp(&step).compose(&pose);
            let c = cost(&candidate, k, pts);
            if c <= current {
                accepted = Some((candidate, c, step.norm()));
                break;
            }
        }
        match accepted {
            Some((p, c, norm)) => {
                pose = p;
                current = c;
                if norm < STEP_TOL {
                    break;
                }
            }
            // no damping level reduces the cost: at a minimum to precision
            None if current.is_finite() && jtj.iter().all(|v| v.is_finite()) => break,
            None => return Err(PoseError::NoConvergence("singular normal equations".into())),
        }
    }
    Ok(pose)
}

#[derive(Clone, Debug)]
pub struct RansacResult {
    pub pose: PoseSE3,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

fn inlier_flags(pose: &PoseSE3, k: &CameraIntrinsics, pts: &[PnPPoint], threshold: f64) -> Vec<bool> {
    pts.iter()
        .map(|p| reprojection_error(pose, k, p).is_some_and(|e| e <= threshold))
        .collect()
}

/// Iterations needed to draw an all-inlier sample with the given confidence.
fn required_iterations(inlier_ratio: f64, sample: usize, confidence: f64) -> f64 {
    let good = inlier_ratio.powi(sample as i32);
    if good >= 1.0 {
        return 1.0;
    }
    if good <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - good).ln()
}

/// RANSAC over minimal samples refined from identity, then a final
/// refinement on every inlier of the best hypothesis. Iteration `i` draws
/// its sample from its own RNG stream, so results do not depend on
/// evaluation order.
pub fn ransac_pnp(pts: &[PnPPoint], k: &CameraIntrinsics, config: &RansacConfig) -> Result<RansacResult, PoseError> {
    config.validate()?;
    let n = pts.len();
    if n < config.min_sample {
        return Err(PoseError::InsufficientCorrespondences {
            found: n,
            needed: config.min_sample,
        });
    }
    let mut best: Option<(usize, PoseSE3, Vec<bool>)> = None;
    let mut iterations = 0;
    for it in 0..config.max_iterations {
        iterations = it + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(it as u64);
        let idx = rand::seq::index::sample(&mut rng, n, config.min_sample);
        let sample: Vec<PnPPoint> = idx.iter().map(|i| pts[i]).collect();
        let Ok(hyp) = pnp_refine(&sample, k, &PoseSE3::identity()) else {
            continue;
        };
        let flags = inlier_flags(&hyp, k, pts, config.inlier_threshold);
        let count = flags.iter().filter(|b| **b).count();
        if best.as_ref().is_none_or(|(c, _, _)| count > *c) {
            best = Some((count, hyp, flags));
        }
        let ratio = best.as_ref().map_or(0.0, |(c, _, _)| *c as f64 / n as f64);
        if (iterations as f64) >= required_iterations(ratio, config.min_sample, config.confidence) {
            break;
        }
    }
    let Some((count, hyp, flags)) = best.filter(|(c, _, _)| *c >= config.min_sample) else {
        return Err(PoseError::DegenerateGeometry(config.min_sample));
    };
    let support: Vec<PnPPoint> = pts.iter().zip(&flags).filter(|(_, f)| **f).map(|(p, _)| *p).collect();
    if let Ok(refined) = pnp_refine(&support, k, &hyp) {
        let refined_flags = inlier_flags(&refined, k, pts, config.inlier_threshold);
        if refined_flags.iter().filter(|b| **b).count() >= count {
            return Ok(RansacResult {
                pose: refined,
                inliers: refined_flags,
                iterations,
            });
        }
    }
    Ok(RansacResult {
        pose: hyp,
        inliers: flags,
        iterations,
    })
}
