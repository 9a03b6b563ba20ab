use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector6};

use super::GeometryError;

const ORTHO_TOL: f64 = 1e-9;

/// Rigid transform `x ↦ R·x + t`.
///
/// Relative poses follow one convention everywhere: `T_{t→s}` maps
/// target-camera coordinates into source-camera coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[inline]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    /// Rejects rotations that are not orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(err <= ORTHO_TOL) || !((det - 1.0).abs() <= ORTHO_TOL) || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NotARotation {
                orthogonality_error: err,
                determinant: det,
            });
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Projects an arbitrary matrix onto the nearest rotation (SVD polar factor).
    pub fn orthonormalize(m: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self::new(u * d * vt, translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    /// Exponential map of a twist `[v; ω]` (translation part first).
    pub fn exp(twist: &Vector6<f64>) -> Self {
        let v = Vector3::new(twist[0], twist[1], twist[2]);
        let w = Vector3::new(twist[3], twist[4], twist[5]);
        let theta2 = w.norm_squared();
        let theta = theta2.sqrt();
        let wx = hat(&w);
        let wx2 = wx * wx;
        let (a, b, c) = if theta < 1e-6 {
            // Taylor expansions of sinθ/θ, (1−cosθ)/θ², (θ−sinθ)/θ³
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
        } else {
            (
                theta.sin() / theta,
                (1.0 - theta.cos()) / theta2,
                (theta - theta.sin()) / (theta2 * theta),
            )
        };
        let rotation = Matrix3::identity() + wx * a + wx2 * b;
        let jac = Matrix3::identity() + wx * b + wx2 * c;
        Self {
            rotation,
            translation: jac * v,
        }
    }

    /// Inverse of [`PoseSE3::exp`] for rotation angles below π.
    pub fn log(&self) -> Vector6<f64> {
        let w = rotation_log(&self.rotation);
        let theta2 = w.norm_squared();
        let theta = theta2.sqrt();
        let wx = hat(&w);
        let vinv = if theta < 1e-6 {
            Matrix3::identity() - wx * 0.5 + wx * wx / 12.0
        } else {
            let half = 0.5 * theta;
            let coef = (1.0 - half * half.cos() / half.sin()) / theta2;
            Matrix3::identity() - wx * 0.5 + wx * wx * coef
        };
        let v = vinv * self.translation;
        Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle in radians.
    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }

    /// Rotation angle of `self⁻¹·other` (radians) and translation distance.
    pub fn distance_to(&self, other: &PoseSE3) -> (f64, f64) {
        let rel = self.inverse().compose(other);
        (rel.rotation_angle(), (self.translation - other.translation).norm())
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    /// Accepts rotations that are orthonormal to within file precision and
    /// re-projects them.
    pub fn from_row_major(v: &[f64; 12]) -> Result<Self, GeometryError> {
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let t = Vector3::new(v[3], v[7], v[11]);
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(GeometryError::NotARotation {
                orthogonality_error: err,
                determinant: r.determinant(),
            });
        }
        Self::orthonormalize(r, t)
    }
}

fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let axis = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-8 {
        return axis * 0.5;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // near π: axis from the symmetric part
        let b = (r + Matrix3::identity()) * 0.5;
        let mut k = 0;
        for i in 1..3 {
            if b[(i, i)] > b[(k, k)] {
                k = i;
            }
        }
        let mut a = b.column(k).into_owned();
        a /= a.norm();
        return a * theta;
    }
    axis * (theta / (2.0 * theta.sin()))
}

/// One pose per frame, `frame_id r11 r12 r13 t1 r21 … t3`.
pub fn parse_pose_file(text: &str) -> Result<Vec<(usize, PoseSE3)>, GeometryError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 13 {
            return Err(GeometryError::Parse(format!(
                "pose line {}: expected 13 fields, got {}",
                ln + 1,
                toks.len()
            )));
        }
        let id: usize = toks[0]
            .parse()
            .map_err(|e| GeometryError::Parse(format!("pose line {}: {e}", ln + 1)))?;
        let mut v = [0.0; 12];
        for (slot, t) in v.iter_mut().zip(&toks[1..]) {
            *slot = t.parse().map_err(|e| GeometryError::Parse(format!("pose line {}: {e}", ln + 1)))?;
        }
        out.push((id, PoseSE3::from_row_major(&v)?));
    }
    Ok(out)
}

pub fn format_pose_line(id: usize, pose: &PoseSE3) -> String {
    let vals: Vec<String> = pose.to_row_major().iter().map(|v| format!("{v:.17e}")).collect();
    format!("{id} {}", vals.join(" "))
}

pub fn load_pose_file(path: &Path) -> Result<Vec<(usize, PoseSE3)>, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io(path.display().to_string(), e.to_string()))?;
    parse_pose_file(&text)
}

pub fn save_pose_file(path: &Path, poses: &[(usize, PoseSE3)]) -> Result<(), GeometryError> {
    let mut text = String::new();
    for (id, p) in poses {
        text.push_str(&format_pose_line(*id, p));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| GeometryError::Io(path.display().to_string(), e.to_string()))
}
