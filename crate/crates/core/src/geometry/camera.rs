use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Points with depth at or below this are not projectable (meters).
pub const EPSILON_Z: f64 = 1e-6;

/// Pinhole intrinsics plus the image size they belong to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Result of projecting a 3-D point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub valid: bool,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite: fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.cx < 0.0 || self.cx > self.width as f64 || self.cy < 0.0 || self.cy > self.height as f64 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Centered camera with the given horizontal field of view (radians).
    pub fn from_fov(width: usize, height: usize, hfov: f64) -> Result<Self, GeometryError> {
        let f = 0.5 * width as f64 / (0.5 * hfov).tan();
        Self::new(f, f, 0.5 * (width as f64 - 1.0), 0.5 * (height as f64 - 1.0), width, height)
    }

    /// Unit-depth ray `K⁻¹·(u, v, 1)`.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// `depth · K⁻¹ · (u, v, 1)ᵀ` in camera coordinates.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>, GeometryError> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(GeometryError::InvalidDepth(depth));
        }
        Ok(self.ray(u, v) * depth)
    }

    pub fn project(&self, p: &Vector3<f64>) -> Projection {
        let valid = p.z > EPSILON_Z;
        if !valid {
            return Projection {
                u: f64::NAN,
                v: f64::NAN,
                valid,
            };
        }
        Projection {
            u: self.fx * p.x / p.z + self.cx,
            v: self.fy * p.y / p.z + self.cy,
            valid,
        }
    }

    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    /// Intrinsics for an image resampled by `factor` (e.g. 0.5 for half size).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: (self.cx + 0.5) * factor - 0.5,
            cy: (self.cy + 0.5) * factor - 0.5,
            width: (self.width as f64 * factor).round() as usize,
            height: (self.height as f64 * factor).round() as usize,
        }
    }

    /// `fx fy cx cy` on the first line, `width height` on the second.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {} {} {}", self.fx, self.fy, self.cx, self.cy).unwrap();
        writeln!(s, "{} {}", self.width, self.height).unwrap();
        s
    }

    pub fn parse(text: &str) -> Result<Self, GeometryError> {
        let bad = |m: &str| GeometryError::Parse(format!("intrinsics: {m}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let first: Vec<f64> = lines
            .next()
            .ok_or_else(|| bad("missing focal line"))?
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| bad(&e.to_string())))
            .collect::<Result<_, _>>()?;
        let second: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("missing size line"))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| bad(&e.to_string())))
            .collect::<Result<_, _>>()?;
        if first.len() != 4 || second.len() != 2 {
            return Err(bad("expected `fx fy cx cy` then `width height`"));
        }
        Self::new(first[0], first[1], first[2], first[3], second[0], second[1])
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io(path.display().to_string(), e.to_string()))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        std::fs::write(path, self.to_text()).map_err(|e| GeometryError::Io(path.display().to_string(), e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0, 200, 100).unwrap()
    }

    #[test]
    fn principal_ray_backprojects_on_axis() {
        let k = CameraIntrinsics::new(120.0, 110.0, 64.0, 48.0, 128, 96).unwrap();
        let p = k.backproject(64.0, 48.0, 2.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn unit_tangent() {
        let p = cam().backproject(100.0, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(p, Vector3::new(1.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn nonpositive_depth_rejected() {
        assert!(matches!(cam().backproject(1.0, 1.0, 0.0), Err(GeometryError::InvalidDepth(_))));
        assert!(cam().backproject(1.0, 1.0, -2.0).is_err());
    }

    #[test]
    fn projection_validity() {
        let p = cam().project(&Vector3::new(0.0, 0.0, 1.0));
        assert!(p.valid);
        assert_eq!((p.u, p.v), (0.0, 0.0));
        assert!(!cam().project(&Vector3::new(1.0, 0.0, 0.0)).valid);
        assert!(!cam().project(&Vector3::new(1.0, 0.0, -1.0)).valid);
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 9.0, 1.0, 4, 4).is_err());
    }

    #[test]
    fn text_round_trip() {
        let k = CameraIntrinsics::new(525.5, 524.25, 319.5, 239.5, 640, 480).unwrap();
        assert_eq!(CameraIntrinsics::parse(&k.to_text()).unwrap(), k);
        assert!(CameraIntrinsics::parse("1 2 3\n4 5").is_err());
    }

    proptest::proptest! {
        #[test]
        fn project_inverts_backproject(u in 0.0f64..640.0, v in 0.0f64..480.0, d in 0.05f64..80.0) {
            let k = CameraIntrinsics::new(525.0, 520.0, 319.5, 239.5, 640, 480).unwrap();
            let p = k.project(&k.backproject(u, v, d).unwrap());
            proptest::prop_assert!(p.valid);
            proptest::prop_assert!((p.u - u).abs() < 1e-10 && (p.v - v).abs() < 1e-10);
        }
    }
}
