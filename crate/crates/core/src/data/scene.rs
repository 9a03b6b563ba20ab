//! Ray-cast synthetic scenes: textured rectangles and boxes seen by a
//! moving pinhole camera, with exact depth and projected feature points.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, Result, RgbImage, SparseDepthMap};
use crate::geometry::{CameraIntrinsics, PoseSE3, EPSILON_Z};
use crate::pose::{FeatureSet, Keypoint};

/// Scene presets selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    /// textured room with free-standing panels
    Planes,
    /// textured room with boxes
    Boxes,
    /// planes plus a box sliding back and forth
    Mover,
    /// untextured room: flat colours, no features
    Textureless,
}

impl std::str::FromStr for SceneKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planes" => Ok(Self::Planes),
            "boxes" => Ok(Self::Boxes),
            "mover" => Ok(Self::Mover),
            "textureless" => Ok(Self::Textureless),
            other => Err(DataError::Invalid(format!(
                "unknown scene '{other}' (expected planes, boxes, mover or textureless)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// Rectangle spanned by unit axes `u`, `v` with half extents.
    Rect {
        center: Vector3<f64>,
        axis_u: Vector3<f64>,
        axis_v: Vector3<f64>,
        half_u: f64,
        half_v: f64,
    },
    /// Axis-aligned box.
    Cuboid { center: Vector3<f64>, half: Vector3<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Texture {
    /// Smooth sum of sinusoids in surface coordinates.
    Procedural {
        seed: u64,
    },
    Flat([f32; 3]),
    /// Procedural albedo plus a view-dependent sheen (breaks brightness
    /// constancy; qualitative use only).
    Mirror {
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub texture: Texture,
    /// Offset at frame `f` is `amplitude · sin(rate · f)`.
    pub motion: Option<(Vector3<f64>, f64)>,
    /// Feature points per square metre of surface.
    pub feature_density: f64,
}

impl SceneObject {
    fn offset(&self, frame: usize) -> Vector3<f64> {
        match self.motion {
            Some((amp, rate)) => amp * (rate * frame as f64).sin(),
            None => Vector3::zeros(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub seed: u64,
    pub objects: Vec<SceneObject>,
    /// Camera-to-world pose per frame.
    pub trajectory: Vec<PoseSE3>,
    pub intrinsics: CameraIntrinsics,
    /// Every rendered depth must fall strictly inside this range (metres).
    pub depth_range: (f64, f64),
    pub descriptor_dim: usize,
}

/// One rendered view.
#[derive(Clone, Debug)]
pub struct RenderedFrame {
    pub image: RgbImage,
    pub depth: SparseDepthMap,
    /// camera-to-world
    pub pose: PoseSE3,
    pub features: FeatureSet,
}

struct Hit {
    t: f64,
    normal: Vector3<f64>,
    coords: (f64, f64),
}

fn intersect(shape: &Shape, offset: &Vector3<f64>, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    match shape {
        Shape::Rect {
            center,
            axis_u,
            axis_v,
            half_u,
            half_v,
        } => {
            let n = axis_u.cross(axis_v);
            let denom = n.dot(dir);
            if denom.abs() < 1e-12 {
                return None;
            }
            let c = center + offset;
            let t = n.dot(&(c - origin)) / denom;
            if t <= EPSILON_Z {
                return None;
            }
            let rel = origin + dir * t - c;
            let (s, q) = (rel.dot(axis_u), rel.dot(axis_v));
            (s.abs() <= *half_u && q.abs() <= *half_v).then_some(Hit {
                t,
                normal: n,
                coords: (s, q),
            })
        }
        Shape::Cuboid { center, half } => {
            let c = center + offset;
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut axis0 = 0;
            for a in 0..3 {
                if dir[a].abs() < 1e-15 {
                    if (origin[a] - c[a]).abs() > half[a] {
                        return None;
                    }
                    continue;
                }
                let ta = (c[a] - half[a] - origin[a]) / dir[a];
                let tb = (c[a] + half[a] - origin[a]) / dir[a];
                let (near, far) = if ta < tb { (ta, tb) } else { (tb, ta) };
                if near > t0 {
                    t0 = near;
                    axis0 = a;
                }
                t1 = t1.min(far);
            }
            if t0 > t1 || t0 <= EPSILON_Z {
                return None;
            }
            let p = origin + dir * t0 - c;
            let mut normal = Vector3::zeros();
            normal[axis0] = 1.0;
            let (a1, a2) = ((axis0 + 1) % 3, (axis0 + 2) % 3);
            Some(Hit {
                t: t0,
                normal,
                coords: (p[a1] + p[axis0], p[a2]),
            })
        }
    }
}

/// Smooth albedo field: a base colour plus four low-frequency waves.
fn procedural(seed: u64, s: f64, t: f64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rgb = [0.0; 3];
    for c in &mut rgb {
        *c = rng.gen_range(0.35..0.65);
    }
    for _ in 0..6 {
        let freq: f64 = rng.gen_range(0.8..2.0);
        let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let wave = (std::f64::consts::TAU * freq * (ang.cos() * s + ang.sin() * t) + phase).sin();
        for c in &mut rgb {
            *c += rng.gen_range(-0.1..0.1) * wave;
        }
    }
    rgb
}

const LIGHT: [f64; 3] = [0.3, -1.0, 0.45];

fn shade(obj: &SceneObject, hit: &Hit, dir: &Vector3<f64>) -> [f32; 3] {
    let mut n = hit.normal;
    if n.dot(dir) > 0.0 {
        n = -n;
    }
    let light = Vector3::from(LIGHT).normalize();
    let lambert = 0.45 + 0.55 * n.dot(&light).max(0.0);
    let (s, t) = hit.coords;
    let (albedo, sheen) = match &obj.texture {
        Texture::Procedural { seed } => (procedural(*seed, s, t), 0.0),
        Texture::Flat(rgb) => ([rgb[0] as f64, rgb[1] as f64, rgb[2] as f64], 0.0),
        Texture::Mirror { seed } => {
            let r = dir - n * (2.0 * dir.dot(&n));
            (procedural(*seed, s, t), 0.2 * (5.0 * r.x + 3.0 * r.y).sin())
        }
    };
    albedo.map(|a| ((a * lambert + sheen).clamp(0.0, 1.0)) as f32)
}

impl SceneSpec {
    fn cast(&self, frame: usize, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(usize, Hit)> {
        let mut best: Option<(usize, Hit)> = None;
        for (i, obj) in self.objects.iter().enumerate() {
            if let Some(h) = intersect(&obj.shape, &obj.offset(frame), origin, dir) {
                if best.as_ref().is_none_or(|(_, b)| h.t < b.t) {
                    best = Some((i, h));
                }
            }
        }
        best
    }

    fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.objects.is_empty() || self.trajectory.is_empty() {
            return Err(DataError::Scene("scene needs objects and at least one camera pose".into()));
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && hi > lo) {
            return Err(DataError::Scene(format!("bad depth range ({lo}, {hi})")));
        }
        for (f, pose) in self.trajectory.iter().enumerate() {
            let cam = pose.translation();
            for obj in &self.objects {
                if let Shape::Cuboid { center, half } = &obj.shape {
                    let rel = cam - center - obj.offset(f);
                    if (0..3).all(|a| rel[a].abs() <= half[a]) {
                        return Err(DataError::Scene(format!("camera {f} is inside a box")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Ready-made scene of the given kind.
    pub fn preset(kind: SceneKind, frames: usize, width: usize, height: usize, seed: u64) -> Result<Self> {
        if frames == 0 || width < 8 || height < 8 {
            return Err(DataError::Scene(format!(
                "need frames ≥ 1 and at least 8x8 pixels, got {frames} frames at {width}x{height}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = CameraIntrinsics::from_fov(width, height, 60f64.to_radians())?;
        let textured = kind != SceneKind::Textureless;
        let mut tex_seed = || rng.gen::<u64>();
        let wall = |tex: Texture| SceneObject {
            shape: Shape::Cuboid {
                center: Vector3::zeros(),
                half: Vector3::zeros(),
            },
            texture: tex,
            motion: None,
            feature_density: if textured { 8.0 } else { 0.0 },
        };
        let flat = [
            [0.55, 0.5, 0.45],
            [0.4, 0.45, 0.5],
            [0.6, 0.6, 0.55],
            [0.35, 0.35, 0.4],
            [0.5, 0.4, 0.35],
        ];
        let mut objects = Vec::new();
        // room: x ∈ [−3, 3], y ∈ [−1.6, 1.4] (y down), z ∈ [−2, 9]
        let walls = [
            (Vector3::new(0.0, 1.4, 3.5), Vector3::x(), Vector3::z(), 3.0, 5.5),
            (Vector3::new(0.0, -1.6, 3.5), Vector3::x(), Vector3::z(), 3.0, 5.5),
            (Vector3::new(-3.0, -0.1, 3.5), Vector3::z(), Vector3::y(), 5.5, 1.5),
            (Vector3::new(3.0, -0.1, 3.5), Vector3::z(), Vector3::y(), 5.5, 1.5),
            (Vector3::new(0.0, -0.1, 9.0), Vector3::x(), Vector3::y(), 3.0, 1.5),
        ];
        for (i, (center, axis_u, axis_v, half_u, half_v)) in walls.into_iter().enumerate() {
            let tex = if textured {
                Texture::Procedural { seed: tex_seed() }
            } else {
                Texture::Flat(flat[i])
            };
            objects.push(SceneObject {
                shape: Shape::Rect {
                    center,
                    axis_u,
                    axis_v,
                    half_u,
                    half_v,
                },
                ..wall(tex)
            });
        }
        let jitter = |r: &mut ChaCha8Rng| r.gen_range(-0.2..0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        match kind {
            SceneKind::Planes | SceneKind::Mover => {
                let slant = Rotation3::from_axis_angle(&Vector3::y_axis(), 0.5);
                let panels = [
                    (
                        Vector3::new(-1.4 + jitter(&mut rng), 0.0, 5.5),
                        Vector3::x(),
                        Vector3::y(),
                        0.8,
                        0.9,
                    ),
                    (
                        Vector3::new(1.6 + jitter(&mut rng), -0.2, 6.0),
                        slant * Vector3::x(),
                        Vector3::y(),
                        0.9,
                        1.0,
                    ),
                    (Vector3::new(0.3, 0.5 + jitter(&mut rng), 7.0), Vector3::x(), Vector3::y(), 0.6, 0.4),
                ];
                for (center, axis_u, axis_v, half_u, half_v) in panels {
                    objects.push(SceneObject {
                        shape: Shape::Rect {
                            center,
                            axis_u,
                            axis_v,
                            half_u,
                            half_v,
                        },
                        ..wall(Texture::Procedural { seed: rng.gen() })
                    });
                }
                if kind == SceneKind::Mover {
                    objects.push(SceneObject {
                        shape: Shape::Cuboid {
                            center: Vector3::new(0.0, 0.6, 4.6),
                            half: Vector3::new(0.4, 0.6, 0.4),
                        },
                        texture: Texture::Procedural { seed: rng.gen() },
                        motion: Some((Vector3::new(1.5, 0.0, 0.0), 0.15)),
                        feature_density: 8.0,
                    });
                }
            }
            SceneKind::Boxes => {
                for (x, z, hw) in [(-1.6, 5.0, 0.5), (1.2, 6.2, 0.7), (0.0, 7.5, 0.6)] {
                    let hh = rng.gen_range(0.4..0.9);
                    objects.push(SceneObject {
                        shape: Shape::Cuboid {
                            center: Vector3::new(x + jitter(&mut rng), 1.4 - hh, z),
                            half: Vector3::new(hw, hh, hw),
                        },
                        ..wall(Texture::Procedural { seed: rng.gen() })
                    });
                }
            }
            SceneKind::Textureless => {}
        }
        let phase0 = rng.gen_range(0.0..std::f64::consts::TAU);
        let trajectory = (0..frames)
            .map(|f| {
                let p = phase0 + 0.05 * f as f64;
                let center = Vector3::new(0.9 * p.sin(), 0.15 * (1.3 * p).sin(), 1.8 + 1.0 * (0.7 * p + 1.0).sin());
                let yaw = 0.25 * (0.9 * p + 0.5).sin();
                let pitch = 0.05 * (1.1 * p).sin();
                let rot = Rotation3::from_euler_angles(pitch, yaw, 0.0);
                PoseSE3::new(*rot.matrix(), center).map_err(DataError::from)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            seed,
            objects,
            trajectory,
            intrinsics: k,
            depth_range: (0.1, 100.0),
            descriptor_dim: 32,
        })
    }
}

/// World feature points and their descriptors (deterministic per seed).
/// Points on moving objects are stored relative to frame 0.
pub fn synthetic_features(spec: &SceneSpec) -> Vec<(usize, Vector3<f64>, Vec<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0xfea7));
    let mut out = Vec::new();
    for (oi, obj) in spec.objects.iter().enumerate() {
        let faces: Vec<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> = match &obj.shape {
            Shape::Rect {
                center,
                axis_u,
                axis_v,
                half_u,
                half_v,
            } => vec![(*center, axis_u * *half_u, axis_v * *half_v)],
            Shape::Cuboid { center, half } => (0..3)
                .flat_map(|a| {
                    let (a1, a2) = ((a + 1) % 3, (a + 2) % 3);
                    let mut e1 = Vector3::zeros();
                    e1[a1] = half[a1];
                    let mut e2 = Vector3::zeros();
                    e2[a2] = half[a2];
                    [-1.0, 1.0].map(|sgn| {
                        let mut c = *center;
                        c[a] += sgn * half[a];
                        (c, e1, e2)
                    })
                })
                .collect(),
        };
        for (c, e1, e2) in faces {
            let area = 4.0 * e1.norm() * e2.norm();
            let count = (area * obj.feature_density).round() as usize;
            for _ in 0..count {
                let p = c + e1 * rng.gen_range(-1.0..1.0) + e2 * rng.gen_range(-1.0..1.0);
                let mut desc: Vec<f32> = (0..spec.descriptor_dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
                let norm = desc.iter().map(|d| d * d).sum::<f32>().sqrt().max(1e-12);
                desc.iter_mut().for_each(|d| *d /= norm);
                out.push((oi, p, desc));
            }
        }
    }
    out
}

fn project_features(spec: &SceneSpec, frame: usize, points: &[(usize, Vector3<f64>, Vec<f32>)]) -> Result<FeatureSet> {
    let k = &spec.intrinsics;
    let pose = &spec.trajectory[frame];
    let world_to_cam = pose.inverse();
    let origin = *pose.translation();
    let mut kps = Vec::new();
    for (oi, p, desc) in points {
        let pw = p + spec.objects[*oi].offset(frame);
        let q = world_to_cam.transform(&pw);
        let proj = k.project(&q);
        if !proj.valid || !k.in_bounds(proj.u, proj.v) {
            continue;
        }
        let dir = pose.rotation() * k.ray(proj.u, proj.v);
        let Some((_, hit)) = spec.cast(frame, &origin, &dir) else {
            continue;
        };
        if (hit.t - q.z).abs() > 1e-6 * q.z.max(1.0) {
            continue;
        }
        kps.push(Keypoint {
            u: proj.u as f32,
            v: proj.v as f32,
            descriptor: desc.clone(),
        });
    }
    Ok(FeatureSet::new(spec.descriptor_dim, kps)?)
}

fn render_with_points(spec: &SceneSpec, frame: usize, points: &[(usize, Vector3<f64>, Vec<f32>)]) -> Result<RenderedFrame> {
    let k = &spec.intrinsics;
    let (w, h) = (k.width, k.height);
    let pose = spec
        .trajectory
        .get(frame)
        .ok_or_else(|| DataError::Scene(format!("frame {frame} beyond trajectory")))?;
    let origin = *pose.translation();
    let rows: Vec<(Vec<[f32; 3]>, Vec<f32>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut colors = Vec::with_capacity(w);
            let mut depth = Vec::with_capacity(w);
            for x in 0..w {
                let dir = pose.rotation() * k.ray(x as f64, y as f64);
                match spec.cast(frame, &origin, &dir) {
                    Some((oi, hit)) => {
                        colors.push(shade(&spec.objects[oi], &hit, &dir));
                        depth.push(hit.t as f32);
                    }
                    None => {
                        colors.push([0.0; 3]);
                        depth.push(0.0);
                    }
                }
            }
            (colors, depth)
        })
        .collect();
    let plane = w * h;
    let mut rgb = vec![0.0f32; 3 * plane];
    let mut depth = Vec::with_capacity(plane);
    for (y, (colors, d)) in rows.into_iter().enumerate() {
        for (x, c) in colors.iter().enumerate() {
            for ch in 0..3 {
                rgb[ch * plane + y * w + x] = c[ch];
            }
        }
        depth.extend(d);
    }
    let (lo, hi) = spec.depth_range;
    if let Some(bad) = depth.iter().find(|d| !(**d as f64 > lo && (**d as f64) < hi)) {
        return Err(DataError::Scene(format!(
            "frame {frame}: depth {bad} outside ({lo}, {hi}) or a ray escaped the scene"
        )));
    }
    Ok(RenderedFrame {
        image: RgbImage::new(w, h, rgb)?,
        depth: SparseDepthMap::new(w, h, depth)?,
        pose: *pose,
        features: project_features(spec, frame, points)?,
    })
}

pub fn render_frame(spec: &SceneSpec, frame: usize) -> Result<RenderedFrame> {
    spec.validate()?;
    render_with_points(spec, frame, &synthetic_features(spec))
}

/// Renders every frame of the trajectory.
pub fn render_scene(spec: &SceneSpec) -> Result<Vec<RenderedFrame>> {
    spec.validate()?;
    let points = synthetic_features(spec);
    (0..spec.trajectory.len()).map(|f| render_with_points(spec, f, &points)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::synthesize_view;
    use crate::tensor::{Tape, Tensor};

    fn facing_plane(z: f64, texture: Texture) -> SceneSpec {
        SceneSpec {
            seed: 0,
            objects: vec![SceneObject {
                shape: Shape::Rect {
                    center: Vector3::new(0.0, 0.0, z),
                    axis_u: Vector3::x(),
                    axis_v: Vector3::y(),
                    half_u: 50.0,
                    half_v: 50.0,
                },
                texture,
                motion: None,
                feature_density: 1.0,
            }],
            trajectory: vec![PoseSE3::identity()],
            intrinsics: CameraIntrinsics::from_fov(32, 24, 60f64.to_radians()).unwrap(),
            depth_range: (0.1, 100.0),
            descriptor_dim: 8,
        }
    }

    #[test]
    fn facing_plane_has_constant_depth() {
        let f = render_frame(&facing_plane(4.0, Texture::Flat([0.2, 0.4, 0.6])), 0).unwrap();
        assert!(f.depth.data().iter().all(|d| (*d - 4.0).abs() < 1e-5));
        let plane = 32 * 24;
        for c in 0..3 {
            let px = &f.image.data()[c * plane..(c + 1) * plane];
            assert!(px.iter().all(|v| (*v - px[0]).abs() < 1e-6));
        }
        for kp in f.features.keypoints() {
            assert!(kp.u >= 0.0 && kp.u <= 31.0 && kp.v >= 0.0 && kp.v <= 23.0);
        }
    }

    #[test]
    fn out_of_range_or_escaping_rays_are_errors() {
        let mut spec = facing_plane(4.0, Texture::Flat([0.5; 3]));
        spec.depth_range = (0.1, 3.0);
        assert!(matches!(render_frame(&spec, 0), Err(DataError::Scene(_))));
        let mut spec = facing_plane(4.0, Texture::Flat([0.5; 3]));
        spec.objects[0].shape = Shape::Rect {
            center: Vector3::new(0.0, 0.0, 4.0),
            axis_u: Vector3::x(),
            axis_v: Vector3::y(),
            half_u: 0.5,
            half_v: 0.5,
        };
        assert!(render_frame(&spec, 0).is_err());
        assert!(render_frame(&facing_plane(4.0, Texture::Flat([0.5; 3])), 1).is_err());
        assert!(SceneSpec::preset(SceneKind::Planes, 0, 32, 24, 0).is_err());
    }

    #[test]
    fn presets_render_and_are_deterministic() {
        for kind in [SceneKind::Planes, SceneKind::Boxes, SceneKind::Mover, SceneKind::Textureless] {
            let spec = SceneSpec::preset(kind, 3, 40, 32, 5).unwrap();
            let a = render_scene(&spec).unwrap();
            let b = render_scene(&SceneSpec::preset(kind, 3, 40, 32, 5).unwrap()).unwrap();
            assert_eq!(a.len(), 3);
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.image, y.image);
                assert_eq!(x.depth, y.depth);
                assert_eq!(x.features, y.features);
                assert_eq!(x.depth.coverage(), 1.0);
            }
            if kind == SceneKind::Textureless {
                assert!(a.iter().all(|f| f.features.is_empty()));
            } else {
                assert!(a[0].features.len() > 20, "{kind:?}: {}", a[0].features.len());
            }
        }
        let a = render_frame(&SceneSpec::preset(SceneKind::Planes, 1, 40, 32, 1).unwrap(), 0).unwrap();
        let b = render_frame(&SceneSpec::preset(SceneKind::Planes, 1, 40, 32, 2).unwrap(), 0).unwrap();
        assert_ne!(a.image, b.image);
    }

    #[test]
    fn kind_parses_from_text() {
        assert_eq!("mover".parse::<SceneKind>().unwrap(), SceneKind::Mover);
        assert!("cathedral".parse::<SceneKind>().is_err());
    }

    /// Warps frame `s` into frame `t` with ground-truth depth and pose and
    /// returns the per-pixel mean absolute colour error over pixels that
    /// are co-visible and away from depth discontinuities.
    fn reprojection_errors(frames: &[RenderedFrame], k: &CameraIntrinsics, t: usize, s: usize, depth_scale: f64) -> Vec<f64> {
        let (w, h) = (k.width, k.height);
        let rel = frames[s].pose.inverse().compose(&frames[t].pose);
        let tape = Tape::<f64>::new();
        let src = tape.constant(frames[s].image.to_tensor());
        let depth: Tensor<f64> = frames[t].depth.to_tensor();
        let scaled = Tensor::from_fn(depth.shape(), |i| depth.data()[i] * depth_scale);
        let d = tape.constant(scaled);
        let (warped, valid) = synthesize_view(&src, &d, k, &[rel]).unwrap();
        let warped = warped.value();
        let src_depth = tape.constant(frames[s].depth.to_tensor());
        let (seen, _) = synthesize_view(&src_depth, &tape.constant(depth.clone()), k, &[rel]).unwrap();
        let seen = seen.value();
        let target = frames[t].image.data();
        let plane = w * h;
        let mut errs = Vec::new();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let i = y * w + x;
                let z = depth.data()[i];
                let smooth = (-1..=1).all(|dy: isize| {
                    (-1..=1).all(|dx: isize| {
                        let j = (y as isize + dy) as usize * w + (x as isize + dx) as usize;
                        (depth.data()[j] - z).abs() < 0.03 * z
                    })
                });
                let p = rel.transform(&k.backproject(x as f64, y as f64, z).unwrap());
                let visible = (seen.data()[i] - p.z).abs() < 0.01 * p.z;
                if valid.data()[i] == 0.0 || !smooth || !visible {
                    continue;
                }
                let e = (0..3)
                    .map(|c| (target[c * plane + i] as f64 - warped.data()[c * plane + i]).abs())
                    .sum::<f64>()
                    / 3.0;
                errs.push(e);
            }
        }
        errs
    }

    #[test]
    fn ground_truth_reprojection_is_photometrically_consistent() {
        let spec = SceneSpec::preset(SceneKind::Planes, 3, 160, 128, 3).unwrap();
        let frames = render_scene(&spec).unwrap();
        let k = &spec.intrinsics;
        for s in [0, 2] {
            let mut errs = reprojection_errors(&frames, k, 1, s, 1.0);
            assert!(errs.len() > 160 * 128 / 2, "only {} co-visible pixels", errs.len());
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            let p99 = errs[errs.len() * 99 / 100];
            assert!(mean < 3e-3 && p99 < 2.5e-2, "source {s}: mean {mean} p99 {p99}");
            for (scale, factor) in [(1.1, 1.2), (2.0, 3.0)] {
                let wrong = reprojection_errors(&frames, k, 1, s, scale);
                let wrong_mean = wrong.iter().sum::<f64>() / wrong.len() as f64;
                assert!(wrong_mean > factor * mean, "depth x{scale}: {wrong_mean} vs {mean}");
            }
        }
    }

    #[test]
    fn mover_changes_only_near_the_box() {
        let mut spec = SceneSpec::preset(SceneKind::Mover, 5, 80, 64, 4).unwrap();
        let pose = spec.trajectory[0];
        spec.trajectory = vec![pose; 5];
        let frames = render_scene(&spec).unwrap();
        let changed = frames[0]
            .depth
            .data()
            .iter()
            .zip(frames[4].depth.data())
            .filter(|(a, b)| (**a - **b).abs() > 1e-4)
            .count();
        assert!(changed > 0 && changed < 80 * 64 / 2, "{changed}");
        let still = SceneSpec {
            trajectory: vec![pose; 2],
            ..SceneSpec::preset(SceneKind::Planes, 2, 80, 64, 4).unwrap()
        };
        let frames = render_scene(&still).unwrap();
        assert_eq!(frames[0].image, frames[1].image);
    }
}
