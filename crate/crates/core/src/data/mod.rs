//! Datasets on disk, sparse-depth sampling and a ray-cast synthetic scene
//! generator with exact ground truth.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! root/intrinsics.txt
//! root/poses.txt              (optional, camera-to-world per frame)
//! root/image/NNNNNN.png       8-bit RGB
//! root/sparse/NNNNNN.png      16-bit depth, millimetres, 0 = missing
//! root/gt/NNNNNN.png          (optional) 16-bit dense depth
//! root/features/NNNNNN.feat   (optional) keypoints + descriptors
//! ```

mod dataset;
mod png;
mod sampling;
mod scene;

pub use dataset::{
    build_manifest, load_triplet, write_dataset, DatasetManifest, DatasetWriteOptions, FrameRecord, FrameTriplet, SamplingPattern,
    GT_POSE_FILE, POSE_FILE,
};
pub use png::{load_depth_png16, load_rgb_png, save_depth_png16, save_rgb_png};
pub use sampling::{sample_scanlines, sample_uniform};
pub use scene::{render_frame, render_scene, synthetic_features, RenderedFrame, SceneKind, SceneObject, SceneSpec, Shape, Texture};

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::pose::PoseError;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("missing file {0}")]
    Missing(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("degenerate scene: {0}")]
    Scene(String),
    #[error("cannot sample {requested} points from {available} valid pixels")]
    TooManySamples { requested: usize, available: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Metric depth image with 0 marking pixels without a measurement. Serves
/// both sparse inputs and dense ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDepthMap {
    width: usize,
    height: usize,
    depth: Vec<f32>,
}

impl SparseDepthMap {
    /// Non-positive and non-finite entries become 0 (missing).
    pub fn new(width: usize, height: usize, mut depth: Vec<f32>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(DataError::Invalid(format!(
                "depth map of {}x{} needs {} values, got {}",
                width,
                height,
                width * height,
                depth.len()
            )));
        }
        for d in &mut depth {
            if !(d.is_finite() && *d > 0.0) {
                *d = 0.0;
            }
        }
        Ok(Self { width, height, depth })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.depth
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.depth[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.depth[i] > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }

    pub fn coverage(&self) -> f64 {
        self.valid_count() as f64 / self.depth.len().max(1) as f64
    }

    /// Mean over valid pixels, `None` when there are none.
    pub fn mean_valid(&self) -> Option<f64> {
        let n = self.valid_count();
        (n > 0).then(|| self.depth.iter().map(|d| *d as f64).sum::<f64>() / n as f64)
    }

    /// `1×1×H×W` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, 1, self.height, self.width], |i| T::lit(self.depth[i] as f64))
    }

    /// Keeps only entries whose mask is set.
    pub fn masked(&self, keep: impl Fn(usize) -> bool) -> Self {
        let depth = self.depth.iter().enumerate().map(|(i, d)| if keep(i) { *d } else { 0.0 }).collect();
        Self {
            width: self.width,
            height: self.height,
            depth,
        }
    }
}

/// Planar RGB image, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    /// `data` is channel-major: all red, then green, then blue.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(DataError::Invalid(format!(
                "RGB image of {width}x{height} needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// `1×3×H×W` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, 3, self.height, self.width], |i| T::lit(self.data[i] as f64))
    }
}

pub use crate::pose::FeatureSet;
