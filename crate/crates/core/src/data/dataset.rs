//! Dataset directories: writing rendered scenes, validating a manifest and
//! assembling training triplets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    io_err, load_depth_png16, load_rgb_png, sample_scanlines, sample_uniform, save_depth_png16, save_rgb_png, DataError, RenderedFrame,
    Result, RgbImage, SparseDepthMap,
};
use crate::geometry::{load_pose_file, save_pose_file, CameraIntrinsics, PoseSE3};
use crate::pose::FeatureSet;

/// Estimated camera-to-world poses, written by the pose command.
pub const POSE_FILE: &str = "poses.txt";
/// Ground-truth camera-to-world poses, written for synthetic scenes.
pub const GT_POSE_FILE: &str = "poses_gt.txt";
const INTRINSICS_FILE: &str = "intrinsics.txt";

/// Which pixels of the ground truth become the sparse input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SamplingPattern {
    Uniform { points: usize },
    Scanlines { lines: usize },
}

impl Default for SamplingPattern {
    fn default() -> Self {
        Self::Uniform { points: 500 }
    }
}

impl SamplingPattern {
    pub fn apply(&self, depth: &SparseDepthMap, k: &CameraIntrinsics, seed: u64) -> Result<SparseDepthMap> {
        match *self {
            Self::Uniform { points } => sample_uniform(depth, points.min(depth.valid_count()), seed),
            Self::Scanlines { lines } => Ok(sample_scanlines(depth, lines, k, seed)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetWriteOptions {
    pub sampling: SamplingPattern,
    pub seed: u64,
    /// allow writing into a non-empty directory
    pub force: bool,
}

fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:06}.{ext}")
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Writes rendered frames in the dataset layout, sampling sparse depth
/// from each frame's ground truth.
pub fn write_dataset(root: &Path, frames: &[RenderedFrame], k: &CameraIntrinsics, opts: &DatasetWriteOptions) -> Result<()> {
    if root.exists() {
        let non_empty = std::fs::read_dir(root).map_err(|e| io_err(root, e))?.next().is_some();
        if non_empty && !opts.force {
            return Err(DataError::Invalid(format!(
                "{} exists and is not empty (use --force to overwrite)",
                root.display()
            )));
        }
    }
    for sub in ["image", "sparse", "gt", "features"] {
        ensure_dir(&root.join(sub))?;
    }
    k.save(&root.join(INTRINSICS_FILE))?;
    let mut poses = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        save_rgb_png(&root.join("image").join(frame_name(i, "png")), &f.image)?;
        save_depth_png16(&root.join("gt").join(frame_name(i, "png")), &f.depth)?;
        let sparse = opts
            .sampling
            .apply(&f.depth, k, opts.seed.wrapping_mul(1_000_003).wrapping_add(i as u64))?;
        save_depth_png16(&root.join("sparse").join(frame_name(i, "png")), &sparse)?;
        f.features.save(&root.join("features").join(frame_name(i, "feat")))?;
        poses.push((i, f.pose));
    }
    save_pose_file(&root.join(GT_POSE_FILE), &poses)?;
    Ok(())
}

/// Files belonging to one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub image: PathBuf,
    pub sparse: PathBuf,
    pub gt: Option<PathBuf>,
    pub features: Option<PathBuf>,
}

/// Validated view of a dataset directory.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub frames: Vec<FrameRecord>,
    pub intrinsics: CameraIntrinsics,
    /// camera-to-world poses by frame index
    pub poses: Option<BTreeMap<usize, PoseSE3>>,
}

/// Scans `root`, checking that every image has its sparse depth and that
/// the intrinsics are readable. Loads `poses.txt` when present.
pub fn build_manifest(root: &Path) -> Result<DatasetManifest> {
    let image_dir = root.join("image");
    let entries = std::fs::read_dir(&image_dir).map_err(|e| io_err(&image_dir, e))?;
    let mut indices = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_err(&image_dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let index: usize = stem.parse().map_err(|_| DataError::Format {
            path: path.display().to_string(),
            message: "image names must be frame numbers".into(),
        })?;
        indices.push(index);
    }
    indices.sort_unstable();
    let intrinsics_path = root.join(INTRINSICS_FILE);
    if !intrinsics_path.exists() {
        return Err(DataError::Missing(intrinsics_path.display().to_string()));
    }
    let intrinsics = CameraIntrinsics::load(&intrinsics_path)?;
    let mut frames = Vec::with_capacity(indices.len());
    for index in indices {
        let sparse = root.join("sparse").join(frame_name(index, "png"));
        if !sparse.exists() {
            return Err(DataError::Missing(sparse.display().to_string()));
        }
        let gt = root.join("gt").join(frame_name(index, "png"));
        let feat = root.join("features").join(frame_name(index, "feat"));
        frames.push(FrameRecord {
            index,
            image: root.join("image").join(frame_name(index, "png")),
            sparse,
            gt: gt.exists().then_some(gt),
            features: feat.exists().then_some(feat),
        });
    }
    let mut manifest = DatasetManifest {
        root: root.to_path_buf(),
        frames,
        intrinsics,
        poses: None,
    };
    let pose_path = root.join(POSE_FILE);
    if pose_path.exists() {
        manifest.load_poses(&pose_path)?;
    }
    Ok(manifest)
}

impl DatasetManifest {
    /// Replaces the pose table with the contents of `path`.
    pub fn load_poses(&mut self, path: &Path) -> Result<()> {
        self.poses = Some(load_pose_file(path)?.into_iter().collect());
        Ok(())
    }

    pub fn record(&self, index: usize) -> Option<&FrameRecord> {
        self.frames.binary_search_by_key(&index, |f| f.index).ok().map(|i| &self.frames[i])
    }

    /// Centre indices whose neighbours exist and whose poses are known.
    pub fn triplet_indices(&self) -> Vec<usize> {
        let Some(poses) = &self.poses else { return Vec::new() };
        self.frames
            .iter()
            .map(|f| f.index)
            .filter(|&t| t > 0 && [t - 1, t, t + 1].iter().all(|i| self.record(*i).is_some() && poses.contains_key(i)))
            .collect()
    }

    pub fn load_image(&self, index: usize) -> Result<RgbImage> {
        let rec = self.record(index).ok_or_else(|| DataError::Missing(format!("frame {index}")))?;
        let img = load_rgb_png(&rec.image)?;
        self.check_size(&rec.image, img.width(), img.height())?;
        Ok(img)
    }

    pub fn load_sparse(&self, index: usize) -> Result<SparseDepthMap> {
        let rec = self.record(index).ok_or_else(|| DataError::Missing(format!("frame {index}")))?;
        let d = load_depth_png16(&rec.sparse)?;
        self.check_size(&rec.sparse, d.width(), d.height())?;
        Ok(d)
    }

    pub fn load_gt(&self, index: usize) -> Result<Option<SparseDepthMap>> {
        let Some(path) = self.record(index).and_then(|r| r.gt.as_ref()) else {
            return Ok(None);
        };
        let d = load_depth_png16(path)?;
        self.check_size(path, d.width(), d.height())?;
        Ok(Some(d))
    }

    pub fn load_features(&self, index: usize) -> Result<FeatureSet> {
        let rec = self.record(index).ok_or_else(|| DataError::Missing(format!("frame {index}")))?;
        let path = rec
            .features
            .as_ref()
            .ok_or_else(|| DataError::Missing(self.root.join("features").join(frame_name(index, "feat")).display().to_string()))?;
        Ok(FeatureSet::load(path)?)
    }

    fn check_size(&self, path: &Path, w: usize, h: usize) -> Result<()> {
        if (w, h) != (self.intrinsics.width, self.intrinsics.height) {
            return Err(DataError::Format {
                path: path.display().to_string(),
                message: format!(
                    "size {w}x{h} differs from intrinsics {}x{}",
                    self.intrinsics.width, self.intrinsics.height
                ),
            });
        }
        Ok(())
    }
}

/// A target frame with its two temporal neighbours.
#[derive(Clone, Debug)]
pub struct FrameTriplet {
    pub index: usize,
    pub target: RgbImage,
    /// previous and next frames
    pub sources: [RgbImage; 2],
    /// `T_{t→s}` for each source
    pub poses: [PoseSE3; 2],
    pub sparse: SparseDepthMap,
    pub gt: Option<SparseDepthMap>,
}

/// Loads the triplet centred on `t`, or `None` at a sequence boundary or
/// where a pose is missing.
pub fn load_triplet(manifest: &DatasetManifest, t: usize) -> Result<Option<FrameTriplet>> {
    if t == 0 {
        return Ok(None);
    }
    let Some(poses) = &manifest.poses else { return Ok(None) };
    let ids = [t - 1, t, t + 1];
    if ids.iter().any(|i| manifest.record(*i).is_none() || !poses.contains_key(i)) {
        return Ok(None);
    }
    let cam_t = poses[&t];
    let rel = |s: usize| poses[&s].inverse().compose(&cam_t);
    Ok(Some(FrameTriplet {
        index: t,
        target: manifest.load_image(t)?,
        sources: [manifest.load_image(t - 1)?, manifest.load_image(t + 1)?],
        poses: [rel(t - 1), rel(t + 1)],
        sparse: manifest.load_sparse(t)?,
        gt: manifest.load_gt(t)?,
    }))
}
