//! Depth error metrics against ground truth, dataset-level evaluation with
//! pixel-weighted aggregation, and the nearest-valid-pixel fill baseline.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, DatasetManifest, SparseDepthMap};
use crate::network::{predict_depth, NetworkConfig, NetworkError, ParameterStore};
use crate::tensor::{Real, Tensor};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no valid ground-truth pixels")]
    NoValidPixels,
    #[error("non-positive prediction {value} at pixel {index}")]
    NonPositivePrediction { index: usize, value: f64 },
    #[error("prediction has {found} values, ground truth {expected}")]
    Shape { expected: usize, found: usize },
    #[error("sparse input has no valid pixels")]
    EmptySparse,
    #[error("nothing to evaluate: {0}")]
    Empty(String),
    #[error("frame {0} has no ground truth")]
    MissingGroundTruth(usize),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{0}: {1}")]
    Io(String, String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Errors in millimetres, inverse errors in 1/km.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    pub abs_rel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub irmse: f64,
    pub imae: f64,
    pub pixels: usize,
}

/// Sums from which a report follows; merging is exact aggregation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricSums {
    pub pixels: usize,
    pub sq: f64,
    pub abs: f64,
    pub rel: f64,
    pub inv_sq: f64,
    pub inv_abs: f64,
    pub within: [usize; 3],
}

impl MetricSums {
    pub fn merge(&mut self, o: &MetricSums) {
        self.pixels += o.pixels;
        self.sq += o.sq;
        self.abs += o.abs;
        self.rel += o.rel;
        self.inv_sq += o.inv_sq;
        self.inv_abs += o.inv_abs;
        for i in 0..3 {
            self.within[i] += o.within[i];
        }
    }

    pub fn report(&self) -> Result<MetricReport> {
        if self.pixels == 0 {
            return Err(EvalError::NoValidPixels);
        }
        let n = self.pixels as f64;
        Ok(MetricReport {
            rmse: (self.sq / n).sqrt() * 1e3,
            mae: self.abs / n * 1e3,
            abs_rel: self.rel / n,
            delta1: self.within[0] as f64 / n,
            delta2: self.within[1] as f64 / n,
            delta3: self.within[2] as f64 / n,
            irmse: (self.inv_sq / n).sqrt() * 1e3,
            imae: self.inv_abs / n * 1e3,
            pixels: self.pixels,
        })
    }
}

/// Accumulates statistics over gt-valid pixels of `pred` (metres).
pub fn metric_sums<T: Real>(pred: &[T], gt: &SparseDepthMap) -> Result<MetricSums> {
    if pred.len() != gt.data().len() {
        return Err(EvalError::Shape {
            expected: gt.data().len(),
            found: pred.len(),
        });
    }
    let thresholds = [1.25, 1.25f64.powi(2), 1.25f64.powi(3)];
    let mut s = MetricSums::default();
    for (i, (p, g)) in pred.iter().zip(gt.data()).enumerate() {
        if !gt.is_valid(i) {
            continue;
        }
        let (p, g) = (p.to_f64_lossy(), *g as f64);
        if !(p > 0.0 && p.is_finite()) {
            return Err(EvalError::NonPositivePrediction { index: i, value: p });
        }
        let e = p - g;
        s.pixels += 1;
        s.sq += e * e;
        s.abs += e.abs();
        s.rel += e.abs() / g;
        let ie = 1.0 / p - 1.0 / g;
        s.inv_sq += ie * ie;
        s.inv_abs += ie.abs();
        let ratio = (p / g).max(g / p);
        for (k, t) in thresholds.iter().enumerate() {
            if ratio < *t {
                s.within[k] += 1;
            }
        }
    }
    Ok(s)
}

pub fn compute_metrics<T: Real>(pred: &Tensor<T>, gt: &SparseDepthMap) -> Result<MetricReport> {
    metric_sums(pred.data(), gt)?.report()
}

/// Depth of the nearest valid sparse pixel, Euclidean distance, ties going
/// to the earlier pixel in scan order. Returns `1×1×H×W`.
pub fn nn_fill_baseline(sparse: &SparseDepthMap) -> Result<Tensor<f32>> {
    let (w, h) = (sparse.width(), sparse.height());
    let mut rows: Vec<Vec<(usize, f32)>> = vec![Vec::new(); h];
    for y in 0..h {
        for x in 0..w {
            let d = sparse.get(x, y);
            if d > 0.0 {
                rows[y].push((x, d));
            }
        }
    }
    if rows.iter().all(|r| r.is_empty()) {
        return Err(EvalError::EmptySparse);
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            // (squared distance, scan index, depth)
            let mut best: Option<(usize, usize, f32)> = None;
            for dy in 0..h {
                if best.is_some_and(|b| dy * dy > b.0) {
                    break;
                }
                let candidates = [y.checked_sub(dy), (dy > 0).then_some(y + dy).filter(|r| *r < h)];
                for row in candidates.into_iter().flatten() {
                    for &(px, d) in &rows[row] {
                        let key = (dy * dy + px.abs_diff(x).pow(2), row * w + px);
                        if best.is_none_or(|b| key < (b.0, b.1)) {
                            best = Some((key.0, key.1, d));
                        }
                    }
                }
            }
            out[y * w + x] = best.map(|b| b.2).unwrap_or(0.0);
        }
    }
    Ok(Tensor::from_vec(vec![1, 1, h, w], out).expect("sized above"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEvaluation {
    pub index: usize,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEvaluation {
    pub schema_version: u32,
    /// pixel-weighted over every frame that evaluated cleanly
    pub aggregate: MetricReport,
    pub frames: Vec<FrameEvaluation>,
    pub failed: usize,
}

impl DatasetEvaluation {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| EvalError::Io(path.display().to_string(), e.to_string()))?;
        std::fs::write(path, json).map_err(|e| EvalError::Io(path.display().to_string(), e.to_string()))
    }
}

/// Evaluates `predict` on each frame in `indices`. A frame whose metrics
/// fail is flagged and left out of the aggregate.
pub fn evaluate_frames<F>(manifest: &DatasetManifest, indices: &[usize], predict: F) -> Result<DatasetEvaluation>
where
    F: Fn(usize) -> Result<Tensor<f32>> + Sync,
{
    if indices.is_empty() {
        return Err(EvalError::Empty("no frames selected".into()));
    }
    let per_frame: Vec<Result<MetricSums>> = indices
        .par_iter()
        .map(|&i| {
            let gt = manifest.load_gt(i)?.ok_or(EvalError::MissingGroundTruth(i))?;
            let pred = predict(i)?;
            let s = metric_sums(pred.data(), &gt)?;
            s.report()?;
            Ok(s)
        })
        .collect();
    let mut total = MetricSums::default();
    let mut frames = Vec::with_capacity(indices.len());
    let mut failed = 0;
    for (&index, r) in indices.iter().zip(per_frame) {
        match r {
            Ok(s) => {
                total.merge(&s);
                frames.push(FrameEvaluation {
                    index,
                    report: Some(s.report()?),
                    error: None,
                });
            }
            Err(e) => {
                failed += 1;
                frames.push(FrameEvaluation {
                    index,
                    report: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let aggregate = total
        .report()
        .map_err(|_| EvalError::Empty(format!("all {failed} frames failed to evaluate")))?;
    Ok(DatasetEvaluation {
        schema_version: METRICS_SCHEMA_VERSION,
        aggregate,
        frames,
        failed,
    })
}

/// Runs the network on every selected frame (all frames when `indices` is
/// `None`).
pub fn evaluate_dataset(
    manifest: &DatasetManifest,
    config: &NetworkConfig,
    store: &ParameterStore<f32>,
    indices: Option<&[usize]>,
) -> Result<DatasetEvaluation> {
    let all: Vec<usize> = manifest.frames.iter().map(|f| f.index).collect();
    if all.is_empty() {
        return Err(EvalError::Empty("manifest has no frames".into()));
    }
    evaluate_frames(manifest, indices.unwrap_or(&all), |i| {
        let image = manifest.load_image(i)?.to_tensor::<f32>();
        let sparse = manifest.load_sparse(i)?.to_tensor::<f32>();
        Ok(predict_depth(config, store, &image, &sparse)?)
    })
}

/// The fill baseline scored the same way as the network.
pub fn evaluate_nn_fill(manifest: &DatasetManifest, indices: Option<&[usize]>) -> Result<DatasetEvaluation> {
    let all: Vec<usize> = manifest.frames.iter().map(|f| f.index).collect();
    if all.is_empty() {
        return Err(EvalError::Empty("manifest has no frames".into()));
    }
    evaluate_frames(manifest, indices.unwrap_or(&all), |i| nn_fill_baseline(&manifest.load_sparse(i)?))
}

#[cfg(test)]
mod tests;
