//! `dcomp` command line: synthesize datasets, precompute poses, train,
//! evaluate, complete single frames and run the gradient check.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure, 5 gradient check failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use dcomp::config::{ConfigError, FrameRange, PoseSource, RunConfig};
use dcomp::data::{
    build_manifest, load_depth_png16, load_rgb_png, load_triplet, render_scene, save_depth_png16, save_rgb_png, write_dataset, DataError,
    DatasetManifest, DatasetWriteOptions, FrameTriplet, RgbImage, SamplingPattern, SceneKind, SceneSpec, SparseDepthMap, GT_POSE_FILE,
    POSE_FILE,
};
use dcomp::evaluation::{compute_metrics, evaluate_dataset, evaluate_nn_fill, EvalError};
use dcomp::geometry::{save_pose_file, GeometryError, PoseSE3};
use dcomp::network::{load_checkpoint, predict_depth, save_checkpoint, NetworkError, Variant};
use dcomp::pose::{estimate_relative_pose, PoseError};
use dcomp::training::{gradcheck_suite, StepRecord, TrainError, Trainer};

#[derive(Debug, Error)]
enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Gradcheck(_) => 5,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PoseError> for CliError {
    fn from(e: PoseError) -> Self {
        match e {
            PoseError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Config(_) | NetworkError::Resolution { .. } => CliError::Config(e.to_string()),
            NetworkError::Tensor(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Network(n) => n.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::NoData => CliError::Data(e.to_string()),
            TrainError::NonFinite { .. } | TrainError::Loss(_) | TrainError::Tensor(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Network(n) => n.into(),
            EvalError::NonPositivePrediction { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "dcomp", version, about = "Self-supervised depth completion from images and sparse depth")]
struct Cli {
    /// JSON run configuration; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// worker threads (overrides DCOMP_THREADS); 1 gives the deterministic path
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// allow writing into existing, non-empty outputs
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic sequence into a dataset directory
    Synth(SynthArgs),
    /// Estimate camera poses with PnP + RANSAC and write poses.txt
    Pose(PoseArgs),
    /// Train a network
    Train(TrainArgs),
    /// Score a checkpoint against ground truth
    Eval(EvalArgs),
    /// Complete depth for a single frame
    Complete(CompleteArgs),
    /// Run the finite-difference gradient check
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scene: Option<SceneKind>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// WIDTHxHEIGHT
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<(usize, usize)>,
    /// uniformly sampled sparse points per frame
    #[arg(long, conflicts_with = "scanlines")]
    points: Option<usize>,
    /// simulated scan lines per frame instead of uniform points
    #[arg(long)]
    scanlines: Option<usize>,
}

#[derive(Args)]
struct PoseArgs {
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// START..END frames whose triplets are trained on
    #[arg(long)]
    frames: Option<FrameRange>,
    /// use the generator's poses instead of poses.txt
    #[arg(long)]
    gt_poses: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// START..END frames to evaluate
    #[arg(long)]
    frames: Option<FrameRange>,
    /// also score the nearest-valid-pixel fill baseline
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// 16-bit millimetre depth PNG, 0 = missing
    #[arg(long)]
    sparse: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// ground truth to score the completion against
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// write the report as JSON
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got '{s}'"))?;
    let w = w.parse().map_err(|e| format!("width: {e}"))?;
    let h = h.parse().map_err(|e| format!("height: {e}"))?;
    Ok((w, h))
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("DCOMP_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Config(format!("DCOMP_THREADS='{v}' is not a count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Config("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Creates `dir`, refusing a non-empty one unless forced.
fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Config(format!("{} exists and is not a directory", dir.display())));
        }
        let occupied = std::fs::read_dir(dir).map_err(|e| io(dir, e))?.next().is_some();
        if occupied && !force {
            return Err(CliError::Config(format!(
                "{} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Config(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io(path, e))
}

fn echo_config(dir: &Path, command: &str, config: &RunConfig) -> Result<()> {
    std::fs::write(dir.join(format!("{command}_config.json")), config.to_json() + "\n").map_err(|e| io(dir, e))
}

fn cmd_synth(args: SynthArgs, mut config: RunConfig, force: bool) -> Result<()> {
    let s = &mut config.synth;
    if let Some(v) = args.scene {
        s.scene = v;
    }
    if let Some(v) = args.frames {
        s.frames = v;
    }
    if let Some(v) = args.seed {
        s.seed = v;
    }
    if let Some((w, h)) = args.resolution {
        (s.width, s.height) = (w, h);
    }
    if let Some(points) = args.points {
        s.sampling = SamplingPattern::Uniform { points };
    }
    if let Some(lines) = args.scanlines {
        s.sampling = SamplingPattern::Scanlines { lines };
    }
    config.validate()?;
    let s = &config.synth;
    let spec = SceneSpec::preset(s.scene, s.frames, s.width, s.height, s.seed)?;
    let frames = render_scene(&spec)?;
    let opts = DatasetWriteOptions {
        sampling: s.sampling,
        seed: s.seed,
        force,
    };
    write_dataset(&args.out, &frames, &spec.intrinsics, &opts).map_err(|e| match e {
        DataError::Invalid(m) if m.contains("--force") || m.contains("not empty") => CliError::Config(m),
        other => other.into(),
    })?;
    echo_config(&args.out, "synth", &config)?;
    info!(
        "wrote {} frames of '{:?}' at {}x{} to {}",
        s.frames,
        s.scene,
        s.width,
        s.height,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PoseRow {
    frame: usize,
    ok: bool,
    matches: usize,
    depth_backed: usize,
    inliers: usize,
    error: Option<String>,
    /// against the generator's trajectory when available
    rotation_error_deg: Option<f64>,
    translation_error_m: Option<f64>,
}

fn cmd_pose(args: PoseArgs, config: RunConfig, force: bool) -> Result<()> {
    config.validate()?;
    let manifest = build_manifest(&args.data)?;
    let out = args.data.join(POSE_FILE);
    refuse_existing(&out, force)?;
    let gt = {
        let mut m = manifest.clone();
        m.load_poses(&args.data.join(GT_POSE_FILE)).ok().and(m.poses)
    };
    let indices: Vec<usize> = manifest.frames.iter().map(|f| f.index).collect();
    let k = manifest.intrinsics;
    // T_{i→i−1} for every consecutive pair, independently
    let estimates: Vec<_> = indices
        .par_windows(2)
        .map(|w| -> Result<_> {
            let (prev, cur) = (w[0], w[1]);
            let target = manifest.load_features(cur)?;
            let source = manifest.load_features(prev)?;
            let sparse = manifest.load_sparse(cur)?;
            Ok((cur, prev, estimate_relative_pose(&target, &source, &sparse, &k, &config.ransac)))
        })
        .collect::<Result<Vec<_>>>()?;
    let first = *indices.first().ok_or_else(|| CliError::Data("dataset has no frames".into()))?;
    let mut poses = vec![(
        first,
        gt.as_ref().and_then(|g| g.get(&first).copied()).unwrap_or_else(PoseSE3::identity),
    )];
    let mut chain = poses[0].1;
    let mut rows = Vec::new();
    let mut failed = 0;
    for (cur, prev, est) in estimates {
        let mut row = PoseRow {
            frame: cur,
            ok: false,
            matches: 0,
            depth_backed: 0,
            inliers: 0,
            error: None,
            rotation_error_deg: None,
            translation_error_m: None,
        };
        match est {
            Ok(e) => {
                chain = chain.compose(&e.pose);
                if let Some(g) = &gt {
                    if let (Some(a), Some(b)) = (g.get(&prev), g.get(&cur)) {
                        let (r, t) = e.pose.distance_to(&a.inverse().compose(b));
                        row.rotation_error_deg = Some(r.to_degrees());
                        row.translation_error_m = Some(t);
                    }
                }
                (row.ok, row.matches, row.depth_backed, row.inliers) = (true, e.matches, e.depth_backed, e.inliers);
                poses.push((cur, chain));
            }
            Err(e) => {
                // the frame is left out; relative poses after it stay consistent
                warn!("frame {cur}: {e}");
                failed += 1;
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }
    save_pose_file(&out, &poses)?;
    write_json(&args.data.join("pose_report.json"), &rows)?;
    echo_config(&args.data, "pose", &config)?;
    info!(
        "estimated {} of {} relative poses ({failed} failed)",
        rows.len() - failed,
        rows.len()
    );
    if failed == rows.len() && !rows.is_empty() {
        return Err(CliError::Data("no relative pose could be estimated".into()));
    }
    Ok(())
}

fn load_manifest_with_poses(data: &Path, source: PoseSource) -> Result<DatasetManifest> {
    let mut m = build_manifest(data)?;
    match source {
        PoseSource::GroundTruth => m.load_poses(&data.join(GT_POSE_FILE))?,
        PoseSource::Estimated if m.poses.is_none() => {
            return Err(CliError::Data(format!(
                "{} has no {POSE_FILE}; run `dcomp pose` first or train with --gt-poses",
                data.display()
            )))
        }
        PoseSource::Estimated => {}
    }
    Ok(m)
}

fn load_triplets(m: &DatasetManifest, range: Option<FrameRange>) -> Result<Vec<FrameTriplet>> {
    let wanted: Vec<usize> = m
        .triplet_indices()
        .into_iter()
        .filter(|&t| range.is_none_or(|r| r.contains(t - 1) && r.contains(t + 1)))
        .collect();
    let triplets = wanted
        .par_iter()
        .map(|&t| load_triplet(m, t))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(triplets.into_iter().flatten().collect())
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine<'a> {
    Step(&'a StepRecord),
    Epoch {
        epoch: usize,
        steps: usize,
        mean_total: f64,
        mean_photo: f64,
        mean_depth: f64,
        seconds: f64,
        checkpoint: String,
    },
}

fn cmd_train(args: TrainArgs, mut config: RunConfig, force: bool) -> Result<()> {
    if let Some(v) = args.variant {
        config.network.variant = v;
    }
    if let Some(v) = args.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = args.seed {
        config.train.seed = v;
    }
    if let Some(v) = args.lr {
        config.train.lr0 = v;
    }
    if let Some(v) = args.batch_size {
        config.train.batch_size = v;
    }
    if let Some(v) = args.frames {
        config.data.train_frames = Some(v);
    }
    if args.gt_poses {
        config.data.poses = PoseSource::GroundTruth;
    }
    config.validate()?;
    let manifest = load_manifest_with_poses(&args.data, config.data.poses)?;
    let triplets = load_triplets(&manifest, config.data.train_frames)?;
    if triplets.is_empty() {
        return Err(CliError::Data("no frame triplets with poses in the selected range".into()));
    }
    prepare_output_dir(&args.out, force)?;
    echo_config(&args.out, "train", &config)?;
    let ckpt_dir = args.out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| io(&ckpt_dir, e))?;
    let log_path = args.out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io(&log_path, e))?);
    let mut log_err = None;
    let mut emit = |line: &LogLine, log: &mut BufWriter<File>| {
        let r = serde_json::to_writer(&mut *log, line)
            .map_err(|e| e.to_string())
            .and_then(|_| log.write_all(b"\n").map_err(|e| e.to_string()));
        if let Err(e) = r {
            log_err.get_or_insert(e);
        }
    };

    let mut trainer = Trainer::new(config.network.clone(), config.train.clone(), manifest.intrinsics)?;
    info!(
        "training {} ({} parameters) on {} triplets for {} epochs",
        config.network.variant,
        trainer.store.scalar_count(),
        triplets.len(),
        config.train.epochs
    );
    for epoch in 0..config.train.epochs {
        let start = std::time::Instant::now();
        let summary = trainer.run_epoch(&triplets, epoch, |rec| emit(&LogLine::Step(rec), &mut log))?;
        let path = ckpt_dir.join(format!("epoch_{:03}.ckpt", epoch + 1));
        save_checkpoint(&path, &config.network, &trainer.store)?;
        emit(
            &LogLine::Epoch {
                epoch,
                steps: summary.steps,
                mean_total: summary.mean_total,
                mean_photo: summary.mean_photo,
                mean_depth: summary.mean_depth,
                seconds: start.elapsed().as_secs_f64(),
                checkpoint: path.display().to_string(),
            },
            &mut log,
        );
        log.flush().map_err(|e| io(&log_path, e))?;
        info!(
            "epoch {}: loss {:.5} ({:.1}s)",
            epoch + 1,
            summary.mean_total,
            start.elapsed().as_secs_f64()
        );
    }
    if let Some(e) = log_err {
        return Err(io(&log_path, e));
    }
    save_checkpoint(&args.out.join("model.ckpt"), &config.network, &trainer.store)?;
    Ok(())
}

fn frame_selection(m: &DatasetManifest, range: Option<FrameRange>) -> Vec<usize> {
    m.frames
        .iter()
        .map(|f| f.index)
        .filter(|&i| range.is_none_or(|r| r.contains(i)))
        .collect()
}

fn cmd_eval(args: EvalArgs, mut config: RunConfig, force: bool) -> Result<()> {
    if let Some(r) = args.frames {
        config.data.eval_frames = Some(r);
    }
    config.validate()?;
    let (net, store) = load_checkpoint(&args.checkpoint)?;
    config.network = net.clone();
    let manifest = build_manifest(&args.data)?;
    let frames = frame_selection(&manifest, config.data.eval_frames);
    if frames.is_empty() {
        return Err(CliError::Data("no frames in the selected range".into()));
    }
    prepare_output_dir(&args.out, force)?;
    echo_config(&args.out, "eval", &config)?;
    let eval = evaluate_dataset(&manifest, &net, &store, Some(&frames))?;
    eval.save(&args.out.join("metrics.json"))?;
    let a = &eval.aggregate;
    println!(
        "network   rmse {:9.1} mm  mae {:9.1} mm  abs_rel {:.4}  d1 {:.4}  frames {} (failed {})",
        a.rmse,
        a.mae,
        a.abs_rel,
        a.delta1,
        frames.len(),
        eval.failed
    );
    if args.baseline {
        let nn = evaluate_nn_fill(&manifest, Some(&frames))?;
        nn.save(&args.out.join("nn_fill_metrics.json"))?;
        let b = &nn.aggregate;
        println!(
            "nn-fill   rmse {:9.1} mm  mae {:9.1} mm  abs_rel {:.4}  d1 {:.4}",
            b.rmse, b.mae, b.abs_rel, b.delta1
        );
    }
    if !a.rmse.is_finite() {
        return Err(CliError::Numerical("non-finite metrics".into()));
    }
    Ok(())
}

/// Polynomial fit of the turbo colormap, `t` in `[0, 1]`.
fn turbo(t: f32) -> [f32; 3] {
    const R: [f32; 6] = [0.135_721_38, 4.615_392_6, -42.660_32, 132.131_08, -152.942_39, 59.286_38];
    const G: [f32; 6] = [0.091_402_61, 2.194_188_4, 4.842_966_6, -14.185_033, 4.277_298_6, 2.829_566];
    const B: [f32; 6] = [0.106_673_3, 12.641_946, -60.582_05, 110.362_77, -89.903_11, 27.348_25];
    let t = t.clamp(0.0, 1.0);
    let eval = |c: &[f32; 6]| c.iter().rev().fold(0.0, |acc, k| acc * t + k).clamp(0.0, 1.0);
    [eval(&R), eval(&G), eval(&B)]
}

/// Turbo colouring of inverse depth, near is warm; missing pixels are grey.
fn colorize(depth: &[f32], width: usize, height: usize) -> Result<RgbImage> {
    let inv: Vec<Option<f32>> = depth.iter().map(|d| (*d > 0.0 && d.is_finite()).then(|| 1.0 / d)).collect();
    let (lo, hi) = inv
        .iter()
        .flatten()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let span = (hi - lo).max(1e-6);
    let plane = width * height;
    let mut data = vec![0.5f32; 3 * plane];
    for (i, v) in inv.iter().enumerate() {
        if let Some(v) = v {
            for (ch, x) in turbo((v - lo) / span).into_iter().enumerate() {
                data[ch * plane + i] = x;
            }
        }
    }
    Ok(RgbImage::new(width, height, data)?)
}

fn cmd_complete(args: CompleteArgs, mut config: RunConfig, force: bool) -> Result<()> {
    let (net, store) = load_checkpoint(&args.checkpoint)?;
    config.network = net.clone();
    config.validate()?;
    let image = load_rgb_png(&args.image)?;
    let sparse = load_depth_png16(&args.sparse)?;
    if (image.width(), image.height()) != (sparse.width(), sparse.height()) {
        return Err(CliError::Data(format!(
            "image is {}x{} but sparse depth is {}x{}",
            image.width(),
            image.height(),
            sparse.width(),
            sparse.height()
        )));
    }
    prepare_output_dir(&args.out, force)?;
    echo_config(&args.out, "complete", &config)?;
    let depth = predict_depth(&net, &store, &image.to_tensor(), &sparse.to_tensor())?;
    if !depth.all_finite() {
        return Err(CliError::Numerical("prediction is not finite".into()));
    }
    let (w, h) = (image.width(), image.height());
    let map = SparseDepthMap::new(w, h, depth.data().to_vec())?;
    save_depth_png16(&args.out.join("depth.png"), &map)?;
    save_rgb_png(&args.out.join("depth_preview.png"), &colorize(map.data(), w, h)?)?;
    save_rgb_png(&args.out.join("sparse_preview.png"), &colorize(sparse.data(), w, h)?)?;
    if let Some(gt) = &args.gt {
        let gt = load_depth_png16(gt)?;
        let report = compute_metrics(&depth, &gt)?;
        write_json(&args.out.join("metrics.json"), &report)?;
        println!(
            "rmse {:.1} mm  mae {:.1} mm  abs_rel {:.4}",
            report.rmse, report.mae, report.abs_rel
        );
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs, force: bool) -> Result<()> {
    if let Some(p) = &args.report {
        refuse_existing(p, force)?;
    }
    let report = gradcheck_suite(args.seed).map_err(|e| CliError::Numerical(e.to_string()))?;
    for row in &report.rows {
        println!(
            "{:<4} {:<50} max rel err {:.2e}  checked {:>6}  excluded {:>4}",
            if row.passed { "ok" } else { "FAIL" },
            row.component,
            row.max_rel_error,
            row.checked,
            row.excluded
        );
    }
    println!(
        "{} components, tolerance {:.0e}, {:.1}s",
        report.rows.len(),
        report.tolerance,
        report.seconds
    );
    if let Some(p) = &args.report {
        write_json(p, &report)?;
    }
    if !report.passed() {
        let failed: Vec<_> = report.rows.iter().filter(|r| !r.passed).map(|r| r.component.as_str()).collect();
        return Err(CliError::Gradcheck(failed.join(", ")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(a, config, cli.force),
        Command::Pose(a) => cmd_pose(a, config, cli.force),
        Command::Train(a) => cmd_train(a, config, cli.force),
        Command::Eval(a) => cmd_eval(a, config, cli.force),
        Command::Complete(a) => cmd_complete(a, config, cli.force),
        Command::Gradcheck(a) => cmd_gradcheck(a, cli.force),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
