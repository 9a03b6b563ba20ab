//! Depth-completion networks: an RGB encoder of residual stages, a depth
//! encoder, per-scale fusion and a skip-connected decoder ending in a
//! sigmoid inverse-depth head.
//!
//! Variants:
//!
//! | name      | encoders                         | fusion at each scale        |
//! |-----------|----------------------------------|-----------------------------|
//! | `1e-1d`   | one, on concatenated RGB + depth | none                        |
//! | `2e-1d`   | RGB residual + plain conv depth  | conv(depth) ‖ rgb           |
//! | `2es-1d`  | RGB residual + sparse conv depth | conv(depth) ‖ rgb           |
//! | `2es-1dp` | RGB residual + sparse conv depth | PAC(depth; guide(rgb)) ‖ rgb |
//!
//! `2es-1dp` stores the same parameters as `2es-1d` plus a 1×1 guidance
//! projection per scale, so either variant can run on a `2es-1dp` store.

mod params;
#[cfg(test)]
mod tests;

pub use params::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, BoundParams, ParameterStore};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::{
    pac_conv, residual_block, sparse_conv_block, standardize_channels, ObservationMask, PacKernelFootprint, ResidualParams, SparseFeature,
};
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("input {width}x{height} is not divisible by {factor}")]
    Resolution { width: usize, height: usize, factor: usize },
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error("unexpected parameter {0}")]
    UnexpectedParameter(String),
    #[error("duplicate parameter {0}")]
    DuplicateParameter(String),
    #[error("parameter {name} has shape {found:?}, config expects {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}: {1}")]
    Io(String, String),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    EarlyFusion,
    DualEncoder,
    DualSparse,
    DualSparsePac,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Self::EarlyFusion, Self::DualEncoder, Self::DualSparse, Self::DualSparsePac];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::EarlyFusion => "1e-1d",
            Self::DualEncoder => "2e-1d",
            Self::DualSparse => "2es-1d",
            Self::DualSparsePac => "2es-1dp",
        }
    }

    fn dual(&self) -> bool {
        *self != Self::EarlyFusion
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| NetworkError::Config(format!("unknown variant {s:?} (expected 1e-1d, 2e-1d, 2es-1d or 2es-1dp)")))
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub variant: Variant,
    /// channels per encoder stage; each stage halves the resolution
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub pac_kernel: usize,
    /// channels of the learned PAC guidance projection
    pub guidance_channels: usize,
    /// metric depth range `(d_min, d_max)` of the output mapping
    pub depth_range: (f64, f64),
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DualSparsePac,
            stage_channels: vec![32, 64, 128, 256],
            blocks_per_stage: 2,
            pac_kernel: 3,
            guidance_channels: 4,
            depth_range: (0.1, 100.0),
        }
    }
}

/// Initialisation rule for one parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `N(0, 2/fan_in)`
    He {
        fan_in: usize,
    },
    Zero,
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

struct LayoutBuilder(Vec<ParamSpec>);

impl LayoutBuilder {
    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize) {
        self.0.push(ParamSpec {
            name: format!("{name}.w"),
            shape: vec![cout, cin, k, k],
            init: Init::He { fan_in: cin * k * k },
        });
        self.0.push(ParamSpec {
            name: format!("{name}.b"),
            shape: vec![cout],
            init: Init::Zero,
        });
    }

    fn residual(&mut self, name: &str, cin: usize, cout: usize, project: bool) {
        self.conv(&format!("{name}.conv1"), cout, cin, 3);
        self.conv(&format!("{name}.conv2"), cout, cout, 3);
        if project {
            self.conv(&format!("{name}.proj"), cout, cin, 1);
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetworkError::Config(m));
        if self.stage_channels.len() < 2 {
            return bad(format!("need at least 2 stages, got {}", self.stage_channels.len()));
        }
        if self.stage_channels.contains(&0) || self.blocks_per_stage == 0 {
            return bad("stage channels and blocks per stage must be positive".into());
        }
        if self.pac_kernel.is_multiple_of(2) {
            return bad(format!("pac_kernel must be odd, got {}", self.pac_kernel));
        }
        if self.variant == Variant::DualSparsePac && self.guidance_channels == 0 {
            return bad("guidance_channels must be positive".into());
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return bad(format!("depth range ({lo}, {hi}) must satisfy 0 < d_min < d_max"));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.stage_channels.len()
    }

    /// Height and width must be multiples of this.
    pub fn resolution_factor(&self) -> usize {
        1 << self.stages()
    }

    /// Channels of the skip tensor at stage `s`.
    fn skip_channels(&self, s: usize) -> usize {
        if self.variant.dual() {
            2 * self.stage_channels[s]
        } else {
            self.stage_channels[s]
        }
    }

    /// Every parameter in store order.
    pub fn layout(&self) -> Result<Vec<ParamSpec>> {
        self.validate()?;
        let ch = &self.stage_channels;
        let mut b = LayoutBuilder(Vec::new());
        let input = if self.variant.dual() { 3 } else { 4 };
        for (s, &c) in ch.iter().enumerate() {
            let cin = if s == 0 { input } else { ch[s - 1] };
            for j in 0..self.blocks_per_stage {
                let from = if j == 0 { cin } else { c };
                b.residual(&format!("rgb{s}.{j}"), from, c, j == 0);
            }
        }
        if self.variant.dual() {
            for (s, &c) in ch.iter().enumerate() {
                let cin = if s == 0 { 1 } else { ch[s - 1] };
                for j in 0..self.blocks_per_stage {
                    b.conv(&format!("depth{s}.{j}"), c, if j == 0 { cin } else { c }, 3);
                }
            }
            for (s, &c) in ch.iter().enumerate() {
                b.conv(&format!("fuse{s}"), c, c, self.pac_kernel);
                if self.variant == Variant::DualSparsePac {
                    b.conv(&format!("guide{s}"), self.guidance_channels, c, 1);
                }
            }
        }
        let last = self.stages() - 1;
        b.conv(&format!("dec{last}"), ch[last], self.skip_channels(last), 3);
        for s in (0..last).rev() {
            b.conv(&format!("dec{s}"), ch[s], ch[s + 1] + self.skip_channels(s), 3);
        }
        b.conv("head", 1, ch[0], 3);
        let bias = head_bias(self.depth_range);
        b.0.last_mut().expect("head bias").init = Init::Constant(bias);
        Ok(b.0)
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self.layout()?.iter().map(|p| p.shape.iter().product::<usize>()).sum())
    }
}

/// Logit putting the initial depth at the geometric mean of the range.
fn head_bias((lo, hi): (f64, f64)) -> f64 {
    let target = 1.0 / (lo * hi).sqrt();
    let p = (target - 1.0 / hi) / (1.0 / lo - 1.0 / hi);
    (p / (1.0 - p)).ln()
}

/// Fresh parameters drawn from a seeded generator in layout order.
pub fn init_parameters<T: Real>(config: &NetworkConfig, seed: u64) -> Result<ParameterStore<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    for spec in config.layout()? {
        let n: usize = spec.shape.iter().product();
        let data: Vec<T> = match spec.init {
            Init::He { fan_in } => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..n).map(|_| T::lit(normal.sample(&mut rng))).collect()
            }
            Init::Zero => vec![T::zero(); n],
            Init::Constant(v) => vec![T::lit(v); n],
        };
        store.insert(spec.name, Tensor::from_vec(spec.shape, data)?)?;
    }
    Ok(store)
}

/// `D = 1 / (1/d_max + (1/d_min − 1/d_max)·d̂)`.
pub fn invdepth_to_depth<'t, T: Real>(inv: &Var<'t, T>, (lo, hi): (f64, f64)) -> Var<'t, T> {
    inv.mul_scalar(T::lit(1.0 / lo - 1.0 / hi)).add_scalar(T::lit(1.0 / hi)).recip()
}

/// Output of [`forward`].
pub struct Prediction<'t, T: Real> {
    /// raw sigmoid output `d̂`, `N×1×H×W` in `(0, 1)`
    pub inv_depth: Var<'t, T>,
    /// metric depth in metres
    pub depth: Var<'t, T>,
}

fn conv<'t, T: Real>(x: &Var<'t, T>, p: &BoundParams<'t, T>, name: &str, stride: usize) -> Result<Var<'t, T>> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    let k = w.shape()[2];
    Ok(x.conv2d(&w, Some(&b), stride, k / 2)?)
}

fn residual<'t, T: Real>(x: &Var<'t, T>, p: &BoundParams<'t, T>, name: &str, stride: usize, project: bool) -> Result<Var<'t, T>> {
    let get = |s: &str| p.get(&format!("{name}.{s}"));
    let params = ResidualParams {
        conv1_w: get("conv1.w")?,
        conv1_b: get("conv1.b")?,
        conv2_w: get("conv2.w")?,
        conv2_b: get("conv2.b")?,
        proj: if project { Some((get("proj.w")?, get("proj.b")?)) } else { None },
    };
    Ok(residual_block(x, &params, stride)?.relu())
}

/// Runs the network on images `N×3×H×W` in `[0, 1]` and sparse depth
/// `N×1×H×W` in metres (0 = missing).
pub fn forward<'t, T: Real>(
    config: &NetworkConfig,
    params: &BoundParams<'t, T>,
    image: &Var<'t, T>,
    sparse: &Tensor<T>,
) -> Result<Prediction<'t, T>> {
    config.validate()?;
    let [n, c, h, w] = image.value().dims4()?;
    let [sn, sc, sh, sw] = sparse.dims4()?;
    if c != 3 || (sn, sc, sh, sw) != (n, 1, h, w) {
        return Err(TensorError::ShapeMismatch {
            op: "forward",
            lhs: image.shape(),
            rhs: sparse.shape().to_vec(),
        }
        .into());
    }
    let factor = config.resolution_factor();
    if h % factor != 0 || w % factor != 0 {
        return Err(NetworkError::Resolution {
            width: w,
            height: h,
            factor,
        });
    }
    let tape = image.tape();
    let d_max = config.depth_range.1;
    let centered = image.add_scalar(T::lit(-0.5));
    let scaled_sparse = tape.constant(sparse.map(|d| d / T::lit(d_max)));
    let stages = config.stages();

    let rgb_input = if config.variant.dual() {
        centered
    } else {
        tape.concat(&[centered, scaled_sparse], 1)?
    };
    let mut rgb = Vec::with_capacity(stages);
    let mut x = rgb_input;
    for s in 0..stages {
        for j in 0..config.blocks_per_stage {
            x = residual(&x, params, &format!("rgb{s}.{j}"), if j == 0 { 2 } else { 1 }, j == 0)?;
        }
        rgb.push(x);
    }

    let skips = if config.variant.dual() {
        let depth = depth_encoder(config, params, scaled_sparse, sparse)?;
        let mut fused = Vec::with_capacity(stages);
        for s in 0..stages {
            let name = format!("fuse{s}");
            let transformed = if config.variant == Variant::DualSparsePac {
                let guide = standardize_channels(&conv(&rgb[s], params, &format!("guide{s}"), 1)?, T::lit(1e-5))?;
                let footprint = PacKernelFootprint::new(config.pac_kernel, 1)?;
                let (wt, b) = (params.get(&format!("{name}.w"))?, params.get(&format!("{name}.b"))?);
                pac_conv(&depth[s], &guide, &wt, Some(&b), footprint)?
            } else {
                conv(&depth[s], params, &name, 1)?
            };
            fused.push(tape.concat(&[rgb[s], transformed.relu()], 1)?);
        }
        fused
    } else {
        rgb
    };

    let last = stages - 1;
    let mut y = conv(&skips[last], params, &format!("dec{last}"), 1)?.relu();
    for s in (0..last).rev() {
        let up = y.upsample_nearest2x()?;
        y = conv(&tape.concat(&[up, skips[s]], 1)?, params, &format!("dec{s}"), 1)?.relu();
    }
    let inv_depth = conv(&y.upsample_nearest2x()?, params, "head", 1)?.sigmoid();
    let depth = invdepth_to_depth(&inv_depth, config.depth_range);
    Ok(Prediction { inv_depth, depth })
}

fn depth_encoder<'t, T: Real>(
    config: &NetworkConfig,
    params: &BoundParams<'t, T>,
    input: Var<'t, T>,
    sparse: &Tensor<T>,
) -> Result<Vec<Var<'t, T>>> {
    let mut out = Vec::with_capacity(config.stages());
    let mut x = input;
    let sparse_mode = config.variant != Variant::DualEncoder;
    let mut mask = ObservationMask::from_depth(sparse)?;
    for s in 0..config.stages() {
        for j in 0..config.blocks_per_stage {
            let name = format!("depth{s}.{j}");
            let stride = if j == 0 { 2 } else { 1 };
            x = if sparse_mode {
                let (wt, b) = (params.get(&format!("{name}.w"))?, params.get(&format!("{name}.b"))?);
                let (y, m) = sparse_conv_block(SparseFeature { feature: x, mask: &mask }, &wt, Some(&b), stride)?;
                mask = m;
                y
            } else {
                conv(&x, params, &name, stride)?
            }
            .relu();
        }
        out.push(x);
    }
    Ok(out)
}

/// Inference without gradient tracking; returns metric depth `N×1×H×W`.
pub fn predict_depth<T: Real>(
    config: &NetworkConfig,
    store: &ParameterStore<T>,
    image: &Tensor<T>,
    sparse: &Tensor<T>,
) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let params = store.bind_frozen(&tape);
    let img = tape.constant(image.clone());
    let pred = forward(config, &params, &img, sparse)?;
    let depth = pred.depth.value();
    Ok((*depth).clone())
}
