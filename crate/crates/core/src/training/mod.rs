//! Optimisation: Adam with a step-decay schedule, batched training steps on
//! frame triplets, and the finite-difference verification suite.

mod gradcheck;
#[cfg(test)]
mod tests;

pub use gradcheck::{gradcheck_suite, GradcheckReport, GradcheckRow, GRADCHECK_SEEDS, GRADCHECK_STEP, GRADCHECK_TOLERANCE};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, FrameTriplet};
use crate::geometry::{CameraIntrinsics, PoseSE3};
use crate::losses::{objective, LossError, LossReport, LossWeights, ObjectiveInputs};
use crate::network::{forward, init_parameters, NetworkConfig, NetworkError, ParameterStore};
use crate::tensor::{Real, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {what} at epoch {epoch} step {step}")]
    NonFinite { what: String, epoch: usize, step: usize },
    #[error("no training triplets")]
    NoData,
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub halve_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// global gradient-norm cap; 0 disables clipping
    pub clip_norm: f64,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            lr0: 1e-4,
            halve_every: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 10.0,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.lr0 > 0.0
            && self.halve_every > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.clip_norm >= 0.0;
        if !ok {
            return Err(TrainError::Config(format!("{self:?}")));
        }
        self.weights.validate()?;
        Ok(())
    }
}

/// `lr0 · 0.5^⌊epoch / halve_every⌋`
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 * 0.5f64.powi((epoch / config.halve_every) as i32)
}

/// Adam moments for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new<T: Real>(store: &ParameterStore<T>, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One bias-corrected Adam update. `grads` follows store order.
pub fn adam_step<T: Real>(store: &mut ParameterStore<T>, grads: &[Vec<f64>], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(TrainError::Config(format!(
            "{} gradients and {} moment buffers for {} parameters",
            grads.len(),
            state.m.len(),
            store.len()
        )));
    }
    for ((name, _), g) in store.iter().zip(grads) {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFinite {
                what: format!("gradient of {name}"),
                epoch: 0,
                step: state.step as usize,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (_, p)) in store.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads[i]);
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + state.epsilon);
            *x = T::lit(x.to_f64_lossy() - update);
        }
    }
    Ok(())
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Triplets stacked along the batch axis.
pub struct Batch<T: Real> {
    pub target: Tensor<T>,
    pub sources: [Tensor<T>; 2],
    pub sparse: Tensor<T>,
    /// `poses[s][n]`
    pub poses: [Vec<PoseSE3>; 2],
}

fn stack<T: Real>(parts: &[&[f32]], shape: [usize; 3]) -> Tensor<T> {
    let data = parts.iter().flat_map(|p| p.iter().map(|v| T::lit(*v as f64))).collect();
    Tensor::from_vec(vec![parts.len(), shape[0], shape[1], shape[2]], data).expect("consistent frame sizes")
}

impl<T: Real> Batch<T> {
    pub fn new(items: &[&FrameTriplet]) -> Result<Self> {
        let first = items.first().ok_or(TrainError::NoData)?;
        let (w, h) = (first.target.width(), first.target.height());
        if items.iter().any(|t| (t.target.width(), t.target.height()) != (w, h)) {
            return Err(TrainError::Config("frames in a batch differ in size".into()));
        }
        let rgb = |f: &dyn Fn(&FrameTriplet) -> &[f32]| stack(&items.iter().map(|t| f(t)).collect::<Vec<_>>(), [3, h, w]);
        Ok(Self {
            target: rgb(&|t| t.target.data()),
            sources: [rgb(&|t| t.sources[0].data()), rgb(&|t| t.sources[1].data())],
            sparse: stack(&items.iter().map(|t| t.sparse.data()).collect::<Vec<_>>(), [1, h, w]),
            poses: [
                items.iter().map(|t| t.poses[0]).collect(),
                items.iter().map(|t| t.poses[1]).collect(),
            ],
        })
    }
}

/// Forward, loss and backward on one batch. Returns the loss report and the
/// gradients in store order.
pub fn loss_and_gradients<T: Real>(
    net: &NetworkConfig,
    store: &ParameterStore<T>,
    batch: &Batch<T>,
    k: &CameraIntrinsics,
    weights: &LossWeights,
) -> Result<(LossReport, Vec<Vec<f64>>)> {
    let tape = Tape::new();
    let params = store.bind(&tape);
    let target = tape.constant(batch.target.clone());
    let sources = [tape.constant(batch.sources[0].clone()), tape.constant(batch.sources[1].clone())];
    let pred = forward(net, &params, &target, &batch.sparse)?;
    let inputs = ObjectiveInputs {
        target,
        sources: &sources,
        poses: &batch.poses,
        intrinsics: k,
        depth: pred.depth,
        inv_depth: pred.inv_depth,
        sparse: &batch.sparse,
    };
    let (loss, report, _) = objective(&inputs, weights)?;
    let grads = tape.backward(&loss)?;
    let flat = params
        .vars()
        .iter()
        .zip(store.iter())
        .map(|(v, (_, t))| match grads.raw(v) {
            Some(g) => g.iter().map(|x| x.to_f64_lossy()).collect(),
            None => vec![0.0; t.len()],
        })
        .collect();
    Ok((report, flat))
}

/// One logged optimisation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub photo: f64,
    pub depth: f64,
    pub smooth: f64,
    pub total: f64,
    pub automask_coverage: f64,
    pub lr: f64,
}

/// Network parameters plus optimiser state, trained in f32.
pub struct Trainer {
    pub net: NetworkConfig,
    pub config: TrainConfig,
    pub intrinsics: CameraIntrinsics,
    pub store: ParameterStore<f32>,
    pub adam: AdamState,
    /// optimisation steps taken so far
    pub step: usize,
}

impl Trainer {
    pub fn new(net: NetworkConfig, config: TrainConfig, intrinsics: CameraIntrinsics) -> Result<Self> {
        config.validate()?;
        let store = init_parameters(&net, config.seed)?;
        Ok(Self::from_store(net, config, intrinsics, store))
    }

    pub fn from_store(net: NetworkConfig, config: TrainConfig, intrinsics: CameraIntrinsics, store: ParameterStore<f32>) -> Self {
        let adam = AdamState::new(&store, config.beta1, config.beta2, config.epsilon);
        Self {
            net,
            config,
            intrinsics,
            store,
            adam,
            step: 0,
        }
    }

    /// One Adam step on `items`.
    pub fn train_step(&mut self, items: &[&FrameTriplet], epoch: usize) -> Result<StepRecord> {
        let batch = Batch::<f32>::new(items)?;
        let (report, mut grads) = loss_and_gradients(&self.net, &self.store, &batch, &self.intrinsics, &self.config.weights)?;
        let non_finite = |what: &str| TrainError::NonFinite {
            what: what.to_string(),
            epoch,
            step: self.step,
        };
        for (what, v) in [
            ("photometric loss", report.photo),
            ("depth loss", report.depth),
            ("smoothness loss", report.smooth),
            ("total loss", report.total),
        ] {
            if !v.is_finite() {
                return Err(non_finite(what));
            }
        }
        clip_global_norm(&mut grads, self.config.clip_norm);
        let lr = lr_at(epoch, &self.config);
        adam_step(&mut self.store, &grads, &mut self.adam, lr).map_err(|e| match e {
            TrainError::NonFinite { what, .. } => non_finite(&what),
            other => other,
        })?;
        if !self.store.all_finite() {
            return Err(non_finite("parameter after update"));
        }
        let record = StepRecord {
            epoch,
            step: self.step,
            photo: report.photo,
            depth: report.depth,
            smooth: report.smooth,
            total: report.total,
            automask_coverage: report.automask_coverage,
            lr,
        };
        self.step += 1;
        Ok(record)
    }

    /// One pass over `triplets` in a seeded shuffled order. `on_step` sees
    /// every record as it is produced.
    pub fn run_epoch(&mut self, triplets: &[FrameTriplet], epoch: usize, mut on_step: impl FnMut(&StepRecord)) -> Result<EpochSummary> {
        if triplets.is_empty() {
            return Err(TrainError::NoData);
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut summary = EpochSummary {
            epoch,
            ..Default::default()
        };
        for chunk in order.chunks(self.config.batch_size) {
            let items: Vec<&FrameTriplet> = chunk.iter().map(|&i| &triplets[i]).collect();
            let rec = self.train_step(&items, epoch)?;
            on_step(&rec);
            summary.steps += 1;
            summary.mean_total += rec.total;
            summary.mean_photo += rec.photo;
            summary.mean_depth += rec.depth;
        }
        let n = summary.steps as f64;
        summary.mean_total /= n;
        summary.mean_photo /= n;
        summary.mean_depth /= n;
        Ok(summary)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_total: f64,
    pub mean_photo: f64,
    pub mean_depth: f64,
}
