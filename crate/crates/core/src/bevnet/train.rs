//! Deterministic single-scene Adam training.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bevnet::labels::LabelPack;
use crate::bevnet::model::{model_losses, LossBreakdown, Model, ModelConfig, SceneInput};
use crate::dataset::{load_dataset, Dataset};
use crate::error::{Error, Result};
use crate::metrics::iou_counts;
use crate::numerics::AdamState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub scene: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<StepRecord>,
}

/// Scenes prepared once for repeated forward passes.
pub struct TrainingSet<'a> {
    pub inputs: Vec<SceneInput>,
    pub labels: Vec<&'a LabelPack>,
}

impl<'a> TrainingSet<'a> {
    pub fn from_dataset(model: &Model, ds: &'a Dataset) -> Result<Self> {
        let mut inputs = Vec::with_capacity(ds.scenes.len());
        let mut labels = Vec::with_capacity(ds.scenes.len());
        for s in &ds.scenes {
            if s.map.bev != model.bev {
                return Err(Error::InvalidArgument(format!(
                    "{}: scene extent differs from the model's",
                    ds.root.join(&s.name).display()
                )));
            }
            if s.labels.n_dir() != model.config.n_dir {
                return Err(Error::InvalidArgument(format!(
                    "dataset uses {} direction bins, model {}",
                    s.labels.n_dir(),
                    model.config.n_dir
                )));
            }
            inputs.push(model.prepare(&s.images, &s.points)?);
            labels.push(&s.labels);
        }
        Ok(Self { inputs, labels })
    }
}

/// Runs `cfg.steps` Adam steps, one scene per step, visiting scenes in a
/// fresh seeded permutation each epoch.
pub fn train(mut model: Model, set: &TrainingSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.steps > 0 && set.inputs.is_empty() {
        return Err(Error::InvalidArgument("no training scenes".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut adam = AdamState::new(&sizes);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut order: Vec<usize> = (0..set.inputs.len()).collect();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let k = step % order.len();
        if k == 0 {
            order.shuffle(&mut order_rng);
        }
        let scene = order[k];
        let (out, ftrace) = model.forward(&set.inputs[scene])?;
        let (loss, dout) = model_losses(&out, set.labels[scene], &model.config.loss)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step} is {}", loss.total)));
        }
        let mut grads = model.zero_gradients();
        model.backward(&ftrace, &dout, &mut grads)?;
        adam.update(model.tensors_mut(), grads.tensors(), cfg.lr)?;
        log::debug!("step {step} scene {scene} loss {:.5}", loss.total);
        trace.push(StepRecord { step, scene, loss });
    }
    Ok(TrainOutcome { model, trace })
}

/// Loads the dataset at `dir`, initializes a model from `cfg.seed` and trains it.
pub fn train_toy(dir: &Path, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let ds = load_dataset(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::init(model_cfg.clone(), ds.manifest.bev, ds.rig.clone(), &mut rng)?;
    let set = TrainingSet::from_dataset(&model, &ds)?;
    train(model, &set, cfg)
}

/// Mean total loss over the last `window` steps.
pub fn final_loss(trace: &[StepRecord], window: usize) -> Option<f64> {
    let n = window.min(trace.len());
    (n > 0).then(|| trace[trace.len() - n..].iter().map(|r| r.loss.total).sum::<f64>() / n as f64)
}

/// Per-class IoU of argmax predictions, pooling cell counts over scenes.
pub fn pooled_iou(model: &Model, inputs: &[SceneInput], labels: &[&LabelPack]) -> Result<Vec<f64>> {
    let mut acc: Vec<(usize, usize)> = Vec::new();
    for (input, l) in inputs.iter().zip(labels) {
        let masks = model.predict(input)?.class_masks();
        let counts = iou_counts(&masks, &l.class_masks())?;
        if acc.is_empty() {
            acc = counts;
        } else {
            for (a, c) in acc.iter_mut().zip(counts) {
                a.0 += c.0;
                a.1 += c.1;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|(i, u)| if u == 0 { 1.0 } else { i as f64 / u as f64 })
        .collect())
}
