//! SGD training with momentum, weight decay, and learning-rate schedules.
//!
//! Training is single-threaded per model and bit-reproducible for a given
//! seed. Harnesses that want concurrency train several models in parallel.

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    backward_full, forward_full, param_specs, softmax_ce, Mode, Model, ModelSpec, ParamKind,
    Reduction, TrainingMeta,
};
use crate::rng;
use crate::zoo::Dataset;

use super::layers::BN_MOMENTUM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Learning rate drops by 10x at 50% and 75% of the epoch budget.
    StepDecay,
    /// Half-cosine decay from the base rate to zero over the epoch budget.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum LabelMode {
    /// Train against the dataset's ground-truth labels.
    HardLabels,
    /// Train against the argmax predictions of a named teacher model.
    TeacherHardDistill { teacher: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 penalty applied to dense/conv/attention kernels only.
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub label_mode: LabelMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 12,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: Schedule::Cosine,
            label_mode: LabelMode::HardLabels,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!("bad weight decay {}", self.weight_decay)));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::StepDecay => {
                let mut lr = self.learning_rate;
                if epoch >= self.epochs / 2 {
                    lr *= 0.1;
                }
                if epoch >= self.epochs * 3 / 4 {
                    lr *= 0.1;
                }
                lr
            }
            Schedule::Cosine => {
                let t = epoch as f64 / self.epochs as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Trains a fresh model. `teacher` must be given exactly when the label mode
/// is teacher-hard-distill; its argmax predictions on the training split
/// replace the ground-truth labels.
pub fn train(
    spec: ModelSpec,
    train_data: &Dataset,
    eval_data: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<&Model>,
) -> Result<Model> {
    let model = Model::init(spec, cfg.seed)?;
    train_from(model, train_data, eval_data, cfg, teacher, &mut |_, _| {})
}

/// Continues training from existing weights (fine-tuning). The incoming
/// model's weights are the starting point; optimizer state starts fresh.
pub fn fine_tune(
    model: &Model,
    train_data: &Dataset,
    eval_data: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<&Model>,
) -> Result<Model> {
    train_from(model.clone(), train_data, eval_data, cfg, teacher, &mut |_, _| {})
}

/// Like [`train`], but snapshots the model after each epoch listed in `marks`
/// (0 means the untrained init). Returns the final model plus snapshots.
pub fn train_with_checkpoints(
    spec: ModelSpec,
    train_data: &Dataset,
    eval_data: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<&Model>,
    marks: &[usize],
) -> Result<(Model, Vec<(usize, Model)>)> {
    if let Some(&bad) = marks.iter().find(|&&m| m > cfg.epochs) {
        return Err(Error::Config(format!(
            "checkpoint mark {bad} beyond epoch budget {}",
            cfg.epochs
        )));
    }
    let mut snaps: Vec<(usize, Model)> = Vec::new();
    let init = Model::init(spec, cfg.seed)?;
    if marks.contains(&0) {
        snaps.push((0, init.clone()));
    }
    let final_model = train_from(init, train_data, eval_data, cfg, teacher, &mut |epoch, m| {
        if marks.contains(&(epoch + 1)) {
            snaps.push((epoch + 1, m.clone()));
        }
    })?;
    Ok((final_model, snaps))
}

fn train_from(
    mut model: Model,
    train_data: &Dataset,
    eval_data: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<&Model>,
    after_epoch: &mut dyn FnMut(usize, &Model),
) -> Result<Model> {
    cfg.validate()?;
    let n = train_data.images.n();
    if n == 0 {
        return Err(Error::EmptyBatch("training on empty dataset".into()));
    }
    let [h, w, c] = model.input_resolution();
    let images = crate::resize::to_resolution(&train_data.images, h, w)?;
    if images.shape()[3] != c {
        return Err(Error::Config(format!(
            "dataset has {} channels, model {} expects {c}",
            images.shape()[3],
            model.name()
        )));
    }

    let labels: Vec<usize> = match (&cfg.label_mode, teacher) {
        (LabelMode::HardLabels, None) => train_data.labels.clone(),
        (LabelMode::TeacherHardDistill { .. }, Some(t)) => {
            let [th, tw, _] = t.input_resolution();
            let view = crate::resize::to_resolution(&train_data.images, th, tw)?;
            crate::nn::eval::predictions(t, &view)?
        }
        (LabelMode::HardLabels, Some(_)) => {
            return Err(Error::Config("teacher given but label mode is hard-labels".into()))
        }
        (LabelMode::TeacherHardDistill { teacher }, None) => {
            return Err(Error::Config(format!("label mode needs teacher model '{teacher}'")))
        }
    };
    if let Some(bad) = labels.iter().find(|&&y| y >= model.num_classes()) {
        return Err(Error::Config(format!(
            "label {bad} out of range for {} classes",
            model.num_classes()
        )));
    }

    let params = param_specs(model.spec())?;
    let mut velocity: Vec<(String, Vec<f32>)> = params
        .iter()
        .filter(|p| p.kind != ParamKind::Buffer)
        .map(|p| (p.name.clone(), vec![0.0f32; p.shape.iter().product()]))
        .collect();
    let decay_kernel: std::collections::BTreeMap<&str, bool> = params
        .iter()
        .map(|p| (p.name.as_str(), p.kind == ParamKind::Kernel))
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch) as f32;
        let mut shuffle_rng = rng::stream(cfg.seed, "train/shuffle", epoch as u64);
        order.shuffle(&mut shuffle_rng);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = images.gather(chunk);
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (logits, trace) = forward_full(&model, &batch, Mode::Train)?;
            let (loss, dlogits) = softmax_ce(&logits, &batch_labels, Reduction::Mean);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            last_loss = loss;
            let (_, grads) = backward_full(&model, &trace, dlogits, Mode::Train, true)?;

            // Fold batch statistics into running statistics.
            let num_layers = model.spec().layers.len();
            for i in 0..num_layers {
                if let Some((mean, var)) = trace.bn_stats(i) {
                    let mean = mean.to_vec();
                    let var = var.to_vec();
                    let weights = model.weights_mut();
                    let rm = weights.get_mut(&crate::nn::param_name(i, "running_mean")).unwrap();
                    for (r, &m) in rm.data_mut().iter_mut().zip(&mean) {
                        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                    }
                    let rv = weights.get_mut(&crate::nn::param_name(i, "running_var")).unwrap();
                    for (r, &v) in rv.data_mut().iter_mut().zip(&var) {
                        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
                    }
                }
            }

            let wd = cfg.weight_decay as f32;
            let mu = cfg.momentum as f32;
            let weights = model.weights_mut();
            for (name, vel) in velocity.iter_mut() {
                let Some(grad) = grads.get(name) else { continue };
                let w = weights.get_mut(name).unwrap();
                let decay = if decay_kernel[name.as_str()] { wd } else { 0.0 };
                for ((v, &g), x) in vel.iter_mut().zip(grad.data()).zip(w.data_mut()) {
                    *v = mu * *v + g + decay * *x;
                    *x -= lr * *v;
                }
            }
        }
        after_epoch(epoch, &model);
    }

    let [eh, ew, _] = model.input_resolution();
    let eval_view = crate::resize::to_resolution(&eval_data.images, eh, ew)?;
    let acc = crate::nn::eval::accuracy(&model, &eval_view, &eval_data.labels)?;
    if acc < 1.5 / model.num_classes() as f64 {
        warn!("model {} barely beats chance: eval accuracy {:.3}", model.name(), acc);
    }
    let meta = TrainingMeta {
        config: cfg.clone(),
        final_clean_accuracy: Some(acc),
        final_train_loss: Some(last_loss),
    };
    model.set_meta(meta);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig {
            epochs: 8,
            learning_rate: 0.1,
            schedule: Schedule::StepDecay,
            ..TrainConfig::default()
        };
        assert!((cfg.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((cfg.lr_at(4) - 0.01).abs() < 1e-12);
        assert!((cfg.lr_at(6) - 0.001).abs() < 1e-12);
        let cfg = TrainConfig { schedule: Schedule::Cosine, ..cfg };
        assert!((cfg.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((cfg.lr_at(4) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { learning_rate: -1.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { momentum: 1.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
