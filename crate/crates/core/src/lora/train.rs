use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{adam_step, lr_at, AdamConfig, MomentState};
use super::{LoraError, Loss, SampleMasks, ToyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Overrides each adapter's `dropout_p` for the run.
    pub dropout_p: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            lr0: 1e-4,
            dropout_p: 0.05,
            adam: AdamConfig::default(),
            seed: 0,
            loss: Loss::Squared,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LoraError> {
        let bad = |m: String| Err(LoraError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Summed loss of the training batches, with dropout, before each update.
    pub train_loss: f64,
    /// Summed loss over the full set in evaluation mode after the epoch.
    pub eval_loss: f64,
    pub lr_first: f64,
    pub lr_last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub samples: usize,
    pub total_steps: usize,
    pub initial_eval_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Learning rate applied at each step, in order.
    pub lr_schedule: Vec<f64>,
}

impl TrainingLog {
    pub fn first_epoch(&self) -> &EpochRecord {
        &self.epochs[0]
    }

    pub fn final_epoch(&self) -> &EpochRecord {
        self.epochs.last().expect("at least one epoch")
    }
}

/// Mini-batch Adam on the model's trainable tensors with linear learning
/// rate decay. Shuffling and dropout draw from a single seeded stream, so
/// a seed fixes the whole run.
pub fn train(model: &mut ToyModel, data: &[(DVector<f64>, DVector<f64>)], cfg: &TrainConfig) -> Result<TrainingLog, LoraError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(LoraError::EmptyDataset);
    }
    for layer in &mut model.layers {
        if let Some(adapter) = &mut layer.adapter {
            adapter.dropout_p = cfg.dropout_p;
        }
    }

    let xs: Vec<DVector<f64>> = data.iter().map(|(x, _)| x.clone()).collect();
    let ys: Vec<DVector<f64>> = data.iter().map(|(_, y)| y.clone()).collect();
    let ids = model.trainable_params();
    let mut states: Vec<MomentState> =
        ids.iter().map(|&id| MomentState::zeros(model.param(id).map_or(0, <[f64]>::len))).collect();

    let total_steps = cfg.epochs * cfg.steps_per_epoch(data.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let initial_eval_loss = model.batch_loss(&xs, &ys, None, cfg.loss)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut lr_schedule = Vec::with_capacity(total_steps);
    let mut t = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        let first_step = t + 1;
        for batch in order.chunks(cfg.batch_size) {
            t += 1;
            let bx: Vec<DVector<f64>> = batch.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<DVector<f64>> = batch.iter().map(|&i| ys[i].clone()).collect();
            let masks: Vec<SampleMasks> = batch.iter().map(|_| model.sample_masks(&mut rng)).collect();
            let grads = model.backward_masked(&bx, &by, Some(&masks), cfg.loss)?;
            train_loss += grads.loss;

            let lr = lr_at(cfg.lr0, t, total_steps);
            lr_schedule.push(lr);
            for (id, state) in ids.iter().zip(&mut states) {
                let g = grads.get(*id).expect("trainable tensor has a gradient");
                let p = model.param_mut(*id).expect("trainable tensor exists");
                adam_step(p, g, state, t, lr, &cfg.adam);
            }
        }
        let eval_loss = model.batch_loss(&xs, &ys, None, cfg.loss)?;
        log::debug!("epoch {epoch}: train {train_loss:.6} eval {eval_loss:.6}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            eval_loss,
            lr_first: lr_schedule[first_step - 1],
            lr_last: lr_schedule[t - 1],
        });
    }

    Ok(TrainingLog { samples: data.len(), total_steps, initial_eval_loss, epochs, lr_schedule })
}
