//! Synthetic end-to-end demo: a frozen random two-layer net on a linearly
//! separable problem, adapted at rank r.

use std::fmt::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gradcheck::{check_gradients, GradCheckReport, DEFAULT_STEP};
use super::{one_hot, train, Activation, DenseLayer, LoraAdapter, LoraError, ModelLayer, ParamCount, ToyModel, TrainConfig, TrainingLog};

const MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub seed: u64,
    pub rank: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout_p: f64,
    pub samples: usize,
    pub features: usize,
    pub hidden: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: 42,
            rank: 2,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr0,
            dropout_p: t.dropout_p,
            samples: 200,
            features: 8,
            hidden: 16,
        }
    }
}

impl DemoConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr,
            dropout_p: self.dropout_p,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

/// Points in [-1, 1]^d labelled by the side of a random hyperplane through
/// the origin; points within a small margin of it are redrawn.
pub fn separable_dataset(samples: usize, features: usize, rng: &mut ChaCha8Rng) -> Vec<(DVector<f64>, DVector<f64>)> {
    let normal: DVector<f64> = DVector::from_fn(features, |_, _| rng.gen_range(-1.0..1.0));
    let mut data = Vec::with_capacity(samples);
    while data.len() < samples {
        let x = DVector::from_fn(features, |_, _| rng.gen_range(-1.0..1.0));
        let side: f64 = normal.dot(&x);
        if side.abs() < MARGIN {
            continue;
        }
        data.push((x, one_hot(usize::from(side > 0.0), 2)));
    }
    data
}

/// Frozen `features → hidden (tanh) → 2` net with rank-`rank` adapters on
/// both layers.
pub fn demo_model(cfg: &DemoConfig, rng: &mut ChaCha8Rng) -> Result<ToyModel, LoraError> {
    let l1 = DenseLayer::random(cfg.features, cfg.hidden, true, true, rng);
    let a1 = LoraAdapter::init(cfg.features, cfg.hidden, cfg.rank, None, cfg.dropout_p, rng)?;
    let l2 = DenseLayer::random(cfg.hidden, 2, true, true, rng);
    let a2 = LoraAdapter::init(cfg.hidden, 2, cfg.rank.min(2), None, cfg.dropout_p, rng)?;
    ToyModel::new(vec![
        ModelLayer { dense: l1, adapter: Some(a1), activation: Activation::Tanh },
        ModelLayer { dense: l2, adapter: Some(a2), activation: Activation::Identity },
    ])
}

pub fn accuracy(model: &ToyModel, data: &[(DVector<f64>, DVector<f64>)]) -> Result<f64, LoraError> {
    let mut hits = 0;
    for (x, y) in data {
        if model.predict(x)?.argmax().0 == y.argmax().0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub config: DemoConfig,
    pub params: ParamCount,
    pub log: TrainingLog,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub gradcheck: GradCheckReport,
    pub merge_max_abs_diff: f64,
    pub merge_inputs: usize,
    pub frozen_base_unchanged: bool,
}

pub fn run_demo(cfg: &DemoConfig) -> Result<DemoReport, LoraError> {
    run_demo_with_model(cfg).map(|(report, _)| report)
}

/// [`run_demo`], also handing back the trained model.
pub fn run_demo_with_model(cfg: &DemoConfig) -> Result<(DemoReport, ToyModel), LoraError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = separable_dataset(cfg.samples, cfg.features, &mut rng);
    let mut model = demo_model(cfg, &mut rng)?;
    let initial = model.clone();
    let accuracy_before = accuracy(&model, &data)?;

    let log = train(&mut model, &data, &cfg.train_config())?;
    let accuracy_after = accuracy(&model, &data)?;

    let frozen_base_unchanged = model.layers.iter().zip(&initial.layers).all(|(now, then)| {
        let same_bits = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        same_bits(now.dense.weight.as_slice(), then.dense.weight.as_slice())
            && match (&now.dense.bias, &then.dense.bias) {
                (Some(a), Some(b)) => same_bits(a.as_slice(), b.as_slice()),
                (None, None) => true,
                _ => false,
            }
    });

    let batch: Vec<_> = data.iter().take(8).collect();
    let xs: Vec<_> = batch.iter().map(|(x, _)| x.clone()).collect();
    let ys: Vec<_> = batch.iter().map(|(_, y)| y.clone()).collect();
    let masks: Vec<_> = xs.iter().map(|_| model.sample_masks(&mut rng)).collect();
    let gradcheck = check_gradients(&model, &xs, &ys, Some(&masks), cfg.train_config().loss, DEFAULT_STEP)?;

    let merged = model.merged()?;
    let merge_inputs = 100;
    let mut merge_max_abs_diff: f64 = 0.0;
    for _ in 0..merge_inputs {
        let x = DVector::from_fn(cfg.features, |_, _| rng.gen_range(-1.0..1.0));
        merge_max_abs_diff = merge_max_abs_diff.max((model.predict(&x)? - merged.predict(&x)?).amax());
    }

    let report = DemoReport {
        config: cfg.clone(),
        params: model.param_count(),
        log,
        accuracy_before,
        accuracy_after,
        gradcheck,
        merge_max_abs_diff,
        merge_inputs,
        frozen_base_unchanged,
    };
    Ok((report, model))
}

impl DemoReport {
    pub fn render(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "lora-demo: {} samples x {} features, hidden {}, rank {}, seed {}",
            c.samples, c.features, c.hidden, c.rank, c.seed
        );
        let _ = writeln!(
            out,
            "settings: {} epochs, batch {}, lr {:e} linear decay to 0, dropout {}, adam",
            c.epochs, c.batch_size, c.lr, c.dropout_p
        );
        let _ = writeln!(
            out,
            "params: base {} ({} weights + {} biases, frozen), lora {} trainable",
            self.params.base(),
            self.params.weights,
            self.params.biases,
            self.params.lora
        );
        let _ = writeln!(out, "\nepoch  train_loss     eval_loss      lr_first    lr_last");
        let _ = writeln!(out, "{:>5}  {:>13}  {:>13.9}", 0, "-", self.log.initial_eval_loss);
        for e in &self.log.epochs {
            let _ = writeln!(
                out,
                "{:>5}  {:>13.9}  {:>13.9}  {:>10.4e}  {:>10.4e}",
                e.epoch, e.train_loss, e.eval_loss, e.lr_first, e.lr_last
            );
        }
        let _ = writeln!(out, "accuracy: {:.3} -> {:.3}", self.accuracy_before, self.accuracy_after);
        let _ = writeln!(
            out,
            "\ngradient check (h = {:e}): {} entries, max relative error {:.3e}",
            self.gradcheck.step,
            self.gradcheck.entries(),
            self.gradcheck.max_relative_error()
        );
        for t in &self.gradcheck.tensors {
            let _ = writeln!(out, "  {:<9} {:>4} entries  max rel err {:.3e}", t.param.to_string(), t.entries, t.max_relative_error);
        }
        let _ = writeln!(
            out,
            "merge: max |adapted - merged| over {} inputs = {:.3e}",
            self.merge_inputs, self.merge_max_abs_diff
        );
        let _ = writeln!(out, "frozen base unchanged: {}", self.frozen_base_unchanged);
        out
    }
}
