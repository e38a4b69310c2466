//! Central finite differences against [`ToyModel::backward_masked`].

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{LoraError, Loss, ParamId, SampleMasks, ToyModel};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor so exact zeros don't blow up the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub param: ParamId,
    pub entries: usize,
    pub max_relative_error: f64,
    pub max_abs_gradient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn entries(&self) -> usize {
        self.tensors.iter().map(|t| t.entries).sum()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error() <= tolerance
    }
}

/// Perturbs every trainable entry by ±`step` and compares the centred
/// difference of the batch loss with the analytic gradient. Masks are held
/// fixed so dropout doesn't add noise.
pub fn check_gradients(
    model: &ToyModel,
    xs: &[DVector<f64>],
    ys: &[DVector<f64>],
    masks: Option<&[SampleMasks]>,
    loss: Loss,
    step: f64,
) -> Result<GradCheckReport, LoraError> {
    let grads = model.backward_masked(xs, ys, masks, loss)?;
    let mut probe = model.clone();
    let mut tensors = Vec::new();
    for id in model.trainable_params() {
        let analytic = grads.get(id).expect("trainable tensor has a gradient").to_vec();
        let mut worst: f64 = 0.0;
        for (k, &a) in analytic.iter().enumerate() {
            let original = probe.param(id).expect("tensor exists")[k];
            probe.param_mut(id).expect("tensor exists")[k] = original + step;
            let plus = probe.batch_loss(xs, ys, masks, loss)?;
            probe.param_mut(id).expect("tensor exists")[k] = original - step;
            let minus = probe.batch_loss(xs, ys, masks, loss)?;
            probe.param_mut(id).expect("tensor exists")[k] = original;
            worst = worst.max(relative_error(a, (plus - minus) / (2.0 * step)));
        }
        tensors.push(TensorCheck {
            param: id,
            entries: analytic.len(),
            max_relative_error: worst,
            max_abs_gradient: analytic.iter().fold(0.0, |m, g| m.max(g.abs())),
        });
    }
    Ok(GradCheckReport { step, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::{one_hot, Activation, DenseLayer, LoraAdapter, ModelLayer};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_layer_model_with_dropout_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut a1 = LoraAdapter::init(4, 5, 2, Some(3.0), 0.3, &mut rng).unwrap();
        a1.b = DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-1.0..1.0));
        let mut a2 = LoraAdapter::init(5, 3, 2, None, 0.0, &mut rng).unwrap();
        a2.b = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let model = ToyModel::new(vec![
            ModelLayer { dense: DenseLayer::random(4, 5, true, true, &mut rng), adapter: Some(a1), activation: Activation::Tanh },
            ModelLayer { dense: DenseLayer::random(5, 3, true, false, &mut rng), adapter: Some(a2), activation: Activation::Identity },
        ])
        .unwrap();
        let xs: Vec<_> = (0..3).map(|_| DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let ys: Vec<_> = (0..3).map(|i| one_hot(i % 3, 3)).collect();
        let masks: Vec<_> = (0..3).map(|_| model.sample_masks(&mut rng)).collect();
        for loss in [Loss::Squared, Loss::CrossEntropy] {
            let report = check_gradients(&model, &xs, &ys, Some(&masks), loss, DEFAULT_STEP).unwrap();
            assert_eq!(report.tensors.len(), 6);
            assert!(report.passes(DEFAULT_TOLERANCE), "{report:?}");
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
