//! Dense layers with rank-r adapters, trained in double precision.
//!
//! An adapted layer computes `W·x + b + s·B·(A·drop(x))` with `s = alpha / r`.
//! The base `W`, `b` stay frozen; only `A` and `B` learn. Merging folds the
//! adapter back in as `W' = W + s·B·A`.

mod checkpoint;
pub mod demo;
pub mod gradcheck;
mod optim;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, ADAPTERS_FILE, BASE_FILE};
pub use optim::{adam_step, lr_at, AdamConfig, MomentState};
pub use train::{train, EpochRecord, TrainConfig, TrainingLog};

#[derive(Debug, thiserror::Error)]
pub enum LoraError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension { context: String, expected: usize, found: usize },
    #[error("invalid adapter: {0}")]
    InvalidAdapter(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

fn check_dim(context: &str, expected: usize, found: usize) -> Result<(), LoraError> {
    if expected == found {
        Ok(())
    } else {
        Err(LoraError::Dimension { context: context.to_string(), expected, found })
    }
}

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> DMatrix<f64> {
    // Filled row by row so the draw order doesn't depend on storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.gen_range(-bound..=bound);
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            Activation::Identity => z.clone(),
            Activation::Tanh => z.map(f64::tanh),
            Activation::Relu => z.map(|v| v.max(0.0)),
        }
    }

    /// Derivative at `z`, given the already computed output `a = act(z)`.
    fn derivative(self, z: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        match self {
            Activation::Identity => DVector::from_element(z.len(), 1.0),
            Activation::Tanh => a.map(|t| 1.0 - t * t),
            Activation::Relu => z.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `d_out × d_in`.
    pub weight: DMatrix<f64>,
    pub bias: Option<DVector<f64>>,
    pub frozen: bool,
}

impl DenseLayer {
    pub fn new(weight: DMatrix<f64>, bias: Option<DVector<f64>>, frozen: bool) -> Result<Self, LoraError> {
        if let Some(b) = &bias {
            check_dim("bias length", weight.nrows(), b.len())?;
        }
        Ok(Self { weight, bias, frozen })
    }

    /// Uniform(±1/√d_in) weights and biases.
    pub fn random<R: Rng + ?Sized>(d_in: usize, d_out: usize, with_bias: bool, frozen: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = uniform_matrix(d_out, d_in, bound, rng);
        let bias = with_bias.then(|| {
            let v: Vec<f64> = (0..d_out).map(|_| rng.gen_range(-bound..=bound)).collect();
            DVector::from_vec(v)
        });
        Self { weight, bias, frozen }
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>, LoraError> {
        check_dim("layer input", self.d_in(), x.len())?;
        let mut z = &self.weight * x;
        if let Some(b) = &self.bias {
            z += b;
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `r × d_in`.
    pub a: DMatrix<f64>,
    /// `d_out × r`.
    pub b: DMatrix<f64>,
    pub rank: usize,
    pub alpha: f64,
    pub dropout_p: f64,
}

impl LoraAdapter {
    pub fn from_parts(a: DMatrix<f64>, b: DMatrix<f64>, alpha: f64, dropout_p: f64) -> Result<Self, LoraError> {
        let rank = a.nrows();
        check_dim("adapter rank (B columns)", rank, b.ncols())?;
        let adapter = Self { a, b, rank, alpha, dropout_p };
        adapter.validate()?;
        Ok(adapter)
    }

    /// A ~ uniform(±1/√d_in), B = 0, so the adapted layer starts out equal
    /// to the base layer. `alpha` defaults to `rank` (scale 1).
    pub fn init<R: Rng + ?Sized>(
        d_in: usize,
        d_out: usize,
        rank: usize,
        alpha: Option<f64>,
        dropout_p: f64,
        rng: &mut R,
    ) -> Result<Self, LoraError> {
        if rank == 0 || rank > d_in.min(d_out) {
            return Err(LoraError::InvalidAdapter(format!("rank {rank} outside 1..={}", d_in.min(d_out))));
        }
        let a = uniform_matrix(rank, d_in, 1.0 / (d_in as f64).sqrt(), rng);
        Self::from_parts(a, DMatrix::zeros(d_out, rank), alpha.unwrap_or(rank as f64), dropout_p)
    }

    pub fn validate(&self) -> Result<(), LoraError> {
        let (d_in, d_out) = (self.d_in(), self.d_out());
        if self.rank == 0 || self.rank > d_in.min(d_out) {
            return Err(LoraError::InvalidAdapter(format!("rank {} outside 1..={}", self.rank, d_in.min(d_out))));
        }
        if self.a.nrows() != self.rank || self.b.ncols() != self.rank {
            return Err(LoraError::InvalidAdapter("factor shapes disagree with rank".into()));
        }
        let s = self.scale();
        if !(s.is_finite() && s > 0.0) {
            return Err(LoraError::InvalidAdapter(format!("scale alpha/r = {s} must be finite and positive")));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(LoraError::InvalidAdapter(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.a.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.b.nrows()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn param_count(&self) -> usize {
        self.rank * (self.d_in() + self.d_out())
    }

    /// `s·B·A`, the dense update this adapter stands for.
    pub fn delta(&self) -> DMatrix<f64> {
        (&self.b * &self.a) * self.scale()
    }

    fn check_fits(&self, layer: &DenseLayer) -> Result<(), LoraError> {
        check_dim("adapter input width", layer.d_in(), self.d_in())?;
        check_dim("adapter output width", layer.d_out(), self.d_out())
    }

    /// Inverted-dropout mask for the adapter input: each entry is 0 with
    /// probability `dropout_p`, else `1 / (1 - dropout_p)`. `None` when
    /// dropout is off.
    pub fn sample_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<DVector<f64>> {
        if self.dropout_p <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.dropout_p);
        let values: Vec<f64> =
            (0..self.d_in()).map(|_| if rng.gen::<f64>() < self.dropout_p { 0.0 } else { keep }).collect();
        Some(DVector::from_vec(values))
    }
}

/// `W·x + b + s·B·(A·drop(x))`. Dropout only applies when `training`.
pub fn adapter_forward<R: Rng + ?Sized>(
    layer: &DenseLayer,
    adapter: &LoraAdapter,
    x: &DVector<f64>,
    training: bool,
    rng: &mut R,
) -> Result<DVector<f64>, LoraError> {
    let mask = if training { adapter.sample_mask(rng) } else { None };
    adapter_forward_masked(layer, adapter, x, mask.as_ref())
}

/// [`adapter_forward`] with an explicit dropout mask.
pub fn adapter_forward_masked(
    layer: &DenseLayer,
    adapter: &LoraAdapter,
    x: &DVector<f64>,
    mask: Option<&DVector<f64>>,
) -> Result<DVector<f64>, LoraError> {
    adapter.check_fits(layer)?;
    let base = layer.forward(x)?;
    let dropped = match mask {
        Some(m) => {
            check_dim("dropout mask", x.len(), m.len())?;
            x.component_mul(m)
        }
        None => x.clone(),
    };
    Ok(base + (&adapter.b * (&adapter.a * dropped)) * adapter.scale())
}

/// New layer with `W' = W + s·B·A`; inputs are left untouched.
pub fn merge(layer: &DenseLayer, adapter: &LoraAdapter) -> Result<DenseLayer, LoraError> {
    adapter.check_fits(layer)?;
    Ok(DenseLayer { weight: &layer.weight + adapter.delta(), bias: layer.bias.clone(), frozen: layer.frozen })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayer {
    pub dense: DenseLayer,
    pub adapter: Option<LoraAdapter>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub layers: Vec<ModelLayer>,
}

/// Per-layer dropout masks for one sample.
pub type SampleMasks = Vec<Option<DVector<f64>>>;

struct LayerTrace {
    input: DVector<f64>,
    dropped: DVector<f64>,
    mask: Option<DVector<f64>>,
    u: Option<DVector<f64>>,
    z: DVector<f64>,
    out: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId {
    pub layer: usize,
    pub kind: ParamKind,
}

impl std::fmt::Display for ParamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            ParamKind::Weight => "W",
            ParamKind::Bias => "b",
            ParamKind::A => "A",
            ParamKind::B => "B",
        };
        write!(f, "layer{}.{kind}", self.layer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub weights: usize,
    pub biases: usize,
    pub lora: usize,
}

impl ParamCount {
    /// `Σ |W| + |b|`.
    pub fn base(&self) -> usize {
        self.weights + self.biases
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `Σ (y − f)²` over samples and components.
    #[default]
    Squared,
    /// Softmax cross-entropy on the output scores.
    CrossEntropy,
}

fn softmax(v: &DVector<f64>) -> DVector<f64> {
    let max = v.max();
    let e = v.map(|x| (x - max).exp());
    let sum = e.sum();
    e / sum
}

impl Loss {
    fn value(self, out: &DVector<f64>, y: &DVector<f64>) -> f64 {
        match self {
            Loss::Squared => (y - out).norm_squared(),
            Loss::CrossEntropy => {
                let max = out.max();
                let log_z = max + out.map(|x| (x - max).exp()).sum().ln();
                y.iter().zip(out.iter()).map(|(t, o)| -t * (o - log_z)).sum()
            }
        }
    }

    fn gradient(self, out: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        match self {
            Loss::Squared => (out - y) * 2.0,
            Loss::CrossEntropy => softmax(out) * y.sum() - y,
        }
    }

    pub fn total(self, predictions: &[DVector<f64>], targets: &[DVector<f64>]) -> Result<f64, LoraError> {
        check_dim("prediction count", targets.len(), predictions.len())?;
        let mut total = 0.0;
        for (p, y) in predictions.iter().zip(targets) {
            check_dim("target width", p.len(), y.len())?;
            total += self.value(p, y);
        }
        Ok(total)
    }
}

/// `Σ (y − f(x))²` over samples and components.
pub fn loss_sq(predictions: &[DVector<f64>], targets: &[DVector<f64>]) -> Result<f64, LoraError> {
    Loss::Squared.total(predictions, targets)
}

pub fn one_hot(class: usize, classes: usize) -> DVector<f64> {
    let mut v = DVector::zeros(classes);
    v[class] = 1.0;
    v
}

/// Gradients for the trainable tensors of each layer; `None` where the
/// tensor is frozen or absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerGrads {
    pub weight: Option<DMatrix<f64>>,
    pub bias: Option<DVector<f64>>,
    pub a: Option<DMatrix<f64>>,
    pub b: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        let g = self.layers.get(id.layer)?;
        match id.kind {
            ParamKind::Weight => g.weight.as_ref().map(|m| m.as_slice()),
            ParamKind::Bias => g.bias.as_ref().map(|v| v.as_slice()),
            ParamKind::A => g.a.as_ref().map(|m| m.as_slice()),
            ParamKind::B => g.b.as_ref().map(|m| m.as_slice()),
        }
    }
}

impl ToyModel {
    pub fn new(layers: Vec<ModelLayer>) -> Result<Self, LoraError> {
        for (i, layer) in layers.iter().enumerate() {
            if let Some(b) = &layer.dense.bias {
                check_dim(&format!("layer {i} bias"), layer.dense.d_out(), b.len())?;
            }
            if let Some(adapter) = &layer.adapter {
                adapter.validate()?;
                adapter.check_fits(&layer.dense)?;
            }
            if i > 0 {
                check_dim(&format!("layer {i} input"), layers[i - 1].dense.d_out(), layer.dense.d_in())?;
            }
        }
        Ok(Self { layers })
    }

    pub fn d_in(&self) -> usize {
        self.layers.first().map_or(0, |l| l.dense.d_in())
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.dense.d_out())
    }

    pub fn param_count(&self) -> ParamCount {
        let mut count = ParamCount { weights: 0, biases: 0, lora: 0 };
        for layer in &self.layers {
            count.weights += layer.dense.weight.len();
            count.biases += layer.dense.bias.as_ref().map_or(0, |b| b.len());
            count.lora += layer.adapter.as_ref().map_or(0, LoraAdapter::param_count);
        }
        count
    }

    /// Adapter factors, then any unfrozen base tensors, layer by layer.
    pub fn trainable_params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.adapter.is_some() {
                ids.push(ParamId { layer: i, kind: ParamKind::A });
                ids.push(ParamId { layer: i, kind: ParamKind::B });
            }
            if !layer.dense.frozen {
                ids.push(ParamId { layer: i, kind: ParamKind::Weight });
                if layer.dense.bias.is_some() {
                    ids.push(ParamId { layer: i, kind: ParamKind::Bias });
                }
            }
        }
        ids
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        let layer = self.layers.get(id.layer)?;
        match id.kind {
            ParamKind::Weight => Some(layer.dense.weight.as_slice()),
            ParamKind::Bias => layer.dense.bias.as_ref().map(|b| b.as_slice()),
            ParamKind::A => layer.adapter.as_ref().map(|a| a.a.as_slice()),
            ParamKind::B => layer.adapter.as_ref().map(|a| a.b.as_slice()),
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut [f64]> {
        let layer = self.layers.get_mut(id.layer)?;
        match id.kind {
            ParamKind::Weight => Some(layer.dense.weight.as_mut_slice()),
            ParamKind::Bias => layer.dense.bias.as_mut().map(|b| b.as_mut_slice()),
            ParamKind::A => layer.adapter.as_mut().map(|a| a.a.as_mut_slice()),
            ParamKind::B => layer.adapter.as_mut().map(|a| a.b.as_mut_slice()),
        }
    }

    /// One dropout mask per adapted layer, for a single sample.
    pub fn sample_masks<R: Rng + ?Sized>(&self, rng: &mut R) -> SampleMasks {
        self.layers.iter().map(|l| l.adapter.as_ref().and_then(|a| a.sample_mask(rng))).collect()
    }

    fn trace(&self, x: &DVector<f64>, masks: Option<&SampleMasks>) -> Result<Vec<LayerTrace>, LoraError> {
        check_dim("model input", self.d_in(), x.len())?;
        if let Some(m) = masks {
            check_dim("mask layers", self.layers.len(), m.len())?;
        }
        let mut traces: Vec<LayerTrace> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = traces.last().map_or_else(|| x.clone(), |t| t.out.clone());
            let mask = masks.and_then(|m| m[i].clone());
            let mut z = layer.dense.forward(&input)?;
            let (dropped, u) = match &layer.adapter {
                Some(adapter) => {
                    let dropped = match &mask {
                        Some(m) => {
                            check_dim(&format!("layer {i} dropout mask"), input.len(), m.len())?;
                            input.component_mul(m)
                        }
                        None => input.clone(),
                    };
                    let u = &adapter.a * &dropped;
                    z += (&adapter.b * &u) * adapter.scale();
                    (dropped, Some(u))
                }
                None => (input.clone(), None),
            };
            let out = layer.activation.apply(&z);
            traces.push(LayerTrace { input, dropped, mask, u, z, out });
        }
        Ok(traces)
    }

    /// Evaluation-mode forward pass.
    pub fn predict(&self, x: &DVector<f64>) -> Result<DVector<f64>, LoraError> {
        self.forward_masked(x, None)
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &DVector<f64>, training: bool, rng: &mut R) -> Result<DVector<f64>, LoraError> {
        if training {
            let masks = self.sample_masks(rng);
            self.forward_masked(x, Some(&masks))
        } else {
            self.predict(x)
        }
    }

    pub fn forward_masked(&self, x: &DVector<f64>, masks: Option<&SampleMasks>) -> Result<DVector<f64>, LoraError> {
        let traces = self.trace(x, masks)?;
        Ok(traces.into_iter().last().map_or_else(|| x.clone(), |t| t.out))
    }

    /// Loss over a batch with fixed masks (`None` = evaluation mode).
    pub fn batch_loss(
        &self,
        xs: &[DVector<f64>],
        ys: &[DVector<f64>],
        masks: Option<&[SampleMasks]>,
        loss: Loss,
    ) -> Result<f64, LoraError> {
        check_dim("batch targets", xs.len(), ys.len())?;
        let mut total = 0.0;
        for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
            let out = self.forward_masked(x, masks.map(|m| &m[i]))?;
            check_dim("target width", out.len(), y.len())?;
            total += loss.value(&out, y);
        }
        Ok(total)
    }

    /// Evaluation-mode gradients of the summed batch loss.
    pub fn backward(&self, xs: &[DVector<f64>], ys: &[DVector<f64>], loss: Loss) -> Result<Gradients, LoraError> {
        self.backward_masked(xs, ys, None, loss)
    }

    /// Reverse-mode gradients of the summed batch loss under fixed dropout
    /// masks. Per-sample contributions are added in index order.
    pub fn backward_masked(
        &self,
        xs: &[DVector<f64>],
        ys: &[DVector<f64>],
        masks: Option<&[SampleMasks]>,
        loss: Loss,
    ) -> Result<Gradients, LoraError> {
        check_dim("batch targets", xs.len(), ys.len())?;
        if let Some(m) = masks {
            check_dim("batch masks", xs.len(), m.len())?;
        }
        let mut grads: Vec<LayerGrads> = self
            .layers
            .iter()
            .map(|l| {
                let (d_out, d_in) = l.dense.weight.shape();
                let trainable = !l.dense.frozen;
                LayerGrads {
                    weight: trainable.then(|| DMatrix::zeros(d_out, d_in)),
                    bias: l.dense.bias.as_ref().filter(|_| trainable).map(|b| DVector::zeros(b.len())),
                    a: l.adapter.as_ref().map(|a| DMatrix::zeros(a.rank, d_in)),
                    b: l.adapter.as_ref().map(|a| DMatrix::zeros(d_out, a.rank)),
                }
            })
            .collect();
        let mut total = 0.0;

        for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
            let traces = self.trace(x, masks.map(|m| &m[i]))?;
            let out = traces.last().map_or_else(|| x.clone(), |t| t.out.clone());
            check_dim("target width", out.len(), y.len())?;
            total += loss.value(&out, y);

            let mut d_out = loss.gradient(&out, y);
            for (l, (layer, t)) in self.layers.iter().zip(&traces).enumerate().rev() {
                let dz = d_out.component_mul(&layer.activation.derivative(&t.z, &t.out));
                let g = &mut grads[l];
                if let Some(gw) = &mut g.weight {
                    *gw += &dz * t.input.transpose();
                }
                if let Some(gb) = &mut g.bias {
                    *gb += &dz;
                }
                let mut d_in = layer.dense.weight.tr_mul(&dz);
                if let (Some(adapter), Some(u)) = (&layer.adapter, &t.u) {
                    let s = adapter.scale();
                    if let Some(gb) = &mut g.b {
                        *gb += (&dz * u.transpose()) * s;
                    }
                    let du = adapter.b.tr_mul(&dz) * s;
                    if let Some(ga) = &mut g.a {
                        *ga += &du * t.dropped.transpose();
                    }
                    let through_adapter = adapter.a.tr_mul(&du);
                    d_in += match &t.mask {
                        Some(m) => through_adapter.component_mul(m),
                        None => through_adapter,
                    };
                }
                d_out = d_in;
            }
        }
        Ok(Gradients { loss: total, layers: grads })
    }

    /// Copy with every adapter folded into its base layer.
    pub fn merged(&self) -> Result<ToyModel, LoraError> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let dense = match &l.adapter {
                    Some(a) => merge(&l.dense, a)?,
                    None => l.dense.clone(),
                };
                Ok(ModelLayer { dense, adapter: None, activation: l.activation })
            })
            .collect::<Result<Vec<_>, LoraError>>()?;
        Ok(ToyModel { layers })
    }
}
