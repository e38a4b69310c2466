//! JSON checkpoints: base layers and adapters live in separate files, so an
//! adapter set can be swapped or merged without touching the base.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{Activation, DenseLayer, LoraAdapter, LoraError, ModelLayer, ToyModel};

pub const BASE_FILE: &str = "base.json";
pub const ADAPTERS_FILE: &str = "adapters.json";

#[derive(Serialize, Deserialize)]
struct MatrixRecord {
    rows: usize,
    cols: usize,
    /// Row-major.
    data: Vec<Vec<f64>>,
}

impl MatrixRecord {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect(),
        }
    }

    fn to_matrix(&self, what: &str) -> Result<DMatrix<f64>, String> {
        if self.data.len() != self.rows || self.data.iter().any(|r| r.len() != self.cols) {
            return Err(format!("{what}: declared {}x{} but data disagrees", self.rows, self.cols));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| self.data[i][j]))
    }
}

#[derive(Serialize, Deserialize)]
struct BaseLayerRecord {
    d_in: usize,
    d_out: usize,
    activation: Activation,
    frozen: bool,
    weight: MatrixRecord,
    bias: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct BaseFile {
    layers: Vec<BaseLayerRecord>,
}

#[derive(Serialize, Deserialize)]
struct AdapterRecord {
    layer: usize,
    rank: usize,
    alpha: f64,
    dropout_p: f64,
    a: MatrixRecord,
    b: MatrixRecord,
}

#[derive(Serialize, Deserialize)]
struct AdaptersFile {
    adapters: Vec<AdapterRecord>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), LoraError> {
    let err = |message: String| LoraError::Checkpoint { path: path.display().to_string(), message };
    let text = serde_json::to_string_pretty(value).map_err(|e| err(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| err(e.to_string()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, LoraError> {
    let err = |message: String| LoraError::Checkpoint { path: path.display().to_string(), message };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

/// Writes `base.json` and `adapters.json` under `dir`.
pub fn save_checkpoint(model: &ToyModel, dir: &Path) -> Result<(PathBuf, PathBuf), LoraError> {
    fs::create_dir_all(dir)
        .map_err(|e| LoraError::Checkpoint { path: dir.display().to_string(), message: e.to_string() })?;
    let base = BaseFile {
        layers: model
            .layers
            .iter()
            .map(|l| BaseLayerRecord {
                d_in: l.dense.d_in(),
                d_out: l.dense.d_out(),
                activation: l.activation,
                frozen: l.dense.frozen,
                weight: MatrixRecord::from_matrix(&l.dense.weight),
                bias: l.dense.bias.as_ref().map(|b| b.iter().copied().collect()),
            })
            .collect(),
    };
    let adapters = AdaptersFile {
        adapters: model
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                l.adapter.as_ref().map(|a| AdapterRecord {
                    layer: i,
                    rank: a.rank,
                    alpha: a.alpha,
                    dropout_p: a.dropout_p,
                    a: MatrixRecord::from_matrix(&a.a),
                    b: MatrixRecord::from_matrix(&a.b),
                })
            })
            .collect(),
    };
    let base_path = dir.join(BASE_FILE);
    let adapters_path = dir.join(ADAPTERS_FILE);
    write_json(&base_path, &base)?;
    write_json(&adapters_path, &adapters)?;
    Ok((base_path, adapters_path))
}

/// Reads a checkpoint written by [`save_checkpoint`]. A missing adapters
/// file yields a base-only model.
pub fn load_checkpoint(dir: &Path) -> Result<ToyModel, LoraError> {
    let base_path = dir.join(BASE_FILE);
    let base: BaseFile = read_json(&base_path)?;
    let bad = |path: &Path, message: String| LoraError::Checkpoint { path: path.display().to_string(), message };

    let mut layers = Vec::with_capacity(base.layers.len());
    for (i, rec) in base.layers.into_iter().enumerate() {
        let weight = rec.weight.to_matrix(&format!("layer {i} weight")).map_err(|m| bad(&base_path, m))?;
        if weight.shape() != (rec.d_out, rec.d_in) {
            return Err(bad(&base_path, format!("layer {i} weight is not {}x{}", rec.d_out, rec.d_in)));
        }
        let dense = DenseLayer::new(weight, rec.bias.map(DVector::from_vec), rec.frozen)?;
        layers.push(ModelLayer { dense, adapter: None, activation: rec.activation });
    }

    let adapters_path = dir.join(ADAPTERS_FILE);
    if adapters_path.exists() {
        let file: AdaptersFile = read_json(&adapters_path)?;
        for rec in file.adapters {
            let slot = layers
                .get_mut(rec.layer)
                .ok_or_else(|| bad(&adapters_path, format!("adapter for missing layer {}", rec.layer)))?;
            let a = rec.a.to_matrix("A").map_err(|m| bad(&adapters_path, m))?;
            let b = rec.b.to_matrix("B").map_err(|m| bad(&adapters_path, m))?;
            if a.nrows() != rec.rank {
                return Err(bad(&adapters_path, format!("layer {} A has {} rows, rank {}", rec.layer, a.nrows(), rec.rank)));
            }
            slot.adapter = Some(LoraAdapter::from_parts(a, b, rec.alpha, rec.dropout_p)?);
        }
    }
    ToyModel::new(layers)
}
