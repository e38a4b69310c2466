//! Confusion matrices, macro precision/recall/F1 and table rendering.
//!
//! Rows are gold labels, columns predictions. One extra prediction column,
//! OTHER, absorbs unparsed verdicts: it adds false negatives to its gold
//! row and is never scored as a class of its own.

mod reference;
mod render;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Claim, Dataset, VeracityLabel, VeracityTaxonomy};
use crate::inference::{ParseStatus, Verdict};

pub use reference::{reference_table, ReferenceRow, ReferenceTable};
pub use render::{render_confusion, render_results};

pub const OTHER_COLUMN: &str = "OTHER";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("{golds} gold labels but {verdicts} verdicts")]
    LengthMismatch { golds: usize, verdicts: usize },
    #[error("label `{label}` is not in the {taxonomy} taxonomy")]
    ForeignLabel { label: String, taxonomy: String },
    #[error("verdict for `{0}` has no gold claim")]
    MissingGold(String),
    #[error("invalid confusion matrix: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub dataset: Option<Dataset>,
    /// Class names in taxonomy order.
    pub labels: Vec<String>,
    /// `labels.len()` rows of `labels.len() + 1` columns; the last column is
    /// OTHER.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn empty(taxonomy: &VeracityTaxonomy) -> Self {
        let n = taxonomy.len();
        Self {
            dataset: Some(taxonomy.dataset()),
            labels: taxonomy.label_names().into_iter().map(str::to_string).collect(),
            counts: vec![vec![0; n + 1]; n],
        }
    }

    /// A matrix over arbitrary class names, e.g. for synthetic checks.
    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        let n = labels.len();
        if counts.len() != n || counts.iter().any(|row| row.len() != n + 1) {
            return Err(EvalError::Shape(format!("expected {n} rows of {} columns", n + 1)));
        }
        Ok(Self { dataset: None, labels, counts })
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    pub fn other_column(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, gold: usize) -> u64 {
        self.counts[gold].iter().sum()
    }

    pub fn column_sum(&self, predicted: usize) -> u64 {
        self.counts.iter().map(|row| row[predicted]).sum()
    }
}

pub fn confusion(golds: &[VeracityLabel], verdicts: &[Verdict], taxonomy: &VeracityTaxonomy) -> Result<ConfusionMatrix, EvalError> {
    if golds.len() != verdicts.len() {
        return Err(EvalError::LengthMismatch { golds: golds.len(), verdicts: verdicts.len() });
    }
    let foreign = |label: VeracityLabel| EvalError::ForeignLabel {
        label: format!("{}:{}", label.dataset(), label.canonical_name()),
        taxonomy: taxonomy.name().to_string(),
    };
    let mut cm = ConfusionMatrix::empty(taxonomy);
    let other = cm.other_column();
    for (gold, verdict) in golds.iter().zip(verdicts) {
        if !taxonomy.contains(*gold) {
            return Err(foreign(*gold));
        }
        let column = match verdict.label {
            Some(p) if taxonomy.contains(p) => p.ordinal(),
            Some(p) => return Err(foreign(p)),
            None => other,
        };
        cm.counts[gold.ordinal()][column] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub samples: u64,
    /// How many per-class precision/recall/F1 values were scored 0 because
    /// their denominator was 0.
    pub zero_division: usize,
}

fn ratio(num: u64, den: u64, zero_division: &mut usize) -> f64 {
    if den == 0 {
        *zero_division += 1;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and unweighted-mean precision, recall and F1. Undefined values
/// (zero denominators) score 0.
pub fn macro_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let n = cm.classes();
    let mut zero_division = 0;
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = cm.counts[c][c];
            let predicted = cm.column_sum(c);
            let support = cm.row_sum(c);
            let precision = ratio(tp, predicted, &mut zero_division);
            let recall = ratio(tp, support, &mut zero_division);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                zero_division += 1;
                0.0
            };
            ClassMetrics { label: cm.labels[c].clone(), precision, recall, f1, support }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / n as f64
        }
    };
    MetricsReport {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        samples: cm.total(),
        zero_division,
        per_class,
    }
}

/// Pairs each verdict with its gold label by claim id, in verdict order.
pub fn align_golds(claims: &[Claim], verdicts: &[Verdict]) -> Result<Vec<VeracityLabel>, EvalError> {
    let by_id: HashMap<&str, VeracityLabel> = claims.iter().map(|c| (c.id.as_str(), c.label)).collect();
    verdicts
        .iter()
        .map(|v| by_id.get(v.claim_id.as_str()).copied().ok_or_else(|| EvalError::MissingGold(v.claim_id.clone())))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseCounts {
    pub exact: usize,
    pub fuzzy: usize,
    pub unparsed: usize,
}

impl ParseCounts {
    pub fn tally(verdicts: &[Verdict]) -> Self {
        let mut c = Self::default();
        for v in verdicts {
            match v.parse_status {
                ParseStatus::Exact => c.exact += 1,
                ParseStatus::Fuzzy => c.fuzzy += 1,
                ParseStatus::Unparsed => c.unparsed += 1,
            }
        }
        c
    }

    pub fn parsed(&self) -> usize {
        self.exact + self.fuzzy
    }
}

/// Everything `evaluate` writes to its report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: Dataset,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub parse_counts: ParseCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceTable>,
}

pub fn evaluate(
    claims: &[Claim],
    verdicts: &[Verdict],
    dataset: Dataset,
    with_reference: bool,
) -> Result<EvaluationReport, EvalError> {
    let golds = align_golds(claims, verdicts)?;
    let confusion = confusion(&golds, verdicts, dataset.taxonomy())?;
    let metrics = macro_metrics(&confusion);
    Ok(EvaluationReport {
        dataset,
        metrics,
        confusion,
        parse_counts: ParseCounts::tally(verdicts),
        reference: with_reference.then(|| reference_table(dataset).clone()),
    })
}
