//! Claim corpora: fixed veracity taxonomies, LIAR/RAWFC ingestion and the
//! normalized record-per-line form every later stage consumes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::text::{collapse_whitespace, normalize_label_text};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("unknown dataset `{0}` (expected `rawfc` or `liar`)")]
    UnknownDataset(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected at least {expected} columns, found {found}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: unknown {dataset} label `{value}`")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        dataset: Dataset,
        value: String,
    },
    #[error("{path}:{line}: invalid record: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: claim `{id}` has empty text")]
    EmptyText { path: PathBuf, line: usize, id: String },
    #[error("claim id `{0}` appears more than once in the split")]
    DuplicateId(String),
    #[error("label `{label}` does not belong to the {dataset} taxonomy")]
    ForeignLabel { label: String, dataset: Dataset },
}

/// The two supported corpora. Each owns exactly one taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Rawfc,
    Liar,
}

impl Dataset {
    pub const ALL: [Dataset; 2] = [Dataset::Rawfc, Dataset::Liar];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Rawfc => "rawfc",
            Dataset::Liar => "liar",
        }
    }

    pub fn taxonomy(self) -> &'static VeracityTaxonomy {
        match self {
            Dataset::Rawfc => &RAWFC,
            Dataset::Liar => &LIAR,
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rawfc" => Ok(Dataset::Rawfc),
            "liar" => Ok(Dataset::Liar),
            _ => Err(CorpusError::UnknownDataset(s.to_string())),
        }
    }
}

/// A label within one of the fixed taxonomies. Cheap to copy; the canonical
/// name is looked up from the owning taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VeracityLabel {
    dataset: Dataset,
    ordinal: u8,
}

impl VeracityLabel {
    pub fn dataset(self) -> Dataset {
        self.dataset
    }

    pub fn ordinal(self) -> usize {
        self.ordinal as usize
    }

    pub fn canonical_name(self) -> &'static str {
        self.dataset.taxonomy().specs[self.ordinal()].name
    }
}

impl fmt::Display for VeracityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_name())
    }
}

impl Serialize for VeracityLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.canonical_name())
    }
}

struct LabelSpec {
    name: &'static str,
    verbalizations: &'static [&'static str],
}

/// Ordered label set of a dataset plus the surface strings accepted for
/// each label. The first verbalization of a label is its canonical name.
pub struct VeracityTaxonomy {
    dataset: Dataset,
    specs: &'static [LabelSpec],
    /// normalized surface form -> ordinal
    lookup: BTreeMap<String, u8>,
}

impl fmt::Debug for VeracityTaxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VeracityTaxonomy")
            .field("name", &self.dataset.name())
            .field("labels", &self.label_names())
            .finish()
    }
}

impl PartialEq for VeracityTaxonomy {
    fn eq(&self, other: &Self) -> bool {
        self.dataset == other.dataset
    }
}

impl Eq for VeracityTaxonomy {}

const RAWFC_SPECS: &[LabelSpec] = &[
    LabelSpec { name: "true", verbalizations: &["true"] },
    LabelSpec { name: "half-true", verbalizations: &["half-true", "half true", "half"] },
    LabelSpec { name: "false", verbalizations: &["false", "untrue"] },
];

const LIAR_SPECS: &[LabelSpec] = &[
    LabelSpec { name: "true", verbalizations: &["true"] },
    LabelSpec { name: "mostly-true", verbalizations: &["mostly-true", "mostly true"] },
    LabelSpec { name: "half-true", verbalizations: &["half-true", "half true", "half"] },
    LabelSpec { name: "barely-true", verbalizations: &["barely-true", "barely true"] },
    LabelSpec { name: "false", verbalizations: &["false", "untrue"] },
    LabelSpec {
        name: "pants-fire",
        verbalizations: &["pants-fire", "pants-on-fire", "pants on fire", "pants fire"],
    },
];

static RAWFC: LazyLock<VeracityTaxonomy> =
    LazyLock::new(|| VeracityTaxonomy::build(Dataset::Rawfc, RAWFC_SPECS));
static LIAR: LazyLock<VeracityTaxonomy> =
    LazyLock::new(|| VeracityTaxonomy::build(Dataset::Liar, LIAR_SPECS));

impl VeracityTaxonomy {
    fn build(dataset: Dataset, specs: &'static [LabelSpec]) -> Self {
        let mut lookup = BTreeMap::new();
        for (ordinal, spec) in specs.iter().enumerate() {
            for surface in spec.verbalizations {
                let prev = lookup.insert(normalize_label_text(surface), ordinal as u8);
                assert!(
                    prev.is_none_or(|p| p as usize == ordinal),
                    "verbalization `{surface}` is shared by two labels"
                );
            }
        }
        Self { dataset, specs, lookup }
    }

    pub fn dataset(&self) -> Dataset {
        self.dataset
    }

    pub fn name(&self) -> &'static str {
        self.dataset.name()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Labels in taxonomy order.
    pub fn labels(&self) -> impl ExactSizeIterator<Item = VeracityLabel> + '_ {
        (0..self.specs.len()).map(move |i| VeracityLabel { dataset: self.dataset, ordinal: i as u8 })
    }

    pub fn label_names(&self) -> Vec<&'static str> {
        self.specs.iter().map(|s| s.name).collect()
    }

    pub fn label_at(&self, ordinal: usize) -> Option<VeracityLabel> {
        (ordinal < self.specs.len()).then_some(VeracityLabel { dataset: self.dataset, ordinal: ordinal as u8 })
    }

    pub fn contains(&self, label: VeracityLabel) -> bool {
        label.dataset == self.dataset && label.ordinal() < self.specs.len()
    }

    pub fn verbalizations(&self, label: VeracityLabel) -> &'static [&'static str] {
        self.specs[label.ordinal()].verbalizations
    }

    /// Resolves any accepted spelling ("pants on fire", "Half", "half-true")
    /// to its label.
    pub fn parse_label(&self, raw: &str) -> Option<VeracityLabel> {
        self.lookup
            .get(&normalize_label_text(raw))
            .map(|&ordinal| VeracityLabel { dataset: self.dataset, ordinal })
    }

    /// Normalized verbalizations paired with their label, for verdict parsing.
    pub fn surface_forms(&self) -> impl Iterator<Item = (&str, VeracityLabel)> + '_ {
        self.lookup
            .iter()
            .map(move |(s, &ordinal)| (s.as_str(), VeracityLabel { dataset: self.dataset, ordinal }))
    }
}

pub fn taxonomy_of(name: &str) -> Result<&'static VeracityTaxonomy, CorpusError> {
    Ok(name.parse::<Dataset>()?.taxonomy())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub id: String,
    pub text: String,
    pub label: VeracityLabel,
    /// Date the claim was recorded by the fact-checking site.
    pub claim_date: Option<NaiveDate>,
    pub speaker: Option<String>,
    pub dataset: Dataset,
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Validation, Partition::Test];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Partition::Train),
            "validation" | "valid" | "val" | "dev" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            other => Err(format!("unknown partition `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Claim>,
    pub validation: Vec<Claim>,
    pub test: Vec<Claim>,
}

impl DatasetSplit {
    pub fn partition(&self, p: Partition) -> &[Claim] {
        match p {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }

    fn partition_mut(&mut self, p: Partition) -> &mut Vec<Claim> {
        match p {
            Partition::Train => &mut self.train,
            Partition::Validation => &mut self.validation,
            Partition::Test => &mut self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All claims tagged with their partition, in train/validation/test order.
    pub fn iter(&self) -> impl Iterator<Item = (Partition, &Claim)> {
        Partition::ALL
            .into_iter()
            .flat_map(move |p| self.partition(p).iter().map(move |c| (p, c)))
    }

    fn check_unique_ids(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for (_, claim) in self.iter() {
            if !seen.insert(claim.id.as_str()) {
                return Err(CorpusError::DuplicateId(claim.id.clone()));
            }
        }
        Ok(())
    }
}

/// Column layout of a LIAR tab-separated file (zero-based indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiarColumns {
    pub id: usize,
    pub label: usize,
    pub statement: usize,
    pub speaker: Option<usize>,
    pub date: Option<usize>,
    /// Other columns copied into `Claim::extra` when present.
    pub extra: Vec<(usize, String)>,
}

impl Default for LiarColumns {
    fn default() -> Self {
        let extra = [(3, "subject"), (5, "job_title"), (6, "state"), (7, "party"), (13, "context")];
        Self {
            id: 0,
            label: 1,
            statement: 2,
            speaker: Some(4),
            date: None,
            extra: extra.iter().map(|&(i, n)| (i, n.to_string())).collect(),
        }
    }
}

impl LiarColumns {
    fn required_width(&self) -> usize {
        [Some(self.id), Some(self.label), Some(self.statement), self.speaker, self.date]
            .into_iter()
            .flatten()
            .max()
            .unwrap_or(0)
            + 1
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// Loads LIAR. `path` is either a directory holding `train.tsv`,
/// `valid.tsv` (or `validation.tsv`/`dev.tsv`) and `test.tsv`, or a single
/// TSV file whose rows all land in the train partition.
pub fn load_liar(path: &Path, columns: &LiarColumns) -> Result<DatasetSplit, CorpusError> {
    let mut split = DatasetSplit::default();
    if path.is_dir() {
        let candidates: [(Partition, &[&str]); 3] = [
            (Partition::Train, &["train.tsv"]),
            (Partition::Validation, &["valid.tsv", "validation.tsv", "dev.tsv"]),
            (Partition::Test, &["test.tsv"]),
        ];
        for (partition, names) in candidates {
            if let Some(file) = names.iter().map(|n| path.join(n)).find(|p| p.is_file()) {
                *split.partition_mut(partition) = load_liar_file(&file, columns)?;
            }
        }
    } else {
        split.train = load_liar_file(path, columns)?;
    }
    split.check_unique_ids()?;
    Ok(split)
}

pub fn load_liar_file(path: &Path, columns: &LiarColumns) -> Result<Vec<Claim>, CorpusError> {
    let reader = BufReader::new(fs::File::open(path).map_err(io_err(path))?);
    let taxonomy = Dataset::Liar.taxonomy();
    let width = columns.required_width();
    let mut claims = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < width {
            return Err(CorpusError::MalformedRow {
                path: path.to_path_buf(),
                line: line_no,
                expected: width,
                found: fields.len(),
            });
        }
        let raw_label = fields[columns.label].trim();
        let label = taxonomy.parse_label(raw_label).ok_or_else(|| CorpusError::UnknownLabel {
            path: path.to_path_buf(),
            line: line_no,
            dataset: Dataset::Liar,
            value: raw_label.to_string(),
        })?;
        let id = fields[columns.id].trim().to_string();
        let text = collapse_whitespace(fields[columns.statement]);
        if text.is_empty() {
            return Err(CorpusError::EmptyText { path: path.to_path_buf(), line: line_no, id });
        }
        let claim_date = match columns.date {
            Some(i) => parse_date_field(fields[i]).map_err(|message| CorpusError::Record {
                path: path.to_path_buf(),
                line: line_no,
                message,
            })?,
            None => None,
        };
        let speaker = columns
            .speaker
            .map(|i| fields[i].trim())
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        let extra = columns
            .extra
            .iter()
            .filter_map(|(i, name)| {
                let value = fields.get(*i)?.trim();
                (!value.is_empty()).then(|| (name.clone(), serde_json::Value::String(value.to_string())))
            })
            .collect();
        claims.push(Claim { id, text, label, claim_date, speaker, dataset: Dataset::Liar, extra });
    }
    Ok(claims)
}

fn parse_date_field(raw: &str) -> Result<Option<NaiveDate>, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let day = raw.get(..10).unwrap_or(raw);
    NaiveDate::parse_from_str(day, "%Y-%m-%d")
        .map(Some)
        .map_err(|e| format!("invalid date `{raw}`: {e}"))
}

/// Normalized on-disk form of a claim, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: String,
    pub text: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "empty_as_none")]
    pub date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Dataset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Partition>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

fn empty_as_none<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    let value = Option::<String>::deserialize(d)?;
    Ok(value.filter(|s| !s.trim().is_empty()))
}

impl ClaimRecord {
    pub fn from_claim(claim: &Claim, partition: Option<Partition>) -> Self {
        Self {
            id: claim.id.clone(),
            text: claim.text.clone(),
            label: claim.label.canonical_name().to_string(),
            date: claim.claim_date.map(|d| d.format("%Y-%m-%d").to_string()),
            speaker: claim.speaker.clone(),
            dataset: Some(claim.dataset),
            partition,
            extra: claim.extra.clone(),
        }
    }

    /// `dataset` is used when the record does not name its own.
    fn into_claim(self, dataset: Dataset, path: &Path, line: usize) -> Result<(Option<Partition>, Claim), CorpusError> {
        let dataset = self.dataset.unwrap_or(dataset);
        let label = dataset.taxonomy().parse_label(&self.label).ok_or_else(|| CorpusError::UnknownLabel {
            path: path.to_path_buf(),
            line,
            dataset,
            value: self.label.clone(),
        })?;
        let text = collapse_whitespace(&self.text);
        if text.is_empty() {
            return Err(CorpusError::EmptyText { path: path.to_path_buf(), line, id: self.id });
        }
        let claim_date = match &self.date {
            Some(d) => parse_date_field(d)
                .map_err(|message| CorpusError::Record { path: path.to_path_buf(), line, message })?,
            None => None,
        };
        let claim = Claim {
            id: self.id,
            text,
            label,
            claim_date,
            speaker: self.speaker.filter(|s| !s.trim().is_empty()),
            dataset,
            extra: self.extra,
        };
        Ok((self.partition, claim))
    }
}

/// Loads RAWFC-style records in the normalized form.
///
/// Accepted layouts: a record-per-line file; a directory of per-claim
/// `.json` files; or a directory with `train`/`val`/`test` subdirectories of
/// per-claim files. Records without a partition land in train.
pub fn load_rawfc(path: &Path) -> Result<DatasetSplit, CorpusError> {
    load_normalized(path, Dataset::Rawfc)
}

/// Same as [`load_rawfc`] but for any dataset; records may also carry their
/// own `dataset` field, which wins over `default_dataset`.
pub fn load_normalized(path: &Path, default_dataset: Dataset) -> Result<DatasetSplit, CorpusError> {
    let mut split = DatasetSplit::default();
    if path.is_dir() {
        let mut found_partition_dir = false;
        for partition in Partition::ALL {
            let names: &[&str] = match partition {
                Partition::Train => &["train"],
                Partition::Validation => &["val", "valid", "validation", "dev"],
                Partition::Test => &["test"],
            };
            if let Some(dir) = names.iter().map(|n| path.join(n)).find(|p| p.is_dir()) {
                found_partition_dir = true;
                for (_, claim) in read_record_dir(&dir, default_dataset)? {
                    split.partition_mut(partition).push(claim);
                }
            }
        }
        if !found_partition_dir {
            for (partition, claim) in read_record_dir(path, default_dataset)? {
                split.partition_mut(partition.unwrap_or(Partition::Train)).push(claim);
            }
        }
    } else {
        for (partition, claim) in read_record_lines(path, default_dataset)? {
            split.partition_mut(partition.unwrap_or(Partition::Train)).push(claim);
        }
    }
    split.check_unique_ids()?;
    Ok(split)
}

fn read_record_dir(dir: &Path, dataset: Dataset) -> Result<Vec<(Option<Partition>, Claim)>, CorpusError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|file| {
            let body = fs::read_to_string(file).map_err(io_err(file))?;
            let record: ClaimRecord = serde_json::from_str(&body).map_err(|e| CorpusError::Record {
                path: file.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
            record.into_claim(dataset, file, 1)
        })
        .collect()
}

fn read_record_lines(path: &Path, dataset: Dataset) -> Result<Vec<(Option<Partition>, Claim)>, CorpusError> {
    let reader = BufReader::new(fs::File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ClaimRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Record {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record.into_claim(dataset, path, idx + 1)?);
    }
    Ok(out)
}

/// Writes the split in the normalized record-per-line form, tagging each
/// record with its partition.
pub fn write_normalized(split: &DatasetSplit, path: &Path) -> Result<(), CorpusError> {
    let mut out = Vec::new();
    for (partition, claim) in split.iter() {
        let record = ClaimRecord::from_claim(claim, Some(partition));
        serde_json::to_writer(&mut out, &record).expect("claim records always serialize");
        out.push(b'\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&out).map_err(io_err(path))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PartitionStats {
    pub total: usize,
    pub per_label: BTreeMap<String, usize>,
}

impl PartitionStats {
    pub fn count(&self, label: &str) -> usize {
        self.per_label.get(label).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitStats {
    pub train: PartitionStats,
    pub validation: PartitionStats,
    pub test: PartitionStats,
}

impl SplitStats {
    pub fn total(&self) -> usize {
        self.train.total + self.validation.total + self.test.total
    }
}

pub fn split_stats(split: &DatasetSplit) -> SplitStats {
    let tally = |claims: &[Claim]| {
        let mut stats = PartitionStats { total: claims.len(), ..Default::default() };
        for claim in claims {
            *stats.per_label.entry(claim.label.canonical_name().to_string()).or_default() += 1;
        }
        stats
    };
    SplitStats {
        train: tally(&split.train),
        validation: tally(&split.validation),
        test: tally(&split.test),
    }
}
