use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::{load_liar, load_normalized, load_rawfc, Claim, CorpusError, Dataset, DatasetSplit, LiarColumns, Partition};
use crate::evidence::{
    filter_evidence, formulate_query, EvidenceBundle, FilterPolicy, FixtureProvider, GoogleProvider, Retriever,
    SearchError, SearchProvider,
};
use crate::inference::{Backend, HttpBackend, InferenceError, MockBackend};

use super::{BackendKind, PipelineError, ProviderKind, ValidatedConfig};

fn is_tsv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv"))
}

/// Loads a raw corpus. LIAR accepts its TSV layout (a `.tsv` file or a
/// directory of them) as well as the normalized form; RAWFC uses the
/// normalized form only.
pub fn load_claims(dataset: Dataset, path: &Path) -> Result<DatasetSplit, CorpusError> {
    match dataset {
        Dataset::Rawfc => load_rawfc(path),
        Dataset::Liar => {
            let tsv_dir = path.is_dir()
                && fs::read_dir(path)
                    .map(|entries| entries.filter_map(Result::ok).any(|e| is_tsv(&e.path())))
                    .unwrap_or(false);
            if is_tsv(path) || tsv_dir {
                load_liar(path, &LiarColumns::default())
            } else {
                load_normalized(path, Dataset::Liar)
            }
        }
    }
}

/// Claims of one partition, or of all of them in train/validation/test order.
pub fn select_partition(split: &DatasetSplit, partition: Option<Partition>) -> Vec<Claim> {
    match partition {
        Some(p) => split.partition(p).to_vec(),
        None => split.iter().map(|(_, c)| c.clone()).collect(),
    }
}

pub fn make_provider(cfg: &ValidatedConfig) -> Result<Box<dyn SearchProvider>, SearchError> {
    Ok(match cfg.provider {
        ProviderKind::Fixture => {
            let path = cfg.fixture.as_deref().expect("validated config has a fixture path");
            Box::new(FixtureProvider::from_file(path)?)
        }
        ProviderKind::Google => Box::new(GoogleProvider::from_env(cfg.google_config())?),
    })
}

pub fn make_backend(cfg: &ValidatedConfig) -> Result<Box<dyn Backend>, InferenceError> {
    Ok(match cfg.backend {
        BackendKind::Mock => {
            let path = cfg.mock_file.as_deref().expect("validated config has a mock file");
            Box::new(MockBackend::from_file(path)?)
        }
        BackendKind::Http => Box::new(HttpBackend::from_env(cfg.snapshot.backend.http_config())?),
    })
}

/// One query per claim, then the evidence filter. Any search failure aborts
/// with the claim that caused it.
pub fn retrieve_bundles(
    claims: &[Claim],
    retriever: &Retriever,
    max_results: usize,
    policy: &FilterPolicy,
) -> Result<Vec<EvidenceBundle>, PipelineError> {
    let queries: Vec<_> = claims.iter().map(|c| formulate_query(c, max_results)).collect();
    let responses = retriever.search_all(&queries);
    claims
        .iter()
        .zip(responses)
        .map(|(claim, response)| {
            let response = response.map_err(|e| PipelineError::claim("retrieve", &claim.id, e))?;
            Ok(filter_evidence(&response.results, claim, policy).with_source(response.provider, response.retrieved_at))
        })
        .collect()
}

pub fn write_bundles(bundles: &[EvidenceBundle], path: &Path) -> std::io::Result<()> {
    let mut body = Vec::new();
    for bundle in bundles {
        serde_json::to_writer(&mut body, bundle).expect("bundles serialize");
        body.push(b'\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, body)
}

pub fn read_bundles(path: &Path) -> std::io::Result<Vec<EvidenceBundle>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bundle = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(bundle);
    }
    Ok(out)
}
