//! Retrieves canned evidence through the cached retriever, assembles the
//! instruction / evidence / input prompts with a template override and
//! exports a training set with its metadata sidecar.

use std::error::Error;
use std::fmt::Write;
use std::path::Path;

use factcheck::corpus::{load_normalized, Dataset};
use factcheck::evidence::{formulate_query, FilterPolicy, FixtureProvider, Retriever, RetrieverConfig, SearchCache};
use factcheck::promptgen::{build_example, export_training_set, TemplateOverrides};

pub fn run_example() -> Result<String, Box<dyn Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let scratch = tempfile::tempdir()?;
    let claims = load_normalized(&fixtures.join("golden/rawfc_claims.jsonl"), Dataset::Rawfc)?.test;

    let provider = FixtureProvider::from_file(&fixtures.join("golden/rawfc_evidence.json"))?;
    let cache = SearchCache::open(scratch.path().join("cache"))?;
    let retriever = Retriever::new(Box::new(provider), Some(cache), RetrieverConfig::default());
    let queries: Vec<_> = claims.iter().map(|c| formulate_query(c, 10)).collect();

    let template = TemplateOverrides::from_toml_file(&fixtures.join("template.toml"))?.resolve(Dataset::Rawfc.taxonomy())?;
    let policy = FilterPolicy::default();
    let mut examples = Vec::new();
    for (claim, response) in claims.iter().zip(retriever.search_all(&queries)) {
        let response = response?;
        let bundle = factcheck::evidence::filter_evidence(&response.results, claim, &policy);
        examples.push(build_example(claim, &bundle, &template)?);
    }

    let mut out = String::new();
    let first = &examples[0];
    writeln!(out, "prompt for {} ({} evidence item(s), target `{}`):", first.claim_id, first.evidence_count_used, first.target)?;
    writeln!(out, "{}", first.prompt)?;
    let path = scratch.path().join("train.jsonl");
    let meta = export_training_set(&examples, &path, &template, &policy, Some("test"))?;
    writeln!(out, "exported {} records; {} provider call(s)", meta.records, retriever.network_calls())?;
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    print!("{}", run_example()?);
    Ok(())
}
