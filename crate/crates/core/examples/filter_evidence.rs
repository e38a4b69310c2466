//! Parses canned search responses and applies the evidence filter: blocked
//! fact-checking domains and anything published after the claim go.

use std::collections::BTreeMap;
use std::error::Error;
use std::fmt::Write;
use std::path::Path;

use factcheck::corpus::{load_normalized, Dataset};
use factcheck::evidence::{filter_evidence, parse_provider_response, FilterPolicy, FilterStats};

pub fn run_example() -> Result<String, Box<dyn Error>> {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden");
    let split = load_normalized(&golden.join("rawfc_claims.jsonl"), Dataset::Rawfc)?;
    let canned: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(golden.join("rawfc_evidence.json"))?)?;
    let responses: BTreeMap<String, serde_json::Value> = serde_json::from_value(canned["responses"].clone())?;

    let policy = FilterPolicy::default();
    let mut totals = FilterStats::default();
    let mut out = String::new();
    writeln!(out, "claim       date        retrieved  kept  blocked  post-dated")?;
    for claim in &split.test {
        let results = match responses.get(&claim.id) {
            Some(body) => parse_provider_response(&body.to_string(), 10)?,
            None => Vec::new(),
        };
        let bundle = filter_evidence(&results, claim, &policy);
        let s = bundle.stats;
        let date = claim.claim_date.map(|d| d.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{:<11} {date:<11} {:>9}  {:>4}  {:>7}  {:>10}",
            claim.id, s.retrieved, s.kept, s.dropped_blocked, s.dropped_post_dated
        )?;
        for kept in &bundle.snippets {
            writeln!(out, "    kept {} ({})", kept.source_domain, kept.url)?;
        }
        totals.absorb(&s);
    }
    writeln!(
        out,
        "total: {} retrieved, {} kept, {} blocked, {} post-dated",
        totals.retrieved, totals.kept, totals.dropped_blocked, totals.dropped_post_dated
    )?;
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    print!("{}", run_example()?);
    Ok(())
}
