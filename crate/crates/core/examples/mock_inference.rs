//! Runs assembled prompts through a rule-based mock backend and shows how
//! free-text answers are parsed into labels.

use std::error::Error;
use std::fmt::Write;

use factcheck::corpus::Dataset;
use factcheck::inference::{predict_prompts, BatchOptions, DecodeParams, MockBackend, PromptJob};

pub fn run_example() -> Result<String, Box<dyn Error>> {
    let answers = [
        ("c1", "mostly true"),
        ("c2", "Pants on fire!"),
        ("c3", "I would say this is barely true.\nBecause..."),
        ("c4", "The statement is accurate."),
    ];
    let backend = MockBackend::by_claim_id(answers);
    let jobs: Vec<PromptJob> = answers
        .iter()
        .map(|(id, _)| PromptJob { claim_id: id.to_string(), dataset: Dataset::Liar, prompt: format!("claim {id}") })
        .collect();
    let verdicts = predict_prompts(&jobs, &backend, &DecodeParams::default(), BatchOptions::default())?;

    let mut out = String::new();
    for v in &verdicts {
        let label = v.label.map(|l| l.canonical_name()).unwrap_or("OTHER");
        writeln!(out, "{:<3} {:<36} {:<9} {label}", v.claim_id, format!("{:?}", v.raw_text), format!("{:?}", v.parse_status))?;
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    print!("{}", run_example()?);
    Ok(())
}
