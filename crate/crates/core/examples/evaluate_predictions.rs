//! Scores a handful of verdicts against gold labels and prints them under
//! the published reference rows, followed by the confusion matrix.

use std::error::Error;
use std::path::Path;

use factcheck::corpus::{load_normalized, Dataset};
use factcheck::eval::{evaluate, render_confusion, render_results};
use factcheck::inference::Verdict;

pub fn run_example() -> Result<String, Box<dyn Error>> {
    let claims_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden/liar_claims.jsonl");
    let claims = load_normalized(&claims_path, Dataset::Liar)?.test;
    let answers = ["true", "mostly true", "half true", "false", "false", "nonsense"];
    let verdicts: Vec<Verdict> =
        claims.iter().zip(answers).map(|(c, a)| Verdict::from_text(&c.id, Dataset::Liar, a)).collect();

    let report = evaluate(&claims, &verdicts, Dataset::Liar, true)?;
    let mut out = render_results(&report.metrics, report.reference.as_ref());
    out.push('\n');
    out.push_str(&render_confusion(&report.confusion));
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    print!("{}", run_example()?);
    Ok(())
}
