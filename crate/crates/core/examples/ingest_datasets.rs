//! Loads the LIAR TSV sample and the RAWFC golden corpus, prints the label
//! distribution per partition and round-trips both through the normalized
//! record form.

use std::error::Error;
use std::fmt::Write;
use std::path::Path;

use factcheck::corpus::{load_liar, load_normalized, split_stats, write_normalized, Dataset, LiarColumns};

pub fn run_example() -> Result<String, Box<dyn Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let scratch = tempfile::tempdir()?;
    let mut out = String::new();

    let sources = [
        (Dataset::Liar, load_liar(&fixtures.join("liar_tsv"), &LiarColumns::default())?),
        (Dataset::Rawfc, load_normalized(&fixtures.join("golden/rawfc_claims.jsonl"), Dataset::Rawfc)?),
    ];
    for (dataset, split) in sources {
        let stats = split_stats(&split);
        writeln!(out, "{}: {} claims", dataset.name(), stats.total())?;
        for (name, part) in [("train", &stats.train), ("validation", &stats.validation), ("test", &stats.test)] {
            let labels: Vec<String> = part.per_label.iter().map(|(l, n)| format!("{l}={n}")).collect();
            writeln!(out, "  {name:<10} {:>3}  {}", part.total, labels.join(" "))?;
        }

        let path = scratch.path().join(format!("{}.jsonl", dataset.name()));
        write_normalized(&split, &path)?;
        let reloaded = load_normalized(&path, dataset)?;
        if reloaded != split {
            return Err(format!("{} did not survive the round trip", dataset.name()).into());
        }
        writeln!(out, "  normalized round trip: identical")?;
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    print!("{}", run_example()?);
    Ok(())
}
