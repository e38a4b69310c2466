//! Trains low-rank adapters on a frozen toy network, checks the analytic
//! gradients, merges the adapters and round-trips a checkpoint.

use std::error::Error;

use factcheck::lora::demo::{run_demo_with_model, DemoConfig};
use factcheck::lora::{load_checkpoint, save_checkpoint};

pub fn run_example() -> Result<String, Box<dyn Error>> {
    let cfg = DemoConfig { epochs: 5, lr: 1e-2, ..DemoConfig::default() };
    let (report, model) = run_demo_with_model(&cfg)?;
    let mut out = report.render();

    let dir = tempfile::tempdir()?;
    save_checkpoint(&model, dir.path())?;
    let restored = load_checkpoint(dir.path())?;
    out.push_str(&format!("checkpoint round trip exact: {}\n", restored == model));
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    print!("{}", run_example()?);
    Ok(())
}
