//! Evidence-augmented claim verification.
//!
//! The pipeline ingests LIAR/RAWFC claims ([`corpus`]), retrieves and
//! filters web evidence ([`evidence`]), assembles instruction/evidence/input
//! prompts ([`promptgen`]), obtains verdicts from a text-generation backend
//! ([`inference`]) and scores them ([`eval`]). [`lora`] is a small
//! double-precision lab for low-rank adapter training, and [`pipeline`]
//! ties the stages together behind the `factcheck` binary.

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod evidence;
pub mod inference;
pub mod lora;
pub mod pipeline;
pub mod promptgen;
mod text;

pub use text::{collapse_whitespace, normalize_label_text};
