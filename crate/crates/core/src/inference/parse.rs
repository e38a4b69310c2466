use serde::{Deserialize, Serialize};

use crate::corpus::{VeracityLabel, VeracityTaxonomy};
use crate::text::normalize_label_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Exact,
    Fuzzy,
    Unparsed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedVerdict {
    pub label: Option<VeracityLabel>,
    pub status: ParseStatus,
}

impl ParsedVerdict {
    pub const UNPARSED: ParsedVerdict = ParsedVerdict { label: None, status: ParseStatus::Unparsed };
}

/// Maps generated text onto a taxonomy label.
///
/// The text is lowercased, punctuation becomes spaces and whitespace is
/// collapsed. A whole-string match against any verbalization is `Exact`.
/// Otherwise every word-bounded occurrence of every verbalization is a
/// candidate; the longest wins, ties going to the earliest, and the result
/// is `Fuzzy`. No candidate means `Unparsed`.
pub fn parse_verdict(text: &str, taxonomy: &VeracityTaxonomy) -> ParsedVerdict {
    let normalized = normalize_label_text(text);
    if normalized.is_empty() {
        return ParsedVerdict::UNPARSED;
    }
    if let Some(label) = taxonomy.parse_label(&normalized) {
        return ParsedVerdict { label: Some(label), status: ParseStatus::Exact };
    }

    // (length, start offset, label); larger length wins, then smaller offset
    let mut best: Option<(usize, usize, VeracityLabel)> = None;
    let padded = format!(" {normalized} ");
    for (surface, label) in taxonomy.surface_forms() {
        let needle = format!(" {surface} ");
        let mut from = 0;
        while let Some(pos) = padded[from..].find(&needle) {
            let start = from + pos;
            let better = match best {
                None => true,
                Some((len, at, _)) => surface.len() > len || (surface.len() == len && start < at),
            };
            if better {
                best = Some((surface.len(), start, label));
            }
            // occurrences may share the separating space
            from = start + 1;
        }
    }
    match best {
        Some((_, _, label)) => ParsedVerdict { label: Some(label), status: ParseStatus::Fuzzy },
        None => ParsedVerdict::UNPARSED,
    }
}
