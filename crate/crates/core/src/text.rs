//! Small string helpers shared across stages.

/// Trims and collapses every run of whitespace to a single space.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercases, maps every non-alphanumeric character to a space and
/// collapses whitespace. "Pants-on-Fire!" becomes "pants on fire".
pub fn normalize_label_text(s: &str) -> String {
    let mapped: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .flat_map(char::to_lowercase)
        .collect();
    collapse_whitespace(&mapped)
}
