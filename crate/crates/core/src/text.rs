//! String normalization shared by aggregation, filtering and judging.

use alloc::string::String;

/// Lowercase and collapse runs of whitespace to one space; trims both ends.
pub fn collapse_lower(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// [`collapse_lower`] after deleting every character that is neither
/// alphanumeric nor whitespace.
pub fn question_key(s: &str) -> String {
    let stripped: String = s.chars().filter(|c| c.is_alphanumeric() || c.is_whitespace()).collect();
    collapse_lower(&stripped)
}

/// Normalization used for answer agreement.
pub fn answer_key(s: &str) -> String {
    collapse_lower(s)
}
