//! Answer extraction from generated text.

use std::sync::LazyLock;

use regex::Regex;

/// Final-answer marker for strict matching, at line start.
pub const STRICT_MARKER: &str = "#### ";

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[+-]?\d+(?:,\d+)*(?:\.\d+)?").expect("valid pattern"));

/// Remainder of the last line that starts with `#### `, trimmed; None when
/// no marker is present.
pub fn extract_strict(text: &str) -> Option<String> {
    let mut answer = None;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix(STRICT_MARKER) {
            answer = Some(rest.trim().to_string());
        }
    }
    answer
}

/// The last maximal numeric token anywhere in the text (optional sign,
/// digit groups with commas, optional decimal part), with commas stripped.
pub fn extract_flexible(text: &str) -> Option<String> {
    NUMBER
        .find_iter(text)
        .last()
        .map(|m| m.as_str().replace(',', ""))
}

/// Canonical form for numeric comparison: commas dropped, a trailing `.0`
/// removed.
pub fn normalize_numeric(s: &str) -> String {
    let s = s.replace(',', "");
    match s.strip_suffix(".0") {
        Some(stripped) => stripped.to_string(),
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_finds_marked_answer() {
        assert_eq!(
            extract_strict("ragionamento passo passo\n#### 42"),
            Some("42".into())
        );
    }

    #[test]
    fn strict_none_without_marker() {
        assert_eq!(extract_strict("the answer is 42"), None);
        // Marker must sit at line start.
        assert_eq!(extract_strict("x #### 42"), None);
    }

    #[test]
    fn strict_last_marker_wins() {
        assert_eq!(extract_strict("#### 3.50\n#### 7"), Some("7".into()));
    }

    #[test]
    fn flexible_takes_last_number() {
        assert_eq!(
            extract_flexible("costa 3 euro e 50, totale 3.50"),
            Some("3.50".into())
        );
        assert_eq!(extract_flexible("1,234 then 5"), Some("5".into()));
        assert_eq!(extract_flexible("only 1,234"), Some("1234".into()));
    }

    #[test]
    fn flexible_none_without_numbers() {
        assert_eq!(extract_flexible("nessun numero"), None);
    }

    #[test]
    fn flexible_handles_signs_and_decimals() {
        assert_eq!(extract_flexible("delta -3.25 end"), Some("-3.25".into()));
        assert_eq!(extract_flexible("+7 su 10"), Some("10".into()));
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_numeric("1,234"), "1234");
        assert_eq!(normalize_numeric("42.0"), "42");
        assert_eq!(normalize_numeric("3.50"), "3.50");
        assert_eq!(normalize_numeric("-5"), "-5");
    }
}
