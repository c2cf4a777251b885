//! String normalization and the backslash escaping shared by the TSV formats.

use unicode_normalization::UnicodeNormalization;

/// Canonical form used for triple identity and string matching: NFKC, case
/// fold, trim, collapse internal whitespace. Diacritics are kept.
pub fn normalize(s: &str) -> String {
    let nfkc: String = s.nfkc().collect();
    let folded = caseless::default_case_fold_str(&nfkc);
    // Folding can produce sequences that are no longer NFKC (e.g. "İ").
    let folded: String = folded.nfkc().collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Escape backslash, tab, newline and carriage return so a value fits in a
/// single TSV cell.
pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out
}

/// Inverse of [`escape`]. Unknown escapes are kept verbatim.
pub fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_folds_case_and_whitespace() {
        assert_eq!(normalize("  New   York\tCity "), "new york city");
        assert_eq!(normalize("ＴＯＫＹＯ"), "tokyo");
        assert_eq!(normalize("Straße"), "strasse");
        assert_eq!(
            normalize("Sinop"),
            normalize("SİNOP").replace('\u{307}', "")
        );
    }

    #[test]
    fn normalize_keeps_diacritics() {
        assert_eq!(normalize("São Paulo"), "são paulo");
        assert_ne!(normalize("São Paulo"), normalize("Sao Paulo"));
    }

    #[test]
    fn normalize_keeps_cjk() {
        assert_eq!(normalize("福島県いわき市"), "福島県いわき市");
    }

    proptest! {
        #[test]
        fn escape_round_trips(s in any::<String>()) {
            let e = escape(&s);
            prop_assert!(!e.contains('\t') && !e.contains('\n'));
            prop_assert_eq!(unescape(&e), s);
        }

        #[test]
        fn normalize_is_idempotent(s in any::<String>()) {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }
    }
}
