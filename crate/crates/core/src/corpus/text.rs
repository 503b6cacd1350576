//! Cleaning and tokenization of sentence text.

/// Replaces tabs, line breaks and other control characters with spaces,
/// collapses whitespace runs and trims. Everything else is kept verbatim.
pub fn clean_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_whitespace() || ch.is_control() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        out.push(ch);
    }
    out
}

/// Splits cleaned text into word, marker and symbol tokens.
///
/// Alphanumeric runs become lowercased word tokens. A `@` directly followed
/// by alphanumerics is a marker token (`@xcite`, `@xmath12`) and is kept
/// whole. Any other non-space character is a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut chars = chunk.char_indices().peekable();
        while let Some((start, ch)) = chars.next() {
            let is_marker = ch == '@'
                && chars
                    .peek()
                    .map(|&(_, next)| next.is_alphanumeric())
                    .unwrap_or(false);
            if is_marker || ch.is_alphanumeric() {
                let mut end = start + ch.len_utf8();
                while let Some(&(i, next)) = chars.peek() {
                    if !next.is_alphanumeric() {
                        break;
                    }
                    end = i + next.len_utf8();
                    chars.next();
                }
                tokens.push(chunk[start..end].to_lowercase());
            } else {
                tokens.push(ch.to_string());
            }
        }
    }
    tokens
}

/// True when the token has no alphanumeric character.
pub fn is_punctuation(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
}

pub fn word_count<S: AsRef<str>>(tokens: &[S]) -> usize {
    tokens.iter().filter(|t| !is_punctuation(t.as_ref())).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clean_collapses_service_characters() {
        assert_eq!(clean_text("a\tb\n c"), "a b c");
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text("x  --  y"), "x -- y");
        assert_eq!(clean_text("\r\n lead and trail \u{0007}"), "lead and trail");
    }

    #[test]
    fn tokenize_splits_punctuation() {
        assert_eq!(tokenize("The cat, sat."), ["the", "cat", ",", "sat", "."]);
    }

    #[test]
    fn tokenize_keeps_markers_whole() {
        assert_eq!(tokenize("see @xcite ."), ["see", "@xcite", "."]);
        assert_eq!(tokenize("x @xmath12 holds"), ["x", "@xmath12", "holds"]);
        assert_eq!(tokenize("(@xcite)"), ["(", "@xcite", ")"]);
        // a lone @ is a symbol
        assert_eq!(tokenize("a @ b"), ["a", "@", "b"]);
    }

    #[test]
    fn tokenize_symbols_one_per_char() {
        assert_eq!(tokenize("x -- y"), ["x", "-", "-", "y"]);
        assert_eq!(tokenize("3.14%"), ["3", ".", "14", "%"]);
    }

    #[test]
    fn word_count_skips_punctuation() {
        let toks = tokenize("a , b ( c ) .");
        assert_eq!(word_count(&toks), 3);
        assert_eq!(toks.len(), 7);
    }

    proptest! {
        #[test]
        fn clean_text_has_no_service_chars(s in "[ -~\t\n\r\u{0}-\u{1f}]{0,60}") {
            let c = clean_text(&s);
            prop_assert!(!c.chars().any(|ch| ch.is_control()));
            prop_assert!(!c.contains("  "));
            prop_assert_eq!(c.trim(), c.as_str());
        }

        #[test]
        fn tokens_preserve_symbol_content(s in "[a-zA-Z0-9@,.;:()\\- ]{0,80}") {
            let cleaned = clean_text(&s);
            let toks = tokenize(&cleaned);
            let joined: String = toks.concat();
            let expected: String = cleaned
                .chars()
                .filter(|c| !c.is_whitespace())
                .collect::<String>()
                .to_lowercase();
            prop_assert_eq!(joined, expected);
            prop_assert!(toks.iter().all(|t| !t.is_empty() && !t.contains(' ')));
        }
    }
}
