/// Normalizes review text.
///
/// Lowercases, drops URL tokens (`scheme://…` or `www.…`) and `@mention`
/// tokens, keeps hashtag words without the `#`, removes every character
/// outside `[a-z0-9' ]`, and collapses whitespace.
pub fn clean_text(raw: &str) -> String {
    let lower = raw.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for token in lower.split_whitespace() {
        if token.contains("://") || token.starts_with("www.") || token.starts_with('@') {
            continue;
        }
        let kept: String = token
            .chars()
            .filter(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == '\'')
            .collect();
        if kept.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&kept);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(clean_text("Great stay! http://x.co @bob #fun"), "great stay fun");
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text("ALREADY clean text"), "already clean text");
    }

    #[test]
    fn urls_mentions_and_whitespace() {
        assert_eq!(clean_text("see www.hotel.com   or HTTPS://a.b/c?d=1 now"), "see or now");
        assert_eq!(clean_text("  \tthanks @front_desk!!\n"), "thanks");
        assert_eq!(clean_text("it's   #SoGood :)"), "it's sogood");
        assert_eq!(clean_text("café 10/10"), "caf 1010");
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,80}") {
            let once = clean_text(&s);
            prop_assert_eq!(clean_text(&once), once.clone());
            prop_assert!(once.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '\'' || c == ' '));
            prop_assert!(!once.contains("  ") && once.trim() == once);
        }
    }
}
