//! Word-level helpers shared by the rule-based recommenders.

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "to", "of", "for", "in", "on", "at", "by", "with", "it",
    "its", "is", "be", "as", "so", "that", "this", "i", "we", "want", "should", "must", "my", "our",
    "your", "from", "into", "up", "out", "make", "feel", "like",
];

/// Strips one common inflectional suffix, keeping at least four characters.
pub(crate) fn stem(word: &str) -> String {
    const SUFFIXES: &[(&str, &str)] = &[
        ("ies", "y"),
        ("ing", ""),
        ("ed", ""),
        ("es", ""),
        ("ly", ""),
        ("s", ""),
    ];
    for (suffix, replacement) in SUFFIXES {
        if let Some(root) = word.strip_suffix(suffix) {
            if root.chars().count() + replacement.len() >= 4 && !root.ends_with('s') {
                return format!("{root}{replacement}");
            }
        }
    }
    word.to_owned()
}

/// Alphanumeric runs, also split at lower-to-upper camel-case boundaries.
fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut prev_lower = false;
    for c in text.chars() {
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            prev_lower = false;
            continue;
        }
        if c.is_uppercase() && prev_lower && !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        prev_lower = c.is_lowercase() || c.is_numeric();
        cur.push(c);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Lower-cased, stemmed word tokens in order.
pub(crate) fn tokens(text: &str) -> Vec<String> {
    words(text)
        .into_iter()
        .map(|w| stem(&w.to_lowercase()))
        .collect()
}

/// Tokens with stopwords removed.
pub(crate) fn content_words(text: &str) -> Vec<String> {
    words(text)
        .into_iter()
        .map(|w| w.to_lowercase())
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .map(|w| stem(&w))
        .collect()
}

/// Whether `phrase` occurs in `haystack` as a run of whole (stemmed) words.
pub(crate) fn contains_phrase(haystack: &[String], phrase: &str) -> bool {
    let needle = tokens(phrase);
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle.as_slice())
}

/// Phrases from `keywords` found in `text`, in keyword order.
pub(crate) fn matched_keywords<'k>(text: &str, keywords: &[&'k str]) -> Vec<&'k str> {
    let hay = tokens(text);
    keywords
        .iter()
        .copied()
        .filter(|k| contains_phrase(&hay, k))
        .collect()
}

/// Truncates to at most `max` characters at a word boundary, appending an ellipsis.
/// Returns the text unchanged when it already fits.
pub(crate) fn truncate_words(text: &str, max: usize) -> (String, bool) {
    if text.chars().count() <= max {
        return (text.to_owned(), false);
    }
    let budget = max.saturating_sub(1);
    let head: String = text.chars().take(budget).collect();
    let cut = match head.rfind(char::is_whitespace) {
        Some(i) if i > 0 => head[..i].trim_end().to_owned(),
        _ => head,
    };
    (format!("{cut}…"), true)
}
