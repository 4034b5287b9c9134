use std::collections::HashSet;
use std::sync::OnceLock;

/// Version tag of the bundled stopword list; bump when the file changes.
pub const STOPWORDS_VERSION: &str = "en-v1";

const STOPWORDS_EN_V1: &str = include_str!("stopwords_en_v1.txt");

/// Shortest token kept by [`tokenize_title`].
pub const MIN_TOKEN_LEN: usize = 2;

/// The bundled English stopword list.
pub fn default_stopwords() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_EN_V1
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect()
    })
}

/// Splits a paper title into keyword tokens.
///
/// Lowercases, splits on every non-alphanumeric character, drops stopwords
/// and tokens shorter than [`MIN_TOKEN_LEN`], and keeps the first occurrence
/// of each token in title order.
pub fn tokenize_title(title: &str, stopwords: &HashSet<String>) -> Vec<String> {
    let lower = title.to_lowercase();
    let mut seen = HashSet::new();
    lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|tok| tok.chars().count() >= MIN_TOKEN_LEN)
        .filter(|tok| !stopwords.contains(*tok))
        .filter(|tok| seen.insert(tok.to_string()))
        .map(str::to_owned)
        .collect()
}
