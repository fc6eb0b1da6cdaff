//! Small text normalization helpers shared by term resolution, the
//! deterministic planner and the eval scorer.

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "her", "his", "their", "my", "your", "its", "this", "that", "these", "those",
    "some",
];

/// Nouns whose singular form ends in `s`.
const SINGULAR_S: &[&str] = &[
    "pants", "trousers", "jeans", "shorts", "leggings", "glasses", "sunglasses", "spectacles",
    "dress", "clothes", "tights", "overalls", "slacks", "sweatpants", "goggles", "dungarees", "boss",
    "canvas", "lens",
];

/// Lowercase, trim and collapse internal whitespace.
pub fn clean(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn strip_determiners(s: &str) -> String {
    let mut words: Vec<&str> = s.split_whitespace().collect();
    while words.len() > 1 && DETERMINERS.contains(&words[0]) {
        words.remove(0);
    }
    words.join(" ")
}

pub fn singularize_word(word: &str) -> String {
    if SINGULAR_S.contains(&word) || word.len() <= 3 {
        return word.to_string();
    }
    for suffix in ["sses", "ches", "shes", "xes"] {
        if word.ends_with(suffix) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.ends_with("ies") && word.len() > 4 {
        return format!("{}y", &word[..word.len() - 3]);
    }
    if word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

/// Singularize the head (last) word of a noun phrase.
pub fn singularize_phrase(phrase: &str) -> String {
    let mut words: Vec<String> = phrase.split_whitespace().map(str::to_string).collect();
    if let Some(last) = words.last_mut() {
        *last = singularize_word(last);
    }
    words.join(" ")
}

/// Lowercase alphanumeric tokens; hyphenated words stay whole.
pub fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .map(|t| t.trim_matches(|c: char| c == '-' || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// True when `needle`'s tokens appear contiguously in `haystack`'s tokens.
pub fn contains_phrase(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
