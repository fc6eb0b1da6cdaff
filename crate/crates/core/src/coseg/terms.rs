//! Resolving free-text part names ("T-Shirt", "trousers") to
//! cosegmentation labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CoSegmentation, CosegEntry};
use crate::backend::{ChatMessage, ChatModel};
use crate::text;

/// Versioned term → canonical label table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymTable {
    pub version: u32,
    pub entries: BTreeMap<String, String>,
}

impl SynonymTable {
    pub fn get(&self, term: &str) -> Option<&str> {
        self.entries.get(term).map(String::as_str)
    }
}

fn resolver_prompt(term: &str, vocabulary: &[String]) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(
            "You map a clothing or body-part phrase to one label from a fixed list. \
             Reply with exactly one label from the list, or `none` if nothing fits. \
             Reply on a single line with no other text.",
        ),
        ChatMessage::user(format!(
            "Labels: {}\nPhrase: {term}\nLabel:",
            vocabulary.join(", ")
        )),
    ]
}

fn parse_resolver_answer(answer: &str, vocabulary: &[String]) -> Option<String> {
    let line = answer.lines().next()?.trim();
    let cleaned = text::clean(line.trim_matches(|c: char| c == '.' || c == '"' || c == '\'' || c == '`'));
    if cleaned == "none" {
        return None;
    }
    vocabulary.iter().find(|v| **v == cleaned).cloned()
}

/// Maps `term` to a label of `vocabulary`, or returns the cleaned lowercase
/// term when no mapping exists.
///
/// Order: exact vocabulary hit, synonym table, the same two on the
/// singularized phrase, then the optional language-model resolver. The
/// resolver may only answer with a vocabulary label; anything else counts as
/// no answer. Resolver transport failures are logged and ignored.
pub fn normalize_term(
    term: &str,
    synonyms: &SynonymTable,
    vocabulary: &[String],
    resolver: Option<&dyn ChatModel>,
) -> String {
    let cleaned = text::strip_determiners(&text::clean(term));
    let table_hit = |t: &str| -> Option<String> {
        if vocabulary.iter().any(|v| v == t) {
            return Some(t.to_string());
        }
        synonyms.get(t).map(str::to_string)
    };
    if let Some(hit) = table_hit(&cleaned) {
        return hit;
    }
    let singular = text::singularize_phrase(&cleaned);
    if let Some(hit) = table_hit(&singular) {
        return hit;
    }
    if let Some(model) = resolver {
        match model.complete(&resolver_prompt(&cleaned, vocabulary)) {
            Ok(answer) => {
                if let Some(label) = parse_resolver_answer(&answer, vocabulary) {
                    return label;
                }
            }
            Err(e) => tracing::warn!(term = %cleaned, error = %e, "term resolver unavailable, using table only"),
        }
    }
    cleaned
}

/// Entry whose label equals the normalized `term`, if any. Absence means
/// the caller should fall back to open-vocabulary segmentation.
pub fn lookup<'c>(
    coseg: &'c CoSegmentation,
    term: &str,
    synonyms: &SynonymTable,
    resolver: Option<&dyn ChatModel>,
) -> Option<&'c CosegEntry> {
    if term.trim().is_empty() {
        return None;
    }
    let labels = coseg.labels();
    let label = normalize_term(term, synonyms, &labels, resolver);
    coseg.get(&label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendError;
    use crate::coseg::Provenance;
    use crate::mask::BinaryMask;
    use proptest::prelude::*;

    fn table() -> SynonymTable {
        SynonymTable {
            version: 1,
            entries: [("t-shirt", "top"), ("trousers", "pants"), ("shoe", "shoes")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }

    fn vocab() -> Vec<String> {
        ["top", "pants", "hair", "shoes"].iter().map(|s| s.to_string()).collect()
    }

    fn coseg() -> CoSegmentation {
        let mut c = CoSegmentation::empty(4, 4);
        for (i, label) in ["pants", "top"].iter().enumerate() {
            let mut m = BinaryMask::new(4, 4).unwrap();
            m.set(i as u32, 0, true);
            c.insert(CosegEntry {
                label: label.to_string(),
                mask: m,
                provenance: Provenance::Parsing,
            })
            .unwrap();
        }
        c
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_term("T-Shirt ", &table(), &vocab(), None), "top");
        assert_eq!(normalize_term("pants", &table(), &vocab(), None), "pants");
        assert_eq!(normalize_term("the Trousers", &table(), &vocab(), None), "pants");
        assert_eq!(normalize_term("shoes", &table(), &vocab(), None), "shoes");
        assert_eq!(normalize_term("Brooch", &table(), &vocab(), None), "brooch");
    }

    #[test]
    fn resolver_is_vocabulary_guarded() {
        let liar = |_: &[ChatMessage]| -> Result<String, BackendError> { Ok("unicorn-saddle".into()) };
        assert_eq!(normalize_term("saddle", &table(), &vocab(), Some(&liar)), "saddle");
        let helpful = |_: &[ChatMessage]| -> Result<String, BackendError> { Ok("Pants.".into()) };
        assert_eq!(normalize_term("chinos", &table(), &vocab(), Some(&helpful)), "pants");
        let down = |_: &[ChatMessage]| -> Result<String, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        };
        assert_eq!(normalize_term("chinos", &table(), &vocab(), Some(&down)), "chinos");
        // table hits never consult the resolver
        let panics = |_: &[ChatMessage]| -> Result<String, BackendError> { panic!("called") };
        assert_eq!(normalize_term("t-shirt", &table(), &vocab(), Some(&panics)), "top");
    }

    #[test]
    fn lookup_examples() {
        let c = coseg();
        assert_eq!(lookup(&c, "trousers", &table(), None).unwrap().label, "pants");
        assert_eq!(lookup(&c, "  PANTS ", &table(), None).unwrap().label, "pants");
        assert!(lookup(&c, "brooch", &table(), None).is_none());
    }

    proptest! {
        #[test]
        fn lookup_invariant_under_normalization(term in "[A-Za-z -]{1,16}") {
            prop_assume!(!term.trim().is_empty());
            let c = coseg();
            let labels = c.labels();
            let normalized = normalize_term(&term, &table(), &labels, None);
            let direct = lookup(&c, &term, &table(), None).map(|e| e.label.clone());
            let via = lookup(&c, &normalized, &table(), None).map(|e| e.label.clone());
            prop_assert_eq!(direct, via);
            prop_assert_eq!(normalize_term(&normalized, &table(), &labels, None), normalized.clone());
        }
    }
}
