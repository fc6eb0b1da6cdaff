//! Shipped data tables, embedded at compile time.

use serde::Deserialize;

use crate::automask::OcclusionRuleTable;
use crate::coseg::{DerivedSemanticRule, FusionRuleTable, SynonymTable};

pub const VOCABULARIES_JSON: &str = include_str!("../data/vocabularies.json");
pub const FUSION_RULES_JSON: &str = include_str!("../data/fusion_rules.json");
pub const DERIVED_SEMANTICS_JSON: &str = include_str!("../data/derived_semantics.json");
pub const SYNONYMS_JSON: &str = include_str!("../data/synonyms.json");
pub const OCCLUSION_RULES_JSON: &str = include_str!("../data/occlusion_rules.json");
pub const PROMPTS_JSON: &str = include_str!("../data/prompts.json");
pub const CORPUS_JSONL: &str = include_str!("../data/corpus.jsonl");

#[derive(Deserialize)]
struct Vocabularies {
    parsing: Vec<String>,
    pose: Vec<String>,
    cosegmentation: Vec<String>,
}

#[derive(Deserialize)]
struct Prompts {
    negative_prompt: String,
}

fn parse<T: serde::de::DeserializeOwned>(name: &str, json: &str) -> T {
    serde_json::from_str(json).unwrap_or_else(|e| panic!("embedded {name} is malformed: {e}"))
}

fn vocabularies() -> Vocabularies {
    parse("vocabularies.json", VOCABULARIES_JSON)
}

pub fn parsing_vocabulary() -> Vec<String> {
    vocabularies().parsing
}

pub fn pose_vocabulary() -> Vec<String> {
    vocabularies().pose
}

/// Canonical cosegmentation labels, `background` first.
pub fn coseg_vocabulary() -> Vec<String> {
    vocabularies().cosegmentation
}

pub fn fusion_rules() -> FusionRuleTable {
    parse("fusion_rules.json", FUSION_RULES_JSON)
}

pub fn derived_semantics() -> Vec<DerivedSemanticRule> {
    parse("derived_semantics.json", DERIVED_SEMANTICS_JSON)
}

pub fn synonyms() -> SynonymTable {
    parse("synonyms.json", SYNONYMS_JSON)
}

pub fn occlusion_rules() -> OcclusionRuleTable {
    parse("occlusion_rules.json", OCCLUSION_RULES_JSON)
}

pub fn negative_prompt() -> String {
    parse::<Prompts>("prompts.json", PROMPTS_JSON).negative_prompt
}

/// Every label a lookup may resolve to: cosegmentation labels plus the
/// names of shipped derived semantics.
pub fn resolvable_labels() -> Vec<String> {
    let mut labels = coseg_vocabulary();
    labels.extend(derived_semantics().into_iter().map(|r| r.name));
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn tables_parse_and_validate() {
        fusion_rules().validate().unwrap();
        for rule in derived_semantics() {
            rule.validate().unwrap();
        }
        assert!(!negative_prompt().is_empty());
    }

    #[test]
    fn fusion_tables_agree_with_vocabularies() {
        let parsing: HashSet<_> = parsing_vocabulary().into_iter().collect();
        let pose: HashSet<_> = pose_vocabulary().into_iter().collect();
        let coseg: HashSet<_> = coseg_vocabulary().into_iter().collect();
        let table = fusion_rules();
        for r in &table.rules {
            assert!(parsing.contains(&r.parsing), "{}", r.parsing);
            assert!(pose.contains(&r.pose), "{}", r.pose);
            assert!(coseg.contains(&r.fused), "{}", r.fused);
        }
        for p in &table.passthrough {
            assert!(parsing.contains(p) && coseg.contains(p), "{p}");
        }
        let produced: HashSet<_> = table.output_labels().into_iter().collect();
        for label in &coseg {
            assert!(label == "background" || produced.contains(label), "{label} never produced");
        }
    }

    #[test]
    fn synonyms_map_to_canonical_labels() {
        let labels: HashSet<_> = resolvable_labels().into_iter().collect();
        for (term, target) in &synonyms().entries {
            assert!(!labels.contains(term), "synonym key `{term}` is itself canonical");
            assert!(labels.contains(target), "synonym `{term}` -> unknown `{target}`");
        }
    }

    #[test]
    fn occlusion_labels_are_resolvable() {
        let labels: HashSet<_> = resolvable_labels().into_iter().collect();
        for rule in &occlusion_rules().rules {
            for l in &rule.labels {
                assert!(labels.contains(l), "occlusion label `{l}`");
            }
        }
    }

    #[test]
    fn vocabularies_have_expected_sizes() {
        assert_eq!(parsing_vocabulary().len(), 20);
        assert_eq!(pose_vocabulary().len(), 15);
        assert_eq!(coseg_vocabulary()[0], "background");
    }
}
