use super::{ask_line, Derivation, PlannerError};
use crate::backend::{ChatMessage, ChatModel};

/// First words that open an edit instruction.
const EDIT_VERBS: &[&str] = &[
    "replace", "swap", "switch", "exchange", "substitute", "change", "turn", "transform", "convert",
    "make", "recolor", "recolour", "dye", "paint", "tint", "color", "colour", "remove", "delete",
    "erase", "drop", "eliminate", "take", "get", "lose", "ditch", "add", "put", "wear", "give",
    "attach", "let", "have",
];

/// Words that may sit between two instructions.
const CONNECTORS: &[&str] = &["and", "then", "also", "plus", "finally", "lastly", "next", "afterwards"];

fn bare(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric() && c != '-')
        .to_lowercase()
}

fn starts_instruction(words: &[&str], mut i: usize) -> bool {
    while i < words.len() && CONNECTORS.contains(&bare(words[i]).as_str()) {
        i += 1;
    }
    words.get(i).is_some_and(|w| {
        let b = bare(w);
        EDIT_VERBS.contains(&b.as_str()) || b == "please"
    })
}

fn skip_connectors(words: &[&str], mut i: usize) -> usize {
    while i < words.len() && CONNECTORS.contains(&bare(words[i]).as_str()) {
        i += 1;
    }
    i
}

fn tidy(clause: &str) -> String {
    clause
        .trim()
        .trim_end_matches(['.', '!', ',', ';'])
        .trim()
        .to_string()
}

/// Rule-based splitting: `;` always separates; `,` and connector words
/// ("and", "then", ...) separate only when an edit verb follows.
pub fn split_deterministic(requirement: &str) -> Vec<String> {
    let mut clauses = Vec::new();
    for segment in requirement.split(';') {
        let words: Vec<&str> = segment.split_whitespace().collect();
        let mut current: Vec<String> = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let w = words[i];
            let is_connector = CONNECTORS.contains(&bare(w).as_str());
            if is_connector && !current.is_empty() && starts_instruction(&words, i) {
                clauses.push(tidy(&current.join(" ")));
                current.clear();
                i = skip_connectors(&words, i);
                continue;
            }
            if w.ends_with(',') && starts_instruction(&words, i + 1) {
                current.push(w.trim_end_matches(',').to_string());
                clauses.push(tidy(&current.join(" ")));
                current.clear();
                i = skip_connectors(&words, i + 1);
                continue;
            }
            current.push(w.to_string());
            i += 1;
        }
        if !current.is_empty() {
            clauses.push(tidy(&current.join(" ")));
        }
    }
    clauses.retain(|c| !c.is_empty());
    clauses
}

pub fn split_prompt(requirement: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(
            "You split a fashion image editing request into atomic editing instructions, in the \
             order given. Reply on a single line with the instructions separated by ` | `. Keep \
             the user's wording; do not add, merge or drop instructions.",
        ),
        ChatMessage::user(requirement.trim().to_string()),
    ]
}

fn parse_split(line: &str) -> Option<Vec<String>> {
    let clauses: Vec<String> = line.split('|').map(tidy).collect();
    (!clauses.is_empty() && clauses.iter().all(|c| !c.is_empty())).then_some(clauses)
}

/// Model-only splitting (used for scoring backends): no fallback.
pub fn split_with_model(requirement: &str, model: &dyn ChatModel) -> Result<Vec<String>, Option<String>> {
    ask_line(model, &split_prompt(requirement), parse_split)
}

/// Ordered clause list; falls back to [`split_deterministic`] when the
/// model is absent, unavailable or off-format.
pub fn split_requirements(
    requirement: &str,
    model: Option<&dyn ChatModel>,
) -> Result<(Vec<String>, Derivation), PlannerError> {
    if requirement.trim().is_empty() {
        return Err(PlannerError::EmptyInput("requirement"));
    }
    if let Some(m) = model {
        if let Ok(clauses) = split_with_model(requirement, m) {
            return Ok((clauses, Derivation::Model));
        }
        tracing::warn!("task splitting degraded to rule-based mode");
    }
    let clauses = split_deterministic(requirement);
    if clauses.is_empty() {
        return Err(PlannerError::EmptyInput("requirement"));
    }
    Ok((clauses, Derivation::Fallback))
}
