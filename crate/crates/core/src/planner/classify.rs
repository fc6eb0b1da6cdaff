use std::sync::LazyLock;

use regex::Regex;

use super::{ask_line, Category, Derivation, EditTask, PlannerError};
use crate::backend::{ChatMessage, ChatModel};
use crate::text;

const COLORS: &[&str] = &[
    "red", "blue", "green", "yellow", "black", "white", "pink", "purple", "orange", "brown", "grey",
    "gray", "beige", "navy", "maroon", "teal", "gold", "golden", "silver", "cream", "khaki", "olive",
    "turquoise", "violet", "lavender", "burgundy", "cyan", "magenta", "tan", "ivory", "coral", "mint",
    "indigo", "charcoal", "crimson", "emerald", "scarlet", "lilac", "mustard", "peach", "rose", "ruby",
    "sapphire", "aqua", "amber", "bronze", "copper", "fuchsia", "plum", "wine", "blonde", "blond",
];

const SHADES: &[&str] = &[
    "light", "dark", "bright", "pale", "deep", "pastel", "neon", "hot", "baby", "royal", "sky",
    "forest", "dusty", "muted", "vivid", "soft", "and", "colored", "coloured", "ish",
];

const PRONOUNS: &[&str] = &["it", "them", "this", "that", "everything", "something", "her", "him", "me", "things"];

/// "navy blue", "black and white", "light-grey": only colour words and
/// shade modifiers, at least one colour.
pub fn is_color_phrase(s: &str) -> bool {
    let parts: Vec<String> = text::tokens(s)
        .iter()
        .flat_map(|t| t.split('-').map(str::to_string).collect::<Vec<_>>())
        .filter(|p| !p.is_empty())
        .collect();
    !parts.is_empty()
        && parts.iter().all(|p| COLORS.contains(&p.as_str()) || SHADES.contains(&p.as_str()))
        && parts.iter().any(|p| COLORS.contains(&p.as_str()))
}

fn strip_prefix_words(s: &str, prefixes: &[&str]) -> String {
    let mut s = s.to_string();
    loop {
        let before = s.clone();
        for p in prefixes {
            if let Some(rest) = s.strip_prefix(p) {
                if rest.starts_with(' ') {
                    s = rest.trim_start().to_string();
                }
            }
        }
        if s == before {
            return s;
        }
    }
}

fn prepare(clause: &str) -> String {
    let s = text::clean(clause);
    let s = s.trim_end_matches(['.', '!', '?', ',', ';']).trim().to_string();
    let s = strip_prefix_words(
        &s,
        &[
            "please", "kindly", "can you", "could you", "would you", "i want to", "i'd like to",
            "i would like to", "let's", "also", "and", "then", "now", "just",
        ],
    );
    let mut s = s;
    for suffix in [" please", " instead", " too", " as well", " for me", " now"] {
        if let Some(rest) = s.strip_suffix(suffix) {
            s = rest.to_string();
        }
    }
    s
}

fn core_phrase(s: &str) -> String {
    let s = text::strip_determiners(&text::clean(s));
    let s = s.strip_prefix("pair of ").map(str::to_string).unwrap_or(s);
    let s = text::strip_determiners(&s);
    let s = s.strip_prefix("new ").map(str::to_string).unwrap_or(s);
    s.trim_matches(|c: char| c == '"' || c == '\'' || c == ',' || c == '.').trim().to_string()
}

fn norm_source(s: &str) -> String {
    text::singularize_phrase(&core_phrase(s))
}

fn norm_target(s: &str) -> String {
    core_phrase(s)
}

/// Recoloring target always names the object: "red" on "pants" becomes
/// "red pants"; "red pants" stays.
fn recolor_target(source: &str, appearance: &str) -> String {
    let mut e = core_phrase(appearance);
    for tail in [" ones", " one", " color", " colour"] {
        if let Some(rest) = e.strip_suffix(tail) {
            e = rest.to_string();
        }
    }
    let head = source.split_whitespace().last().unwrap_or(source);
    let mentions = text::tokens(&e)
        .iter()
        .any(|t| t == head || text::singularize_word(t) == text::singularize_word(head));
    if mentions {
        e
    } else {
        format!("{e} {source}")
    }
}

/// Target that is only a colour, optionally followed by "one(s)" or the
/// source's own words.
fn is_recolor_target(source: &str, target: &str) -> bool {
    let t = core_phrase(target);
    let t = t.strip_suffix(" ones").or_else(|| t.strip_suffix(" one")).unwrap_or(&t).to_string();
    if is_color_phrase(&t) {
        return true;
    }
    let src = core_phrase(source);
    t.strip_suffix(&src)
        .or_else(|| t.strip_suffix(&text::singularize_phrase(&src)))
        .map(|color| is_color_phrase(color.trim()))
        .unwrap_or(false)
}

fn split_trailing_color(rest: &str) -> Option<(String, String)> {
    let words: Vec<&str> = rest.split_whitespace().collect();
    (1..words.len())
        .find(|&k| is_color_phrase(&words[k..].join(" ")))
        .map(|k| (words[..k].join(" "), words[k..].join(" ")))
}

#[derive(Clone, Copy)]
enum Rule {
    Recolor,
    RecolorTrailing,
    ReplaceOrRecolor,
    Remove,
    Add,
}

static RULES: LazyLock<Vec<(Regex, Rule)>> = LazyLock::new(|| {
    let r = |p: &str| Regex::new(p).expect("static pattern");
    vec![
        (r(r"^(?:change|switch|turn|make|alter|set) (?:the )?colou?r of (?P<o>.+?) (?:to|into|in|as) (?P<e>.+)$"), Rule::Recolor),
        (r(r"^(?:change|switch|turn|make|alter) (?P<o>.+?)(?:'s|s'|') colou?r (?:to|into|in) (?P<e>.+)$"), Rule::Recolor),
        (r(r"^(?:recolou?r|colou?r|dye|paint|tint) (?P<o>.+?) (?:to|into|in|with) (?P<e>.+)$"), Rule::Recolor),
        (r(r"^replace (?P<o>.+?) (?:with|by|for) (?P<e>.+)$"), Rule::ReplaceOrRecolor),
        (r(r"^(?:swap|switch|exchange|trade) (?:out )?(?P<o>.+?) (?:for|with|to|into) (?P<e>.+)$"), Rule::ReplaceOrRecolor),
        (r(r"^substitute (?P<e>.+?) for (?P<o>.+)$"), Rule::ReplaceOrRecolor),
        (r(r"^(?:remove|delete|erase|drop|eliminate|lose|ditch) (?P<o>.+?)(?: (?:from|off|on|around|in) .+)?$"), Rule::Remove),
        (r(r"^take (?:off|away) (?P<o>.+)$"), Rule::Remove),
        (r(r"^take (?P<o>.+?) (?:off|away)(?: .+)?$"), Rule::Remove),
        (r(r"^get rid of (?P<o>.+)$"), Rule::Remove),
        (r(r"^(?:have|let|make) (?:her|him|them|the person|the model|the woman|the man) (?:take off|remove) (?P<o>.+)$"), Rule::Remove),
        (r(r"^(?:add|attach|include) (?P<e>.+?)(?: (?:to|on|onto|around|at|over|in) .+)?$"), Rule::Add),
        (r(r"^put on (?P<e>.+?)(?: (?:to|on|onto|around|at|over) .+)?$"), Rule::Add),
        (r(r"^put (?P<e>.+?) (?:on|onto|around)(?: .+)?$"), Rule::Add),
        (r(r"^(?:wear|don) (?P<e>.+)$"), Rule::Add),
        (r(r"^(?:let|have|make) (?:her|him|them|the person|the model|the woman|the man) (?:wear|put on|don) (?P<e>.+)$"), Rule::Add),
        (r(r"^give (?:her|him|them|the person|the model|the woman|the man) (?P<e>.+)$"), Rule::Add),
        (r(r"^(?:change|turn|transform|convert|make) (?P<o>.+?) (?:to|into) (?P<e>.+)$"), Rule::ReplaceOrRecolor),
        (r(r"^(?:change|turn|transform|convert|make) (?P<o>.+?) (?:with|for|in) (?P<e>.+)$"), Rule::ReplaceOrRecolor),
        (r(r"^(?:make|turn|get|dye|paint|tint|recolou?r|colou?r) (?P<rest>.+)$"), Rule::RecolorTrailing),
    ]
});

fn unclassifiable(clause: &str, reason: &str) -> PlannerError {
    PlannerError::Classification {
        clause: clause.to_string(),
        reason: reason.to_string(),
    }
}

fn build(clause: &str, category: Category, o: Option<&str>, e: Option<&str>) -> Result<EditTask, PlannerError> {
    let source = o.map(norm_source);
    if let Some(s) = &source {
        if s.is_empty() || PRONOUNS.contains(&s.as_str()) {
            return Err(unclassifiable(clause, "it does not say which item to edit"));
        }
    }
    let target = match (category, e) {
        (Category::Recoloring, Some(e)) => Some(recolor_target(source.as_deref().unwrap_or(""), e)),
        (_, Some(e)) => Some(norm_target(e)),
        (_, None) => None,
    };
    if target.as_deref() == Some("") {
        return Err(unclassifiable(clause, "it does not say what the result should be"));
    }
    EditTask::new(category, source, target, clause).map_err(|e| unclassifiable(clause, &e.to_string()))
}

/// Keyword-rule classification.
pub fn classify_with_rules(clause: &str) -> Result<EditTask, PlannerError> {
    if clause.trim().is_empty() {
        return Err(PlannerError::EmptyInput("clause"));
    }
    let s = prepare(clause);
    for (re, rule) in RULES.iter() {
        let Some(caps) = re.captures(&s) else { continue };
        let o = caps.name("o").map(|m| m.as_str());
        let e = caps.name("e").map(|m| m.as_str());
        return match rule {
            Rule::Recolor => build(clause, Category::Recoloring, o, e),
            Rule::ReplaceOrRecolor => {
                let (o, e) = (o.unwrap_or(""), e.unwrap_or(""));
                let category = if is_recolor_target(o, e) {
                    Category::Recoloring
                } else {
                    Category::Replacement
                };
                build(clause, category, Some(o), Some(e))
            }
            Rule::Remove => build(clause, Category::Removal, o, None),
            Rule::Add => build(clause, Category::Addition, None, e),
            Rule::RecolorTrailing => match split_trailing_color(caps.name("rest").map_or("", |m| m.as_str())) {
                Some((o, e)) => build(clause, Category::Recoloring, Some(&o), Some(&e)),
                None => Err(unclassifiable(clause, "no garment edit recognised")),
            },
        };
    }
    Err(unclassifiable(clause, "no garment edit recognised"))
}

pub fn classify_prompt(clause: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(
            "You classify one fashion image editing instruction into exactly one category: \
             replacement (swap an item for a different item), recoloring (change an item's \
             colour), addition (put a new item on the person) or removal (take an item away). \
             Reply on a single line as `category|source item|target item`, writing `-` for a \
             field that does not apply: removal has no target and addition has no source. For \
             recoloring the target is the new colour.",
        ),
        ChatMessage::user(clause.trim().to_string()),
    ]
}

fn parse_classification(line: &str) -> Option<(Category, Option<String>, Option<String>)> {
    let fields: Vec<&str> = line.trim_matches('`').split('|').map(str::trim).collect();
    let [cat, o, e] = fields.as_slice() else { return None };
    let category = Category::parse(cat)?;
    let field = |f: &str| {
        let c = text::clean(f);
        (!matches!(c.as_str(), "" | "-" | "none" | "n/a" | "null")).then_some(c)
    };
    Some((category, field(o), field(e)))
}

#[derive(Debug)]
pub enum ModelClassifyFailure {
    Unavailable,
    OffFormat(String),
    Invalid(PlannerError),
}

/// Model-only classification (used for scoring backends). A well-formed
/// reply that violates the task invariants is `Invalid`, never repaired.
pub fn classify_with_model(clause: &str, model: &dyn ChatModel) -> Result<EditTask, ModelClassifyFailure> {
    let (category, o, e) = ask_line(model, &classify_prompt(clause), parse_classification).map_err(|r| match r {
        None => ModelClassifyFailure::Unavailable,
        Some(reply) => ModelClassifyFailure::OffFormat(reply),
    })?;
    build(clause, category, o.as_deref(), e.as_deref()).map_err(ModelClassifyFailure::Invalid)
}

/// Model classification with keyword fallback when the model is absent,
/// unavailable or off-format.
pub fn classify_task(clause: &str, model: Option<&dyn ChatModel>) -> Result<(EditTask, Derivation), PlannerError> {
    if clause.trim().is_empty() {
        return Err(PlannerError::EmptyInput("clause"));
    }
    if let Some(m) = model {
        match classify_with_model(clause, m) {
            Ok(task) => return Ok((task, Derivation::Model)),
            Err(ModelClassifyFailure::Invalid(e)) => return Err(e),
            Err(_) => tracing::warn!(clause, "task classification degraded to keyword rules"),
        }
    }
    classify_with_rules(clause).map(|t| (t, Derivation::Fallback))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendError;

    fn rules(clause: &str) -> (Category, Option<String>, Option<String>) {
        let t = classify_with_rules(clause).unwrap_or_else(|e| panic!("{clause}: {e}"));
        (t.category, t.source_desc, t.target_desc)
    }

    fn s(v: &str) -> Option<String> {
        Some(v.to_string())
    }

    #[test]
    fn keyword_examples() {
        assert_eq!(rules("change the color of pants to red"), (Category::Recoloring, s("pants"), s("red pants")));
        assert_eq!(rules("remove necklaces"), (Category::Removal, s("necklace"), None));
        assert_eq!(rules("replace the vest with a white t-shirt"), (Category::Replacement, s("vest"), s("white t-shirt")));
        assert_eq!(rules("Please add a watch to her left wrist."), (Category::Addition, None, s("watch")));
        assert_eq!(rules("make the t-shirt blue instead"), (Category::Recoloring, s("t-shirt"), s("blue t-shirt")));
        assert_eq!(rules("dye the jeans navy blue"), (Category::Recoloring, s("jeans"), s("navy blue jeans")));
        assert_eq!(rules("take off the hat"), (Category::Removal, s("hat"), None));
        assert_eq!(rules("let her wear a pair of sunglasses"), (Category::Addition, None, s("sunglasses")));
        assert_eq!(rules("change the skirt into jeans"), (Category::Replacement, s("skirt"), s("jeans")));
        assert_eq!(rules("replace the pants with red ones"), (Category::Recoloring, s("pants"), s("red pants")));
        assert_eq!(rules("swap the coat for a leather jacket"), (Category::Replacement, s("coat"), s("leather jacket")));
        assert_eq!(rules("get rid of the scarf"), (Category::Removal, s("scarf"), None));
        assert_eq!(rules("put a hat on her head"), (Category::Addition, None, s("hat")));
    }

    #[test]
    fn unmappable_clauses() {
        for c in ["make it pop", "hello there", "make it red", "dye the hair"] {
            assert!(
                matches!(classify_with_rules(c), Err(PlannerError::Classification { .. })),
                "{c}"
            );
        }
    }

    #[test]
    fn colour_phrases() {
        assert!(is_color_phrase("navy blue"));
        assert!(is_color_phrase("black and white"));
        assert!(is_color_phrase("light-grey"));
        assert!(!is_color_phrase("leather"));
        assert!(!is_color_phrase("and"));
    }

    #[test]
    fn model_path_and_invariant_coercion() {
        let ok = |_: &[ChatMessage]| -> Result<String, BackendError> { Ok("recoloring|pants|red".into()) };
        let (t, how) = classify_task("anything", Some(&ok)).unwrap();
        assert_eq!((t.category, t.target_desc.as_deref(), how), (Category::Recoloring, Some("red pants"), Derivation::Model));

        let bad = |_: &[ChatMessage]| -> Result<String, BackendError> { Ok("removal|pants|skirt".into()) };
        assert!(matches!(
            classify_task("remove the pants", Some(&bad)),
            Err(PlannerError::Classification { .. })
        ));

        let junk = |_: &[ChatMessage]| -> Result<String, BackendError> { Ok("I think it is removal".into()) };
        let (t, how) = classify_task("remove the pants", Some(&junk)).unwrap();
        assert_eq!((t.category, how), (Category::Removal, Derivation::Fallback));
    }
}
