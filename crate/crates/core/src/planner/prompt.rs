use super::{ask_line, single_line, Category, Derivation, EditTask, GenerationPrompt, VqaExchange};
use crate::backend::{ChatMessage, ChatModel, VisualQa};
use crate::store::ContentHash;
use crate::text;

/// Question put to the VQA backend. Removal asks about the surroundings
/// that should fill the hole rather than the item itself.
pub fn vqa_question(task: &EditTask) -> String {
    match task.category {
        Category::Removal => format!(
            "What is around the {}? Describe the clothing, skin and background next to it.",
            task.source()
        ),
        Category::Addition => "What is the person wearing? Describe the outfit, its colours and the pose.".to_string(),
        Category::Replacement | Category::Recoloring => format!(
            "What does the {} look like? Describe its colour, material, pattern and fit.",
            task.source()
        ),
    }
}

fn forbidden_tokens(task: &EditTask) -> Vec<String> {
    let mut out = Vec::new();
    for t in text::tokens(task.source()) {
        let s = text::singularize_word(&t);
        out.push(format!("{s}s"));
        out.push(format!("{s}es"));
        out.push(s);
        out.push(t);
    }
    out
}

/// Drops every token of `t_o` (and its simple plurals) from `s`.
fn scrub(s: &str, task: &EditTask) -> String {
    let banned = forbidden_tokens(task);
    s.split_whitespace()
        .filter(|w| {
            let bare: String = w
                .trim_matches(|c: char| !c.is_alphanumeric() && c != '-')
                .to_lowercase();
            !banned.contains(&bare)
        })
        .collect::<Vec<_>>()
        .join(" ")
        .trim_matches([',', ' '])
        .to_string()
}

fn details_of(task: &EditTask, exchanges: &[VqaExchange]) -> String {
    let joined = exchanges
        .iter()
        .map(|x| text::clean(&x.answer))
        .filter(|a| !a.is_empty())
        .collect::<Vec<_>>()
        .join(", ");
    if task.category == Category::Removal {
        scrub(&joined, task)
    } else {
        joined
    }
}

/// The deterministic prompt used when no summarizer answers acceptably.
pub fn template_prompt(task: &EditTask, exchanges: &[VqaExchange]) -> String {
    let details = details_of(task, exchanges);
    let head = match task.category {
        Category::Removal => "a photo of a person".to_string(),
        _ => format!("a photo of a person wearing {}", task.target()),
    };
    if details.is_empty() {
        head
    } else {
        format!("{head}, {details}")
    }
}

fn summarizer_prompt(task: &EditTask, details: &str) -> Vec<ChatMessage> {
    let body = match task.category {
        Category::Removal => format!(
            "Edit: remove an item and fill the area naturally.\nSurroundings: {details}\n\
             Do not mention the removed item."
        ),
        c => format!(
            "Edit: {c}.\nThe person should now wear: {}\nDetails of the current item: {details}\n\
             Mention the new item verbatim.",
            task.target()
        ),
    };
    vec![
        ChatMessage::system(
            "You write the positive prompt for an image inpainting model. Reply on a single line \
             of short comma-separated phrases describing what the edited region should show, \
             with no other text.",
        ),
        ChatMessage::user(body),
    ]
}

fn acceptable(task: &EditTask, line: &str) -> bool {
    let lower = text::clean(line);
    if lower.is_empty() {
        return false;
    }
    match task.category {
        Category::Removal => {
            let banned = forbidden_tokens(task);
            !text::tokens(&lower).iter().any(|t| banned.contains(t))
        }
        _ => lower.contains(&text::clean(task.target())),
    }
}

/// Builds the generation prompt from the target, VQA details about the
/// source (or its surroundings, for removal) and an optional summarizer.
/// A failed VQA call leaves the details empty.
pub fn standardize_prompt(
    image: &ContentHash,
    task: &EditTask,
    vqa: &dyn VisualQa,
    summarizer: Option<&dyn ChatModel>,
    negative_prompt: &str,
) -> GenerationPrompt {
    let question = vqa_question(task);
    let source_details = match vqa.ask(image, &question) {
        Ok(answer) => {
            let answer = single_line(&answer).map(str::to_string).unwrap_or_else(|| text::clean(&answer));
            vec![VqaExchange { question, answer }]
        }
        Err(e) => {
            tracing::warn!(error = %e, "VQA unavailable, prompting without source details");
            Vec::new()
        }
    };
    let from_model = summarizer.and_then(|m| {
        let details = details_of(task, &source_details);
        ask_line(m, &summarizer_prompt(task, &details), |line| {
            acceptable(task, line).then(|| line.trim_end_matches('.').to_string())
        })
        .ok()
    });
    let (text, derivation) = match from_model {
        Some(t) => (t, Derivation::Model),
        None => (template_prompt(task, &source_details), Derivation::Fallback),
    };
    GenerationPrompt {
        text,
        negative_text: negative_prompt.to_string(),
        source_details,
        derivation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendError;

    struct Vqa(Option<&'static str>);

    impl VisualQa for Vqa {
        fn ask(&self, _: &ContentHash, _: &str) -> Result<String, BackendError> {
            self.0.map(str::to_string).ok_or(BackendError::Unavailable("vqa".into()))
        }
    }

    fn replacement() -> EditTask {
        EditTask::new(Category::Replacement, Some("vest".into()), Some("white t-shirt".into()), "").unwrap()
    }

    fn removal() -> EditTask {
        EditTask::new(Category::Removal, Some("necklace".into()), None, "").unwrap()
    }

    fn img() -> ContentHash {
        ContentHash::of(b"i")
    }

    #[test]
    fn replacement_prompt_names_target() {
        let down = |_: &[ChatMessage]| -> Result<String, BackendError> { Err(BackendError::Unavailable("x".into())) };
        let p = standardize_prompt(&img(), &replacement(), &Vqa(Some("black knit vest")), Some(&down), "neg");
        assert!(p.text.contains("white t-shirt"));
        assert_eq!(p.text, "a photo of a person wearing white t-shirt, black knit vest");
        assert_eq!(p.source_details[0].answer, "black knit vest");
        assert_eq!(p.derivation, Derivation::Fallback);
        assert_eq!(p.negative_text, "neg");
    }

    #[test]
    fn removal_prompt_never_mentions_source() {
        let p = standardize_prompt(
            &img(),
            &removal(),
            &Vqa(Some("a gold necklace over pale skin and a grey top")),
            None,
            "",
        );
        assert_eq!(p.text, "a photo of a person, a gold over pale skin and a grey top");
        let liar = |_: &[ChatMessage]| -> Result<String, BackendError> { Ok("smooth skin, necklaces removed".into()) };
        let p = standardize_prompt(&img(), &removal(), &Vqa(None), Some(&liar), "");
        assert!(!text::tokens(&p.text).iter().any(|t| t.starts_with("necklace")));
        assert_eq!(p.text, "a photo of a person");
    }

    #[test]
    fn summarizer_output_used_when_valid() {
        let good = |_: &[ChatMessage]| -> Result<String, BackendError> { Ok("white t-shirt, cotton, relaxed fit.".into()) };
        let p = standardize_prompt(&img(), &replacement(), &Vqa(None), Some(&good), "");
        assert_eq!(p.text, "white t-shirt, cotton, relaxed fit");
        assert_eq!(p.derivation, Derivation::Model);
        assert!(p.source_details.is_empty());
    }

    #[test]
    fn template_is_exact() {
        let x = vec![VqaExchange {
            question: "q".into(),
            answer: "Loose Fit".into(),
        }];
        assert_eq!(template_prompt(&replacement(), &x), "a photo of a person wearing white t-shirt, loose fit");
        assert_eq!(template_prompt(&replacement(), &[]), "a photo of a person wearing white t-shirt");
    }
}
