use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::corpus::TextSample;

/// Default instruction; `{n}` renders as a number word ("three").
pub const DEFAULT_TEMPLATE: &str = "Given the following text sample: {text}, please generate {n} additional {samples} that preserve the original annotation label {label_set}.";

pub const LABEL_SET: &str = "(HOF or NOT)";

/// Prompt with `{text}`, `{n}`, `{label_set}` and `{samples}` placeholders.
///
/// Substitution is a single left-to-right pass, so braces inside the
/// sample text are copied verbatim and never re-expanded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptTemplate {
    template: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            template: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl TryFrom<String> for PromptTemplate {
    type Error = AugmentError;

    fn try_from(template: String) -> Result<Self, Self::Error> {
        PromptTemplate::new(template)
    }
}

impl From<PromptTemplate> for String {
    fn from(t: PromptTemplate) -> Self {
        t.template
    }
}

fn number_word(n: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS
        .get(n)
        .map(|w| w.to_string())
        .unwrap_or_else(|| n.to_string())
}

impl PromptTemplate {
    pub fn new(template: impl Into<String>) -> Result<Self, AugmentError> {
        let template = template.into();
        if !template.contains("{text}") {
            return Err(AugmentError::InvalidTemplate(
                "template must contain a {text} placeholder".into(),
            ));
        }
        Ok(Self { template })
    }

    pub fn as_str(&self) -> &str {
        &self.template
    }

    fn substitute(&self, text: &str, n: usize) -> String {
        let mut out = String::with_capacity(self.template.len() + text.len());
        let mut rest = self.template.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open..];
            let Some(close) = tail.find('}') else {
                out.push_str(tail);
                return out;
            };
            match &tail[1..close] {
                "text" => out.push_str(text),
                "n" => out.push_str(&number_word(n)),
                "label_set" => out.push_str(LABEL_SET),
                "samples" => out.push_str(if n == 1 { "sample" } else { "samples" }),
                _ => out.push_str(&tail[..=close]),
            }
            rest = &tail[close + 1..];
        }
        out.push_str(rest);
        out
    }
}

/// Renders the augmentation prompt for a labeled sample.
pub fn render_prompt(
    sample: &TextSample,
    n: usize,
    template: &PromptTemplate,
) -> Result<String, AugmentError> {
    if sample.label.is_none() {
        return Err(AugmentError::UnlabeledSample(sample.id.clone()));
    }
    Ok(template.substitute(&sample.text, n))
}
