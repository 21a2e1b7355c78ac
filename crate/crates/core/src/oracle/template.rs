use super::{OracleError, TokenClass};
use crate::corpus::{ImageRef, Sentence};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// How a template lays out its slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Instruction, query and a text passage, ending in an answer cue.
    TextPair,
    /// Instruction and query; the image travels as an attachment.
    ImageQuery,
    /// Like `TextPair`, with any number of images attached.
    MultimodalPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub name: String,
    pub instruction: String,
    pub layout: Layout,
    pub answer_classes: Vec<TokenClass>,
}

/// Prompt text plus image locators sent out-of-band.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RenderedPrompt {
    pub text: String,
    pub attachments: Vec<String>,
}

/// Character budgets for prompt payloads.
///
/// Tokenization happens server-side, so the budget is the configured token
/// limit times a fixed characters-per-token estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptBudget {
    pub chars: usize,
}

pub const CHARS_PER_TOKEN: usize = 4;

impl PromptBudget {
    pub fn from_tokens(max_tokens: usize) -> Self {
        PromptBudget {
            chars: max_tokens * CHARS_PER_TOKEN,
        }
    }

    pub fn unlimited() -> Self {
        PromptBudget { chars: usize::MAX }
    }
}

const QUERY_CUE: &str = "### Query: ";
const CORPUS_CUE: &str = "### corpus: ";
const ANSWER_CUE: &str = "### Answer:";

fn truncate_chars(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Shrinks two texts to fit `avail` characters together; the shorter keeps
/// as much as possible and the longer takes the remainder.
fn fit_pair<'a>(a: &'a str, b: &'a str, avail: usize) -> (&'a str, &'a str) {
    let (la, lb) = (a.chars().count(), b.chars().count());
    if la.saturating_add(lb) <= avail {
        return (a, b);
    }
    let half = avail / 2;
    if la <= half {
        (a, truncate_chars(b, avail - la))
    } else if lb <= half {
        (truncate_chars(a, avail - lb), b)
    } else {
        (truncate_chars(a, half), truncate_chars(b, avail - half))
    }
}

impl PromptTemplate {
    pub fn new(name: &str, instruction: &str, layout: Layout, answer_classes: &[TokenClass]) -> Self {
        PromptTemplate {
            name: name.to_string(),
            instruction: instruction.to_string(),
            layout,
            answer_classes: answer_classes.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let err = |message: &str| OracleError::Template {
            template: self.name.clone(),
            message: message.to_string(),
        };
        if self.instruction.trim().is_empty() {
            return Err(err("empty instruction"));
        }
        if self.answer_classes.is_empty() {
            return Err(err("no answer classes"));
        }
        if self.answer_classes.contains(&TokenClass::Other) {
            return Err(err("'other' is residual and cannot be an answer class"));
        }
        Ok(())
    }

    fn fixed_len(&self, with_corpus: bool) -> usize {
        let mut n = self.instruction.chars().count() + 1 + QUERY_CUE.len();
        if with_corpus {
            n += 1 + CORPUS_CUE.len() + 1 + ANSWER_CUE.len();
        }
        n
    }

    fn mismatch(&self, what: &str) -> OracleError {
        OracleError::Template {
            template: self.name.clone(),
            message: format!("layout {:?} cannot render {what}", self.layout),
        }
    }

    /// Relevance prompt for a sentence candidate.
    pub fn render_sentence(&self, claim: &str, sentence: &Sentence, budget: PromptBudget) -> Result<RenderedPrompt, OracleError> {
        if self.layout != Layout::TextPair {
            return Err(self.mismatch("a sentence candidate"));
        }
        Ok(self.render_pair(claim, &sentence.text, Vec::new(), budget))
    }

    /// Relevance prompt for an image candidate.
    pub fn render_image(&self, claim: &str, image: &ImageRef, budget: PromptBudget) -> Result<RenderedPrompt, OracleError> {
        if self.layout != Layout::ImageQuery {
            return Err(self.mismatch("an image candidate"));
        }
        let avail = budget.chars.saturating_sub(self.fixed_len(false));
        Ok(RenderedPrompt {
            text: format!("{}\n{QUERY_CUE}{}", self.instruction, truncate_chars(claim, avail)),
            attachments: vec![image.uri.clone()],
        })
    }

    /// Claim/evidence prompt for pair layouts. `TextPair` drops attachments.
    pub fn render_pair(&self, claim: &str, evidence: &str, attachments: Vec<String>, budget: PromptBudget) -> RenderedPrompt {
        let avail = budget.chars.saturating_sub(self.fixed_len(true));
        let (q, s) = fit_pair(claim, evidence, avail);
        RenderedPrompt {
            text: format!("{}\n{QUERY_CUE}{q}\n{CORPUS_CUE}{s}\n{ANSWER_CUE}", self.instruction),
            attachments: match self.layout {
                Layout::TextPair => Vec::new(),
                _ => attachments,
            },
        }
    }
}

pub const TEXT_RELATED: &str = "text-related";
pub const IMAGE_SAME_TOPIC: &str = "image-same-topic";
pub const VERIFY_ONE_LEVEL: &str = "verify-one-level";
pub const VERIFY_SUFFICIENCY: &str = "verify-sufficiency";
pub const VERIFY_STANCE: &str = "verify-stance";
pub const VERIFY_ONE_LEVEL_MM: &str = "verify-one-level-mm";
pub const VERIFY_SUFFICIENCY_MM: &str = "verify-sufficiency-mm";
pub const VERIFY_STANCE_MM: &str = "verify-stance-mm";

const ONE_LEVEL_INSTRUCTION: &str = "Does the evidence support the claim in the query? Answer 'Yes' if the evidence supports the claim, 'No' if it refutes the claim, and 'None' if it does not provide enough information.";
const SUFFICIENCY_INSTRUCTION: &str =
    "Is this evidence enough to decide whether the claim in the query is true or false? Answer with yes or no.";
const STANCE_INSTRUCTION: &str =
    "Does this evidence support the claim in the query? Answer 'Yes' if it supports the claim and 'No' if it refutes it.";

/// Named templates, seeded with the built-in relevance and verification prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        use Layout::*;
        use TokenClass::{No, None, Yes};
        let yn = [Yes, No];
        let ynn = [Yes, No, None];
        let builtins = [
            PromptTemplate::new(TEXT_RELATED, "Is this corpus related to the query? Answer with yes or no.", TextPair, &yn),
            PromptTemplate::new(
                "text-same-topic",
                "Is query and corpus mentioning the same person or topic? Answer with yes or no.",
                TextPair,
                &yn,
            ),
            PromptTemplate::new("text-evidence", "Is this corpus an evidence for the query? Answer with yes or no.", TextPair, &yn),
            PromptTemplate::new("image-describe", "Does this query describe the image?", ImageQuery, &yn),
            PromptTemplate::new("image-related", "Based on the query below, is it related to the image?", ImageQuery, &yn),
            PromptTemplate::new(
                IMAGE_SAME_TOPIC,
                "Is this image and text query mentioning the same person or topic?",
                ImageQuery,
                &yn,
            ),
            PromptTemplate::new(VERIFY_ONE_LEVEL, ONE_LEVEL_INSTRUCTION, TextPair, &ynn),
            PromptTemplate::new(VERIFY_SUFFICIENCY, SUFFICIENCY_INSTRUCTION, TextPair, &yn),
            PromptTemplate::new(VERIFY_STANCE, STANCE_INSTRUCTION, TextPair, &yn),
            PromptTemplate::new(VERIFY_ONE_LEVEL_MM, ONE_LEVEL_INSTRUCTION, MultimodalPair, &ynn),
            PromptTemplate::new(VERIFY_SUFFICIENCY_MM, SUFFICIENCY_INSTRUCTION, MultimodalPair, &yn),
            PromptTemplate::new(VERIFY_STANCE_MM, STANCE_INSTRUCTION, MultimodalPair, &yn),
        ];
        TemplateRegistry {
            templates: builtins.into_iter().map(|t| (t.name.clone(), t)).collect(),
        }
    }
}

impl TemplateRegistry {
    pub fn empty() -> Self {
        TemplateRegistry {
            templates: BTreeMap::new(),
        }
    }

    /// Adds or replaces a template by name.
    pub fn insert(&mut self, t: PromptTemplate) -> Result<(), OracleError> {
        t.validate()?;
        self.templates.insert(t.name.clone(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, OracleError> {
        self.templates.get(name).ok_or_else(|| OracleError::Template {
            template: name.to_string(),
            message: "no such template".into(),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Map;

    fn sentence(text: &str) -> Sentence {
        Sentence {
            sent_id: "d1-s0".into(),
            doc_id: "d1".into(),
            text: text.into(),
            extra: Map::new(),
        }
    }

    fn image() -> ImageRef {
        ImageRef {
            image_id: "i1".into(),
            doc_id: "d1".into(),
            uri: "file:///img/i1.jpg".into(),
            alt_text: None,
            extra: Map::new(),
        }
    }

    #[test]
    fn best_text_prompt_renders_exactly() {
        let reg = TemplateRegistry::default();
        let p = reg
            .get(TEXT_RELATED)
            .unwrap()
            .render_sentence("X", &sentence("Y"), PromptBudget::from_tokens(2048))
            .unwrap();
        assert_eq!(
            p.text,
            "Is this corpus related to the query? Answer with yes or no.\n### Query: X\n### corpus: Y\n### Answer:"
        );
        assert!(p.attachments.is_empty());
    }

    #[test]
    fn best_image_prompt_renders_exactly() {
        let reg = TemplateRegistry::default();
        let p = reg
            .get(IMAGE_SAME_TOPIC)
            .unwrap()
            .render_image("X", &image(), PromptBudget::from_tokens(512))
            .unwrap();
        assert_eq!(p.text, "Is this image and text query mentioning the same person or topic?\n### Query: X");
        assert_eq!(p.attachments, ["file:///img/i1.jpg"]);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let reg = TemplateRegistry::default();
        let t = reg.get(TEXT_RELATED).unwrap();
        assert!(matches!(
            t.render_image("X", &image(), PromptBudget::unlimited()),
            Err(OracleError::Template { .. })
        ));
        let t = reg.get(IMAGE_SAME_TOPIC).unwrap();
        assert!(t.render_sentence("X", &sentence("Y"), PromptBudget::unlimited()).is_err());
    }

    #[test]
    fn long_payloads_are_truncated_to_budget() {
        let reg = TemplateRegistry::default();
        let t = reg.get(TEXT_RELATED).unwrap();
        let budget = PromptBudget { chars: 200 };
        let claim = "c".repeat(30);
        let p = t.render_sentence(&claim, &sentence(&"s".repeat(1000)), budget).unwrap();
        assert_eq!(p.text.chars().count(), 200);
        assert!(p.text.contains(&claim), "short claim kept whole");

        let p = t.render_sentence(&"c".repeat(500), &sentence(&"s".repeat(500)), budget).unwrap();
        assert_eq!(p.text.chars().count(), 200);
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        assert_eq!(truncate_chars("héllo", 2), "hé");
        assert_eq!(truncate_chars("ab", 5), "ab");
    }

    #[test]
    fn unknown_template_name() {
        assert!(TemplateRegistry::default().get("nope").is_err());
    }

    #[test]
    fn other_is_not_an_answer_class() {
        let mut reg = TemplateRegistry::empty();
        let t = PromptTemplate::new("x", "Q?", Layout::TextPair, &[TokenClass::Other]);
        assert!(reg.insert(t).is_err());
    }
}
