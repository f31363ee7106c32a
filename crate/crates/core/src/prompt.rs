//! Tiered multimodal prompts and decision parsing.
//!
//! Part order:
//!
//! 1. task description;
//! 2. diagnostic criteria and analysis protocol (`Reasoning` and up);
//! 3. for each support example, a line naming its class followed by its
//!    image (`ReasoningExamples` only);
//! 4. `Test trial:` followed by the query image;
//! 5. output constraints, ending with the `DECISION: <NAME>` contract.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::FramedHasher;
use crate::trial::{ClassLabel, TrialRef};

/// Reserved decision token.
pub const DECISION_TOKEN: &str = "DECISION";
/// Characters of response tail searched by the fallback keyword scan.
pub const FALLBACK_WINDOW_CHARS: usize = 200;
pub const QUERY_HEADER: &str = "Test trial:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    /// Task description and query only.
    Base,
    /// Adds diagnostic criteria and the analysis protocol.
    Reasoning,
    /// Adds labeled support examples.
    ReasoningExamples,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Base, Tier::Reasoning, Tier::ReasoningExamples];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Base => "base",
            Tier::Reasoning => "reasoning",
            Tier::ReasoningExamples => "reasoning_examples",
        }
    }

    pub fn needs_examples(self) -> bool {
        self == Tier::ReasoningExamples
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match norm.as_str() {
            "base" => Ok(Tier::Base),
            "reasoning" => Ok(Tier::Reasoning),
            "reasoningexamples" | "examples" => Ok(Tier::ReasoningExamples),
            _ => Err(format!("unknown prompt tier {s:?} (expected base, reasoning, reasoning_examples)")),
        }
    }
}

/// Editable prompt text. Templates may use `{class_names}` and
/// `{num_examples}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub tier: Tier,
    pub task_description: String,
    pub diagnostic_criteria: String,
    pub analysis_protocol: String,
    pub output_constraints: String,
    /// One name per class, index = label.
    pub class_names: Vec<String>,
}

impl PromptConfig {
    /// Uppercases class names and checks uniqueness and the reserved token.
    pub fn normalized(mut self) -> Result<Self, PromptError> {
        self.class_names = self.class_names.iter().map(|n| n.trim().to_uppercase()).collect();
        if self.class_names.len() < 2 {
            return Err(PromptError::TooFewClasses(self.class_names.len()));
        }
        for (i, name) in self.class_names.iter().enumerate() {
            if name.is_empty() {
                return Err(PromptError::EmptyClassName(i));
            }
            if name == DECISION_TOKEN {
                return Err(PromptError::ReservedClassName(name.clone()));
            }
            if self.class_names[..i].contains(name) {
                return Err(PromptError::DuplicateClassName(name.clone()));
            }
        }
        Ok(self)
    }

    /// Digest of the template texts and class names.
    pub fn template_digest(&self) -> String {
        let mut h = FramedHasher::new();
        h.str("prompt-templates/v1")
            .str(&self.task_description)
            .str(&self.diagnostic_criteria)
            .str(&self.analysis_protocol)
            .str(&self.output_constraints);
        for n in &self.class_names {
            h.str(n);
        }
        h.finish_hex()
    }

    fn fill(&self, template: &str, shots: usize) -> String {
        template
            .replace("{class_names}", &self.class_names.join(", "))
            .replace("{num_examples}", &shots.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("tier {0} requires a support set")]
    MissingSupport(Tier),
    #[error("class name {0:?} collides with the reserved decision token")]
    ReservedClassName(String),
    #[error("duplicate class name {0:?}")]
    DuplicateClassName(String),
    #[error("class name {0} is empty")]
    EmptyClassName(usize),
    #[error("need at least two class names, got {0}")]
    TooFewClasses(usize),
    #[error("support example has label {0}, but only {1} class names are configured")]
    UnknownLabel(ClassLabel, usize),
}

/// Which image an attachment is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageRole {
    Example { class_name: String },
    Query,
}

impl ImageRole {
    /// `example:<CLASS>` or `query`.
    pub fn annotation(&self) -> String {
        match self {
            ImageRole::Example { class_name } => format!("example:{class_name}"),
            ImageRole::Query => "query".to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PromptPart {
    Text { text: String },
    Image {
        role: ImageRole,
        #[serde(skip)]
        png: Arc<[u8]>,
        /// Trial the image was rendered from; not part of the digest.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source: Option<TrialRef>,
        /// Label of an example image; not part of the digest.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<ClassLabel>,
    },
}

impl PromptPart {
    fn text(s: impl Into<String>) -> Self {
        PromptPart::Text { text: s.into() }
    }
}

/// A support image ready to be placed in a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleImage {
    pub label: ClassLabel,
    pub source: TrialRef,
    pub png: Arc<[u8]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub parts: Vec<PromptPart>,
    pub tier: Tier,
    pub query: Option<TrialRef>,
    /// SHA-256 over the framed part sequence.
    pub digest: String,
}

impl PromptBundle {
    pub fn images(&self) -> impl Iterator<Item = (&ImageRole, &Arc<[u8]>)> {
        self.parts.iter().filter_map(|p| match p {
            PromptPart::Image { role, png, .. } => Some((role, png)),
            PromptPart::Text { .. } => None,
        })
    }

    pub fn image_count(&self) -> usize {
        self.images().count()
    }

    /// Recomputes the digest from the parts.
    pub fn compute_digest(parts: &[PromptPart]) -> String {
        let mut h = FramedHasher::new();
        h.str("prompt-bundle/v1").u64(parts.len() as u64);
        for p in parts {
            match p {
                PromptPart::Text { text } => {
                    h.str("text").str(text);
                }
                PromptPart::Image { role, png, .. } => {
                    h.str("image").str(&role.annotation()).bytes(png);
                }
            }
        }
        h.finish_hex()
    }

    pub fn verify_digest(&self) -> bool {
        Self::compute_digest(&self.parts) == self.digest
    }
}

/// Assembles the prompt for `query_png`.
///
/// `examples` must be given for [`Tier::ReasoningExamples`] and is ignored
/// otherwise. Examples appear in the given order.
pub fn build_prompt(
    config: &PromptConfig,
    examples: Option<&[ExampleImage]>,
    query_png: Arc<[u8]>,
    query: Option<TrialRef>,
) -> Result<PromptBundle, PromptError> {
    let config = config.clone().normalized()?;
    let k = config.class_names.len();
    let examples = match (config.tier.needs_examples(), examples) {
        (true, None) => return Err(PromptError::MissingSupport(config.tier)),
        (true, Some(e)) => e,
        (false, _) => &[][..],
    };
    let shots = examples.len() / k;

    let mut parts = Vec::with_capacity(6 + 2 * examples.len());
    parts.push(PromptPart::text(config.fill(&config.task_description, shots)));
    if config.tier != Tier::Base {
        parts.push(PromptPart::text(config.fill(&config.diagnostic_criteria, shots)));
        parts.push(PromptPart::text(config.fill(&config.analysis_protocol, shots)));
    }
    for ex in examples {
        let name = config
            .class_names
            .get(ex.label.index())
            .ok_or(PromptError::UnknownLabel(ex.label, k))?
            .clone();
        parts.push(PromptPart::text(format!("Example — class: {name}")));
        parts.push(PromptPart::Image {
            role: ImageRole::Example { class_name: name },
            png: ex.png.clone(),
            source: Some(ex.source.clone()),
            label: Some(ex.label),
        });
    }
    parts.push(PromptPart::text(QUERY_HEADER));
    parts.push(PromptPart::Image {
        role: ImageRole::Query,
        png: query_png,
        source: query.clone(),
        label: None,
    });
    let mut constraints = config.fill(&config.output_constraints, shots);
    if !constraints.is_empty() && !constraints.ends_with('\n') {
        constraints.push('\n');
    }
    constraints.push_str(&format!(
        "End your answer with exactly one final line of the form `{DECISION_TOKEN}: <CLASS>`, where <CLASS> is one of: {}.",
        config.class_names.join(", ")
    ));
    parts.push(PromptPart::text(constraints));

    let digest = PromptBundle::compute_digest(&parts);
    Ok(PromptBundle {
        parts,
        tier: config.tier,
        query,
        digest,
    })
}

/// Outcome of parsing a model response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Label { label: ClassLabel },
    ParseFailure { raw: String },
}

impl Decision {
    pub fn label(&self) -> Option<ClassLabel> {
        match self {
            Decision::Label { label } => Some(*label),
            Decision::ParseFailure { .. } => None,
        }
    }
}

/// The `DECISION: <name>` line for `name`.
pub fn decision_line(name: &str) -> String {
    format!("{DECISION_TOKEN}: {name}")
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '-' || c == '_'
}

fn clean_token(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| c == '*' || c == '`' || c == '"' || c == '\'' || c == '.' || c.is_whitespace())
        .to_uppercase()
}

/// Label of the last `DECISION: <name>` line (case-insensitive). Failing
/// that, if exactly one class name occurs as a whole word in the last
/// [`FALLBACK_WINDOW_CHARS`] characters, that class. Otherwise a parse failure.
pub fn parse_decision(response: &str, class_names: &[String]) -> Decision {
    let names: Vec<String> = class_names.iter().map(|n| n.trim().to_uppercase()).collect();
    let find = |token: &str| names.iter().position(|n| *n == token);

    for line in response.lines().rev() {
        let cleaned = clean_token(line);
        let Some(rest) = cleaned.strip_prefix(DECISION_TOKEN) else {
            continue;
        };
        let Some(value) = rest.trim_start().strip_prefix(':') else {
            continue;
        };
        if let Some(i) = find(&clean_token(value)) {
            return Decision::Label {
                label: ClassLabel(i as u32),
            };
        }
    }

    let total = response.chars().count();
    let tail: String = response
        .chars()
        .skip(total.saturating_sub(FALLBACK_WINDOW_CHARS))
        .collect::<String>()
        .to_uppercase();
    let mut hits = names.iter().enumerate().filter(|(_, n)| contains_word(&tail, n));
    match (hits.next(), hits.next()) {
        (Some((i, _)), None) => Decision::Label {
            label: ClassLabel(i as u32),
        },
        _ => Decision::ParseFailure {
            raw: response.to_owned(),
        },
    }
}

fn contains_word(haystack: &str, word: &str) -> bool {
    let mut start = 0;
    while let Some(pos) = haystack[start..].find(word) {
        let at = start + pos;
        let end = at + word.len();
        let before = haystack[..at].chars().next_back();
        let after = haystack[end..].chars().next();
        if !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char) {
            return true;
        }
        start = at + word.chars().next().map_or(1, char::len_utf8);
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn names() -> Vec<String> {
        vec!["NON-SEIZURE".into(), "SEIZURE".into()]
    }

    fn config(tier: Tier) -> PromptConfig {
        PromptConfig {
            tier,
            task_description: "Classify the EEG trial as {class_names}.".into(),
            diagnostic_criteria: "Criteria.".into(),
            analysis_protocol: "Protocol with {num_examples} examples per class.".into(),
            output_constraints: "Explain briefly.".into(),
            class_names: vec!["non-seizure".into(), "Seizure".into()],
        }
    }

    fn png(b: u8) -> Arc<[u8]> {
        Arc::from(vec![b; 4])
    }

    fn examples() -> Vec<ExampleImage> {
        [(0, 1), (0, 2), (1, 3), (1, 4)]
            .iter()
            .map(|&(l, b)| ExampleImage {
                label: ClassLabel(l),
                source: TrialRef::new("aux", b as u64),
                png: png(b),
            })
            .collect()
    }

    #[test]
    fn base_tier_has_single_image() {
        let b = build_prompt(&config(Tier::Base), None, png(9), None).unwrap();
        assert_eq!(b.image_count(), 1);
        assert!(b.parts.iter().all(|p| !matches!(p, PromptPart::Text { text } if text.starts_with("Example"))));
        assert!(matches!(&b.parts[0], PromptPart::Text { text } if text.contains("NON-SEIZURE, SEIZURE")));
        assert_eq!(b.parts.len(), 4);
    }

    #[test]
    fn examples_tier_orders_images() {
        let ex = examples();
        let b = build_prompt(&config(Tier::ReasoningExamples), Some(&ex), png(9), None).unwrap();
        let roles: Vec<String> = b.images().map(|(r, _)| r.annotation()).collect();
        assert_eq!(
            roles,
            vec!["example:NON-SEIZURE", "example:NON-SEIZURE", "example:SEIZURE", "example:SEIZURE", "query"]
        );
        assert!(matches!(&b.parts[2], PromptPart::Text { text } if text.contains("2 examples")));
        let last = b.parts.last().unwrap();
        assert!(matches!(last, PromptPart::Text { text } if text.contains("DECISION: <CLASS>")));
    }

    #[test]
    fn examples_tier_requires_support() {
        assert_eq!(
            build_prompt(&config(Tier::ReasoningExamples), None, png(9), None).unwrap_err(),
            PromptError::MissingSupport(Tier::ReasoningExamples)
        );
    }

    #[test]
    fn reserved_token_rejected() {
        let mut c = config(Tier::Base);
        c.class_names = vec!["decision".into(), "SEIZURE".into()];
        assert!(matches!(build_prompt(&c, None, png(1), None), Err(PromptError::ReservedClassName(_))));
    }

    #[test]
    fn digest_is_deterministic_and_sensitive() {
        let ex = examples();
        let a = build_prompt(&config(Tier::ReasoningExamples), Some(&ex), png(9), None).unwrap();
        let b = build_prompt(&config(Tier::ReasoningExamples), Some(&ex), png(9), None).unwrap();
        assert_eq!(a.digest, b.digest);
        assert!(a.verify_digest());
        let c = build_prompt(&config(Tier::ReasoningExamples), Some(&ex), png(8), None).unwrap();
        assert_ne!(a.digest, c.digest);
    }

    #[test]
    fn parse_exact_and_case_insensitive() {
        assert_eq!(
            parse_decision("analysis...\nDECISION: SEIZURE", &names()).label(),
            Some(ClassLabel(1))
        );
        assert_eq!(parse_decision("decision: non-seizure", &names()).label(), Some(ClassLabel(0)));
        assert_eq!(parse_decision("**Decision: Seizure**", &names()).label(), Some(ClassLabel(1)));
    }

    #[test]
    fn parse_takes_last_decision_line() {
        let text = "DECISION: SEIZURE\nOn reflection...\nDECISION: NON-SEIZURE";
        assert_eq!(parse_decision(text, &names()).label(), Some(ClassLabel(0)));
    }

    #[test]
    fn parse_fallback_and_failure() {
        assert!(matches!(
            parse_decision("The trial shows both patterns.", &names()),
            Decision::ParseFailure { .. }
        ));
        // NON-SEIZURE does not also count as SEIZURE.
        assert_eq!(
            parse_decision("Overall this looks like non-seizure background.", &names()).label(),
            Some(ClassLabel(0))
        );
        assert!(parse_decision("Either seizure or non-seizure.", &names()).label().is_none());
        let long = format!("SEIZURE was considered. {} Final: non-seizure", "x".repeat(300));
        assert_eq!(parse_decision(&long, &names()).label(), Some(ClassLabel(0)));
    }

    proptest! {
        #[test]
        fn decision_line_round_trips(idx in 0usize..2, prefix in "[a-z .\n]{0,80}") {
            let text = format!("{prefix}\n{}", decision_line(&names()[idx]));
            prop_assert_eq!(parse_decision(&text, &names()).label(), Some(ClassLabel(idx as u32)));
        }

        #[test]
        fn every_example_image_follows_its_label(labels in prop::collection::vec(0u32..3, 1..10)) {
            let mut cfg = config(Tier::ReasoningExamples);
            cfg.class_names = vec!["A".into(), "B".into(), "C".into()];
            let ex: Vec<ExampleImage> = labels.iter().enumerate().map(|(i, &l)| ExampleImage {
                label: ClassLabel(l),
                source: TrialRef::new("x", i as u64),
                png: png(i as u8),
            }).collect();
            let b = build_prompt(&cfg, Some(&ex), png(200), None).unwrap();
            for (i, p) in b.parts.iter().enumerate() {
                if let PromptPart::Image { role: ImageRole::Example { class_name }, .. } = p {
                    let expected = format!("Example — class: {class_name}");
                    let ok = matches!(&b.parts[i - 1], PromptPart::Text { text } if *text == expected);
                    prop_assert!(ok);
                }
            }
            prop_assert_eq!(b.parts.iter().filter(|p| matches!(p, PromptPart::Image { role: ImageRole::Query, .. })).count(), 1);
        }
    }
}
