//! Text-only reasoning subtasks: target extraction, critiques, attribute
//! inquiry, caption summarization, and verification judgments.
//!
//! The reasoner never sees pixels. Everything it decides is derived from the
//! strings suite backends returned. [`RuleReasoner`] is the deterministic
//! reference implementation; other implementations plug in through the
//! [`Reasoner`] trait.

mod vocab;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::types::{Critique, CritiqueTarget, Decision, ModelResponse, ModelRole};

pub use vocab::{DescriptorLexicon, ObjectVocabulary};

/// Tokens inspected before a mention when looking for a negation.
pub const NEGATION_WINDOW: usize = 3;

/// Tokens on either side of the target scanned for co-occurring attributes.
pub const ATTRIBUTE_WINDOW: usize = 3;

/// Captions whose object set has Jaccard similarity below this fraction
/// (`num / den`) against the union of the others are flagged.
pub const COMPROMISED_JACCARD: (usize, usize) = (1, 5);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReasonerError {
    #[error("not a presence question: {0:?}")]
    NotPresenceQuestion(String),
    #[error("attribute must be non-empty")]
    EmptyAttribute,
    #[error("summarization needs at least 2 captions, got {0}")]
    TooFewCaptions(usize),
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeHint {
    pub attribute: String,
    /// Text span the attribute was read from.
    pub source_phrase: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionSummary {
    pub text: String,
    pub objects: BTreeSet<String>,
    pub per_caption: Vec<BTreeSet<String>>,
    /// Jaccard similarity of each caption against the union of the others.
    pub similarity: Vec<f64>,
    /// Indices of captions flagged as potentially compromised.
    pub compromised: Vec<usize>,
}

pub trait Reasoner: Send + Sync {
    fn extract_target_object(&self, question: &str) -> Result<String, ReasonerError>;
    fn critique_existence(&self, target: &str, response: &ModelResponse) -> Critique;
    fn extract_attributes(
        &self,
        texts: &[&str],
        target: &str,
        cap: usize,
        exclude: &BTreeSet<String>,
    ) -> Vec<AttributeHint>;
    fn formulate_attribute_question(&self, hint: &AttributeHint) -> Result<String, ReasonerError>;
    fn extract_objects(&self, caption: &str) -> BTreeSet<String>;
    fn summarize_captions(&self, captions: &[&str]) -> Result<CaptionSummary, ReasonerError>;
    fn judge_object_in_answer(&self, object: &str, answer: &str) -> Decision;
}

/// Presence question for `object`, phrased like the benchmark template.
pub fn presence_question(object: &str) -> String {
    let article = if object.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    };
    format!("Is there {article} {object} in the image?")
}

pub fn summary_text(objects: &BTreeSet<String>) -> String {
    if objects.is_empty() {
        "The image contains no recognized objects.".to_string()
    } else {
        let list: Vec<&str> = objects.iter().map(String::as_str).collect();
        format!("The image contains: {}.", list.join(", "))
    }
}

fn presence_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:is|are)\s+there\s+(?:(?:a|an|any)\s+)?(.+?)\s+in\s+(?:the|this)\s+(?:image|picture|photo)\s*\?",
        )
        .expect("valid regex")
    })
}

pub(crate) fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn is_negation(token: &str) -> bool {
    matches!(
        token,
        "no" | "not" | "none" | "never" | "without" | "nor" | "neither" | "nothing" | "cannot"
    ) || token.ends_with("n't")
}

const YES_WORDS: &[&str] = &["yes", "yeah", "yep", "yup", "correct", "true", "affirmative", "indeed"];
const NO_WORDS: &[&str] = &["no", "nope", "not", "false", "negative", "none", "never"];
const YES_SCAN: &[&str] = &["yes", "yeah", "yep", "yup", "correct"];
const NO_SCAN: &[&str] = &["no", "nope", "none"];
const HEDGES: &[&str] = &["not sure", "unsure", "cannot tell", "can't tell", "unclear", "hard to tell"];

/// Maps free text to a yes/no verdict. Total: every string maps somewhere.
///
/// A leading yes/no token decides first; otherwise hedges give `Uncertain`;
/// otherwise the first yes- or no-family keyword anywhere decides.
pub fn parse_binary_answer(text: &str) -> Decision {
    let tokens = tokenize(text);
    let Some(first) = tokens.first() else {
        return Decision::Uncertain;
    };
    if YES_WORDS.contains(&first.as_str()) {
        return Decision::Yes;
    }
    if NO_WORDS.contains(&first.as_str()) {
        return Decision::No;
    }
    let lower = text.to_lowercase();
    if HEDGES.iter().any(|h| lower.contains(h)) {
        return Decision::Uncertain;
    }
    for t in &tokens {
        if YES_SCAN.contains(&t.as_str()) {
            return Decision::Yes;
        }
        if NO_SCAN.contains(&t.as_str()) {
            return Decision::No;
        }
    }
    Decision::Uncertain
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Mention {
    /// Canonical name, or the literal phrase for out-of-vocabulary targets.
    name: String,
    start: usize,
    len: usize,
}

/// A resolved query target.
#[derive(Debug, Clone)]
struct Target {
    phrase: String,
    /// Whole-phrase canonical name, when the vocabulary knows it.
    canonical: Option<String>,
    /// Object a closed-set detector would report for this target.
    head: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MentionState {
    Affirmed,
    Negated,
    Absent,
}

#[derive(Debug, Clone, Default)]
pub struct RuleReasoner {
    vocab: ObjectVocabulary,
    lexicon: DescriptorLexicon,
}

impl RuleReasoner {
    pub fn new(vocab: ObjectVocabulary, lexicon: DescriptorLexicon) -> Self {
        Self { vocab, lexicon }
    }

    pub fn vocabulary(&self) -> &ObjectVocabulary {
        &self.vocab
    }

    fn resolve_target(&self, target: &str) -> Target {
        let phrase = tokenize(target).join(" ");
        let canonical = self.vocab.canonical(&phrase).map(str::to_string);
        let head = canonical.clone().or_else(|| {
            self.mentions(&tokenize(&phrase))
                .into_iter()
                .last()
                .map(|m| m.name)
        });
        Target {
            phrase,
            canonical,
            head,
        }
    }

    /// Vocabulary mentions, longest match first, left to right. A colour word
    /// that is also an object ("orange") is skipped when it directly
    /// modifies another mention.
    fn mentions(&self, tokens: &[String]) -> Vec<Mention> {
        let max = self.vocab.max_words();
        let mut found = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut hit = None;
            for n in (1..=max.min(tokens.len() - i)).rev() {
                let phrase = tokens[i..i + n].join(" ");
                if let Some(c) = self.vocab.canonical(&phrase) {
                    hit = Some(Mention {
                        name: c.to_string(),
                        start: i,
                        len: n,
                    });
                    break;
                }
            }
            match hit {
                Some(m) => {
                    i += m.len;
                    found.push(m);
                }
                None => i += 1,
            }
        }
        let mut kept: Vec<Mention> = Vec::with_capacity(found.len());
        for (idx, m) in found.iter().enumerate() {
            let modifies_next = m.len == 1
                && self.lexicon.rank(&tokens[m.start]) == Some(0)
                && found
                    .get(idx + 1)
                    .is_some_and(|next| next.start == m.start + 1);
            if !modifies_next {
                kept.push(m.clone());
            }
        }
        kept
    }

    fn target_mentions(&self, target: &Target, tokens: &[String]) -> Vec<Mention> {
        if let Some(c) = &target.canonical {
            return self
                .mentions(tokens)
                .into_iter()
                .filter(|m| &m.name == c)
                .collect();
        }
        let want: Vec<&str> = target.phrase.split(' ').filter(|s| !s.is_empty()).collect();
        if want.is_empty() || want.len() > tokens.len() {
            return Vec::new();
        }
        let last = want.len() - 1;
        (0..=tokens.len() - want.len())
            .filter(|&i| {
                want.iter().enumerate().all(|(j, w)| {
                    let tok = tokens[i + j].as_str();
                    tok == *w
                        || (j == last
                            && vocab::singular_forms(tok).iter().any(|s| s == w))
                })
            })
            .map(|i| Mention {
                name: target.phrase.clone(),
                start: i,
                len: want.len(),
            })
            .collect()
    }

    fn negated(tokens: &[String], m: &Mention) -> bool {
        let from = m.start.saturating_sub(NEGATION_WINDOW);
        tokens[from..m.start].iter().any(|t| is_negation(t))
    }

    fn mention_state(&self, target: &Target, tokens: &[String]) -> MentionState {
        let ms = self.target_mentions(target, tokens);
        if ms.is_empty() {
            MentionState::Absent
        } else if ms.iter().any(|m| !Self::negated(tokens, m)) {
            MentionState::Affirmed
        } else {
            MentionState::Negated
        }
    }

    /// Shared verdict for free-text answers about one object.
    fn text_verdict(&self, target: &Target, text: &str) -> (Decision, String) {
        let tokens = tokenize(text);
        match self.mention_state(target, &tokens) {
            MentionState::Affirmed => (
                Decision::Yes,
                format!("response mentions '{}' affirmatively", target.phrase),
            ),
            MentionState::Negated => (
                Decision::No,
                format!("response negates '{}'", target.phrase),
            ),
            MentionState::Absent => match parse_binary_answer(text) {
                Decision::Yes => (
                    Decision::Yes,
                    format!("'{}' not named; answer reads as yes", target.phrase),
                ),
                Decision::No => (
                    Decision::No,
                    format!("'{}' not named; answer reads as no", target.phrase),
                ),
                Decision::Uncertain => (
                    Decision::Uncertain,
                    format!("no evidence about '{}' in response", target.phrase),
                ),
            },
        }
    }

    fn detector_objects(&self, text: &str) -> Vec<String> {
        text.split([',', ';', '\n'])
            .flat_map(|chunk| chunk.split(" and "))
            .map(|item| {
                let item = item.split(['(', ':', '[']).next().unwrap_or("");
                let words: Vec<String> = tokenize(item)
                    .into_iter()
                    .filter(|w| !w.chars().all(|c| c.is_ascii_digit()))
                    .collect();
                words.join(" ")
            })
            .filter(|item| !item.is_empty())
            .map(|item| {
                self.vocab
                    .canonical(&item)
                    .map(str::to_string)
                    .unwrap_or(item)
            })
            .collect()
    }
}

impl Reasoner for RuleReasoner {
    fn extract_target_object(&self, question: &str) -> Result<String, ReasonerError> {
        let caps = presence_regex()
            .captures(question)
            .ok_or_else(|| ReasonerError::NotPresenceQuestion(question.to_string()))?;
        let phrase = tokenize(&caps[1]).join(" ");
        if phrase.is_empty() {
            return Err(ReasonerError::NotPresenceQuestion(question.to_string()));
        }
        Ok(phrase)
    }

    fn critique_existence(&self, target: &str, response: &ModelResponse) -> Critique {
        let resolved = self.resolve_target(target);
        let (decision, rationale) = if response.failed {
            (
                Decision::Uncertain,
                format!(
                    "{} gave no answer ({})",
                    response.role,
                    response.failure.as_deref().unwrap_or("failed")
                ),
            )
        } else if response.role == ModelRole::ObjectDetector {
            let listed = self.detector_objects(&response.text);
            let wanted = resolved.head.clone().unwrap_or_else(|| resolved.phrase.clone());
            if listed.contains(&wanted) {
                (Decision::Yes, format!("detector listed '{wanted}'"))
            } else {
                (
                    Decision::No,
                    format!("detector did not list '{wanted}' (saw: {})", listed.join(", ")),
                )
            }
        } else {
            self.text_verdict(&resolved, &response.text)
        };
        Critique {
            source: response.role,
            target: CritiqueTarget::Object(resolved.phrase),
            decision,
            rationale,
            iteration: response.iteration,
        }
    }

    fn extract_attributes(
        &self,
        texts: &[&str],
        target: &str,
        cap: usize,
        exclude: &BTreeSet<String>,
    ) -> Vec<AttributeHint> {
        let resolved = self.resolve_target(target);
        // (co-occurs with target, category rank, text index, token index)
        let mut candidates: Vec<((bool, usize, usize, usize), AttributeHint)> = Vec::new();
        for (ti, text) in texts.iter().enumerate() {
            let tokens = tokenize(text);
            let near: Vec<(usize, usize)> = self
                .target_mentions(&resolved, &tokens)
                .iter()
                .map(|m| {
                    (
                        m.start.saturating_sub(ATTRIBUTE_WINDOW),
                        (m.start + m.len + ATTRIBUTE_WINDOW).min(tokens.len()),
                    )
                })
                .collect();
            for (pos, tok) in tokens.iter().enumerate() {
                let Some(rank) = self.lexicon.rank(tok) else {
                    continue;
                };
                let co = near.iter().any(|&(lo, hi)| pos >= lo && pos < hi);
                let lo = pos.saturating_sub(1);
                let hi = (pos + 2).min(tokens.len());
                candidates.push((
                    (!co, rank, ti, pos),
                    AttributeHint {
                        attribute: tok.clone(),
                        source_phrase: tokens[lo..hi].join(" "),
                    },
                ));
            }
        }
        candidates.sort_by_key(|a| a.0);
        let mut seen = BTreeSet::new();
        candidates
            .into_iter()
            .map(|(_, h)| h)
            .filter(|h| !exclude.contains(&h.attribute) && seen.insert(h.attribute.clone()))
            .take(cap)
            .collect()
    }

    fn formulate_attribute_question(&self, hint: &AttributeHint) -> Result<String, ReasonerError> {
        let attribute = hint.attribute.trim();
        if attribute.is_empty() {
            return Err(ReasonerError::EmptyAttribute);
        }
        Ok(format!("What objects are {attribute} in the image?"))
    }

    fn extract_objects(&self, caption: &str) -> BTreeSet<String> {
        let tokens = tokenize(caption);
        self.mentions(&tokens)
            .into_iter()
            .filter(|m| !Self::negated(&tokens, m))
            .map(|m| m.name)
            .collect()
    }

    fn summarize_captions(&self, captions: &[&str]) -> Result<CaptionSummary, ReasonerError> {
        if captions.len() < 2 {
            return Err(ReasonerError::TooFewCaptions(captions.len()));
        }
        let per_caption: Vec<BTreeSet<String>> =
            captions.iter().map(|c| self.extract_objects(c)).collect();
        let n = per_caption.len();
        let all: BTreeSet<&String> = per_caption.iter().flatten().collect();
        let objects: BTreeSet<String> = all
            .into_iter()
            .filter(|o| 2 * per_caption.iter().filter(|s| s.contains(*o)).count() > n)
            .cloned()
            .collect();

        let mut similarity = Vec::with_capacity(n);
        let mut compromised = Vec::new();
        for (i, own) in per_caption.iter().enumerate() {
            let others: BTreeSet<&String> = per_caption
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, s)| s.iter())
                .collect();
            let inter = own.iter().filter(|o| others.contains(o)).count();
            let union = others.len() + own.iter().filter(|o| !others.contains(o)).count();
            let (num, den) = COMPROMISED_JACCARD;
            if union == 0 {
                similarity.push(1.0);
            } else {
                similarity.push(inter as f64 / union as f64);
                if inter * den < num * union {
                    compromised.push(i);
                }
            }
        }

        Ok(CaptionSummary {
            text: summary_text(&objects),
            objects,
            per_caption,
            similarity,
            compromised,
        })
    }

    fn judge_object_in_answer(&self, object: &str, answer: &str) -> Decision {
        self.text_verdict(&self.resolve_target(object), answer).0
    }
}
