//! Report text handling: sentence splitting, sampling augmentation, prompt
//! rendering, keyword summarization and tokenization.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Number of sentences concatenated by [`augment_report`].
pub const AUGMENT_SENTENCES: usize = 5;

/// Sentence emitted for a report without any recognised finding.
pub const NORMAL_SUMMARY: &str = "There is no abnormality.";

/// Instruction sent to a remote language model together with the report.
pub const SUMMARY_PROMPT: &str = "You are given a radiology report. Extract every abnormality \
that the report states is present and ignore normal findings, technique descriptions and \
incidental remarks. Output one sentence per abnormality using exactly the template \
\"There is [abnormality].\" with nothing else. If no abnormality is present, output \
\"There is no abnormality.\"";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    text: String,
    is_summary: bool,
}

impl Report {
    pub fn new(text: impl Into<String>, is_summary: bool) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invalid("report text is empty"));
        }
        Ok(Self { text, is_summary })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn is_summary(&self) -> bool {
        self.is_summary
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

/// How a sample's report and summary become the text side during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextInputMode {
    /// Sentences of report and summary are pooled before sampling.
    Concat,
    /// Each epoch picks either the report or the summary with equal odds.
    #[default]
    RandomChoice,
}

/// Splits on `.` or `;` followed by whitespace or end of text. Delimiters stay
/// attached to their sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c == '.' || c == ';' {
            let at_boundary = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if at_boundary {
                push_fragment(&mut out, &text[start..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
    }
    push_fragment(&mut out, &text[start..]);
    out
}

fn push_fragment(out: &mut Vec<String>, fragment: &str) {
    let f = fragment.trim();
    if f.chars().any(|c| c.is_alphanumeric()) {
        out.push(f.to_owned());
    }
}

/// Samples [`AUGMENT_SENTENCES`] sentences and joins them with single spaces.
///
/// With at least five sentences the draw is without replacement and keeps
/// document order; with fewer it is with replacement.
pub fn augment_report(sentences: &[String], rng: &mut RngStream) -> Result<Report> {
    if sentences.is_empty() {
        return Err(Error::invalid("cannot augment an empty sentence list"));
    }
    let picked: Vec<&str> = if sentences.len() >= AUGMENT_SENTENCES {
        rng.sample_sorted(sentences.len(), AUGMENT_SENTENCES)
            .into_iter()
            .map(|i| sentences[i].as_str())
            .collect()
    } else {
        (0..AUGMENT_SENTENCES)
            .map(|_| sentences[rng.below(sentences.len())].as_str())
            .collect()
    };
    Report::new(picked.join(" "), false)
}

pub fn render_prompt(abnormality: &str, polarity: Polarity) -> Result<String> {
    let name = abnormality.trim();
    if name.is_empty() {
        return Err(Error::invalid("abnormality name is empty"));
    }
    Ok(match polarity {
        Polarity::Positive => format!("There is {name}."),
        Polarity::Negative => format!("There is no {name}."),
    })
}

/// Ordered `(pattern, canonical name)` pairs used by the rule-based summarizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordTable {
    entries: Vec<(String, String)>,
}

impl KeywordTable {
    pub fn new(entries: Vec<(String, String)>) -> Result<Self> {
        let mut problems = Vec::new();
        for (i, (pattern, canonical)) in entries.iter().enumerate() {
            if pattern.trim().is_empty() {
                problems.push(format!("entry {i}: empty pattern"));
            }
            if pattern.to_lowercase() != *pattern {
                problems.push(format!("entry {i}: pattern {pattern:?} is not lowercase"));
            }
            if entries[..i].iter().any(|(_, c)| c == canonical) {
                problems.push(format!("entry {i}: duplicate canonical name {canonical:?}"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(Self { entries })
    }

    /// One entry per name, matching the lowercased name itself.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::new(
            names
                .iter()
                .map(|n| (n.as_ref().to_lowercase(), n.as_ref().to_string()))
                .collect(),
        )
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }
}

/// Whole-word occurrence of `pattern` in `haystack`.
pub(crate) fn contains_phrase(haystack: &str, pattern: &str) -> bool {
    let bytes = haystack.as_bytes();
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(pattern) {
        let s = from + pos;
        let e = s + pattern.len();
        let left_ok = s == 0 || !haystack[..s].chars().next_back().is_some_and(char::is_alphanumeric);
        let right_ok = e == bytes.len() || !haystack[e..].chars().next().is_some_and(char::is_alphanumeric);
        if left_ok && right_ok {
            return true;
        }
        from = s + haystack[s..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Deterministic stand-in for the language-model summarizer: one
/// `"There is {name}."` sentence per matched keyword, in table order.
pub fn summarize_rule_based(report: &str, table: &KeywordTable) -> Report {
    let lower = report.to_lowercase();
    let sentences: Vec<String> = table
        .entries
        .iter()
        .filter(|(pattern, _)| contains_phrase(&lower, pattern))
        .map(|(_, canonical)| format!("There is {canonical}."))
        .collect();
    let text = if sentences.is_empty() {
        NORMAL_SUMMARY.to_string()
    } else {
        sentences.join(" ")
    };
    Report {
        text,
        is_summary: true,
    }
}

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";

/// Closed word vocabulary. Id 0 is padding and id 1 is the unknown token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocab {
    pub const PAD_ID: u32 = 0;
    pub const UNK_ID: u32 = 1;

    /// Builds a vocabulary in first-appearance order over `texts`.
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let mut vocab = Self::from_tokens(Vec::new()).expect("empty token list is valid");
        for text in texts {
            for word in words(text) {
                if !vocab.index.contains_key(&word) {
                    vocab.index.insert(word.clone(), vocab.tokens.len() as u32);
                    vocab.tokens.push(word);
                }
            }
        }
        vocab
    }

    /// Rebuilds a vocabulary from its word list (reserved entries excluded).
    pub fn from_tokens(words: Vec<String>) -> Result<Self> {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut index = BTreeMap::new();
        index.insert(PAD_TOKEN.to_string(), Self::PAD_ID);
        index.insert(UNK_TOKEN.to_string(), Self::UNK_ID);
        for w in words {
            if index.insert(w.clone(), tokens.len() as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {w:?}")));
            }
            tokens.push(w);
        }
        Ok(Self { tokens, index })
    }

    /// `(token, id)` pairs are dense starting at 2; reserved entries omitted.
    pub fn words(&self) -> &[String] {
        &self.tokens[2..]
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Token ids padded or truncated to exactly `max_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    ids: Vec<u32>,
}

impl TokenSeq {
    pub fn from_ids(ids: Vec<u32>) -> Self {
        Self { ids }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    pub fn non_pad(&self) -> impl Iterator<Item = u32> + '_ {
        self.ids.iter().copied().filter(|&id| id != Vocab::PAD_ID)
    }
}

pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> TokenSeq {
    assert!(max_len >= 1, "max_len must be >= 1");
    let mut ids: Vec<u32> = words(text).take(max_len).map(|w| vocab.id(&w)).collect();
    ids.resize(max_len, Vocab::PAD_ID);
    TokenSeq { ids }
}
