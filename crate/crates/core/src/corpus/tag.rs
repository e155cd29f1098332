//! Word-level language tags and the lexicon tagger.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::CorpusError;

/// Language of a single token.
///
/// `Other` covers punctuation, digits, named entities and anything the
/// lexicon does not know. It never forms a switching point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LanguageTag {
    L1,
    L2,
    #[serde(rename = "O")]
    Other,
}

impl LanguageTag {
    /// True for `L1` and `L2`.
    pub fn is_language(self) -> bool {
        !matches!(self, LanguageTag::Other)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LanguageTag::L1 => "L1",
            LanguageTag::L2 => "L2",
            LanguageTag::Other => "O",
        }
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageTag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "L1" | "l1" => Ok(LanguageTag::L1),
            "L2" | "l2" => Ok(LanguageTag::L2),
            "O" | "o" | "OTHER" | "other" => Ok(LanguageTag::Other),
            other => Err(CorpusError::UnknownTag(other.to_string())),
        }
    }
}

/// A normalized surface form with its language tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    surface: String,
    pub tag: LanguageTag,
}

impl Token {
    /// Builds a token, normalizing the surface (NFC, lowercase).
    ///
    /// Empty surfaces and surfaces containing whitespace are rejected.
    pub fn new(surface: &str, tag: LanguageTag) -> Result<Self, CorpusError> {
        Ok(Token { surface: normalize_surface(surface, 0)?, tag })
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }
}

/// NFC + lowercase. `position` is only used for the error.
pub fn normalize_surface(raw: &str, position: usize) -> Result<String, CorpusError> {
    if raw.is_empty() || raw.chars().any(char::is_whitespace) {
        return Err(CorpusError::MalformedToken { position, token: raw.to_string() });
    }
    let lowered: String = raw.nfc().collect::<String>().to_lowercase();
    Ok(lowered.nfc().collect())
}

/// How a word present in both word lists is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapPolicy {
    /// Ambiguous words are tagged `Other`.
    #[default]
    Other,
    PreferL1,
    PreferL2,
    /// Pick the language with the larger recorded count; ties fall back to `Other`.
    FrequencyRatio,
}

impl FromStr for OverlapPolicy {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "other" => Ok(OverlapPolicy::Other),
            "prefer-l1" => Ok(OverlapPolicy::PreferL1),
            "prefer-l2" => Ok(OverlapPolicy::PreferL2),
            "frequency-ratio" => Ok(OverlapPolicy::FrequencyRatio),
            _ => Err(CorpusError::UnknownPolicy(s.to_string())),
        }
    }
}

/// Two word lists with per-word counts and an overlap policy.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    l1: HashMap<String, u64>,
    l2: HashMap<String, u64>,
    pub policy: OverlapPolicy,
}

impl Lexicon {
    pub fn new(policy: OverlapPolicy) -> Self {
        Lexicon { policy, ..Default::default() }
    }

    /// Builds a lexicon from plain word lists (count 1 each).
    pub fn from_words<'a>(
        l1: impl IntoIterator<Item = &'a str>,
        l2: impl IntoIterator<Item = &'a str>,
        policy: OverlapPolicy,
    ) -> Result<Self, CorpusError> {
        let mut lex = Lexicon::new(policy);
        for w in l1 {
            lex.insert(w, LanguageTag::L1, 1)?;
        }
        for w in l2 {
            lex.insert(w, LanguageTag::L2, 1)?;
        }
        Ok(lex)
    }

    /// Adds `count` occurrences of `word` to the list for `lang`.
    pub fn insert(&mut self, word: &str, lang: LanguageTag, count: u64) -> Result<(), CorpusError> {
        let word = normalize_surface(word, 0)?;
        let list = match lang {
            LanguageTag::L1 => &mut self.l1,
            LanguageTag::L2 => &mut self.l2,
            LanguageTag::Other => return Err(CorpusError::UnknownTag("O".into())),
        };
        *list.entry(word).or_insert(0) += count;
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.l1.is_empty() && self.l2.is_empty()
    }

    pub fn len(&self) -> usize {
        self.l1.len() + self.l2.len()
    }

    /// Resolves an already-normalized word.
    pub fn lookup(&self, word: &str) -> LanguageTag {
        match (self.l1.get(word), self.l2.get(word)) {
            (Some(_), None) => LanguageTag::L1,
            (None, Some(_)) => LanguageTag::L2,
            (None, None) => LanguageTag::Other,
            (Some(&c1), Some(&c2)) => match self.policy {
                OverlapPolicy::Other => LanguageTag::Other,
                OverlapPolicy::PreferL1 => LanguageTag::L1,
                OverlapPolicy::PreferL2 => LanguageTag::L2,
                OverlapPolicy::FrequencyRatio => match c1.cmp(&c2) {
                    std::cmp::Ordering::Greater => LanguageTag::L1,
                    std::cmp::Ordering::Less => LanguageTag::L2,
                    std::cmp::Ordering::Equal => LanguageTag::Other,
                },
            },
        }
    }
}

/// Tags raw tokens against the lexicon.
///
/// Tokens without any alphabetic character (punctuation, digits) are always
/// `Other`. An empty input yields an empty output.
pub fn tag_tokens<S: AsRef<str>>(raw_tokens: &[S], lexicon: &Lexicon) -> Result<Vec<Token>, CorpusError> {
    if lexicon.is_empty() {
        return Err(CorpusError::EmptyLexicon);
    }
    raw_tokens
        .iter()
        .enumerate()
        .map(|(position, raw)| {
            let surface = normalize_surface(raw.as_ref(), position)?;
            let tag = if surface.chars().any(char::is_alphabetic) {
                lexicon.lookup(&surface)
            } else {
                LanguageTag::Other
            };
            Ok(Token { surface, tag })
        })
        .collect()
}
