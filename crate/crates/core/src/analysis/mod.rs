//! Text analysis shared by indexing and querying: tokenization, English
//! stopword removal and Porter stemming.

mod porter;

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

pub use porter::porter_stem;

use crate::error::{Error, Result};

/// Stopword list shipped with the crate (SMART-style English list, v1).
pub const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalyzedTerm {
    pub stem: String,
    pub source_token: String,
    /// Ordinal among surviving (non-stopword) tokens.
    pub position: u32,
}

/// Lowercased maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text)
        .into_iter()
        .map(|(s, e)| text[s..e].to_lowercase())
        .collect()
}

/// Byte spans `[start, end)` of each token in `text`.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            spans.push((s, i));
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

#[derive(Debug, Clone)]
pub struct StopwordSet {
    words: HashSet<String>,
}

impl StopwordSet {
    pub fn parse(list: &str) -> Self {
        let words = list
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        StopwordSet { words }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl Default for StopwordSet {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }
}

pub fn remove_stopwords(tokens: Vec<String>, stopwords: &StopwordSet) -> Vec<String> {
    tokens.into_iter().filter(|t| !stopwords.contains(t)).collect()
}

/// The full analysis chain. Cheap to clone; the stopword set is shared.
#[derive(Debug, Clone, Default)]
pub struct Analyzer {
    stopwords: Arc<StopwordSet>,
}

impl Analyzer {
    pub fn new(stopwords: StopwordSet) -> Self {
        Analyzer {
            stopwords: Arc::new(stopwords),
        }
    }

    pub fn stopwords(&self) -> &StopwordSet {
        &self.stopwords
    }

    pub fn analyze(&self, text: &str) -> Vec<AnalyzedTerm> {
        remove_stopwords(tokenize(text), &self.stopwords)
            .into_iter()
            .enumerate()
            .map(|(i, tok)| AnalyzedTerm {
                stem: porter_stem(&tok),
                source_token: tok,
                position: i as u32,
            })
            .collect()
    }

    /// Just the stems, in order.
    pub fn stems(&self, text: &str) -> Vec<String> {
        self.analyze(text).into_iter().map(|t| t.stem).collect()
    }
}
