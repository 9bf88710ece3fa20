//! Medical training-query selection: keep queries that mention a lexicon
//! term, minus a manual exclusion list.
//!
//! Single-word terms match on analyzed (stopword-free, stemmed) tokens so
//! that inflected forms match. Multi-word terms match as contiguous runs of
//! raw lowercase tokens.

use std::collections::BTreeSet;
use std::path::Path;

use crate::analysis::{tokenize, Analyzer};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// The exclusions named in the published description of the subset.
pub const DEFAULT_EXCLUSIONS: &str = include_str!("../data/medsyn_exclusions.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    terms: BTreeSet<String>,
    exclusions: BTreeSet<String>,
}

fn normalize(line: &str) -> Option<String> {
    let t = tokenize(line).join(" ");
    (!t.is_empty()).then_some(t)
}

fn term_set(text: &str) -> BTreeSet<String> {
    text.lines().filter_map(normalize).collect()
}

impl Lexicon {
    /// Terms and exclusions, one per line. Exclusions are removed from the
    /// effective term set.
    pub fn from_lists(terms: &str, exclusions: &str) -> Self {
        let exclusions = term_set(exclusions);
        let terms = term_set(terms).into_iter().filter(|t| !exclusions.contains(t)).collect();
        Lexicon { terms, exclusions }
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }

    pub fn exclusions(&self) -> impl Iterator<Item = &str> {
        self.exclusions.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Without an exclusions path, the default list is applied.
pub fn load_lexicon(path: &Path, exclusions_path: Option<&Path>) -> Result<Lexicon> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let terms = read(path)?;
    let exclusions = match exclusions_path {
        Some(p) => read(p)?,
        None => DEFAULT_EXCLUSIONS.to_string(),
    };
    Ok(Lexicon::from_lists(&terms, &exclusions))
}

/// Precompiled matcher for a lexicon.
#[derive(Debug)]
pub struct QueryMatcher<'a> {
    analyzer: &'a Analyzer,
    stems: BTreeSet<String>,
    phrases: Vec<Vec<String>>,
}

impl<'a> QueryMatcher<'a> {
    pub fn new(lexicon: &Lexicon, analyzer: &'a Analyzer) -> Result<Self> {
        if lexicon.is_empty() {
            return Err(Error::InvalidArgument("lexicon has no terms".into()));
        }
        let mut stems = BTreeSet::new();
        let mut phrases = Vec::new();
        for term in lexicon.terms() {
            let tokens: Vec<String> = term.split(' ').map(str::to_string).collect();
            if tokens.len() == 1 {
                // a stopword alone can never match an analyzed token
                stems.extend(analyzer.stems(term));
            } else {
                phrases.push(tokens);
            }
        }
        Ok(QueryMatcher {
            analyzer,
            stems,
            phrases,
        })
    }

    pub fn matches(&self, query: &str) -> bool {
        if self.analyzer.stems(query).iter().any(|s| self.stems.contains(s)) {
            return true;
        }
        let raw = tokenize(query);
        self.phrases
            .iter()
            .any(|p| raw.windows(p.len()).any(|w| w == p.as_slice()))
    }
}

/// Ids of retained queries, in input order.
pub fn filter_queries(queries: &[(String, String)], lexicon: &Lexicon, analyzer: &Analyzer, exec: Exec) -> Result<Vec<String>> {
    let matcher = QueryMatcher::new(lexicon, analyzer)?;
    let keep = exec.map(queries, |(_, text)| matcher.matches(text));
    Ok(queries
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|((id, _), _)| id.clone())
        .collect())
}

/// `id<TAB>text` per line, as in the MS MARCO query files. Blank lines are
/// skipped.
pub fn parse_queries(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, q) = line
            .split_once('\t')
            .ok_or_else(|| Error::line(source, i + 1, "expected `id<TAB>text`"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::line(source, i + 1, "empty query id"));
        }
        out.push((id.to_string(), q.to_string()));
    }
    Ok(out)
}

pub fn read_queries(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_queries(&text, &path.display().to_string())
}
