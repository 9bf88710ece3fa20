use std::collections::BTreeMap;

use super::bm25::bm25_accumulate;
use super::{check_k, top_k, Bm25Params, Candidate, DateFilter, WeightedQuery};
use crate::analysis::Analyzer;
use crate::error::{Error, Result};
use crate::index::InvertedIndex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rm3Params {
    pub fb_terms: usize,
    pub fb_docs: usize,
    /// Interpolation weight of the original query model.
    pub orig_weight: f64,
}

impl Rm3Params {
    pub const DEFAULT: Rm3Params = Rm3Params {
        fb_terms: 10,
        fb_docs: 10,
        orig_weight: 0.5,
    };

    pub fn new(fb_terms: usize, fb_docs: usize, orig_weight: f64) -> Result<Self> {
        if !(1..=20).contains(&fb_terms) || !(1..=20).contains(&fb_docs) {
            return Err(Error::InvalidArgument(format!(
                "rm3 fb_terms and fb_docs must be in [1,20], got {fb_terms} and {fb_docs}"
            )));
        }
        if !(0.0..=1.0).contains(&orig_weight) {
            return Err(Error::InvalidArgument(format!(
                "rm3 orig_weight must be in [0,1], got {orig_weight}"
            )));
        }
        Ok(Rm3Params {
            fb_terms,
            fb_docs,
            orig_weight,
        })
    }
}

impl Default for Rm3Params {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rm3Expansion {
    /// Final interpolated model; weights sum to 1. Zero-weight terms are
    /// omitted.
    pub query: WeightedQuery,
    /// The kept relevance-model terms with their renormalized p(w|R).
    pub feedback_terms: Vec<(String, f64)>,
    /// No feedback documents were retrieved; `query` is the original model.
    pub no_feedback: bool,
}

/// Relevance model from the top `fb_docs` BM25 documents:
/// `p(w|R) ∝ Σ_d p(w|d) · s'(d)` with `p(w|d) = tf/|d|` and `s'` the first
/// pass scores normalized to sum to 1. The `fb_terms` most probable terms
/// are kept (ties by term), renormalized, and interpolated with the
/// original query model.
pub fn rm3_expand(
    index: &InvertedIndex,
    analyzer: &Analyzer,
    query_text: &str,
    base: Bm25Params,
    rm3: Rm3Params,
) -> Result<Rm3Expansion> {
    let original = WeightedQuery::language_model(analyzer, query_text)?;
    let first_pass = top_k(index, bm25_accumulate(index, &original, base, None), rm3.fb_docs);
    let score_sum: f64 = first_pass.iter().map(|c| c.score).sum();
    if first_pass.is_empty() || score_sum <= 0.0 {
        return Ok(Rm3Expansion {
            query: original,
            feedback_terms: Vec::new(),
            no_feedback: true,
        });
    }

    let mut relevance: BTreeMap<&str, f64> = BTreeMap::new();
    for c in &first_pass {
        let ord = index.doc_ord(&c.doc_id).expect("candidate from this index");
        let len = index.doc_len(ord) as f64;
        let doc_weight = c.score / score_sum;
        for (term, tf) in index.doc_vector(ord) {
            *relevance.entry(term).or_default() += tf as f64 / len * doc_weight;
        }
    }
    let mut ranked: Vec<(&str, f64)> = relevance.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(rm3.fb_terms);
    let kept_mass: f64 = ranked.iter().map(|(_, p)| p).sum();
    let feedback_terms: Vec<(String, f64)> = ranked
        .into_iter()
        .map(|(t, p)| (t.to_string(), p / kept_mass))
        .collect();

    let alpha = rm3.orig_weight;
    let mut mixed: BTreeMap<String, f64> = BTreeMap::new();
    for (t, w) in &original.terms {
        *mixed.entry(t.clone()).or_default() += alpha * w;
    }
    for (t, p) in &feedback_terms {
        *mixed.entry(t.clone()).or_default() += (1.0 - alpha) * p;
    }
    mixed.retain(|_, w| *w > 0.0);
    Ok(Rm3Expansion {
        query: WeightedQuery {
            terms: mixed.into_iter().collect(),
        },
        feedback_terms,
        no_feedback: false,
    })
}

/// Expand with RM3 (first pass unfiltered), then rank with BM25 using the
/// expanded weights. The date filter applies to the final ranking.
pub fn rm3_search(
    index: &InvertedIndex,
    analyzer: &Analyzer,
    query_text: &str,
    base: Bm25Params,
    rm3: Rm3Params,
    k: usize,
    filter: Option<&DateFilter>,
) -> Result<(Vec<Candidate>, Rm3Expansion)> {
    check_k(k)?;
    let expansion = rm3_expand(index, analyzer, query_text, base, rm3)?;
    let ranked = top_k(index, bm25_accumulate(index, &expansion.query, base, filter), k);
    Ok((ranked, expansion))
}
