//! High-recall candidate generation over an [`InvertedIndex`].
//!
//! All rankers share the same conventions: only documents matching at least
//! one query term are candidates, documents rejected by the date filter are
//! removed before ranking, and ties are broken by doc_id ascending.

mod bm25;
mod rm3;
mod sdm;

use std::cmp::Ordering;

use chrono::NaiveDate;

pub use bm25::{bm25_idf, bm25_search, bm25_search_weighted, Bm25Params};
pub use rm3::{rm3_expand, rm3_search, Rm3Expansion, Rm3Params};
pub use sdm::{sdm_search, SdmParams};

use crate::analysis::Analyzer;
use crate::corpus::PublishDate;
use crate::error::{Error, Result};
use crate::index::InvertedIndex;

/// Default first-stage depth handed to the re-ranker.
pub const DEFAULT_DEPTH: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub doc_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Keeps documents published on or after `min_date`. Documents without a
/// date are rejected. Partial dates compare by the first day of their
/// period, i.e. the earliest date they could denote.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateFilter {
    pub min_date: NaiveDate,
}

impl DateFilter {
    pub fn new(min_date: NaiveDate) -> Self {
        DateFilter { min_date }
    }

    pub fn admits(&self, date: Option<PublishDate>) -> bool {
        date.is_some_and(|d| d.date >= self.min_date)
    }
}

fn admitted(index: &InvertedIndex, filter: Option<&DateFilter>, ord: u32) -> bool {
    filter.is_none_or(|f| f.admits(index.doc_date(ord)))
}

/// Post-hoc filter over an existing ranking; ranks are renumbered.
pub fn apply_date_filter(
    index: &InvertedIndex,
    candidates: Vec<Candidate>,
    filter: Option<&DateFilter>,
) -> Vec<Candidate> {
    let Some(f) = filter else {
        return candidates;
    };
    candidates
        .into_iter()
        .filter(|c| index.doc_ord(&c.doc_id).is_some_and(|o| f.admits(index.doc_date(o))))
        .enumerate()
        .map(|(i, c)| Candidate { rank: i + 1, ..c })
        .collect()
}

/// A query as a weighted bag of analyzed terms, sorted by term.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedQuery {
    pub terms: Vec<(String, f64)>,
}

impl WeightedQuery {
    /// Raw term counts of the analyzed query.
    pub fn counts(analyzer: &Analyzer, text: &str) -> Result<Self> {
        let stems = analyzer.stems(text);
        if stems.is_empty() {
            return Err(Error::EmptyQuery(text.to_string()));
        }
        let mut counts = std::collections::BTreeMap::<String, f64>::new();
        for s in stems {
            *counts.entry(s).or_default() += 1.0;
        }
        Ok(WeightedQuery {
            terms: counts.into_iter().collect(),
        })
    }

    /// Maximum-likelihood query model p(w|q).
    pub fn language_model(analyzer: &Analyzer, text: &str) -> Result<Self> {
        let mut q = Self::counts(analyzer, text)?;
        let total: f64 = q.terms.iter().map(|(_, c)| c).sum();
        for (_, w) in &mut q.terms {
            *w /= total;
        }
        Ok(q)
    }

    pub fn weight(&self, term: &str) -> f64 {
        self.terms
            .binary_search_by(|(t, _)| t.as_str().cmp(term))
            .map(|i| self.terms[i].1)
            .unwrap_or(0.0)
    }

    pub fn total_weight(&self) -> f64 {
        self.terms.iter().map(|(_, w)| w).sum()
    }
}

fn by_score_then_ord(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// Top `k` of `(doc_ord, score)` pairs, score descending then ordinal
/// (= doc_id) ascending.
pub(crate) fn top_k(index: &InvertedIndex, mut scored: Vec<(u32, f64)>, k: usize) -> Vec<Candidate> {
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, by_score_then_ord);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_score_then_ord);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (ord, score))| Candidate {
            doc_id: index.doc_id(ord).to_string(),
            score,
            rank: i + 1,
        })
        .collect()
}

pub(crate) fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(())
}

/// The three first-stage rankers behind one interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FirstStageModel {
    Bm25(Bm25Params),
    Rm3 { base: Bm25Params, rm3: Rm3Params },
    Sdm(SdmParams),
}

impl FirstStageModel {
    pub fn name(&self) -> &'static str {
        match self {
            FirstStageModel::Bm25(_) => "bm25",
            FirstStageModel::Rm3 { .. } => "rm3",
            FirstStageModel::Sdm(_) => "sdm",
        }
    }

    pub fn search(
        &self,
        index: &InvertedIndex,
        analyzer: &Analyzer,
        query: &str,
        k: usize,
        filter: Option<&DateFilter>,
    ) -> Result<Vec<Candidate>> {
        match self {
            FirstStageModel::Bm25(p) => bm25_search(index, analyzer, query, *p, k, filter),
            FirstStageModel::Rm3 { base, rm3 } => {
                rm3_search(index, analyzer, query, *base, *rm3, k, filter).map(|(c, _)| c)
            }
            FirstStageModel::Sdm(p) => sdm_search(index, analyzer, query, *p, k, filter),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::index::BuildOptions;

    fn dated(id: &str, text: &str, date: Option<&str>) -> Document {
        let mut d = Document::stub(id, text, "");
        d.publish_date = date.and_then(PublishDate::parse);
        d
    }

    fn jan1() -> DateFilter {
        DateFilter::new(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap())
    }

    #[test]
    fn filter_boundaries() {
        let f = jan1();
        assert!(f.admits(PublishDate::parse("2020-01-01")));
        assert!(!f.admits(PublishDate::parse("2019-12-31")));
        assert!(!f.admits(None));
        // year-only 2020 begins on the boundary; 2019-12 does not reach it
        assert!(f.admits(PublishDate::parse("2020")));
        assert!(!f.admits(PublishDate::parse("2019-12")));
    }

    #[test]
    fn filtered_search_excludes_old_and_undated() {
        let docs = [
            dated("a", "virus", Some("2019-12-31")),
            dated("b", "virus", Some("2020-01-01")),
            dated("c", "virus", None),
            dated("d", "virus", Some("2020-03-15")),
        ];
        let idx = InvertedIndex::build(&docs, &Analyzer::default(), BuildOptions::default()).unwrap();
        let an = Analyzer::default();
        let all = bm25_search(&idx, &an, "virus", Bm25Params::DEFAULT, 10, None).unwrap();
        assert_eq!(all.len(), 4);
        let got = bm25_search(&idx, &an, "virus", Bm25Params::DEFAULT, 10, Some(&jan1())).unwrap();
        let ids: Vec<_> = got.iter().map(|c| c.doc_id.as_str()).collect();
        assert_eq!(ids, ["b", "d"]);
        assert_eq!(got[1].rank, 2);

        let post = apply_date_filter(&idx, all.clone(), Some(&jan1()));
        assert_eq!(post, got);
        assert_eq!(apply_date_filter(&idx, all.clone(), None), all);
    }

    #[test]
    fn query_models() {
        let an = Analyzer::default();
        let q = WeightedQuery::language_model(&an, "virus spread of the virus").unwrap();
        assert_eq!(q.weight("viru"), 2.0 / 3.0);
        assert!((q.total_weight() - 1.0).abs() < 1e-12);
        assert!(matches!(
            WeightedQuery::counts(&an, "the of and"),
            Err(Error::EmptyQuery(_))
        ));
    }
}
