use super::{admitted, check_k, top_k, Candidate, DateFilter, WeightedQuery};
use crate::analysis::Analyzer;
use crate::error::{Error, Result};
use crate::index::InvertedIndex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Bm25Params {
    /// Toolkit defaults, used untuned.
    pub const DEFAULT: Bm25Params = Bm25Params { k1: 0.9, b: 0.4 };
    /// Recall-tuned setting for the keyword query over full text.
    pub const TUNED: Bm25Params = Bm25Params { k1: 3.9, b: 0.55 };

    pub fn new(k1: f64, b: f64) -> Result<Self> {
        if !(k1 >= 0.0 && k1.is_finite()) {
            return Err(Error::InvalidArgument(format!("bm25 k1 must be >= 0, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::InvalidArgument(format!("bm25 b must be in [0,1], got {b}")));
        }
        Ok(Bm25Params { k1, b })
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`, always positive.
pub fn bm25_idf(doc_count: usize, df: usize) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Accumulate `weight(t) * idf(t) * tf(k1+1) / (tf + k1(1 - b + b|d|/avgdl))`
/// for every document matching at least one query term.
pub(crate) fn bm25_accumulate(
    index: &InvertedIndex,
    query: &WeightedQuery,
    params: Bm25Params,
    filter: Option<&DateFilter>,
) -> Vec<(u32, f64)> {
    let n = index.doc_count();
    let avgdl = index.stats().avg_doc_len;
    let mut acc = vec![0.0f64; n];
    let mut hit = vec![false; n];
    for (term, weight) in &query.terms {
        if *weight == 0.0 {
            continue;
        }
        let postings = index.lookup(term);
        if postings.is_empty() {
            continue;
        }
        let idf = bm25_idf(n, postings.len());
        for p in postings {
            let ord = p.doc_ord as usize;
            let tf = p.tf as f64;
            // avgdl > 0 whenever a posting exists
            let norm = 1.0 - params.b + params.b * index.doc_len(p.doc_ord) as f64 / avgdl;
            acc[ord] += weight * idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm);
            hit[ord] = true;
        }
    }
    (0..n as u32)
        .filter(|&o| hit[o as usize] && admitted(index, filter, o))
        .map(|o| (o, acc[o as usize]))
        .collect()
}

/// BM25 over the analyzed query. Repeated query terms count once per
/// occurrence.
pub fn bm25_search(
    index: &InvertedIndex,
    analyzer: &Analyzer,
    query_text: &str,
    params: Bm25Params,
    k: usize,
    filter: Option<&DateFilter>,
) -> Result<Vec<Candidate>> {
    check_k(k)?;
    let query = WeightedQuery::counts(analyzer, query_text)?;
    Ok(top_k(index, bm25_accumulate(index, &query, params, filter), k))
}

/// BM25 with arbitrary per-term query weights (used for expanded queries).
pub fn bm25_search_weighted(
    index: &InvertedIndex,
    query: &WeightedQuery,
    params: Bm25Params,
    k: usize,
    filter: Option<&DateFilter>,
) -> Result<Vec<Candidate>> {
    check_k(k)?;
    Ok(top_k(index, bm25_accumulate(index, query, params, filter), k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::index::BuildOptions;

    fn index(texts: &[(&str, &str)]) -> InvertedIndex {
        let docs: Vec<_> = texts.iter().map(|(i, t)| Document::stub(*i, *t, "")).collect();
        InvertedIndex::build(&docs, &Analyzer::default(), BuildOptions::default()).unwrap()
    }

    #[test]
    fn two_doc_example() {
        let idx = index(&[("d1", "virus virus spread"), ("d2", "weather report")]);
        let got = bm25_search(&idx, &Analyzer::default(), "virus", Bm25Params::DEFAULT, 10, None).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].doc_id, "d1");
        // idf = ln(1 + 1.5/1.5); |d1| = 3, avgdl = 2.5
        let idf = 2f64.ln();
        let norm = 1.0 - 0.4 + 0.4 * 3.0 / 2.5;
        let expect = idf * 2.0 * 1.9 / (2.0 + 0.9 * norm);
        assert!((got[0].score - expect).abs() < 1e-12);
        assert!((got[0].score - 0.886258).abs() < 1e-5, "{}", got[0].score);
    }

    #[test]
    fn b_zero_ignores_length() {
        let idx = index(&[("a", "virus"), ("b", "virus masks masks masks hospital")]);
        let got = bm25_search(&idx, &Analyzer::default(), "virus", Bm25Params::new(1.2, 0.0).unwrap(), 10, None)
            .unwrap();
        assert_eq!(got[0].score, got[1].score);
        assert_eq!(got[0].doc_id, "a");
    }

    #[test]
    fn errors() {
        let idx = index(&[("a", "virus")]);
        let an = Analyzer::default();
        assert!(matches!(
            bm25_search(&idx, &an, "the", Bm25Params::DEFAULT, 10, None),
            Err(Error::EmptyQuery(_))
        ));
        assert!(matches!(
            bm25_search(&idx, &an, "virus", Bm25Params::DEFAULT, 0, None),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Bm25Params::new(-1.0, 0.5).is_err());
        assert!(Bm25Params::new(1.0, 1.5).is_err());
    }

    #[test]
    fn ties_break_by_doc_id_and_k_truncates() {
        let idx = index(&[("c", "virus"), ("a", "virus"), ("b", "virus")]);
        let an = Analyzer::default();
        let got = bm25_search(&idx, &an, "virus", Bm25Params::DEFAULT, 2, None).unwrap();
        let ids: Vec<_> = got.iter().map(|c| c.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(got.iter().map(|c| c.rank).collect::<Vec<_>>(), [1, 2]);
    }
}
