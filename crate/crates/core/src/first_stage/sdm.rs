use std::collections::HashMap;

use super::{admitted, check_k, top_k, Candidate, DateFilter};
use crate::analysis::Analyzer;
use crate::error::{Error, Result};
use crate::index::{InvertedIndex, Posting};

/// Sequential dependence model parameters.
///
/// The ordered feature counts `q_i` followed by `q_{i+1}` within
/// `ordered_gap` positions (1 = exact bigram). The unordered feature counts
/// occurrences of `q_i` with some other occurrence of `q_{i+1}` inside a
/// window of `window` positions, in either order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdmParams {
    pub w_term: f64,
    pub w_ordered: f64,
    pub w_unordered: f64,
    pub window: usize,
    pub ordered_gap: usize,
    /// Dirichlet prior.
    pub mu: f64,
}

impl SdmParams {
    pub const DEFAULT: SdmParams = SdmParams {
        w_term: 0.85,
        w_ordered: 0.1,
        w_unordered: 0.05,
        window: 8,
        ordered_gap: 1,
        mu: 1000.0,
    };

    pub fn with_weights(w_term: f64, w_ordered: f64, w_unordered: f64) -> Result<Self> {
        let p = SdmParams {
            w_term,
            w_ordered,
            w_unordered,
            ..Self::DEFAULT
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_term, self.w_ordered, self.w_unordered];
        if ws.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::InvalidArgument("sdm weights must be >= 0".into()));
        }
        let sum: f64 = ws.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("sdm weights must sum to 1, got {sum}")));
        }
        if self.window < 2 || self.ordered_gap < 1 {
            return Err(Error::InvalidArgument(
                "sdm window must be >= 2 and ordered gap >= 1".into(),
            ));
        }
        if self.mu.is_nan() || self.mu <= 0.0 {
            return Err(Error::InvalidArgument("sdm mu must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for SdmParams {
    fn default() -> Self {
        Self::DEFAULT
    }
}

pub(crate) fn ordered_count(first: &[u32], second: &[u32], gap: usize) -> u32 {
    let gap = gap as u32;
    first
        .iter()
        .filter(|&&p| {
            // positions sorted: find first q > p
            let i = second.partition_point(|&q| q <= p);
            second.get(i).is_some_and(|&q| q - p <= gap)
        })
        .count() as u32
}

pub(crate) fn unordered_count(first: &[u32], second: &[u32], window: usize) -> u32 {
    let reach = window as u32 - 1;
    first
        .iter()
        .filter(|&&p| {
            let lo = p.saturating_sub(reach);
            let i = second.partition_point(|&q| q < lo);
            second[i..]
                .iter()
                .take_while(|&&q| q <= p + reach)
                .any(|&q| q != p)
        })
        .count() as u32
}

/// Per-document counts of one pair feature, over documents containing both
/// terms.
fn pair_counts(
    a: &[Posting],
    b: &[Posting],
    count: impl Fn(&[u32], &[u32]) -> u32,
) -> HashMap<u32, u32> {
    let mut out = HashMap::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].doc_ord.cmp(&b[j].doc_ord) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let c = count(&a[i].positions, &b[j].positions);
                if c > 0 {
                    out.insert(a[i].doc_ord, c);
                }
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Dirichlet-smoothed log-likelihood of a feature with per-document counts
/// `counts` and collection frequency `cf`, for document `ord`.
struct Feature {
    counts: HashMap<u32, u32>,
    background: f64,
}

impl Feature {
    fn new(counts: HashMap<u32, u32>, total_terms: u64) -> Option<Self> {
        let cf: u64 = counts.values().map(|&c| c as u64).sum();
        (cf > 0).then(|| Feature {
            counts,
            background: cf as f64 / total_terms as f64,
        })
    }

    fn log_prob(&self, ord: u32, doc_len: f64, mu: f64) -> f64 {
        let tf = self.counts.get(&ord).copied().unwrap_or(0) as f64;
        ((tf + mu * self.background) / (doc_len + mu)).ln()
    }
}

/// Rank by `w_term·Σ f_T + w_ordered·Σ f_O + w_unordered·Σ f_U` over query
/// terms and adjacent query-term pairs. Features that never occur in the
/// collection are dropped (they would be -inf for every document).
pub fn sdm_search(
    index: &InvertedIndex,
    analyzer: &Analyzer,
    query_text: &str,
    params: SdmParams,
    k: usize,
    filter: Option<&DateFilter>,
) -> Result<Vec<Candidate>> {
    check_k(k)?;
    params.validate()?;
    let stems = analyzer.stems(query_text);
    if stems.is_empty() {
        return Err(Error::EmptyQuery(query_text.to_string()));
    }
    let needs_pairs = stems.len() > 1 && (params.w_ordered > 0.0 || params.w_unordered > 0.0);
    if needs_pairs && !index.has_positions() {
        return Err(Error::InvalidArgument(
            "sdm pair features need an index built with positions".into(),
        ));
    }
    let total = index.stats().total_terms;

    let unigrams: Vec<Feature> = stems
        .iter()
        .filter_map(|s| {
            let counts = index.lookup(s).iter().map(|p| (p.doc_ord, p.tf)).collect();
            Feature::new(counts, total)
        })
        .collect();

    let mut ordered = Vec::new();
    let mut unordered = Vec::new();
    if needs_pairs {
        for pair in stems.windows(2) {
            let (a, b) = (index.lookup(&pair[0]), index.lookup(&pair[1]));
            if params.w_ordered > 0.0 {
                ordered.extend(Feature::new(
                    pair_counts(a, b, |x, y| ordered_count(x, y, params.ordered_gap)),
                    total,
                ));
            }
            if params.w_unordered > 0.0 {
                unordered.extend(Feature::new(
                    pair_counts(a, b, |x, y| unordered_count(x, y, params.window)),
                    total,
                ));
            }
        }
    }

    let mut matched = vec![false; index.doc_count()];
    for f in &unigrams {
        for &ord in f.counts.keys() {
            matched[ord as usize] = true;
        }
    }
    let mu = params.mu;
    let scored = (0..index.doc_count() as u32)
        .filter(|&o| matched[o as usize] && admitted(index, filter, o))
        .map(|o| {
            let len = index.doc_len(o) as f64;
            let sum = |fs: &[Feature]| fs.iter().map(|f| f.log_prob(o, len, mu)).sum::<f64>();
            let mut score = params.w_term * sum(&unigrams);
            if params.w_ordered > 0.0 {
                score += params.w_ordered * sum(&ordered);
            }
            if params.w_unordered > 0.0 {
                score += params.w_unordered * sum(&unordered);
            }
            (o, score)
        })
        .collect();
    Ok(top_k(index, scored, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::index::BuildOptions;

    #[test]
    fn window_counting() {
        assert_eq!(ordered_count(&[0, 5], &[1, 9], 1), 1);
        assert_eq!(ordered_count(&[3], &[1], 1), 0);
        assert_eq!(ordered_count(&[0], &[3], 3), 1);
        assert_eq!(unordered_count(&[5], &[1], 8), 1);
        assert_eq!(unordered_count(&[5], &[13], 8), 0);
        assert_eq!(unordered_count(&[5], &[12], 8), 1);
        // same term pair: an occurrence does not pair with itself
        assert_eq!(unordered_count(&[4], &[4], 8), 0);
        assert_eq!(unordered_count(&[4, 6], &[4, 6], 8), 2);
    }

    fn index(texts: &[(&str, &str)]) -> InvertedIndex {
        let docs: Vec<_> = texts.iter().map(|(i, t)| Document::stub(*i, *t, "")).collect();
        InvertedIndex::build(&docs, &Analyzer::default(), BuildOptions::default()).unwrap()
    }

    #[test]
    fn exact_bigram_beats_scattered_terms() {
        let idx = index(&[
            ("near", "social distancing measures hospital capacity ventilators"),
            ("far", "social measures hospital capacity ventilators distancing"),
        ]);
        let only_ordered = SdmParams {
            w_term: 0.0,
            w_ordered: 1.0,
            w_unordered: 0.0,
            ..SdmParams::DEFAULT
        };
        let got = sdm_search(&idx, &Analyzer::default(), "social distancing", only_ordered, 10, None).unwrap();
        assert_eq!(got[0].doc_id, "near");
        assert!(got[0].score > got[1].score);
    }

    #[test]
    fn single_term_query_has_no_pair_features() {
        let idx = index(&[("a", "vaccine"), ("b", "vaccine vaccine trial")]);
        let an = Analyzer::default();
        let full = sdm_search(&idx, &an, "vaccine", SdmParams::DEFAULT, 10, None).unwrap();
        let unigram = SdmParams::with_weights(1.0, 0.0, 0.0).unwrap();
        let base = sdm_search(&idx, &an, "vaccine", unigram, 10, None).unwrap();
        for (f, b) in full.iter().zip(&base) {
            assert_eq!(f.doc_id, b.doc_id);
            assert!((f.score - 0.85 * b.score).abs() < 1e-12);
        }
    }

    #[test]
    fn validation() {
        assert!(SdmParams::with_weights(0.5, 0.5, 0.5).is_err());
        assert!(SdmParams::with_weights(1.0, -0.0, 0.0).is_ok());
        let idx = index(&[("a", "x")]);
        assert!(matches!(
            sdm_search(&idx, &Analyzer::default(), "and the", SdmParams::DEFAULT, 5, None),
            Err(Error::EmptyQuery(_))
        ));
    }
}
