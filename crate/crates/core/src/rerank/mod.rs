//! Second-stage re-ranking: split each candidate's text into passages, score
//! (query, passage) pairs with an external scorer, aggregate per document and
//! re-sort.

pub mod conformance;
mod passages;
mod protocol;

use std::cmp::Ordering;
use std::time::Duration;

pub use passages::{passage_sizes, split_passages, DEFAULT_PASSAGE_TOKENS, MIN_PASSAGE_TOKENS};
pub use protocol::{
    checked_batch, decode_handshake, decode_response, encode_handshake, encode_request,
    encode_response, match_responses, ConstantScorer, FnScorer, ResponseRecord, ScoreRequest,
    ScoreResponse, Scorer, ScorerError, WireScorer, DEFAULT_TIMEOUT, PROTOCOL_VERSION,
};

use crate::corpus::{concat_fields, Corpus, FieldSelector};
use crate::error::{Error, Result};
use crate::first_stage::Candidate;
use crate::trec::QueryField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Max,
    Mean,
}

impl Aggregation {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::InvalidArgument(format!("unknown aggregation `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
        }
    }

    pub fn aggregate(&self, scores: &[f64]) -> f64 {
        match self {
            Aggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankConfig {
    pub query_field: QueryField,
    pub doc_fields: FieldSelector,
    pub max_passage_tokens: usize,
    pub aggregation: Aggregation,
    pub batch_size: usize,
    /// Batches handed to the scorer at once.
    pub window: usize,
    pub retry: RetryPolicy,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            query_field: QueryField::Question,
            doc_fields: FieldSelector::TITLE_ABSTRACT,
            max_passage_tokens: DEFAULT_PASSAGE_TOKENS,
            aggregation: Aggregation::Max,
            batch_size: 32,
            window: 4,
            retry: RetryPolicy::default(),
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_passage_tokens < MIN_PASSAGE_TOKENS {
            return Err(Error::InvalidArgument(format!(
                "max_passage_tokens must be >= {MIN_PASSAGE_TOKENS}, got {}",
                self.max_passage_tokens
            )));
        }
        if self.batch_size == 0 || self.window == 0 {
            return Err(Error::InvalidArgument("batch_size and window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Owns a scorer and hands out request ids that stay unique for the life of
/// the connection.
pub struct Reranker<S> {
    config: RerankConfig,
    scorer: S,
    next_id: u64,
}

impl<S: Scorer> Reranker<S> {
    pub fn new(config: RerankConfig, scorer: S) -> Result<Self> {
        config.validate()?;
        Ok(Reranker {
            config,
            scorer,
            next_id: 0,
        })
    }

    pub fn config(&self) -> &RerankConfig {
        &self.config
    }

    pub fn into_scorer(self) -> S {
        self.scorer
    }

    fn requests(&mut self, query: &str, passages: &[(usize, String)]) -> Vec<ScoreRequest> {
        passages
            .iter()
            .map(|(_, p)| {
                let id = self.next_id;
                self.next_id += 1;
                ScoreRequest {
                    request_id: id,
                    query_text: query.to_string(),
                    passage_text: p.clone(),
                }
            })
            .collect()
    }

    fn retry_batch(&mut self, query: &str, slice: &[(usize, String)], first: ScorerError) -> std::result::Result<Vec<ScoreResponse>, ScorerError> {
        let mut last = first;
        for attempt in 0..self.config.retry.retries {
            if !last.is_transient() {
                return Err(last);
            }
            std::thread::sleep(self.config.retry.base_delay * 2u32.pow(attempt as u32));
            // fresh ids, so late answers to the failed attempt cannot be
            // mistaken for these
            let reqs = self.requests(query, slice);
            match checked_batch(&mut self.scorer, &reqs) {
                Ok(r) => return Ok(r),
                Err(e) => last = e,
            }
        }
        if last.is_transient() {
            Err(ScorerError::Exhausted {
                attempts: self.config.retry.retries + 1,
                last: Box::new(last),
            })
        } else {
            Err(last)
        }
    }

    /// Re-rank `candidates` for `query`. Output order: aggregated passage
    /// score descending, then first-stage score descending, then doc_id.
    pub fn rerank(&mut self, candidates: &[Candidate], query: &str, docs: &Corpus) -> Result<Vec<Candidate>> {
        // (candidate index, passage text)
        let mut passages: Vec<(usize, String)> = Vec::new();
        for (ci, c) in candidates.iter().enumerate() {
            let doc = docs
                .get(&c.doc_id)
                .ok_or_else(|| Error::UnknownDocument(c.doc_id.clone()))?;
            let text = concat_fields(doc, self.config.doc_fields);
            for p in split_passages(&text, self.config.max_passage_tokens) {
                passages.push((ci, p));
            }
        }

        let mut scores: Vec<Vec<f64>> = vec![Vec::new(); candidates.len()];
        let chunk = self.config.batch_size;
        let per_window = chunk * self.config.window;
        let mut done_passages = 0;
        for window in passages.chunks(per_window) {
            let slices: Vec<&[(usize, String)]> = window.chunks(chunk).collect();
            let reqs: Vec<Vec<ScoreRequest>> = slices.iter().map(|s| self.requests(query, s)).collect();
            let refs: Vec<&[ScoreRequest]> = reqs.iter().map(Vec::as_slice).collect();
            let results = self.scorer.score_many(&refs);
            for ((slice, reqs), result) in slices.iter().zip(&reqs).zip(results) {
                let checked = result.and_then(|raw| match_responses(reqs, raw));
                let responses = match checked {
                    Ok(r) => r,
                    Err(e) => self.retry_batch(query, slice, e).map_err(|source| Error::RerankAborted {
                        completed: done_passages,
                        total: passages.len(),
                        source,
                    })?,
                };
                for ((ci, _), r) in slice.iter().zip(responses) {
                    scores[*ci].push(r.score);
                }
                done_passages += slice.len();
            }
        }

        let agg = self.config.aggregation;
        let mut order: Vec<(usize, f64)> = scores
            .iter()
            .enumerate()
            .map(|(i, s)| (i, agg.aggregate(s)))
            .collect();
        order.sort_by(|a, b| {
            let (ca, cb) = (&candidates[a.0], &candidates[b.0]);
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then(cb.score.partial_cmp(&ca.score).unwrap_or(Ordering::Equal))
                .then(ca.doc_id.cmp(&cb.doc_id))
        });
        Ok(order
            .into_iter()
            .enumerate()
            .map(|(rank, (i, score))| Candidate {
                doc_id: candidates[i].doc_id.clone(),
                score,
                rank: rank + 1,
            })
            .collect())
    }
}

/// One-shot convenience over [`Reranker`].
pub fn rerank<S: Scorer>(
    candidates: &[Candidate],
    query: &str,
    config: &RerankConfig,
    docs: &Corpus,
    scorer: S,
) -> Result<Vec<Candidate>> {
    Reranker::new(config.clone(), scorer)?.rerank(candidates, query, docs)
}
