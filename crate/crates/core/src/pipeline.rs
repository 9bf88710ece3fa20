//! End-to-end runs: first-stage retrieval for every topic, then optional
//! re-ranking of each topic's candidates.

use crate::analysis::Analyzer;
use crate::config::Stage1Config;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::index::InvertedIndex;
use crate::rerank::{RerankConfig, Reranker, Scorer};
use crate::trec::{Run, Topic};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopicWarning {
    /// The selected field analyzed to no terms; the topic gets an empty
    /// ranking.
    EmptyQuery { topic_id: String },
}

/// First-stage ranking for every topic, in topic-file order.
pub fn stage1_run(
    index: &InvertedIndex,
    analyzer: &Analyzer,
    topics: &[Topic],
    cfg: &Stage1Config,
    tag: &str,
    exec: Exec,
) -> Result<(Run, Vec<TopicWarning>)> {
    if index.fields() != cfg.doc_fields {
        return Err(Error::InvalidArgument(format!(
            "index was built over {} but the configuration asks for {}",
            index.fields().name(),
            cfg.doc_fields.name()
        )));
    }
    let filter = cfg.date_filter();
    let results = exec.try_map(topics, |t| {
        match cfg.model.search(index, analyzer, t.field(cfg.query_field), cfg.k, filter.as_ref()) {
            Ok(hits) => Ok((hits, None)),
            Err(Error::EmptyQuery(_)) => Ok((
                Vec::new(),
                Some(TopicWarning::EmptyQuery {
                    topic_id: t.id.clone(),
                }),
            )),
            Err(e) => Err(e),
        }
    })?;
    let mut run = Run::new(tag);
    let mut warnings = Vec::new();
    for (t, (hits, warning)) in topics.iter().zip(results) {
        run.insert(t.id.clone(), hits);
        warnings.extend(warning);
    }
    Ok((run, warnings))
}

/// Re-rank every topic of `stage1`. Topics are processed in run order
/// through one scorer connection; each output ranking is a permutation of
/// its input candidates.
pub fn stage2_run<S: Scorer>(
    stage1: &Run,
    topics: &[Topic],
    corpus: &Corpus,
    cfg: &RerankConfig,
    scorer: S,
    tag: &str,
) -> Result<Run> {
    let mut reranker = Reranker::new(cfg.clone(), scorer)?;
    let mut run = Run::new(tag);
    for (topic_id, candidates) in stage1.topics() {
        let topic = topics
            .iter()
            .find(|t| t.id == topic_id)
            .ok_or_else(|| Error::InvalidArgument(format!("run topic `{topic_id}` is not in the topics file")))?;
        let ranked = if candidates.is_empty() {
            Vec::new()
        } else {
            reranker.rerank(candidates, topic.field(cfg.query_field), corpus)?
        };
        log::debug!("re-ranked topic {topic_id}: {} candidates", ranked.len());
        run.insert(topic_id.to_string(), ranked);
    }
    Ok(run)
}
