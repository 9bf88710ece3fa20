//! Evaluation measures compatible with trec_eval's definitions, plus the
//! paired t-test, per-query deltas and annotator agreement.
//!
//! Rankings are evaluated in run order. Unjudged documents count as grade 0.
//! Only topics present in the run are evaluated; run topics missing from
//! the judgments are flagged and left out of the mean.

use std::fmt;

use chrono::NaiveDate;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::PublishDate;
use crate::error::{Error, Result};
use crate::first_stage::Candidate;
use crate::trec::{Judgments, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicFlag {
    /// Topic has no judgments at all; excluded from the mean.
    NotJudged,
    /// Topic has judgments but none relevant.
    NoRelevant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub per_topic: Vec<(String, f64)>,
    pub mean: f64,
    pub flagged: Vec<(String, TopicFlag)>,
}

impl MetricReport {
    pub fn value(&self, topic: &str) -> Option<f64> {
        self.per_topic.iter().find(|(t, _)| t == topic).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gain {
    /// grade / log2(rank + 1), as trec_eval's ndcg_cut.
    #[default]
    Linear,
    /// (2^grade - 1) / log2(rank + 1).
    Exponential,
}

impl Gain {
    fn of(self, grade: u8) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => (1u32 << grade) as f64 - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Ndcg { k: usize, gain: Gain },
    Precision { k: usize, min_grade: u8 },
    Judged { k: usize },
    Recall { k: usize, min_grade: u8 },
}

impl Metric {
    pub const NDCG10: Metric = Metric::Ndcg { k: 10, gain: Gain::Linear };
    pub const P5: Metric = Metric::Precision { k: 5, min_grade: 1 };
    pub const P5_REL: Metric = Metric::Precision { k: 5, min_grade: 2 };
    pub const JUDGED5: Metric = Metric::Judged { k: 5 };
    pub const RECALL100: Metric = Metric::Recall { k: 100, min_grade: 1 };

    /// `ndcg@K`, `ndcg_exp@K`, `p@K`, `p_rel@K` (grade 2 only), `judged@K`,
    /// `recall@K`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, k) = s
            .split_once('@')
            .ok_or_else(|| Error::InvalidArgument(format!("metric `{s}` needs a cutoff, e.g. ndcg@10")))?;
        let k: usize = k
            .parse()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| Error::InvalidArgument(format!("bad cutoff in metric `{s}`")))?;
        Ok(match name {
            "ndcg" | "ndcg_cut" => Metric::Ndcg { k, gain: Gain::Linear },
            "ndcg_exp" => Metric::Ndcg { k, gain: Gain::Exponential },
            "p" | "precision" => Metric::Precision { k, min_grade: 1 },
            "p_rel" | "p2" => Metric::Precision { k, min_grade: 2 },
            "judged" => Metric::Judged { k },
            "recall" => Metric::Recall { k, min_grade: 1 },
            other => return Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        })
    }

    pub fn evaluate(&self, run: &Run, judgments: &Judgments) -> MetricReport {
        match *self {
            Metric::Ndcg { k, gain } => ndcg_at_k_with(run, judgments, k, gain),
            Metric::Precision { k, min_grade } => precision_at_k(run, judgments, k, min_grade),
            Metric::Judged { k } => judged_at_k(run, judgments, k),
            Metric::Recall { k, min_grade } => recall_at_k(run, judgments, k, min_grade),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Ndcg { k, gain: Gain::Linear } => write!(f, "ndcg@{k}"),
            Metric::Ndcg { k, gain: Gain::Exponential } => write!(f, "ndcg_exp@{k}"),
            Metric::Precision { k, min_grade: 2 } => write!(f, "p_rel@{k}"),
            Metric::Precision { k, .. } => write!(f, "p@{k}"),
            Metric::Judged { k } => write!(f, "judged@{k}"),
            Metric::Recall { k, .. } => write!(f, "recall@{k}"),
        }
    }
}

enum TopicValue {
    Value(f64),
    Flagged(f64, TopicFlag),
    Excluded(TopicFlag),
}

fn per_topic<F>(name: String, run: &Run, judgments: &Judgments, f: F) -> MetricReport
where
    F: Fn(&str, &[Candidate]) -> TopicValue,
{
    let mut per_topic = Vec::new();
    let mut flagged = Vec::new();
    for (topic, ranking) in run.topics() {
        if !judgments.has_topic(topic) {
            flagged.push((topic.to_string(), TopicFlag::NotJudged));
            continue;
        }
        match f(topic, ranking) {
            TopicValue::Value(v) => per_topic.push((topic.to_string(), v)),
            TopicValue::Flagged(v, flag) => {
                per_topic.push((topic.to_string(), v));
                flagged.push((topic.to_string(), flag));
            }
            TopicValue::Excluded(flag) => flagged.push((topic.to_string(), flag)),
        }
    }
    let mean = if per_topic.is_empty() {
        0.0
    } else {
        per_topic.iter().map(|(_, v)| v).sum::<f64>() / per_topic.len() as f64
    };
    MetricReport {
        metric: name,
        per_topic,
        mean,
        flagged,
    }
}

pub fn ndcg_at_k(run: &Run, judgments: &Judgments, k: usize) -> MetricReport {
    ndcg_at_k_with(run, judgments, k, Gain::Linear)
}

pub fn ndcg_at_k_with(run: &Run, judgments: &Judgments, k: usize, gain: Gain) -> MetricReport {
    let name = Metric::Ndcg { k, gain }.to_string();
    per_topic(name, run, judgments, |topic, ranking| {
        let discount = |i: usize| (i as f64 + 2.0).log2();
        let dcg: f64 = ranking
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, c)| gain.of(judgments.grade(topic, &c.doc_id).unwrap_or(0)) / discount(i))
            .sum();
        let mut grades: Vec<u8> = judgments
            .topic(topic)
            .map(|m| m.values().copied().filter(|&g| g > 0).collect())
            .unwrap_or_default();
        grades.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = grades
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain.of(g) / discount(i))
            .sum();
        if idcg == 0.0 {
            TopicValue::Flagged(0.0, TopicFlag::NoRelevant)
        } else {
            TopicValue::Value(dcg / idcg)
        }
    })
}

/// Fraction of the top `k` slots holding a document graded >= `min_grade`.
/// Short rankings are still divided by `k`.
pub fn precision_at_k(run: &Run, judgments: &Judgments, k: usize, min_grade: u8) -> MetricReport {
    let name = Metric::Precision { k, min_grade }.to_string();
    per_topic(name, run, judgments, |topic, ranking| {
        let hits = ranking
            .iter()
            .take(k)
            .filter(|c| judgments.grade(topic, &c.doc_id).is_some_and(|g| g >= min_grade))
            .count();
        TopicValue::Value(hits as f64 / k as f64)
    })
}

/// Fraction of the top `k` slots holding a judged document (any grade).
pub fn judged_at_k(run: &Run, judgments: &Judgments, k: usize) -> MetricReport {
    let name = Metric::Judged { k }.to_string();
    per_topic(name, run, judgments, |topic, ranking| {
        let judged = ranking
            .iter()
            .take(k)
            .filter(|c| judgments.grade(topic, &c.doc_id).is_some())
            .count();
        TopicValue::Value(judged as f64 / k as f64)
    })
}

/// Topics without relevant documents are flagged and excluded.
pub fn recall_at_k(run: &Run, judgments: &Judgments, k: usize, min_grade: u8) -> MetricReport {
    let name = Metric::Recall { k, min_grade }.to_string();
    per_topic(name, run, judgments, |topic, ranking| {
        let relevant = judgments.relevant_count(topic, min_grade);
        if relevant == 0 {
            return TopicValue::Excluded(TopicFlag::NoRelevant);
        }
        let found = ranking
            .iter()
            .take(k)
            .filter(|c| judgments.grade(topic, &c.doc_id).is_some_and(|g| g >= min_grade))
            .count();
        TopicValue::Value(found as f64 / relevant as f64)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: usize,
    pub mean_diff: f64,
    /// Every paired difference was zero; no significance claim is possible.
    pub degenerate: bool,
}

impl TTest {
    pub fn significant(&self, alpha: f64) -> bool {
        !self.degenerate && self.p < alpha
    }
}

/// Paired t-test of `a` against `b` (differences `a - b`).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let df = n - 1;
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(TTest {
            t: 0.0,
            p: 1.0,
            df,
            mean_diff: 0.0,
            degenerate: true,
        });
    }
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / df as f64;
    let se = (var / n as f64).sqrt();
    let t = mean / se;
    let p = if t.is_infinite() {
        0.0
    } else {
        let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
        (2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0)
    };
    Ok(TTest {
        t,
        p,
        df,
        mean_diff: mean,
        degenerate: false,
    })
}

/// Align two reports on the topics they both evaluated, in `a`'s order.
pub fn paired_values(a: &MetricReport, b: &MetricReport) -> (Vec<String>, Vec<f64>, Vec<f64>) {
    let mut topics = Vec::new();
    let (mut va, mut vb) = (Vec::new(), Vec::new());
    for (t, x) in &a.per_topic {
        if let Some(y) = b.value(t) {
            topics.push(t.clone());
            va.push(*x);
            vb.push(y);
        }
    }
    (topics, va, vb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryDelta {
    pub topic_id: String,
    pub value_a: f64,
    pub value_b: f64,
    pub delta: f64,
}

pub fn per_query_deltas(run_a: &Run, run_b: &Run, judgments: &Judgments, metric: Metric) -> Vec<QueryDelta> {
    let (ra, rb) = (metric.evaluate(run_a, judgments), metric.evaluate(run_b, judgments));
    let (topics, va, vb) = paired_values(&ra, &rb);
    topics
        .into_iter()
        .zip(va.into_iter().zip(vb))
        .map(|(topic_id, (a, b))| QueryDelta {
            topic_id,
            value_a: a,
            value_b: b,
            delta: a - b,
        })
        .collect()
}

/// Tab-separated table with a header row.
pub fn deltas_to_tsv(metric: Metric, deltas: &[QueryDelta]) -> String {
    let mut out = format!("topic\t{metric}_a\t{metric}_b\tdelta\n");
    for d in deltas {
        out.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\n",
            d.topic_id, d.value_a, d.value_b, d.delta
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    /// `matrix[a][b]`: pairs graded `a` by the first labeler and `b` by the
    /// second.
    pub matrix: [[u64; 3]; 3],
    pub total: u64,
    pub agreement: f64,
    /// Fraction where the first labeler graded higher.
    pub a_higher: f64,
    pub a_lower: f64,
    /// The label sets share no (topic, doc) pair.
    pub no_overlap: bool,
}

/// Confusion matrix over the (topic, doc) pairs both label sets judged.
pub fn confusion_and_agreement(a: &Judgments, b: &Judgments) -> Agreement {
    let mut matrix = [[0u64; 3]; 3];
    for (topic, doc, ga) in a.iter() {
        if let Some(gb) = b.grade(topic, doc) {
            matrix[ga as usize][gb as usize] += 1;
        }
    }
    let total: u64 = matrix.iter().flatten().sum();
    if total == 0 {
        return Agreement {
            matrix,
            total,
            agreement: 0.0,
            a_higher: 0.0,
            a_lower: 0.0,
            no_overlap: true,
        };
    }
    let (mut diag, mut higher, mut lower) = (0, 0, 0);
    for (i, row) in matrix.iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            match i.cmp(&j) {
                std::cmp::Ordering::Equal => diag += n,
                std::cmp::Ordering::Greater => higher += n,
                std::cmp::Ordering::Less => lower += n,
            }
        }
    }
    let frac = |n: u64| n as f64 / total as f64;
    Agreement {
        matrix,
        total,
        agreement: frac(diag),
        a_higher: frac(higher),
        a_lower: frac(lower),
        no_overlap: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelevanceShare {
    pub judged: usize,
    /// grade >= 1
    pub relevant: usize,
    /// grade 2
    pub fully_relevant: usize,
}

impl RelevanceShare {
    pub fn relevant_fraction(&self) -> f64 {
        self.relevant as f64 / self.judged.max(1) as f64
    }

    pub fn fully_relevant_fraction(&self) -> f64 {
        self.fully_relevant as f64 / self.judged.max(1) as f64
    }
}

/// Split judged documents by publication date: `(before, on_or_after)`
/// `cutoff`. Documents without a date are skipped.
pub fn relevance_by_date<F>(judgments: &Judgments, date_of: F, cutoff: NaiveDate) -> (RelevanceShare, RelevanceShare)
where
    F: Fn(&str) -> Option<PublishDate>,
{
    let empty = RelevanceShare {
        judged: 0,
        relevant: 0,
        fully_relevant: 0,
    };
    let (mut before, mut after) = (empty, empty);
    for (_, doc, grade) in judgments.iter() {
        let Some(d) = date_of(doc) else { continue };
        let bucket = if d.date < cutoff { &mut before } else { &mut after };
        bucket.judged += 1;
        bucket.relevant += usize::from(grade >= 1);
        bucket.fully_relevant += usize::from(grade == 2);
    }
    (before, after)
}
