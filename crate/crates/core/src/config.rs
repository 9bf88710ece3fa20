//! Flat `key = value` configuration, presets, and the resolved pipeline
//! configuration.
//!
//! Layers are applied in order defaults < config file < preset < explicit
//! flags; a later layer overrides a key set by an earlier one. A preset is
//! nothing more than a fixed list of key/value pairs, so a preset plus
//! overrides resolves exactly like the same keys spelled out by hand.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::NaiveDate;

use crate::corpus::FieldSelector;
use crate::error::{Error, Result};
use crate::first_stage::{Bm25Params, DateFilter, FirstStageModel, Rm3Params, SdmParams, DEFAULT_DEPTH};
use crate::rerank::{Aggregation, RerankConfig, RetryPolicy, DEFAULT_TIMEOUT};
use crate::trec::QueryField;

/// Every recognized key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("stage1.model", "first-stage ranker: bm25, rm3 or sdm"),
    ("stage1.k", "candidates kept per topic"),
    ("stage1.date_min", "earliest publication date kept (YYYY-MM-DD), or `none`"),
    ("stage1.query_field", "topic field used for retrieval: query, question, narrative"),
    ("stage1.doc_fields", "fields the index must have been built from"),
    ("bm25.k1", "BM25 term-frequency saturation"),
    ("bm25.b", "BM25 length normalization"),
    ("rm3.fb_terms", "expansion terms kept"),
    ("rm3.fb_docs", "feedback documents"),
    ("rm3.orig_weight", "weight of the original query model"),
    ("sdm.w_term", "unigram feature weight"),
    ("sdm.w_ordered", "ordered-window feature weight"),
    ("sdm.w_unordered", "unordered-window feature weight"),
    ("sdm.window", "unordered window width in tokens"),
    ("sdm.mu", "Dirichlet prior"),
    ("rerank.query_field", "topic field sent to the scorer"),
    ("rerank.doc_fields", "document fields split into passages"),
    ("rerank.aggregation", "passage score aggregation: max or mean"),
    ("rerank.passage_tokens", "maximum tokens per passage"),
    ("rerank.batch_size", "requests per scorer batch"),
    ("rerank.window", "batches in flight at once"),
    ("rerank.retries", "retries per failed batch"),
    ("rerank.timeout_ms", "per-batch scorer timeout"),
    ("run_tag", "tag written in the last run-file column"),
    ("index", "index file"),
    ("corpus", "corpus directory (metadata.csv and fulltext files)"),
    ("topics", "topics file"),
    ("qrels", "relevance judgments"),
    ("output", "output run file"),
    ("scorer", "scorer endpoint: echo, stdio:<cmd>, tcp:<host:port>, unix:<path>"),
];

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    /// `key = value` lines; `#` starts a comment line.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut s = Settings::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::line(source, i + 1, "expected `key = value`"))?;
            s.set(k.trim(), v.trim()).map_err(|e| Error::line(source, i + 1, e.to_string()))?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !known(key) {
            return Err(Error::InvalidArgument(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Overlay `other` on top of `self`.
    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Tuned BM25 over full text with the keyword query, documents from
    /// 2020 onward, re-ranked on the question over title and abstract.
    Run1,
    /// Default BM25 with the question over title and abstract in both
    /// stages, no date filter.
    Run2,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "run1" => Ok(Preset::Run1),
            "run2" => Ok(Preset::Run2),
            other => Err(Error::InvalidArgument(format!("unknown preset `{other}` (run1, run2)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Run1 => "run1",
            Preset::Run2 => "run2",
        }
    }

    pub fn settings(&self) -> Settings {
        let pairs: &[(&str, &str)] = match self {
            Preset::Run1 => &[
                ("stage1.model", "bm25"),
                ("bm25.k1", "3.9"),
                ("bm25.b", "0.55"),
                ("stage1.query_field", "query"),
                ("stage1.doc_fields", "full_text"),
                ("stage1.date_min", "2020-01-01"),
                ("rerank.query_field", "question"),
                ("rerank.doc_fields", "title_abstract"),
                ("run_tag", "run1"),
            ],
            Preset::Run2 => &[
                ("stage1.model", "bm25"),
                ("bm25.k1", "0.9"),
                ("bm25.b", "0.4"),
                ("stage1.query_field", "question"),
                ("stage1.doc_fields", "title_abstract"),
                ("stage1.date_min", "none"),
                ("rerank.query_field", "question"),
                ("rerank.doc_fields", "title_abstract"),
                ("run_tag", "run2"),
            ],
        };
        let mut s = Settings::new();
        for (k, v) in pairs {
            s.set(k, *v).expect("preset keys are known");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Config {
    pub model: FirstStageModel,
    pub k: usize,
    pub date_min: Option<NaiveDate>,
    pub query_field: QueryField,
    pub doc_fields: FieldSelector,
}

impl Stage1Config {
    pub fn date_filter(&self) -> Option<DateFilter> {
        self.date_min.map(DateFilter::new)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub index: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub topics: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub scorer: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stage1: Stage1Config,
    pub rerank: RerankConfig,
    pub scorer_timeout: Duration,
    pub run_tag: String,
    pub paths: Paths,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse `{v}`")))
}

impl PipelineConfig {
    /// Resolve the built-in defaults overlaid with `layers` in order.
    pub fn resolve(layers: &[&Settings]) -> Result<Self> {
        let mut s = Settings::new();
        for l in layers {
            s.merge(l);
        }
        let get = |k: &str| s.get(k);
        let num = |k: &str| get(k).map(|v| parse_num::<f64>(k, v)).transpose();
        let count = |k: &str| get(k).map(|v| parse_num::<usize>(k, v)).transpose();

        let bd = Bm25Params::DEFAULT;
        let bm25 = Bm25Params::new(num("bm25.k1")?.unwrap_or(bd.k1), num("bm25.b")?.unwrap_or(bd.b))?;
        let rd = Rm3Params::DEFAULT;
        let sd = SdmParams::DEFAULT;
        let model = match get("stage1.model").unwrap_or("bm25").trim().to_ascii_lowercase().as_str() {
            "bm25" => FirstStageModel::Bm25(bm25),
            "rm3" => FirstStageModel::Rm3 {
                base: bm25,
                rm3: Rm3Params::new(
                    count("rm3.fb_terms")?.unwrap_or(rd.fb_terms),
                    count("rm3.fb_docs")?.unwrap_or(rd.fb_docs),
                    num("rm3.orig_weight")?.unwrap_or(rd.orig_weight),
                )?,
            },
            "sdm" => {
                let p = SdmParams {
                    w_term: num("sdm.w_term")?.unwrap_or(sd.w_term),
                    w_ordered: num("sdm.w_ordered")?.unwrap_or(sd.w_ordered),
                    w_unordered: num("sdm.w_unordered")?.unwrap_or(sd.w_unordered),
                    window: count("sdm.window")?.unwrap_or(sd.window),
                    mu: num("sdm.mu")?.unwrap_or(sd.mu),
                    ..sd
                };
                p.validate()?;
                FirstStageModel::Sdm(p)
            }
            other => return Err(Error::InvalidArgument(format!("stage1.model: unknown model `{other}`"))),
        };
        let date_min = match get("stage1.date_min").map(str::trim) {
            None | Some("") | Some("none") => None,
            Some(d) => Some(
                NaiveDate::parse_from_str(d, "%Y-%m-%d")
                    .map_err(|_| Error::InvalidArgument(format!("stage1.date_min: `{d}` is not YYYY-MM-DD")))?,
            ),
        };
        let k = count("stage1.k")?.unwrap_or(DEFAULT_DEPTH);
        if k == 0 {
            return Err(Error::InvalidArgument("stage1.k must be >= 1".into()));
        }
        let stage1 = Stage1Config {
            model,
            k,
            date_min,
            query_field: get("stage1.query_field").map(QueryField::parse).transpose()?.unwrap_or(QueryField::Query),
            doc_fields: get("stage1.doc_fields")
                .map(FieldSelector::parse)
                .transpose()?
                .unwrap_or(FieldSelector::FULL_TEXT),
        };

        let rdef = RerankConfig::default();
        let rerank = RerankConfig {
            query_field: get("rerank.query_field").map(QueryField::parse).transpose()?.unwrap_or(rdef.query_field),
            doc_fields: get("rerank.doc_fields").map(FieldSelector::parse).transpose()?.unwrap_or(rdef.doc_fields),
            max_passage_tokens: count("rerank.passage_tokens")?.unwrap_or(rdef.max_passage_tokens),
            aggregation: get("rerank.aggregation").map(Aggregation::parse).transpose()?.unwrap_or(rdef.aggregation),
            batch_size: count("rerank.batch_size")?.unwrap_or(rdef.batch_size),
            window: count("rerank.window")?.unwrap_or(rdef.window),
            retry: RetryPolicy {
                retries: count("rerank.retries")?.unwrap_or(rdef.retry.retries),
                ..rdef.retry
            },
        };
        rerank.validate()?;
        let scorer_timeout = count("rerank.timeout_ms")?
            .map(|ms| Duration::from_millis(ms as u64))
            .unwrap_or(DEFAULT_TIMEOUT);

        let run_tag = get("run_tag").unwrap_or("covsearch").trim().to_string();
        if run_tag.is_empty() || run_tag.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "run_tag must be non-empty without whitespace, got `{run_tag}`"
            )));
        }
        let path = |k: &str| get(k).map(PathBuf::from);
        Ok(PipelineConfig {
            stage1,
            rerank,
            scorer_timeout,
            run_tag,
            paths: Paths {
                index: path("index"),
                corpus: path("corpus"),
                topics: path("topics"),
                qrels: path("qrels"),
                output: path("output"),
                scorer: get("scorer").map(str::to_string),
            },
        })
    }

    /// Fully spelled-out settings that resolve back to `self`.
    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::new();
        let mut put = |k: &str, v: String| s.set(k, v).expect("known key");
        let st = &self.stage1;
        put("stage1.model", st.model.name().to_string());
        put("stage1.k", st.k.to_string());
        put(
            "stage1.date_min",
            st.date_min.map_or("none".to_string(), |d| d.format("%Y-%m-%d").to_string()),
        );
        put("stage1.query_field", st.query_field.name().to_string());
        put("stage1.doc_fields", st.doc_fields.name());
        match st.model {
            FirstStageModel::Bm25(p) => {
                put("bm25.k1", p.k1.to_string());
                put("bm25.b", p.b.to_string());
            }
            FirstStageModel::Rm3 { base, rm3 } => {
                put("bm25.k1", base.k1.to_string());
                put("bm25.b", base.b.to_string());
                put("rm3.fb_terms", rm3.fb_terms.to_string());
                put("rm3.fb_docs", rm3.fb_docs.to_string());
                put("rm3.orig_weight", rm3.orig_weight.to_string());
            }
            FirstStageModel::Sdm(p) => {
                put("sdm.w_term", p.w_term.to_string());
                put("sdm.w_ordered", p.w_ordered.to_string());
                put("sdm.w_unordered", p.w_unordered.to_string());
                put("sdm.window", p.window.to_string());
                put("sdm.mu", p.mu.to_string());
            }
        }
        let r = &self.rerank;
        put("rerank.query_field", r.query_field.name().to_string());
        put("rerank.doc_fields", r.doc_fields.name());
        put("rerank.aggregation", r.aggregation.name().to_string());
        put("rerank.passage_tokens", r.max_passage_tokens.to_string());
        put("rerank.batch_size", r.batch_size.to_string());
        put("rerank.window", r.window.to_string());
        put("rerank.retries", r.retry.retries.to_string());
        put("rerank.timeout_ms", self.scorer_timeout.as_millis().to_string());
        put("run_tag", self.run_tag.clone());
        let p = &self.paths;
        for (k, v) in [
            ("index", &p.index),
            ("corpus", &p.corpus),
            ("topics", &p.topics),
            ("qrels", &p.qrels),
            ("output", &p.output),
        ] {
            if let Some(v) = v {
                put(k, v.display().to_string());
            }
        }
        if let Some(sc) = &p.scorer {
            put("scorer", sc.clone());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(layers: &[&Settings]) -> PipelineConfig {
        PipelineConfig::resolve(layers).unwrap()
    }

    #[test]
    fn presets() {
        let run1 = resolve(&[&Preset::Run1.settings()]);
        assert_eq!(run1.stage1.model, FirstStageModel::Bm25(Bm25Params::TUNED));
        assert_eq!(run1.stage1.date_min, NaiveDate::from_ymd_opt(2020, 1, 1));
        assert_eq!(run1.stage1.query_field, QueryField::Query);
        assert_eq!(run1.stage1.doc_fields, FieldSelector::FULL_TEXT);
        assert_eq!(run1.rerank.query_field, QueryField::Question);
        assert_eq!(run1.rerank.doc_fields, FieldSelector::TITLE_ABSTRACT);

        let run2 = resolve(&[&Preset::Run2.settings()]);
        assert_eq!(run2.stage1.model, FirstStageModel::Bm25(Bm25Params::DEFAULT));
        assert_eq!(run2.stage1.date_min, None);
        assert_eq!(run2.stage1.query_field, QueryField::Question);
        assert_eq!(run2.stage1.doc_fields, FieldSelector::TITLE_ABSTRACT);
    }

    #[test]
    fn precedence() {
        let file = Settings::parse("# tuned\nbm25.k1 = 2.0\nstage1.k = 50\n", "cfg").unwrap();
        let mut flags = Settings::new();
        flags.set("bm25.b", "0.3").unwrap();
        let c = resolve(&[&file, &Preset::Run1.settings(), &flags]);
        // preset beats the file, flags beat the preset
        assert_eq!(c.stage1.model, FirstStageModel::Bm25(Bm25Params { k1: 3.9, b: 0.3 }));
        assert_eq!(c.stage1.k, 50);
    }

    #[test]
    fn preset_equals_spelled_out() {
        let mut flags = Settings::new();
        flags.set("stage1.k", "100").unwrap();
        let via_preset = resolve(&[&Preset::Run2.settings(), &flags]);
        let spelled = via_preset.to_settings();
        assert_eq!(resolve(&[&spelled]), via_preset);
        for model in ["rm3", "sdm"] {
            let mut s = Settings::new();
            s.set("stage1.model", model).unwrap();
            let c = resolve(&[&s]);
            assert_eq!(resolve(&[&c.to_settings()]), c);
        }
    }

    #[test]
    fn errors() {
        assert!(Settings::parse("bm25.k3 = 1\n", "cfg").is_err());
        assert!(Settings::parse("just words\n", "cfg").is_err());
        let bad = |k: &str, v: &str| {
            let mut s = Settings::new();
            s.set(k, v).unwrap();
            PipelineConfig::resolve(&[&s]).is_err()
        };
        assert!(bad("bm25.k1", "abc"));
        assert!(bad("stage1.date_min", "2020/01/01"));
        assert!(bad("stage1.model", "dense"));
        assert!(bad("run_tag", ""));
        assert!(bad("stage1.k", "0"));
        assert!(Preset::parse("run3").is_err());
    }
}
