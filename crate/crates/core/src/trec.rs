//! TREC file formats.
//!
//! * run: `topic_id Q0 doc_id rank score run_tag`, space separated
//! * qrels: `topic_id iteration doc_id grade`, grade in {0, 1, 2}
//! * topics: XML in the shared-task layout,
//!   `<topics><topic number="1"><query/><question/><narrative/></topic>...</topics>`

use std::collections::BTreeMap;
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;

use crate::error::{Error, Result};
use crate::first_stage::Candidate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryField {
    Query,
    Question,
    Narrative,
}

impl QueryField {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "query" => Ok(QueryField::Query),
            "question" => Ok(QueryField::Question),
            "narrative" => Ok(QueryField::Narrative),
            other => Err(Error::InvalidArgument(format!("unknown topic field `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            QueryField::Query => "query",
            QueryField::Question => "question",
            QueryField::Narrative => "narrative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Topic {
    pub id: String,
    pub query: String,
    pub question: String,
    pub narrative: String,
}

impl Topic {
    pub fn field(&self, f: QueryField) -> &str {
        match f {
            QueryField::Query => &self.query,
            QueryField::Question => &self.question,
            QueryField::Narrative => &self.narrative,
        }
    }
}

pub fn parse_topics(xml: &str) -> Result<Vec<Topic>> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);
    let mut topics = Vec::new();
    let mut current: Option<Topic> = None;
    let mut field: Option<QueryField> = None;
    let err = |e: &dyn std::fmt::Display| Error::Format(format!("topics XML: {e}"));
    loop {
        match reader.read_event().map_err(|e| err(&e))? {
            Event::Start(e) => match e.name().as_ref() {
                b"topic" => {
                    let mut id = None;
                    for a in e.attributes() {
                        let a = a.map_err(|e| err(&e))?;
                        if a.key.as_ref() == b"number" {
                            id = Some(a.unescape_value().map_err(|e| err(&e))?.trim().to_string());
                        }
                    }
                    let id = id.ok_or_else(|| Error::Format("topic without number attribute".into()))?;
                    current = Some(Topic {
                        id,
                        ..Default::default()
                    });
                }
                b"query" => field = Some(QueryField::Query),
                b"question" => field = Some(QueryField::Question),
                b"narrative" => field = Some(QueryField::Narrative),
                _ => {}
            },
            Event::Text(t) => {
                if let (Some(topic), Some(f)) = (current.as_mut(), field) {
                    let text = t.unescape().map_err(|e| err(&e))?;
                    let slot = match f {
                        QueryField::Query => &mut topic.query,
                        QueryField::Question => &mut topic.question,
                        QueryField::Narrative => &mut topic.narrative,
                    };
                    slot.push_str(text.trim());
                }
            }
            Event::End(e) => match e.name().as_ref() {
                b"topic" => {
                    if let Some(t) = current.take() {
                        topics.push(t);
                    }
                }
                b"query" | b"question" | b"narrative" => field = None,
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
    }
    if current.is_some() {
        return Err(Error::Format("unterminated <topic>".into()));
    }
    Ok(topics)
}

pub fn read_topics(path: &Path) -> Result<Vec<Topic>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_topics(&text)
}

/// Ranked results for several topics, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Run {
    pub tag: String,
    topics: Vec<(String, Vec<Candidate>)>,
}

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Run {
            tag: tag.into(),
            topics: Vec::new(),
        }
    }

    /// Adds (or replaces) a topic's ranking. Ranks are renumbered from 1 in
    /// the given order.
    pub fn insert(&mut self, topic_id: impl Into<String>, ranking: Vec<Candidate>) {
        let topic_id = topic_id.into();
        let ranking: Vec<Candidate> = ranking
            .into_iter()
            .enumerate()
            .map(|(i, c)| Candidate { rank: i + 1, ..c })
            .collect();
        match self.topics.iter_mut().find(|(t, _)| *t == topic_id) {
            Some(slot) => slot.1 = ranking,
            None => self.topics.push((topic_id, ranking)),
        }
    }

    pub fn get(&self, topic_id: &str) -> Option<&[Candidate]> {
        self.topics
            .iter()
            .find(|(t, _)| t == topic_id)
            .map(|(_, r)| r.as_slice())
    }

    pub fn topics(&self) -> impl Iterator<Item = (&str, &[Candidate])> {
        self.topics.iter().map(|(t, r)| (t.as_str(), r.as_slice()))
    }

    pub fn topic_ids(&self) -> Vec<&str> {
        self.topics.iter().map(|(t, _)| t.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for (topic, ranking) in &self.topics {
            for c in ranking {
                out.push_str(&format!(
                    "{} Q0 {} {} {:.6} {}\n",
                    topic, c.doc_id, c.rank, c.score, self.tag
                ));
            }
        }
        out
    }

    /// Parse a run. Lines are ordered per topic by their rank column.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut run = Run::default();
        let mut tag: Option<String> = None;
        let mut grouped: Vec<(String, Vec<Candidate>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 6 {
                return Err(Error::line(source, i + 1, format!("expected 6 columns, found {}", cols.len())));
            }
            let rank: usize = cols[3]
                .parse()
                .map_err(|_| Error::line(source, i + 1, format!("bad rank `{}`", cols[3])))?;
            let score: f64 = cols[4]
                .parse()
                .map_err(|_| Error::line(source, i + 1, format!("bad score `{}`", cols[4])))?;
            if tag.is_none() {
                tag = Some(cols[5].to_string());
            }
            let cand = Candidate {
                doc_id: cols[2].to_string(),
                score,
                rank,
            };
            match grouped.iter_mut().find(|(t, _)| t == cols[0]) {
                Some((_, list)) => {
                    if list.iter().any(|c| c.doc_id == cand.doc_id) {
                        return Err(Error::line(
                            source,
                            i + 1,
                            format!("duplicate document `{}` for topic {}", cand.doc_id, cols[0]),
                        ));
                    }
                    list.push(cand)
                }
                None => grouped.push((cols[0].to_string(), vec![cand])),
            }
        }
        run.tag = tag.unwrap_or_default();
        for (topic, mut list) in grouped {
            list.sort_by_key(|c| c.rank);
            run.topics.push((topic, list));
        }
        Ok(run)
    }
}

pub fn read_run(path: &Path) -> Result<Run> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Run::parse(&text, &path.display().to_string())
}

pub fn write_run(run: &Run, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic_str(path, &run.to_trec_string())
}

/// Graded relevance judgments, grade in {0, 1, 2}.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Judgments {
    map: BTreeMap<String, BTreeMap<String, u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateJudgment {
    pub line: usize,
    pub topic_id: String,
    pub doc_id: String,
}

impl Judgments {
    /// Insert a judgment; returns the previous grade if the pair was
    /// already judged.
    pub fn insert(&mut self, topic: impl Into<String>, doc: impl Into<String>, grade: u8) -> Option<u8> {
        self.map.entry(topic.into()).or_default().insert(doc.into(), grade)
    }

    pub fn grade(&self, topic: &str, doc: &str) -> Option<u8> {
        self.map.get(topic).and_then(|m| m.get(doc)).copied()
    }

    pub fn topic(&self, topic: &str) -> Option<&BTreeMap<String, u8>> {
        self.map.get(topic)
    }

    pub fn has_topic(&self, topic: &str) -> bool {
        self.map.contains_key(topic)
    }

    pub fn topic_ids(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Number of judged documents with grade >= `min_grade`.
    pub fn relevant_count(&self, topic: &str, min_grade: u8) -> usize {
        self.map
            .get(topic)
            .map_or(0, |m| m.values().filter(|&&g| g >= min_grade).count())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u8)> {
        self.map
            .iter()
            .flat_map(|(t, m)| m.iter().map(move |(d, g)| (t.as_str(), d.as_str(), *g)))
    }

    pub fn len(&self) -> usize {
        self.map.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keep only the given topics.
    pub fn restrict_to<'a>(&self, topics: impl IntoIterator<Item = &'a str>) -> Judgments {
        let keep: std::collections::HashSet<&str> = topics.into_iter().collect();
        Judgments {
            map: self
                .map
                .iter()
                .filter(|(t, _)| keep.contains(t.as_str()))
                .map(|(t, m)| (t.clone(), m.clone()))
                .collect(),
        }
    }

    /// Parse qrels. Duplicate pairs keep the last grade and are reported.
    pub fn parse(text: &str, source: &str) -> Result<(Self, Vec<DuplicateJudgment>)> {
        let mut j = Judgments::default();
        let mut dups = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(Error::line(source, i + 1, format!("expected 4 columns, found {}", cols.len())));
            }
            let grade: i64 = cols[3]
                .parse()
                .map_err(|_| Error::line(source, i + 1, format!("bad grade `{}`", cols[3])))?;
            if !(0..=2).contains(&grade) {
                return Err(Error::line(source, i + 1, format!("grade {grade} outside 0..=2")));
            }
            if j.insert(cols[0], cols[2], grade as u8).is_some() {
                log::warn!("{source}:{}: duplicate judgment for ({}, {}), keeping last", i + 1, cols[0], cols[2]);
                dups.push(DuplicateJudgment {
                    line: i + 1,
                    topic_id: cols[0].to_string(),
                    doc_id: cols[2].to_string(),
                });
            }
        }
        Ok((j, dups))
    }

    pub fn to_trec_string(&self) -> String {
        self.iter().map(|(t, d, g)| format!("{t} 0 {d} {g}\n")).collect()
    }
}

pub fn read_qrels(path: &Path) -> Result<Judgments> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Judgments::parse(&text, &path.display().to_string()).map(|(j, _)| j)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topics_xml() {
        let xml = r#"<topics task="COVIDSearch" batch="5">
  <topic number="1">
    <query>coronavirus origin</query>
    <question>what is the origin of COVID-19</question>
    <narrative>seeking range of information about the SARS-CoV-2 virus's origin &amp; evolution</narrative>
  </topic>
  <topic number="2">
    <query>coronavirus response to weather changes</query>
    <question>how does the coronavirus respond to changes in the weather</question>
    <narrative>seeking range of information</narrative>
  </topic>
</topics>"#;
        let t = parse_topics(xml).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].id, "1");
        assert_eq!(t[0].field(QueryField::Query), "coronavirus origin");
        assert!(t[0].narrative.ends_with("origin & evolution"));
        assert_eq!(t[1].field(QueryField::Question), "how does the coronavirus respond to changes in the weather");
        assert!(parse_topics("<topics><topic><query>x</query></topic></topics>").is_err());
    }

    #[test]
    fn run_round_trip_is_byte_identical() {
        let text = "1 Q0 doc3 1 12.500000 run1\n1 Q0 doc1 2 3.250000 run1\n2 Q0 doc9 1 -0.125000 run1\n";
        let run = Run::parse(text, "t").unwrap();
        assert_eq!(run.tag, "run1");
        assert_eq!(run.get("1").unwrap()[1].doc_id, "doc1");
        assert_eq!(run.to_trec_string(), text);
    }

    #[test]
    fn run_lines_sorted_by_rank_and_errors_carry_line() {
        let run = Run::parse("1 Q0 b 2 1.0 t\n1 Q0 a 1 2.0 t\n", "t").unwrap();
        assert_eq!(run.get("1").unwrap()[0].doc_id, "a");
        let err = Run::parse("1 Q0 a 1 2.0 t\n1 Q0 b x 1.0 t\n", "r.txt").unwrap_err();
        assert!(err.to_string().starts_with("r.txt:2:"), "{err}");
        assert!(Run::parse("1 Q0 a 1 2.0 t\n1 Q0 a 2 1.0 t\n", "r").is_err());
    }

    #[test]
    fn qrels_parse_and_duplicates() {
        let (j, dups) = Judgments::parse("1 0 doc7 2\n1 0 doc8 0\n1 0 doc7 1\n", "q").unwrap();
        assert_eq!(j.grade("1", "doc7"), Some(1));
        assert_eq!(dups.len(), 1);
        assert_eq!(dups[0].line, 3);
        let (j, _) = Judgments::parse("1 0 doc7 2\n", "q").unwrap();
        assert_eq!(j.grade("1", "doc7"), Some(2));
        assert!(Judgments::parse("1 0 doc7 3\n", "q").is_err());
        assert!(Judgments::parse("1 0 doc7\n", "q").unwrap_err().to_string().contains("q:1"));
    }
}
