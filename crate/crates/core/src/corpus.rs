//! CORD-19-style corpus ingestion: a metadata table plus optional per-article
//! structured fulltext files.
//!
//! Metadata columns (header names, any order, extra columns ignored):
//! `cord_uid`, `title`, `abstract`, `publish_time`, `pmc_json_files`,
//! `pdf_json_files`. Fulltext paths are relative to the corpus directory; a
//! cell may list several paths separated by `;`, only the first is used.
//!
//! Fulltext files are JSON:
//!
//! ```json
//! {"paper_id": "...", "body_text": [{"section": "Introduction", "text": "..."}]}
//! ```

use std::collections::HashSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use serde::Deserialize;

use crate::error::{Error, Result};

pub const COL_ID: &str = "cord_uid";
pub const COL_TITLE: &str = "title";
pub const COL_ABSTRACT: &str = "abstract";
pub const COL_PUBLISH_TIME: &str = "publish_time";
pub const COL_PUBMED_PATH: &str = "pmc_json_files";
pub const COL_PDF_PATH: &str = "pdf_json_files";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceKind {
    PubmedXml,
    Pdf,
    MetadataOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DatePrecision {
    Day,
    Month,
    Year,
}

/// A publication date. Partial dates are normalized to the first day of the
/// period they name and keep their precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublishDate {
    pub date: NaiveDate,
    pub precision: DatePrecision,
}

impl PublishDate {
    pub fn day(date: NaiveDate) -> Self {
        PublishDate {
            date,
            precision: DatePrecision::Day,
        }
    }

    pub fn is_low_precision(&self) -> bool {
        self.precision != DatePrecision::Day
    }

    /// Parses `YYYY-MM-DD`, `YYYY-MM`, `YYYY`, and the `YYYY Mon DD` /
    /// `YYYY Mon` forms found in CORD-19 metadata.
    pub fn parse(raw: &str) -> Option<Self> {
        let raw = raw.trim();
        if raw.is_empty() {
            return None;
        }
        if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
            return Some(Self::day(d));
        }
        if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y %b %d") {
            return Some(Self::day(d));
        }
        let month = |y: i32, m: u32| {
            NaiveDate::from_ymd_opt(y, m, 1).map(|date| PublishDate {
                date,
                precision: DatePrecision::Month,
            })
        };
        let parts: Vec<&str> = raw.split(['-', ' ']).collect();
        match parts.as_slice() {
            [y] if y.len() == 4 => {
                let y: i32 = y.parse().ok()?;
                NaiveDate::from_ymd_opt(y, 1, 1).map(|date| PublishDate {
                    date,
                    precision: DatePrecision::Year,
                })
            }
            [y, m] if y.len() == 4 => {
                let y: i32 = y.parse().ok()?;
                if let Ok(m) = m.parse::<u32>() {
                    month(y, m)
                } else {
                    let d = NaiveDate::parse_from_str(&format!("{y} {m} 1"), "%Y %b %d").ok()?;
                    month(y, d.month())
                }
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub abstract_text: String,
    pub body_paragraphs: Vec<String>,
    pub section_headings: Vec<String>,
    pub publish_date: Option<PublishDate>,
    pub source_kind: SourceKind,
}

impl Document {
    pub fn stub(doc_id: impl Into<String>, title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            title: title.into(),
            abstract_text: abstract_text.into(),
            body_paragraphs: Vec::new(),
            section_headings: Vec::new(),
            publish_date: None,
            source_kind: SourceKind::MetadataOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldSelector {
    pub include_title: bool,
    pub include_abstract: bool,
    /// Body paragraphs and section headings.
    pub include_fulltext: bool,
}

impl FieldSelector {
    pub const FULL_TEXT: FieldSelector = FieldSelector {
        include_title: true,
        include_abstract: true,
        include_fulltext: true,
    };
    pub const TITLE_ABSTRACT: FieldSelector = FieldSelector {
        include_title: true,
        include_abstract: true,
        include_fulltext: false,
    };
    pub const TITLE: FieldSelector = FieldSelector {
        include_title: true,
        include_abstract: false,
        include_fulltext: false,
    };

    pub fn new(include_title: bool, include_abstract: bool, include_fulltext: bool) -> Result<Self> {
        let sel = FieldSelector {
            include_title,
            include_abstract,
            include_fulltext,
        };
        if !(include_title || include_abstract || include_fulltext) {
            return Err(Error::InvalidArgument(
                "field selector must include at least one field".into(),
            ));
        }
        Ok(sel)
    }

    pub fn union(self, other: FieldSelector) -> FieldSelector {
        FieldSelector {
            include_title: self.include_title || other.include_title,
            include_abstract: self.include_abstract || other.include_abstract,
            include_fulltext: self.include_fulltext || other.include_fulltext,
        }
    }

    /// Accepts `full_text`/`fulltext`, `title_abstract`, `title`, `abstract`,
    /// or a `+`-joined list such as `title+abstract+fulltext`.
    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        match norm.as_str() {
            "full_text" | "fulltext" | "full" => return Ok(Self::FULL_TEXT),
            "title_abstract" => return Ok(Self::TITLE_ABSTRACT),
            _ => {}
        }
        let (mut t, mut a, mut f) = (false, false, false);
        for part in norm.split('+') {
            match part {
                "title" => t = true,
                "abstract" => a = true,
                "fulltext" | "full_text" | "body" => f = true,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown document field `{other}`"
                    )))
                }
            }
        }
        Self::new(t, a, f)
    }

    pub fn name(&self) -> String {
        if *self == Self::FULL_TEXT {
            return "full_text".into();
        }
        if *self == Self::TITLE_ABSTRACT {
            return "title_abstract".into();
        }
        let mut parts = Vec::new();
        if self.include_title {
            parts.push("title");
        }
        if self.include_abstract {
            parts.push("abstract");
        }
        if self.include_fulltext {
            parts.push("fulltext");
        }
        parts.join("+")
    }
}

/// Selected fields in the order title, abstract, headings, paragraphs,
/// joined by a single newline. Empty fields contribute nothing.
pub fn concat_fields(doc: &Document, sel: FieldSelector) -> String {
    let mut parts: Vec<&str> = Vec::new();
    if sel.include_title {
        parts.push(&doc.title);
    }
    if sel.include_abstract {
        parts.push(&doc.abstract_text);
    }
    if sel.include_fulltext {
        parts.extend(doc.section_headings.iter().map(String::as_str));
        parts.extend(doc.body_paragraphs.iter().map(String::as_str));
    }
    parts.retain(|p| !p.is_empty());
    parts.join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestWarning {
    DuplicateId { doc_id: String, row: usize },
    UnparseableDate { doc_id: String, raw: String },
    LowPrecisionDate { doc_id: String, raw: String },
    BadFulltext { doc_id: String, path: PathBuf, reason: String },
}

/// One metadata row before fulltext is attached.
#[derive(Debug, Clone)]
pub struct MetadataRecord {
    pub doc: Document,
    pub pubmed_path: Option<String>,
    pub pdf_path: Option<String>,
}

#[derive(Debug, Default)]
pub struct Metadata {
    pub records: Vec<MetadataRecord>,
    pub warnings: Vec<IngestWarning>,
}

impl Metadata {
    pub fn duplicate_count(&self) -> usize {
        self.warnings
            .iter()
            .filter(|w| matches!(w, IngestWarning::DuplicateId { .. }))
            .count()
    }
}

fn first_path(cell: &str) -> Option<String> {
    cell.split(';')
        .map(str::trim)
        .find(|p| !p.is_empty())
        .map(str::to_string)
}

/// Parse the metadata table. Records come back in file order with duplicate
/// ids dropped (first occurrence wins).
pub fn parse_metadata<R: Read>(reader: R) -> Result<Metadata> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("metadata header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (c_id, c_title, c_abs, c_date, c_pmc, c_pdf) = (
        col(COL_ID)?,
        col(COL_TITLE)?,
        col(COL_ABSTRACT)?,
        col(COL_PUBLISH_TIME)?,
        col(COL_PUBMED_PATH)?,
        col(COL_PDF_PATH)?,
    );

    let mut out = Metadata::default();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| Error::line("metadata", line, e.to_string()))?;
        let get = |c: usize| row.get(c).unwrap_or("").trim();
        let doc_id = get(c_id).to_string();
        if doc_id.is_empty() {
            return Err(Error::line("metadata", line, "empty document id"));
        }
        if !seen.insert(doc_id.clone()) {
            out.warnings.push(IngestWarning::DuplicateId { doc_id, row: line });
            continue;
        }
        let raw_date = get(c_date);
        let publish_date = PublishDate::parse(raw_date);
        match publish_date {
            None if !raw_date.is_empty() => out.warnings.push(IngestWarning::UnparseableDate {
                doc_id: doc_id.clone(),
                raw: raw_date.to_string(),
            }),
            Some(d) if d.is_low_precision() => {
                out.warnings.push(IngestWarning::LowPrecisionDate {
                    doc_id: doc_id.clone(),
                    raw: raw_date.to_string(),
                })
            }
            _ => {}
        }
        let mut doc = Document::stub(doc_id, get(c_title), get(c_abs));
        doc.publish_date = publish_date;
        out.records.push(MetadataRecord {
            doc,
            pubmed_path: first_path(get(c_pmc)),
            pdf_path: first_path(get(c_pdf)),
        });
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct FulltextFile {
    body_text: Vec<FulltextParagraph>,
}

#[derive(Debug, Deserialize)]
struct FulltextParagraph {
    #[serde(default)]
    section: String,
    text: String,
}

/// Paragraphs and section headings extracted from one fulltext file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredArticle {
    pub paragraphs: Vec<String>,
    pub headings: Vec<String>,
}

impl StructuredArticle {
    /// Headings are the distinct non-empty section names in order of first
    /// appearance.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: FulltextFile =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let mut headings: Vec<String> = Vec::new();
        let mut paragraphs = Vec::with_capacity(file.body_text.len());
        for p in file.body_text {
            let section = p.section.trim();
            if !section.is_empty() && !headings.iter().any(|h| h == section) {
                headings.push(section.to_string());
            }
            paragraphs.push(p.text);
        }
        Ok(StructuredArticle {
            paragraphs,
            headings,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Fill in the body from the preferred available source: PubMed-derived
/// fulltext, then PDF-derived, else metadata only.
pub fn attach_fulltext(
    mut doc: Document,
    pubmed: Option<StructuredArticle>,
    pdf: Option<StructuredArticle>,
) -> Document {
    let (article, kind) = match (pubmed, pdf) {
        (Some(a), _) => (Some(a), SourceKind::PubmedXml),
        (None, Some(a)) => (Some(a), SourceKind::Pdf),
        (None, None) => (None, SourceKind::MetadataOnly),
    };
    match article {
        Some(a) => {
            doc.body_paragraphs = a.paragraphs;
            doc.section_headings = a.headings;
        }
        None => {
            doc.body_paragraphs.clear();
            doc.section_headings.clear();
        }
    }
    doc.source_kind = kind;
    doc
}

#[derive(Debug, Default)]
pub struct Corpus {
    /// Sorted by doc_id.
    pub documents: Vec<Document>,
    pub warnings: Vec<IngestWarning>,
}

impl Corpus {
    pub fn from_documents(mut documents: Vec<Document>) -> Self {
        documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        Corpus {
            documents,
            warnings: Vec::new(),
        }
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.documents
            .binary_search_by(|d| d.doc_id.as_str().cmp(doc_id))
            .ok()
            .map(|i| &self.documents[i])
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// Load `<dir>/metadata.csv` and the fulltext files it references.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let meta_path = dir.join("metadata.csv");
    let file = std::fs::File::open(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta = parse_metadata(std::io::BufReader::new(file))?;
    let mut warnings = meta.warnings;

    let loaded: Vec<(Document, Vec<IngestWarning>)> = crate::exec::Exec::default().map(
        &meta.records,
        |rec| {
            let mut warns = Vec::new();
            let mut read = |rel: &Option<String>| -> Option<StructuredArticle> {
                let rel = rel.as_ref()?;
                let path = dir.join(rel);
                match StructuredArticle::load(&path) {
                    Ok(a) => Some(a),
                    Err(e) => {
                        warns.push(IngestWarning::BadFulltext {
                            doc_id: rec.doc.doc_id.clone(),
                            path,
                            reason: e.to_string(),
                        });
                        None
                    }
                }
            };
            let pubmed = read(&rec.pubmed_path);
            let pdf = if pubmed.is_some() { None } else { read(&rec.pdf_path) };
            (attach_fulltext(rec.doc.clone(), pubmed, pdf), warns)
        },
    );

    let mut documents = Vec::with_capacity(loaded.len());
    for (doc, w) in loaded {
        documents.push(doc);
        warnings.extend(w);
    }
    for w in &warnings {
        log::warn!("{w:?}");
    }
    let mut corpus = Corpus::from_documents(documents);
    corpus.warnings = warnings;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "cord_uid,sha,title,abstract,publish_time,pmc_json_files,pdf_json_files\n";

    #[test]
    fn full_date() {
        let d = PublishDate::parse("2020-04-10").unwrap();
        assert_eq!(d.date, NaiveDate::from_ymd_opt(2020, 4, 10).unwrap());
        assert!(!d.is_low_precision());
    }

    #[test]
    fn partial_dates_normalize_to_first_day() {
        let y = PublishDate::parse("2020").unwrap();
        assert_eq!(y.date, NaiveDate::from_ymd_opt(2020, 1, 1).unwrap());
        assert_eq!(y.precision, DatePrecision::Year);
        let m = PublishDate::parse("2019-11").unwrap();
        assert_eq!(m.date, NaiveDate::from_ymd_opt(2019, 11, 1).unwrap());
        assert_eq!(m.precision, DatePrecision::Month);
        let m = PublishDate::parse("2020 Mar").unwrap();
        assert_eq!(m.date, NaiveDate::from_ymd_opt(2020, 3, 1).unwrap());
        let d = PublishDate::parse("2020 Mar 5").unwrap();
        assert_eq!(d.precision, DatePrecision::Day);
    }

    #[test]
    fn bad_dates_are_absent() {
        for raw in ["", "soon", "2020-13-01", "2020-02-30", "20"] {
            assert!(PublishDate::parse(raw).is_none(), "{raw}");
        }
    }

    #[test]
    fn metadata_rows_and_duplicates() {
        let csv = format!(
            "{HEADER}a1,x,First,Abs one,2020-04-10,,\n\
             a2,,Second,\"Abs, quoted\",2020,,\n\
             a1,,Dup,ignored,2019-01-01,,\n\
             a3,,Third,,not a date,,\n"
        );
        let meta = parse_metadata(csv.as_bytes()).unwrap();
        assert_eq!(meta.records.len(), 3);
        assert_eq!(meta.duplicate_count(), 1);
        assert_eq!(meta.records[0].doc.title, "First");
        assert_eq!(meta.records[1].doc.abstract_text, "Abs, quoted");
        assert_eq!(
            meta.records[1].doc.publish_date.unwrap().precision,
            DatePrecision::Year
        );
        assert!(meta.records[2].doc.publish_date.is_none());
        assert!(meta
            .warnings
            .iter()
            .any(|w| matches!(w, IngestWarning::UnparseableDate { .. })));
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "cord_uid,title,abstract,pmc_json_files,pdf_json_files\n";
        let err = parse_metadata(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "publish_time"));
    }

    fn article(tag: &str) -> StructuredArticle {
        StructuredArticle {
            paragraphs: vec![format!("{tag} paragraph")],
            headings: vec![format!("{tag} heading")],
        }
    }

    #[test]
    fn fulltext_preference() {
        let doc = Document::stub("d", "T", "A");
        let both = attach_fulltext(doc.clone(), Some(article("pmc")), Some(article("pdf")));
        assert_eq!(both.source_kind, SourceKind::PubmedXml);
        assert_eq!(both.body_paragraphs, ["pmc paragraph"]);

        let pdf = attach_fulltext(doc.clone(), None, Some(article("pdf")));
        assert_eq!(pdf.source_kind, SourceKind::Pdf);
        assert_eq!(pdf.section_headings, ["pdf heading"]);

        let none = attach_fulltext(doc, None, None);
        assert_eq!(none.source_kind, SourceKind::MetadataOnly);
        assert!(none.body_paragraphs.is_empty());
    }

    #[test]
    fn fulltext_json_ignores_extra_fields() {
        let json = r#"{"paper_id": "p", "metadata": {"title": "x"},
            "body_text": [
                {"section": "Intro", "text": "one", "cite_spans": []},
                {"section": "Intro", "text": "two"},
                {"section": "", "text": "three"},
                {"section": "Methods", "text": "four"}
            ]}"#;
        let a = StructuredArticle::from_json(json).unwrap();
        assert_eq!(a.paragraphs, ["one", "two", "three", "four"]);
        assert_eq!(a.headings, ["Intro", "Methods"]);
        assert!(StructuredArticle::from_json("{\"body\": 1}").is_err());
    }

    #[test]
    fn concat_examples() {
        let mut doc = Document::stub("d", "A", "B");
        assert_eq!(concat_fields(&doc, FieldSelector::TITLE), "A");
        assert_eq!(concat_fields(&doc, FieldSelector::TITLE_ABSTRACT), "A\nB");
        // metadata-only: body contributes nothing
        assert_eq!(concat_fields(&doc, FieldSelector::FULL_TEXT), "A\nB");
        doc.section_headings = vec!["H".into()];
        doc.body_paragraphs = vec!["P1".into(), "P2".into()];
        assert_eq!(concat_fields(&doc, FieldSelector::FULL_TEXT), "A\nB\nH\nP1\nP2");
    }

    #[test]
    fn selector_parsing() {
        assert_eq!(FieldSelector::parse("full_text").unwrap(), FieldSelector::FULL_TEXT);
        assert_eq!(
            FieldSelector::parse("title+abstract").unwrap(),
            FieldSelector::TITLE_ABSTRACT
        );
        assert!(FieldSelector::parse("").is_err());
        assert!(FieldSelector::new(false, false, false).is_err());
        assert_eq!(FieldSelector::parse("title").unwrap().name(), "title");
    }
}
