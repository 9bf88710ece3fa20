//! Positional inverted index with the collection statistics needed by BM25,
//! RM3 and SDM, plus a versioned binary on-disk format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "CVSIDX\0\0"
//! version      u32      (currently 1)
//! flags        u32      bit 0: positions stored; bits 1-3: indexed fields
//!                       (title, abstract, fulltext)
//! doc_count    u64
//! total_terms  u64
//! avg_doc_len  f64
//! docs         doc_count x { id_len u32, id bytes, doc_len u32,
//!                            date_days i32 (i32::MIN = none), precision u8 }
//! term_count   u64
//! terms        term_count x { term_len u32, term bytes, df u32,
//!                             df x { doc_ord u32, tf u32, [tf x pos u32] } }
//! end marker   8 bytes  "CVSIDXEN"
//! ```
//!
//! Terms are written in byte order and documents in doc_id order, so the
//! same corpus always serializes to the same bytes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use crate::analysis::Analyzer;
use crate::corpus::{concat_fields, DatePrecision, Document, FieldSelector, PublishDate};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CVSIDX\0\0";
pub const END_MARKER: &[u8; 8] = b"CVSIDXEN";
pub const FORMAT_VERSION: u32 = 1;
const FLAG_POSITIONS: u32 = 1;
const FLAG_TITLE: u32 = 1 << 1;
const FLAG_ABSTRACT: u32 = 1 << 2;
const FLAG_FULLTEXT: u32 = 1 << 3;
const NO_DATE: i32 = i32::MIN;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Posting {
    pub doc_ord: u32,
    pub tf: u32,
    /// Empty when the index was built without positions.
    pub positions: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexStats {
    pub doc_count: usize,
    pub total_terms: u64,
    pub avg_doc_len: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    doc_dates: Vec<Option<PublishDate>>,
    terms: Vec<String>,
    postings: Vec<Vec<Posting>>,
    term_lookup: HashMap<String, usize>,
    /// Forward view: per document, (term index, tf) in term order.
    doc_terms: Vec<Vec<(u32, u32)>>,
    stats: IndexStats,
    has_positions: bool,
    fields: FieldSelector,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub fields: FieldSelector,
    pub store_positions: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            fields: FieldSelector::FULL_TEXT,
            store_positions: true,
        }
    }
}

impl InvertedIndex {
    /// Build over `concat_fields(doc, fields)` for every document. Document
    /// ordinals follow doc_id order.
    pub fn build(docs: &[Document], analyzer: &Analyzer, opts: BuildOptions) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut order: Vec<&Document> = docs.iter().collect();
        order.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        if let Some(w) = order.windows(2).find(|w| w[0].doc_id == w[1].doc_id) {
            return Err(Error::InvalidArgument(format!(
                "duplicate document id `{}`",
                w[0].doc_id
            )));
        }

        let analyzed: Vec<Vec<String>> = crate::exec::Exec::default().map(&order, |d| {
            analyzer.stems(&concat_fields(d, opts.fields))
        });

        let mut map: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lens = Vec::with_capacity(order.len());
        for (ord, stems) in analyzed.iter().enumerate() {
            doc_lens.push(stems.len() as u32);
            let mut per_doc: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
            for (pos, s) in stems.iter().enumerate() {
                per_doc.entry(s.as_str()).or_default().push(pos as u32);
            }
            for (term, positions) in per_doc {
                let tf = positions.len() as u32;
                map.entry(term.to_string()).or_default().push(Posting {
                    doc_ord: ord as u32,
                    tf,
                    positions: if opts.store_positions { positions } else { Vec::new() },
                });
            }
        }

        let (terms, postings): (Vec<_>, Vec<_>) = map.into_iter().unzip();
        Ok(Self::assemble(
            order.iter().map(|d| d.doc_id.clone()).collect(),
            doc_lens,
            order.iter().map(|d| d.publish_date).collect(),
            terms,
            postings,
            opts.store_positions,
            opts.fields,
        ))
    }

    fn assemble(
        doc_ids: Vec<String>,
        doc_lens: Vec<u32>,
        doc_dates: Vec<Option<PublishDate>>,
        terms: Vec<String>,
        postings: Vec<Vec<Posting>>,
        has_positions: bool,
        fields: FieldSelector,
    ) -> Self {
        let total_terms: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        let doc_count = doc_ids.len();
        let avg_doc_len = if doc_count == 0 {
            0.0
        } else {
            total_terms as f64 / doc_count as f64
        };
        let mut doc_terms = vec![Vec::new(); doc_count];
        for (ti, list) in postings.iter().enumerate() {
            for p in list {
                doc_terms[p.doc_ord as usize].push((ti as u32, p.tf));
            }
        }
        let term_lookup = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        InvertedIndex {
            doc_ids,
            doc_lens,
            doc_dates,
            terms,
            postings,
            term_lookup,
            doc_terms,
            stats: IndexStats {
                doc_count,
                total_terms,
                avg_doc_len,
            },
            has_positions,
            fields,
        }
    }

    pub fn stats(&self) -> &IndexStats {
        &self.stats
    }

    pub fn doc_count(&self) -> usize {
        self.stats.doc_count
    }

    pub fn has_positions(&self) -> bool {
        self.has_positions
    }

    /// Document fields the index was built from.
    pub fn fields(&self) -> FieldSelector {
        self.fields
    }

    /// Postings for an analyzed stem, sorted by doc ordinal. Unknown terms
    /// give an empty slice.
    pub fn lookup(&self, term: &str) -> &[Posting] {
        self.term_lookup
            .get(term)
            .map(|&i| self.postings[i].as_slice())
            .unwrap_or(&[])
    }

    pub fn df(&self, term: &str) -> usize {
        self.lookup(term).len()
    }

    /// Total occurrences of `term` in the collection.
    pub fn collection_freq(&self, term: &str) -> u64 {
        self.lookup(term).iter().map(|p| p.tf as u64).sum()
    }

    pub fn doc_len(&self, ord: u32) -> u32 {
        self.doc_lens[ord as usize]
    }

    pub fn doc_id(&self, ord: u32) -> &str {
        &self.doc_ids[ord as usize]
    }

    pub fn doc_ord(&self, doc_id: &str) -> Option<u32> {
        self.doc_ids
            .binary_search_by(|d| d.as_str().cmp(doc_id))
            .ok()
            .map(|i| i as u32)
    }

    pub fn doc_date(&self, ord: u32) -> Option<PublishDate> {
        self.doc_dates[ord as usize]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// Iterate `(term, postings)` in term order.
    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.terms
            .iter()
            .zip(&self.postings)
            .map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    /// Term frequencies of one document, reconstructed from the postings.
    pub fn doc_vector(&self, ord: u32) -> Vec<(&str, u32)> {
        self.doc_terms[ord as usize]
            .iter()
            .map(|&(ti, tf)| (self.terms[ti as usize].as_str(), tf))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        let mut flags = 0;
        for (on, bit) in [
            (self.has_positions, FLAG_POSITIONS),
            (self.fields.include_title, FLAG_TITLE),
            (self.fields.include_abstract, FLAG_ABSTRACT),
            (self.fields.include_fulltext, FLAG_FULLTEXT),
        ] {
            if on {
                flags |= bit;
            }
        }
        put_u32(&mut out, flags);
        put_u64(&mut out, self.stats.doc_count as u64);
        put_u64(&mut out, self.stats.total_terms);
        out.extend_from_slice(&self.stats.avg_doc_len.to_le_bytes());
        for ord in 0..self.doc_ids.len() {
            put_str(&mut out, &self.doc_ids[ord]);
            put_u32(&mut out, self.doc_lens[ord]);
            let (days, prec) = match self.doc_dates[ord] {
                Some(d) => (
                    d.date.num_days_from_ce(),
                    match d.precision {
                        DatePrecision::Day => 0u8,
                        DatePrecision::Month => 1,
                        DatePrecision::Year => 2,
                    },
                ),
                None => (NO_DATE, 0),
            };
            out.extend_from_slice(&days.to_le_bytes());
            out.push(prec);
        }
        put_u64(&mut out, self.terms.len() as u64);
        for (term, postings) in self.terms.iter().zip(&self.postings) {
            put_str(&mut out, term);
            put_u32(&mut out, postings.len() as u32);
            for p in postings {
                put_u32(&mut out, p.doc_ord);
                put_u32(&mut out, p.tf);
                if self.has_positions {
                    for &pos in &p.positions {
                        put_u32(&mut out, pos);
                    }
                }
            }
        }
        out.extend_from_slice(END_MARKER);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::IndexFile(format!(
                "bad magic {:?}; expected a covsearch index (magic {:?})",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(MAGIC)
            )));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::IndexFile(format!(
                "unsupported format version {version}; this build reads version {FORMAT_VERSION}"
            )));
        }
        let flags = r.u32()?;
        let has_positions = flags & FLAG_POSITIONS != 0;
        let fields = FieldSelector::new(
            flags & FLAG_TITLE != 0,
            flags & FLAG_ABSTRACT != 0,
            flags & FLAG_FULLTEXT != 0,
        )
        .map_err(|_| Error::IndexFile("header records no indexed fields".into()))?;
        let doc_count = r.u64()? as usize;
        let total_terms = r.u64()?;
        let _avg = f64::from_le_bytes(r.take(8)?.try_into().unwrap());

        let mut doc_ids = Vec::with_capacity(doc_count.min(bytes.len()));
        let mut doc_lens = Vec::with_capacity(doc_count.min(bytes.len()));
        let mut doc_dates = Vec::with_capacity(doc_count.min(bytes.len()));
        for _ in 0..doc_count {
            doc_ids.push(r.string()?);
            doc_lens.push(r.u32()?);
            let days = r.i32()?;
            let prec = r.u8()?;
            doc_dates.push(if days == NO_DATE {
                None
            } else {
                let date = NaiveDate::from_num_days_from_ce_opt(days)
                    .ok_or_else(|| Error::IndexFile(format!("invalid stored date {days}")))?;
                let precision = match prec {
                    0 => DatePrecision::Day,
                    1 => DatePrecision::Month,
                    2 => DatePrecision::Year,
                    p => return Err(Error::IndexFile(format!("invalid date precision {p}"))),
                };
                Some(PublishDate { date, precision })
            });
        }
        let term_count = r.u64()? as usize;
        let mut terms = Vec::with_capacity(term_count.min(bytes.len()));
        let mut postings = Vec::with_capacity(term_count.min(bytes.len()));
        for _ in 0..term_count {
            terms.push(r.string()?);
            let df = r.u32()? as usize;
            let mut list = Vec::with_capacity(df.min(bytes.len()));
            for _ in 0..df {
                let doc_ord = r.u32()?;
                let tf = r.u32()?;
                if doc_ord as usize >= doc_count {
                    return Err(Error::IndexFile(format!("posting doc ordinal {doc_ord} out of range")));
                }
                let positions = if has_positions {
                    (0..tf).map(|_| r.u32()).collect::<Result<Vec<_>>>()?
                } else {
                    Vec::new()
                };
                list.push(Posting { doc_ord, tf, positions });
            }
            postings.push(list);
        }
        if r.take(8)? != END_MARKER {
            return Err(Error::IndexFile("missing end marker".into()));
        }
        if r.pos != bytes.len() {
            return Err(Error::IndexFile(format!(
                "{} trailing bytes after end marker",
                bytes.len() - r.pos
            )));
        }
        let index = Self::assemble(doc_ids, doc_lens, doc_dates, terms, postings, has_positions, fields);
        if index.stats.total_terms != total_terms {
            return Err(Error::IndexFile("term total does not match document lengths".into()));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::IndexFile(msg) => Error::IndexFile(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}


fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::IndexFile(format!(
                "truncated file: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::IndexFile("invalid UTF-8 string".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, title: &str) -> Document {
        Document::stub(id, title, "")
    }

    fn build(docs: &[Document]) -> InvertedIndex {
        InvertedIndex::build(docs, &Analyzer::default(), BuildOptions::default()).unwrap()
    }

    #[test]
    fn counting_example() {
        let idx = build(&[doc("d1", "a virus"), doc("d2", "virus virus")]);
        assert_eq!(idx.df("viru"), 2);
        let p = idx.lookup("viru");
        assert_eq!(p[1].tf, 2);
        assert_eq!(p[1].positions, [0, 1]);
        assert_eq!(idx.stats().avg_doc_len, 1.5);
        assert_eq!(idx.stats().total_terms, 3);
    }

    #[test]
    fn single_empty_doc() {
        let idx = build(&[doc("only", "")]);
        assert_eq!(idx.doc_count(), 1);
        assert_eq!(idx.stats().avg_doc_len, 0.0);
        assert!(idx.lookup("anything").is_empty());
        assert_eq!(idx.doc_len(0), 0);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            InvertedIndex::build(&[], &Analyzer::default(), BuildOptions::default()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn ordinals_follow_doc_id() {
        let idx = build(&[doc("zeta", "virus"), doc("alpha", "virus")]);
        assert_eq!(idx.doc_id(0), "alpha");
        assert_eq!(idx.doc_ord("zeta"), Some(1));
        assert_eq!(idx.doc_ord("nope"), None);
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let docs = [doc("b", "masks reduce spread"), doc("a", "spread of influenza")];
        assert_eq!(build(&docs).to_bytes(), build(&docs).to_bytes());
        let rev: Vec<_> = docs.iter().rev().cloned().collect();
        assert_eq!(build(&docs).to_bytes(), build(&rev).to_bytes());
    }

    #[test]
    fn round_trip() {
        let mut d = doc("x", "vaccine trial results vaccine");
        d.publish_date = PublishDate::parse("2020-03");
        let idx = build(&[d, doc("y", "trial")]);
        let back = InvertedIndex::from_bytes(&idx.to_bytes()).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.doc_date(0).unwrap().precision, DatePrecision::Month);
        assert_eq!(back.fields(), FieldSelector::FULL_TEXT);
    }

    #[test]
    fn positions_can_be_dropped() {
        let idx = InvertedIndex::build(
            &[doc("x", "virus virus")],
            &Analyzer::default(),
            BuildOptions {
                store_positions: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!idx.has_positions());
        assert_eq!(idx.lookup("viru")[0].tf, 2);
        assert!(idx.lookup("viru")[0].positions.is_empty());
        let back = InvertedIndex::from_bytes(&idx.to_bytes()).unwrap();
        assert_eq!(back, idx);
    }

    #[test]
    fn truncated_and_foreign_files_error() {
        let bytes = build(&[doc("x", "virus outbreak")]).to_bytes();
        for cut in [0, 5, 20, bytes.len() - 1] {
            let err = InvertedIndex::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::IndexFile(_)), "cut {cut}");
        }
        let err = InvertedIndex::from_bytes(b"PK\x03\x04 not an index file").unwrap_err();
        assert!(err.to_string().contains("CVSIDX"), "{err}");
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(InvertedIndex::from_bytes(&wrong_version)
            .unwrap_err()
            .to_string()
            .contains("version 9"));
    }
}
