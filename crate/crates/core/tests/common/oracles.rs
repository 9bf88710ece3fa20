//! Direct-formula reference scorers. They work on raw stemmed token
//! sequences and share nothing with the index or the production scorers.

#![allow(dead_code)]

use std::collections::BTreeMap;

/// `(doc_id, stemmed tokens)`.
pub type Doc = (String, Vec<String>);

fn rank(mut scored: Vec<(String, f64)>) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored
}

fn tf(doc: &[String], term: &str) -> usize {
    doc.iter().filter(|t| *t == term).count()
}

/// BM25 with `ln(1 + (N - df + 0.5)/(df + 0.5))` idf, summed over query
/// term occurrences with the given weights. Only documents containing a
/// query term are scored.
pub fn bm25(docs: &[Doc], query: &[(String, f64)], k1: f64, b: f64) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n;
    let mut out = Vec::new();
    for (id, toks) in docs {
        if !query.iter().any(|(q, w)| *w != 0.0 && tf(toks, q) > 0) {
            continue;
        }
        let mut s = 0.0;
        for (q, w) in query {
            let df = docs.iter().filter(|(_, t)| tf(t, q) > 0).count() as f64;
            let f = tf(toks, q) as f64;
            if f == 0.0 {
                continue;
            }
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            s += w * idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * toks.len() as f64 / avgdl));
        }
        out.push((id.clone(), s));
    }
    rank(out)
}

/// Query term counts.
pub fn counts(stems: &[String]) -> Vec<(String, f64)> {
    let mut m = BTreeMap::new();
    for s in stems {
        *m.entry(s.clone()).or_insert(0.0) += 1.0;
    }
    m.into_iter().collect()
}

pub fn language_model(stems: &[String]) -> Vec<(String, f64)> {
    let n = stems.len() as f64;
    counts(stems).into_iter().map(|(t, c)| (t, c / n)).collect()
}

/// RM3: `(interpolated model, kept feedback terms)`.
pub fn rm3(
    docs: &[Doc],
    stems: &[String],
    k1: f64,
    b: f64,
    fb_terms: usize,
    fb_docs: usize,
    orig_weight: f64,
) -> (BTreeMap<String, f64>, Vec<(String, f64)>) {
    let q = language_model(stems);
    let top: Vec<(String, f64)> = bm25(docs, &q, k1, b).into_iter().take(fb_docs).collect();
    let z: f64 = top.iter().map(|(_, s)| s).sum();
    let mut rel: BTreeMap<String, f64> = BTreeMap::new();
    for (id, s) in &top {
        let toks = &docs.iter().find(|(d, _)| d == id).unwrap().1;
        for t in toks {
            // each occurrence adds 1/|d|, so the total is tf/|d|
            *rel.entry(t.clone()).or_default() += s / z / toks.len() as f64;
        }
    }
    let mut ranked: Vec<(String, f64)> = rel.into_iter().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked.truncate(fb_terms);
    let mass: f64 = ranked.iter().map(|(_, p)| p).sum();
    let kept: Vec<(String, f64)> = ranked.into_iter().map(|(t, p)| (t, p / mass)).collect();
    let mut mixed: BTreeMap<String, f64> = BTreeMap::new();
    for (t, w) in &q {
        *mixed.entry(t.clone()).or_default() += orig_weight * w;
    }
    for (t, p) in &kept {
        *mixed.entry(t.clone()).or_default() += (1.0 - orig_weight) * p;
    }
    mixed.retain(|_, w| *w > 0.0);
    (mixed, kept)
}

/// `a` immediately followed by `b`.
pub fn ordered_occurrences(doc: &[String], a: &str, b: &str) -> usize {
    (0..doc.len().saturating_sub(1))
        .filter(|&i| doc[i] == a && doc[i + 1] == b)
        .count()
}

/// Occurrences of `a` with some other position holding `b` less than
/// `window` positions away, in either direction.
pub fn unordered_occurrences(doc: &[String], a: &str, b: &str, window: usize) -> usize {
    (0..doc.len())
        .filter(|&i| {
            doc[i] == a
                && (0..doc.len()).any(|j| j != i && doc[j] == b && i.abs_diff(j) < window)
        })
        .count()
}

pub struct SdmWeights {
    pub term: f64,
    pub ordered: f64,
    pub unordered: f64,
    pub window: usize,
    pub mu: f64,
}

/// MRF sequential dependence score, each feature Dirichlet smoothed:
/// `ln((count + mu * cf/|C|) / (|D| + mu))`. Features absent from the whole
/// collection are skipped. Documents without any query term are not scored.
pub fn sdm(docs: &[Doc], stems: &[String], w: &SdmWeights) -> Vec<(String, f64)> {
    let coll_len: usize = docs.iter().map(|(_, t)| t.len()).sum();
    let feature = |count: &dyn Fn(&[String]) -> usize| -> Option<Vec<f64>> {
        let per_doc: Vec<f64> = docs.iter().map(|(_, t)| count(t) as f64).collect();
        let cf: f64 = per_doc.iter().sum();
        (cf > 0.0).then(|| {
            docs.iter()
                .zip(&per_doc)
                .map(|((_, t), c)| ((c + w.mu * cf / coll_len as f64) / (t.len() as f64 + w.mu)).ln())
                .collect()
        })
    };
    let mut scores = vec![0.0; docs.len()];
    let mut add = |weight: f64, f: Option<Vec<f64>>| {
        if let Some(v) = f {
            for (s, x) in scores.iter_mut().zip(v) {
                *s += weight * x;
            }
        }
    };
    for s in stems {
        add(w.term, feature(&|d: &[String]| tf(d, s)));
    }
    if stems.len() > 1 {
        for p in stems.windows(2) {
            if w.ordered > 0.0 {
                add(w.ordered, feature(&|d: &[String]| ordered_occurrences(d, &p[0], &p[1])));
            }
            if w.unordered > 0.0 {
                add(w.unordered, feature(&|d: &[String]| unordered_occurrences(d, &p[0], &p[1], w.window)));
            }
        }
    }
    rank(
        docs.iter()
            .zip(scores)
            .filter(|((_, t), _)| stems.iter().any(|s| tf(t, s) > 0))
            .map(|((id, _), s)| (id.clone(), s))
            .collect(),
    )
}

/// Dirichlet query likelihood over unigrams only.
pub fn query_likelihood(docs: &[Doc], stems: &[String], mu: f64) -> Vec<(String, f64)> {
    sdm(
        docs,
        stems,
        &SdmWeights {
            term: 1.0,
            ordered: 0.0,
            unordered: 0.0,
            window: 8,
            mu,
        },
    )
}

pub const VOCAB: &[&str] = &[
    "virus", "viruses", "mask", "masks", "transmission", "aerosol", "hospital", "vaccine", "trial",
    "fever", "cough", "bats", "origin", "social", "distancing", "incubation", "period", "the", "of",
    "patients", "treatment", "drug", "spread", "surface",
];

/// Random corpus of `(doc_id, text)`; ids are zero-padded so id order is
/// numeric order. Some documents may be empty.
pub fn random_corpus<R: rand::Rng>(rng: &mut R, max_docs: usize, max_len: usize) -> Vec<(String, String)> {
    let n = rng.gen_range(1..=max_docs);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(0..=max_len);
            let words: Vec<&str> = (0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect();
            (format!("doc{i:03}"), words.join(" "))
        })
        .collect()
}

pub fn random_query<R: rand::Rng>(rng: &mut R, max_terms: usize) -> String {
    let n = rng.gen_range(1..=max_terms);
    (0..n).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

/// Check that `got` is the top `k` of `oracle`: same length, scores equal
/// position by position within `tol`, and every returned document has its
/// oracle score. Documents may trade places only when their scores tie
/// within `tol`.
pub fn check_ranking(got: &[(String, f64)], oracle: &[(String, f64)], k: usize, tol: f64) -> Result<(), String> {
    let want = oracle.len().min(k);
    if got.len() != want {
        return Err(format!("expected {want} results, got {}", got.len()));
    }
    for (i, ((gid, gs), (oid, os))) in got.iter().zip(oracle).enumerate() {
        if (gs - os).abs() > tol {
            return Err(format!("rank {}: score {gs} vs oracle {os} ({gid} / {oid})", i + 1));
        }
        let own = oracle
            .iter()
            .find(|(d, _)| d == gid)
            .ok_or_else(|| format!("{gid} is not an oracle candidate"))?
            .1;
        if (own - gs).abs() > tol {
            return Err(format!("{gid}: score {gs}, oracle gives it {own}"));
        }
        if gid != oid && (own - os).abs() > tol {
            return Err(format!("rank {}: {gid} where oracle has {oid}", i + 1));
        }
    }
    Ok(())
}
