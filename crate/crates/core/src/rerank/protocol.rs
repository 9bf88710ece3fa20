//! Scorer interface and the newline-delimited JSON wire protocol.
//!
//! On startup the scorer writes a handshake record `{"protocol": 1}`. The
//! client then writes one request per line,
//! `{"id": <int>, "query": <string>, "passage": <string>}`, and the scorer
//! answers each with `{"id": <int>, "score": <float>}` (or
//! `{"id": <int>, "error": <string>}`) in any order.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

pub const PROTOCOL_VERSION: u64 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRequest {
    pub request_id: u64,
    pub query_text: String,
    pub passage_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreResponse {
    pub request_id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScorerError {
    #[error("timed out after {waited:?} waiting for responses to ids {missing:?}")]
    Timeout { waited: Duration, missing: Vec<u64> },
    #[error("malformed scorer record: {0}")]
    Malformed(String),
    #[error("response id {0} does not match any pending request")]
    UnknownId(u64),
    #[error("duplicate response for id {0}")]
    DuplicateId(u64),
    #[error("no response for request id {0}")]
    MissingResponse(u64),
    #[error("non-finite score for id {0}")]
    NonFinite(u64),
    #[error("scorer reported an error for id {id}: {message}")]
    Remote { id: u64, message: String },
    #[error("bad handshake: {0}")]
    Handshake(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: Box<ScorerError> },
}

impl ScorerError {
    /// Failures worth retrying. Protocol violations are not.
    pub fn is_transient(&self) -> bool {
        matches!(self, ScorerError::Timeout { .. } | ScorerError::Transport(_))
    }
}

pub trait Scorer {
    /// Score a batch. Implementations may return responses in any order;
    /// callers go through [`checked_batch`] to restore request order.
    fn score_batch(&mut self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, ScorerError>;

    /// Score several batches at once. The default runs them one after
    /// another; transports that can pipeline override it.
    fn score_many(&mut self, batches: &[&[ScoreRequest]]) -> Vec<Result<Vec<ScoreResponse>, ScorerError>> {
        batches.iter().map(|b| self.score_batch(b)).collect()
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score_batch(&mut self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, ScorerError> {
        (**self).score_batch(requests)
    }

    fn score_many(&mut self, batches: &[&[ScoreRequest]]) -> Vec<Result<Vec<ScoreResponse>, ScorerError>> {
        (**self).score_many(batches)
    }
}

/// Match `responses` to `requests` by id and return them in request order.
pub fn match_responses(
    requests: &[ScoreRequest],
    responses: Vec<ScoreResponse>,
) -> Result<Vec<ScoreResponse>, ScorerError> {
    let mut by_id: HashMap<u64, f64> = HashMap::with_capacity(responses.len());
    let pending: HashSet<u64> = requests.iter().map(|r| r.request_id).collect();
    for r in responses {
        if !pending.contains(&r.request_id) {
            return Err(ScorerError::UnknownId(r.request_id));
        }
        if !r.score.is_finite() {
            return Err(ScorerError::NonFinite(r.request_id));
        }
        if by_id.insert(r.request_id, r.score).is_some() {
            return Err(ScorerError::DuplicateId(r.request_id));
        }
    }
    requests
        .iter()
        .map(|q| {
            by_id
                .get(&q.request_id)
                .map(|&score| ScoreResponse {
                    request_id: q.request_id,
                    score,
                })
                .ok_or(ScorerError::MissingResponse(q.request_id))
        })
        .collect()
}

/// Score a batch and validate the result against the requests.
pub fn checked_batch<S: Scorer + ?Sized>(
    scorer: &mut S,
    requests: &[ScoreRequest],
) -> Result<Vec<ScoreResponse>, ScorerError> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let raw = scorer.score_batch(requests)?;
    match_responses(requests, raw)
}

/// Test double: every passage gets the same score. With the orchestrator's
/// tie-breaking this preserves the first-stage order.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl Default for ConstantScorer {
    fn default() -> Self {
        ConstantScorer(0.5)
    }
}

impl Scorer for ConstantScorer {
    fn score_batch(&mut self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, ScorerError> {
        Ok(requests
            .iter()
            .map(|r| ScoreResponse {
                request_id: r.request_id,
                score: self.0,
            })
            .collect())
    }
}

/// In-process scorer from a closure over (query, passage).
pub struct FnScorer<F>(pub F);

impl<F: FnMut(&str, &str) -> f64> Scorer for FnScorer<F> {
    fn score_batch(&mut self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, ScorerError> {
        Ok(requests
            .iter()
            .map(|r| ScoreResponse {
                request_id: r.request_id,
                score: (self.0)(&r.query_text, &r.passage_text),
            })
            .collect())
    }
}

pub fn encode_request(r: &ScoreRequest) -> String {
    format!(
        "{{\"id\": {}, \"query\": {}, \"passage\": {}}}",
        r.request_id,
        serde_json::Value::from(r.query_text.as_str()),
        serde_json::Value::from(r.passage_text.as_str())
    )
}

pub fn encode_response(r: &ScoreResponse) -> String {
    format!("{{\"id\": {}, \"score\": {}}}", r.request_id, r.score)
}

pub fn encode_handshake() -> String {
    format!("{{\"protocol\": {PROTOCOL_VERSION}}}")
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: Option<u64>,
    score: Option<f64>,
    error: Option<String>,
    protocol: Option<u64>,
}

/// A decoded response line.
#[derive(Debug, Clone, PartialEq)]
pub enum ResponseRecord {
    Score(ScoreResponse),
    Error { id: u64, message: String },
}

pub fn decode_response(line: &str) -> Result<ResponseRecord, ScorerError> {
    let raw: RawRecord = serde_json::from_str(line)
        .map_err(|e| ScorerError::Malformed(format!("{e}: {line}")))?;
    let id = raw
        .id
        .ok_or_else(|| ScorerError::Malformed(format!("record without id: {line}")))?;
    match (raw.score, raw.error) {
        (_, Some(message)) => Ok(ResponseRecord::Error { id, message }),
        (Some(score), None) => Ok(ResponseRecord::Score(ScoreResponse {
            request_id: id,
            score,
        })),
        (None, None) => Err(ScorerError::Malformed(format!("record without score: {line}"))),
    }
}

pub fn decode_handshake(line: &str) -> Result<(), ScorerError> {
    let raw: RawRecord = serde_json::from_str(line)
        .map_err(|e| ScorerError::Handshake(format!("{e}: {line}")))?;
    match raw.protocol {
        Some(PROTOCOL_VERSION) => Ok(()),
        Some(v) => Err(ScorerError::Handshake(format!(
            "scorer speaks protocol {v}, expected {PROTOCOL_VERSION}"
        ))),
        None => Err(ScorerError::Handshake(format!("expected handshake, got: {line}"))),
    }
}

/// Client for an external scorer over any byte stream pair.
pub struct WireScorer {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    /// Ids from batches that timed out; late answers to them are dropped.
    abandoned: HashSet<u64>,
    child: Option<Child>,
}

impl WireScorer {
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Result<Self, ScorerError>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut s = WireScorer {
            writer: Box::new(writer),
            lines: rx,
            timeout,
            abandoned: HashSet::new(),
            child: None,
        };
        let first = s.next_line().map_err(|e| match e {
            ScorerError::Timeout { .. } => ScorerError::Handshake("no handshake before timeout".into()),
            other => other,
        })?;
        decode_handshake(&first)?;
        Ok(s)
    }

    /// Spawn `command` (run through `sh -c`) and talk over its stdio.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, ScorerError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ScorerError::Transport(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut s = Self::from_streams(BufReader::new(stdout), stdin, timeout)?;
        s.child = Some(child);
        Ok(s)
    }

    pub fn connect_tcp(addr: &str, timeout: Duration) -> Result<Self, ScorerError> {
        let stream = std::net::TcpStream::connect(addr)
            .map_err(|e| ScorerError::Transport(format!("cannot connect to {addr}: {e}")))?;
        let read = stream
            .try_clone()
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        Self::from_streams(BufReader::new(read), stream, timeout)
    }

    #[cfg(unix)]
    pub fn connect_unix(path: &str, timeout: Duration) -> Result<Self, ScorerError> {
        let stream = std::os::unix::net::UnixStream::connect(path)
            .map_err(|e| ScorerError::Transport(format!("cannot connect to {path}: {e}")))?;
        let read = stream
            .try_clone()
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        Self::from_streams(BufReader::new(read), stream, timeout)
    }

    /// `stdio:<command>`, `tcp:<host:port>` or `unix:<path>`.
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, ScorerError> {
        let (kind, rest) = endpoint
            .split_once(':')
            .ok_or_else(|| ScorerError::Transport(format!("bad endpoint `{endpoint}`")))?;
        match kind {
            "stdio" => Self::spawn(rest, timeout),
            "tcp" => Self::connect_tcp(rest, timeout),
            #[cfg(unix)]
            "unix" => Self::connect_unix(rest, timeout),
            _ => Err(ScorerError::Transport(format!("unknown endpoint kind `{kind}`"))),
        }
    }

    fn next_line(&mut self) -> Result<String, ScorerError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(ScorerError::Transport(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(ScorerError::Timeout {
                waited: self.timeout,
                missing: Vec::new(),
            }),
            Err(RecvTimeoutError::Disconnected) => {
                Err(ScorerError::Transport("scorer closed the connection".into()))
            }
        }
    }

    fn send(&mut self, requests: &[ScoreRequest]) -> Result<(), ScorerError> {
        let io = |e: std::io::Error| ScorerError::Transport(e.to_string());
        for r in requests {
            writeln!(self.writer, "{}", encode_request(r)).map_err(io)?;
        }
        self.writer.flush().map_err(io)
    }

    /// Read until every id in `pending` has an answer.
    fn collect(&mut self, mut pending: HashSet<u64>) -> Result<Vec<ScoreResponse>, ScorerError> {
        let mut out = Vec::with_capacity(pending.len());
        while !pending.is_empty() {
            let line = match self.next_line() {
                Ok(l) => l,
                Err(ScorerError::Timeout { waited, .. }) => {
                    let mut missing: Vec<u64> = pending.iter().copied().collect();
                    missing.sort_unstable();
                    self.abandoned.extend(pending.drain());
                    return Err(ScorerError::Timeout { waited, missing });
                }
                Err(ScorerError::Transport(msg)) => {
                    let first = pending.iter().min().copied().unwrap_or_default();
                    return Err(ScorerError::Transport(format!(
                        "{msg} (request id {first} unanswered)"
                    )));
                }
                Err(e) => return Err(e),
            };
            if line.trim().is_empty() {
                continue;
            }
            let record = decode_response(&line)?;
            let id = match &record {
                ResponseRecord::Score(r) => r.request_id,
                ResponseRecord::Error { id, .. } => *id,
            };
            if self.abandoned.remove(&id) {
                continue;
            }
            if !pending.remove(&id) {
                return Err(ScorerError::UnknownId(id));
            }
            match record {
                ResponseRecord::Score(r) => out.push(r),
                ResponseRecord::Error { id, message } => {
                    return Err(ScorerError::Remote { id, message })
                }
            }
        }
        Ok(out)
    }
}

impl Scorer for WireScorer {
    fn score_batch(&mut self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, ScorerError> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        self.send(requests)?;
        self.collect(requests.iter().map(|r| r.request_id).collect())
    }

    /// Writes every batch before reading, so the scorer always has work
    /// queued.
    fn score_many(&mut self, batches: &[&[ScoreRequest]]) -> Vec<Result<Vec<ScoreResponse>, ScorerError>> {
        let all: Vec<ScoreRequest> = batches.iter().flat_map(|b| b.iter().cloned()).collect();
        let result = self
            .send(&all)
            .and_then(|_| self.collect(all.iter().map(|r| r.request_id).collect()));
        match result {
            Ok(responses) => {
                let by_id: HashMap<u64, ScoreResponse> =
                    responses.into_iter().map(|r| (r.request_id, r)).collect();
                batches
                    .iter()
                    .map(|b| Ok(b.iter().filter_map(|r| by_id.get(&r.request_id).copied()).collect()))
                    .collect()
            }
            Err(e) => batches.iter().map(|_| Err(e.clone())).collect(),
        }
    }
}

impl Drop for WireScorer {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            self.writer = Box::new(std::io::sink());
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: u64) -> ScoreRequest {
        ScoreRequest {
            request_id: id,
            query_text: "q".into(),
            passage_text: format!("p{id}"),
        }
    }

    fn resp(id: u64, score: f64) -> ScoreResponse {
        ScoreResponse {
            request_id: id,
            score,
        }
    }

    #[test]
    fn encodings_are_exact() {
        let r = ScoreRequest {
            request_id: 7,
            query_text: "what is \"R0\"?".into(),
            passage_text: "line\nbreak".into(),
        };
        assert_eq!(
            encode_request(&r),
            r#"{"id": 7, "query": "what is \"R0\"?", "passage": "line\nbreak"}"#
        );
        assert_eq!(encode_handshake(), r#"{"protocol": 1}"#);
        assert_eq!(encode_response(&resp(3, 0.25)), r#"{"id": 3, "score": 0.25}"#);
    }

    #[test]
    fn decoding() {
        assert_eq!(
            decode_response(r#"{"id": 2, "score": 0.75}"#).unwrap(),
            ResponseRecord::Score(resp(2, 0.75))
        );
        assert_eq!(
            decode_response(r#"{"id": 2, "error": "bad line"}"#).unwrap(),
            ResponseRecord::Error {
                id: 2,
                message: "bad line".into()
            }
        );
        assert!(matches!(decode_response("{\"score\": 1}"), Err(ScorerError::Malformed(_))));
        assert!(matches!(decode_response("nope"), Err(ScorerError::Malformed(_))));
        assert!(decode_handshake(r#"{"protocol": 1}"#).is_ok());
        assert!(decode_handshake(r#"{"protocol": 2}"#).is_err());
        assert!(decode_handshake(r#"{"id": 1, "score": 0.5}"#).is_err());
    }

    #[test]
    fn matching_restores_request_order() {
        let reqs = [req(1), req(2), req(3)];
        let got = match_responses(&reqs, vec![resp(3, 0.3), resp(1, 0.1), resp(2, 0.2)]).unwrap();
        assert_eq!(got, [resp(1, 0.1), resp(2, 0.2), resp(3, 0.3)]);
    }

    #[test]
    fn matching_errors_are_distinct() {
        let reqs = [req(1), req(2)];
        assert_eq!(
            match_responses(&reqs, vec![resp(1, 0.1)]).unwrap_err(),
            ScorerError::MissingResponse(2)
        );
        assert_eq!(
            match_responses(&reqs, vec![resp(1, 0.1), resp(9, 0.2)]).unwrap_err(),
            ScorerError::UnknownId(9)
        );
        assert_eq!(
            match_responses(&reqs, vec![resp(1, 0.1), resp(1, 0.2)]).unwrap_err(),
            ScorerError::DuplicateId(1)
        );
        assert_eq!(
            match_responses(&reqs, vec![resp(1, f64::NAN), resp(2, 0.2)]).unwrap_err(),
            ScorerError::NonFinite(1)
        );
    }

    #[test]
    fn empty_batch() {
        assert!(checked_batch(&mut ConstantScorer::default(), &[]).unwrap().is_empty());
    }
}
