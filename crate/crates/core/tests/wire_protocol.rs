//! The wire client against scripted TCP scorers, and the conformance suite
//! against the bundled reference server.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use covsearch::corpus::Document;
use covsearch::first_stage::Candidate;
use covsearch::rerank::conformance::{check_endpoint, serve};
use covsearch::rerank::{
    checked_batch, encode_handshake, RerankConfig, Reranker, RetryPolicy, ScoreRequest, ScorerError, WireScorer,
};
use covsearch::{Corpus, Error};
use serde_json::Value;

const SHORT: Duration = Duration::from_millis(300);

/// Serve one connection on a fresh port with `handler`, which gets the
/// parsed request lines and a writer.
fn scripted<F>(handler: F) -> String
where
    F: FnOnce(&mut dyn Iterator<Item = Value>, &mut TcpStream) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        writeln!(stream, "{}", encode_handshake()).unwrap();
        let reader = BufReader::new(stream.try_clone().unwrap());
        let mut lines = reader.lines().map_while(Result::ok).map(|l| serde_json::from_str::<Value>(&l).unwrap());
        handler(&mut lines, &mut stream);
    });
    addr
}

fn reqs(ids: &[u64]) -> Vec<ScoreRequest> {
    ids.iter()
        .map(|&i| ScoreRequest {
            request_id: i,
            query_text: "q".into(),
            passage_text: format!("passage {i}"),
        })
        .collect()
}

fn id(v: &Value) -> u64 {
    v["id"].as_u64().unwrap()
}

#[test]
fn out_of_order_responses_are_matched() {
    let addr = scripted(|lines, out| {
        let batch: Vec<Value> = lines.take(3).collect();
        for v in batch.iter().rev() {
            writeln!(out, r#"{{"id": {}, "score": {}}}"#, id(v), id(v) as f64 / 10.0).unwrap();
        }
    });
    let mut s = WireScorer::connect(&format!("tcp:{addr}"), SHORT).unwrap();
    let got = checked_batch(&mut s, &reqs(&[1, 2, 3])).unwrap();
    let ids: Vec<u64> = got.iter().map(|r| r.request_id).collect();
    assert_eq!(ids, [1, 2, 3]);
    assert_eq!(got[2].score, 0.3);
}

#[test]
fn missing_id_times_out_naming_it() {
    let addr = scripted(|lines, out| {
        let batch: Vec<Value> = lines.take(2).collect();
        writeln!(out, r#"{{"id": {}, "score": 1.0}}"#, id(&batch[0])).unwrap();
        thread::sleep(Duration::from_secs(2));
    });
    let mut s = WireScorer::connect(&format!("tcp:{addr}"), SHORT).unwrap();
    match checked_batch(&mut s, &reqs(&[5, 6])) {
        Err(ScorerError::Timeout { missing, .. }) => assert_eq!(missing, [6]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn error_record_surfaces() {
    let addr = scripted(|lines, out| {
        let v = lines.next().unwrap();
        writeln!(out, r#"{{"id": {}, "error": "model exploded"}}"#, id(&v)).unwrap();
    });
    let mut s = WireScorer::connect(&format!("tcp:{addr}"), SHORT).unwrap();
    assert_eq!(
        checked_batch(&mut s, &reqs(&[9])),
        Err(ScorerError::Remote {
            id: 9,
            message: "model exploded".into()
        })
    );
}

#[test]
fn unknown_id_is_a_protocol_error() {
    let addr = scripted(|lines, out| {
        lines.next();
        writeln!(out, r#"{{"id": 777, "score": 0.1}}"#).unwrap();
    });
    let mut s = WireScorer::connect(&format!("tcp:{addr}"), SHORT).unwrap();
    assert_eq!(checked_batch(&mut s, &reqs(&[1])), Err(ScorerError::UnknownId(777)));
}

#[test]
fn bad_handshake_is_rejected() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        writeln!(stream, r#"{{"protocol": 2}}"#).unwrap();
        thread::sleep(Duration::from_millis(500));
    });
    assert!(matches!(
        WireScorer::connect(&format!("tcp:{addr}"), SHORT),
        Err(ScorerError::Handshake(_))
    ));
}

#[test]
fn late_answers_are_dropped_and_retry_succeeds() {
    // first batch: answer nothing until the client has timed out, then
    // answer the stale ids followed by the retried ones
    let addr = scripted(|lines, out| {
        let first: Vec<Value> = lines.take(2).collect();
        let retried: Vec<Value> = lines.take(2).collect();
        for v in first.iter().chain(&retried) {
            writeln!(out, r#"{{"id": {}, "score": 0.5}}"#, id(v)).unwrap();
        }
        let _ = lines.next();
    });
    let scorer = WireScorer::connect(&format!("tcp:{addr}"), SHORT).unwrap();
    let cfg = RerankConfig {
        batch_size: 2,
        window: 1,
        retry: RetryPolicy {
            retries: 3,
            base_delay: Duration::from_millis(1),
        },
        ..RerankConfig::default()
    };
    let corpus = Corpus::from_documents(vec![Document::stub("a", "alpha", ""), Document::stub("b", "beta", "")]);
    let cands = vec![
        Candidate {
            doc_id: "a".into(),
            score: 2.0,
            rank: 1,
        },
        Candidate {
            doc_id: "b".into(),
            score: 1.0,
            rank: 2,
        },
    ];
    let mut rr = Reranker::new(cfg, scorer).unwrap();
    let out = rr.rerank(&cands, "q", &corpus).unwrap();
    assert_eq!(out.iter().map(|c| c.doc_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
}

#[test]
fn dead_scorer_aborts_with_progress() {
    let addr = scripted(|_, _| {});
    let scorer = WireScorer::connect(&format!("tcp:{addr}"), SHORT).unwrap();
    let cfg = RerankConfig {
        retry: RetryPolicy {
            retries: 1,
            base_delay: Duration::from_millis(1),
        },
        ..RerankConfig::default()
    };
    let corpus = Corpus::from_documents(vec![Document::stub("a", "alpha", "")]);
    let cands = vec![Candidate {
        doc_id: "a".into(),
        score: 1.0,
        rank: 1,
    }];
    match Reranker::new(cfg, scorer).unwrap().rerank(&cands, "q", &corpus) {
        Err(Error::RerankAborted { completed: 0, total: 1, .. }) => {}
        other => panic!("{other:?}"),
    }
}

fn reference_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            thread::spawn(move || {
                let reader = BufReader::new(stream.try_clone().unwrap());
                let _ = serve(reader, stream, |q, p| (q.len() + p.len()) as f64 / 1000.0);
            });
        }
    });
    addr
}

#[test]
fn reference_server_passes_conformance() {
    let addr = reference_server();
    for outcome in check_endpoint(&format!("tcp:{addr}"), Duration::from_secs(5)) {
        assert!(outcome.passed(), "{}: {:?}", outcome.name, outcome.result);
    }
}

#[test]
fn conformance_catches_a_broken_server() {
    // answers every request with the same id
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            thread::spawn(move || {
                writeln!(stream, "{}", encode_handshake()).unwrap();
                let reader = BufReader::new(stream.try_clone().unwrap());
                for _ in reader.lines() {
                    writeln!(stream, r#"{{"id": 1, "score": 0.5}}"#).unwrap();
                }
            });
        }
    });
    let results = check_endpoint(&format!("tcp:{addr}"), Duration::from_millis(500));
    assert!(results.iter().find(|r| r.name == "handshake first").unwrap().passed());
    assert!(!results.iter().find(|r| r.name == "batch ids matched").unwrap().passed());
}

#[test]
fn stdio_endpoint_round_trip() {
    // a shell scorer: handshake, then answer each request with score 0.25
    let script = r#"echo '{"protocol": 1}'; while read -r line; do id=$(printf '%s' "$line" | sed 's/^{"id": \([0-9]*\).*/\1/'); echo "{\"id\": $id, \"score\": 0.25}"; done"#;
    let mut s = WireScorer::connect(&format!("stdio:{script}"), Duration::from_secs(5)).unwrap();
    let got = checked_batch(&mut s, &reqs(&[3, 4])).unwrap();
    assert!(got.iter().all(|r| r.score == 0.25));
}
