//! Line-level conformance checks for scorer endpoints. Each check opens its
//! own connection so a failure in one cannot poison the next.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::time::Duration;

use super::protocol::{decode_handshake, decode_response, encode_request, ResponseRecord, ScoreRequest};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub result: Result<(), String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.result.is_ok()
    }
}

struct Link {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    child: Option<Child>,
}

impl Link {
    fn open(endpoint: &str, timeout: Duration) -> Result<Self, String> {
        let (kind, rest) = endpoint
            .split_once(':')
            .ok_or_else(|| format!("bad endpoint `{endpoint}`"))?;
        let (reader, writer, child): (Box<dyn BufRead + Send>, Box<dyn Write + Send>, Option<Child>) = match kind {
            "stdio" => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(rest)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::null())
                    .spawn()
                    .map_err(|e| format!("cannot start `{rest}`: {e}"))?;
                let stdout = child.stdout.take().expect("piped");
                let stdin = child.stdin.take().expect("piped");
                (Box::new(BufReader::new(stdout)), Box::new(stdin), Some(child))
            }
            "tcp" => {
                let s = std::net::TcpStream::connect(rest).map_err(|e| e.to_string())?;
                let r = s.try_clone().map_err(|e| e.to_string())?;
                (Box::new(BufReader::new(r)), Box::new(s), None)
            }
            #[cfg(unix)]
            "unix" => {
                let s = std::os::unix::net::UnixStream::connect(rest).map_err(|e| e.to_string())?;
                let r = s.try_clone().map_err(|e| e.to_string())?;
                (Box::new(BufReader::new(r)), Box::new(s), None)
            }
            other => return Err(format!("unknown endpoint kind `{other}`")),
        };
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Link {
            writer,
            lines: rx,
            timeout,
            child,
        })
    }

    fn line(&mut self) -> Result<String, String> {
        loop {
            match self.lines.recv_timeout(self.timeout) {
                Ok(Ok(l)) if l.trim().is_empty() => continue,
                Ok(Ok(l)) => return Ok(l),
                Ok(Err(e)) => return Err(e.to_string()),
                Err(mpsc::RecvTimeoutError::Timeout) => return Err(format!("no line within {:?}", self.timeout)),
                Err(mpsc::RecvTimeoutError::Disconnected) => return Err("connection closed".into()),
            }
        }
    }

    fn send_raw(&mut self, line: &str) -> Result<(), String> {
        writeln!(self.writer, "{line}")
            .and_then(|_| self.writer.flush())
            .map_err(|e| e.to_string())
    }

    fn handshake(&mut self) -> Result<(), String> {
        let first = self.line()?;
        decode_handshake(&first).map_err(|e| e.to_string())
    }

    /// Send requests and read exactly one record per id, in any order.
    fn exchange(&mut self, reqs: &[ScoreRequest]) -> Result<HashMap<u64, ResponseRecord>, String> {
        for r in reqs {
            self.send_raw(&encode_request(r))?;
        }
        let mut pending: HashSet<u64> = reqs.iter().map(|r| r.request_id).collect();
        let mut out = HashMap::new();
        while !pending.is_empty() {
            let line = self.line()?;
            let rec = decode_response(&line).map_err(|e| e.to_string())?;
            let id = match &rec {
                ResponseRecord::Score(s) => s.request_id,
                ResponseRecord::Error { id, .. } => *id,
            };
            if !pending.remove(&id) {
                return Err(format!("unexpected or repeated id {id}"));
            }
            out.insert(id, rec);
        }
        Ok(out)
    }
}

impl Drop for Link {
    fn drop(&mut self) {
        if let Some(mut c) = self.child.take() {
            self.writer = Box::new(std::io::sink());
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn req(id: u64, q: &str, p: &str) -> ScoreRequest {
    ScoreRequest {
        request_id: id,
        query_text: q.into(),
        passage_text: p.into(),
    }
}

fn score_of(rec: Option<&ResponseRecord>, id: u64) -> Result<f64, String> {
    match rec {
        Some(ResponseRecord::Score(s)) if s.score.is_finite() => Ok(s.score),
        Some(ResponseRecord::Score(s)) => Err(format!("id {id}: non-finite score {}", s.score)),
        Some(ResponseRecord::Error { message, .. }) => Err(format!("id {id}: error record `{message}`")),
        None => Err(format!("id {id}: no response")),
    }
}

type Check = fn(&mut Link) -> Result<(), String>;

const CHECKS: &[(&str, Check)] = &[
    ("handshake first", |_| Ok(())),
    ("single request", |l| {
        let r = l.exchange(&[req(1, "covid transmission", "the virus spreads through droplets")])?;
        score_of(r.get(&1), 1).map(drop)
    }),
    ("batch ids matched", |l| {
        let reqs: Vec<_> = (10..18).map(|i| req(i, "masks", &format!("passage number {i} about masks"))).collect();
        let r = l.exchange(&reqs)?;
        reqs.iter().try_for_each(|q| score_of(r.get(&q.request_id), q.request_id).map(drop))
    }),
    ("deterministic", |l| {
        let r = l.exchange(&[req(20, "fever", "fever and cough"), req(21, "fever", "fever and cough")])?;
        let (a, b) = (score_of(r.get(&20), 20)?, score_of(r.get(&21), 21)?);
        if a == b {
            Ok(())
        } else {
            Err(format!("same input scored {a} and {b}"))
        }
    }),
    ("escaped text", |l| {
        let r = l.exchange(&[req(30, "what is \"R0\"?\tß", "line one\nline two \\ ünïcode")])?;
        score_of(r.get(&30), 30).map(drop)
    }),
    ("empty passage", |l| {
        let r = l.exchange(&[req(40, "query", "")])?;
        score_of(r.get(&40), 40).map(drop)
    }),
    ("large id", |l| {
        let id = (1u64 << 53) - 1;
        let r = l.exchange(&[req(id, "q", "p")])?;
        score_of(r.get(&id), id).map(drop)
    }),
    ("error record then recovery", |l| {
        l.send_raw(r#"{"id": 99, "query": "missing passage"}"#)?;
        let line = l.line()?;
        match decode_response(&line).map_err(|e| e.to_string())? {
            ResponseRecord::Error { id: 99, .. } => {}
            other => return Err(format!("expected an error record for id 99, got {other:?}")),
        }
        let r = l.exchange(&[req(100, "q", "p")])?;
        score_of(r.get(&100), 100).map(drop)
    }),
];

/// Run every check against `endpoint` (`stdio:`, `tcp:` or `unix:`).
pub fn check_endpoint(endpoint: &str, timeout: Duration) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let result = Link::open(endpoint, timeout).and_then(|mut l| {
                l.handshake()?;
                check(&mut l)
            });
            CheckOutcome { name, result }
        })
        .collect()
}

/// Answer protocol requests on `input`/`output` with `score(query, passage)`
/// until the input closes. Lines that do not parse as requests get an
/// error record when an id can be recovered and are skipped otherwise.
pub fn serve<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    mut score: impl FnMut(&str, &str) -> f64,
) -> std::io::Result<()> {
    #[derive(serde::Deserialize)]
    struct Req {
        id: Option<u64>,
        query: Option<String>,
        passage: Option<String>,
    }
    writeln!(output, "{}", super::protocol::encode_handshake())?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Req>(&line) {
            Ok(Req {
                id: Some(id),
                query: Some(q),
                passage: Some(p),
            }) => super::protocol::encode_response(&super::protocol::ScoreResponse {
                request_id: id,
                score: score(&q, &p),
            }),
            Ok(Req { id: Some(id), .. }) => format!(
                "{{\"id\": {id}, \"error\": {}}}",
                serde_json::Value::from("request needs id, query and passage")
            ),
            _ => continue,
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}
