//! Newline-delimited JSON scoring protocol.
//!
//! Request:  `{"id": <u64>, "sequences": ["ACD...", ...]}`
//! Response: `{"id": <u64>, "scores": [<f64>, ...], "plddt": [[<f64>, ...], ...]}`
//!
//! One document per line, UTF-8. `plddt` is optional. A whole batch travels
//! in a single request; responses are matched to requests by `id` and must
//! preserve order.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ScoreReport, Scorer};
use crate::error::{Error, Result};
use crate::seq::{Alphabet, Sequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: u64,
    pub sequences: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: u64,
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plddt: Option<Vec<Vec<f64>>>,
}

/// A line-oriented duplex channel to a scoring service.
pub trait Transport: Send {
    /// Sends one line and waits for one line back.
    fn exchange(&mut self, line: &str, timeout: Duration) -> io::Result<String>;

    /// Drops any connection state so the next exchange starts fresh.
    fn reset(&mut self);
}

pub struct TcpTransport {
    addr: String,
    conn: Option<(TcpStream, BufReader<TcpStream>)>,
}

impl TcpTransport {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            conn: None,
        }
    }
}

impl Transport for TcpTransport {
    fn exchange(&mut self, line: &str, timeout: Duration) -> io::Result<String> {
        if self.conn.is_none() {
            let stream = TcpStream::connect(&self.addr)?;
            stream.set_nodelay(true)?;
            let reader = BufReader::new(stream.try_clone()?);
            self.conn = Some((stream, reader));
        }
        let (stream, reader) = self.conn.as_mut().expect("connected above");
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.write_all(line.as_bytes())?;
        stream.write_all(b"\n")?;
        stream.flush()?;
        let mut buf = String::new();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "server closed the connection"));
        }
        Ok(buf)
    }

    fn reset(&mut self) {
        self.conn = None;
    }
}

/// Talks to a child process over its standard input and output.
pub struct ChildTransport {
    program: String,
    args: Vec<String>,
    running: Option<(Child, ChildStdin, Receiver<io::Result<String>>)>,
}

impl ChildTransport {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            running: None,
        }
    }

    fn spawn(&mut self) -> io::Result<()> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut buf = String::new();
                match reader.read_line(&mut buf) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(buf)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        self.running = Some((child, stdin, rx));
        Ok(())
    }
}

impl Transport for ChildTransport {
    fn exchange(&mut self, line: &str, timeout: Duration) -> io::Result<String> {
        if self.running.is_none() {
            self.spawn()?;
        }
        let (_, stdin, rx) = self.running.as_mut().expect("spawned above");
        stdin.write_all(line.as_bytes())?;
        stdin.write_all(b"\n")?;
        stdin.flush()?;
        match rx.recv_timeout(timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => Err(io::Error::new(io::ErrorKind::TimedOut, "no response")),
            Err(RecvTimeoutError::Disconnected) => {
                Err(io::Error::new(io::ErrorKind::UnexpectedEof, "child exited"))
            }
        }
    }

    fn reset(&mut self) {
        if let Some((mut child, _, _)) = self.running.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Drop for ChildTransport {
    fn drop(&mut self) {
        self.reset();
    }
}

#[derive(Clone, Debug)]
pub struct RetryPolicy {
    pub timeout: Duration,
    pub attempts: usize,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            attempts: 3,
            backoff: Duration::from_millis(50),
        }
    }
}

/// Client for the line protocol. Transport failures are retried with
/// exponential backoff; protocol violations fail immediately.
pub struct RemoteScorer {
    alphabet: Alphabet,
    transport: Mutex<Box<dyn Transport>>,
    next_id: AtomicU64,
    retry: RetryPolicy,
}

impl RemoteScorer {
    pub fn new(transport: Box<dyn Transport>, alphabet: Alphabet, retry: RetryPolicy) -> Self {
        Self {
            alphabet,
            transport: Mutex::new(transport),
            next_id: AtomicU64::new(1),
            retry,
        }
    }

    pub fn tcp(addr: impl Into<String>, alphabet: Alphabet) -> Self {
        Self::new(Box::new(TcpTransport::new(addr)), alphabet, RetryPolicy::default())
    }

    pub fn child(program: impl Into<String>, args: Vec<String>, alphabet: Alphabet) -> Self {
        Self::new(
            Box::new(ChildTransport::new(program, args)),
            alphabet,
            RetryPolicy::default(),
        )
    }

    fn parse_response(&self, id: u64, seqs: &[Sequence], line: &str) -> Result<Vec<ScoreReport>> {
        let resp: ScoreResponse = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
        if resp.id != id {
            return Err(Error::Protocol(format!(
                "response id {} does not match request id {id}",
                resp.id
            )));
        }
        if resp.scores.len() != seqs.len() {
            return Err(Error::Protocol(format!(
                "{} scores for {} sequences",
                resp.scores.len(),
                seqs.len()
            )));
        }
        if let Some(p) = &resp.plddt {
            if p.len() != seqs.len() {
                return Err(Error::Protocol(format!(
                    "{} confidence vectors for {} sequences",
                    p.len(),
                    seqs.len()
                )));
            }
        }
        let mut plddt = resp.plddt.map(|p| p.into_iter());
        let mut out = Vec::with_capacity(seqs.len());
        for (seq, score) in seqs.iter().zip(resp.scores) {
            let report = ScoreReport {
                score,
                confidence: plddt.as_mut().and_then(|it| it.next()),
            };
            report
                .validate(Some(seq.len()))
                .map_err(|e| Error::Protocol(e.to_string()))?;
            out.push(report);
        }
        Ok(out)
    }
}

impl Scorer for RemoteScorer {
    fn score_batch(&self, seqs: &[Sequence]) -> Result<Vec<ScoreReport>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let request = ScoreRequest {
            id,
            sequences: seqs.iter().map(|s| self.alphabet.render(s)).collect(),
        };
        let line = serde_json::to_string(&request)?;
        let mut transport = self.transport.lock().expect("transport lock poisoned");
        let mut delay = self.retry.backoff;
        let mut last_err = None;
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                thread::sleep(delay);
                delay *= 2;
            }
            match transport.exchange(&line, self.retry.timeout) {
                Ok(reply) => return self.parse_response(id, seqs, &reply),
                Err(e) => {
                    log::warn!("remote scorer attempt {} failed: {e}", attempt + 1);
                    transport.reset();
                    last_err = Some(e);
                }
            }
        }
        match last_err {
            Some(e) if matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) => {
                Err(Error::Timeout(self.retry.attempts))
            }
            Some(e) => Err(Error::Scorer(format!(
                "remote scorer unavailable after {} attempts: {e}",
                self.retry.attempts
            ))),
            None => Err(Error::Scorer("no attempts made".into())),
        }
    }
}

pub type Handler = dyn Fn(&ScoreRequest) -> ScoreResponse + Send + Sync;

/// Answers every sequence with the same score.
pub fn constant_handler(score: f64) -> Arc<Handler> {
    Arc::new(move |req: &ScoreRequest| ScoreResponse {
        id: req.id,
        scores: vec![score; req.sequences.len()],
        plddt: None,
    })
}

/// Serves any local scorer over the protocol. Unparseable sequences get the
/// smallest positive score rather than failing the whole batch.
pub fn scorer_handler<S: Scorer + 'static>(scorer: S, alphabet: Alphabet) -> Arc<Handler> {
    Arc::new(move |req: &ScoreRequest| {
        let parsed: Vec<Option<Sequence>> = req.sequences.iter().map(|s| alphabet.parse(s).ok()).collect();
        let valid: Vec<Sequence> = parsed.iter().flatten().cloned().collect();
        let mut reports = scorer.score_batch(&valid).unwrap_or_default().into_iter();
        let mut scores = Vec::with_capacity(parsed.len());
        let mut plddt = Vec::with_capacity(parsed.len());
        for p in &parsed {
            match p.as_ref().and_then(|s| reports.next().map(|r| (s, r))) {
                Some((s, r)) => {
                    plddt.push(r.confidence.unwrap_or_else(|| vec![100.0; s.len()]));
                    scores.push(r.score);
                }
                None => {
                    scores.push(f64::MIN_POSITIVE);
                    plddt.push(Vec::new());
                }
            }
        }
        ScoreResponse {
            id: req.id,
            scores,
            plddt: Some(plddt),
        }
    })
}

/// Reads requests line by line until EOF, writing one response per request.
pub fn serve_lines<R: BufRead, W: Write>(reader: R, mut writer: W, handler: &Handler) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ScoreRequest>(&line) {
            Ok(req) => {
                let resp = handler(&req);
                serde_json::to_writer(&mut writer, &resp)?;
                writer.write_all(b"\n")?;
                writer.flush()?;
            }
            Err(e) => log::warn!("ignoring malformed request: {e}"),
        }
    }
    Ok(())
}

/// Accepts connections forever, one thread per connection.
pub fn serve_tcp(listener: TcpListener, handler: Arc<Handler>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let handler = Arc::clone(&handler);
        thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(e) => {
                    log::warn!("connection setup failed: {e}");
                    return;
                }
            };
            if let Err(e) = serve_lines(reader, stream, handler.as_ref()) {
                log::debug!("connection closed: {e}");
            }
        });
    }
    Ok(())
}

/// Binds an ephemeral loopback port and serves in a background thread.
pub fn spawn_loopback(handler: Arc<Handler>) -> io::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?.to_string();
    thread::spawn(move || {
        let _ = serve_tcp(listener, handler);
    });
    Ok(addr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn seqs(n: usize) -> Vec<Sequence> {
        (0..n)
            .map(|i| Sequence::from_indices(vec![(i % 20) as u8, 3, 7]))
            .collect()
    }

    #[test]
    fn loopback_echo_returns_constant_scores() {
        let addr = spawn_loopback(constant_handler(0.5)).unwrap();
        let client = RemoteScorer::tcp(addr, Alphabet::protein());
        let out = client.score_batch(&seqs(5)).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|r| r.score == 0.5));
        // A second batch on the same connection gets a fresh id.
        assert_eq!(client.score_batch(&seqs(2)).unwrap().len(), 2);
    }

    #[test]
    fn batch_travels_as_one_request() {
        let requests = Arc::new(AtomicUsize::new(0));
        let sizes = Arc::new(Mutex::new(Vec::new()));
        let (r, s) = (Arc::clone(&requests), Arc::clone(&sizes));
        let handler: Arc<Handler> = Arc::new(move |req: &ScoreRequest| {
            r.fetch_add(1, Ordering::SeqCst);
            s.lock().unwrap().push(req.sequences.len());
            ScoreResponse {
                id: req.id,
                scores: vec![0.25; req.sequences.len()],
                plddt: None,
            }
        });
        let addr = spawn_loopback(handler).unwrap();
        let client = RemoteScorer::tcp(addr, Alphabet::protein());
        client.score_batch(&seqs(100)).unwrap();
        assert_eq!(requests.load(Ordering::SeqCst), 1);
        assert_eq!(*sizes.lock().unwrap(), vec![100]);
    }

    struct Scripted(Vec<io::Result<String>>);

    impl Transport for Scripted {
        fn exchange(&mut self, _line: &str, _timeout: Duration) -> io::Result<String> {
            if self.0.is_empty() {
                return Err(io::Error::new(io::ErrorKind::TimedOut, "exhausted"));
            }
            self.0.remove(0)
        }

        fn reset(&mut self) {}
    }

    fn scripted(lines: Vec<io::Result<String>>) -> RemoteScorer {
        RemoteScorer::new(
            Box::new(Scripted(lines)),
            Alphabet::protein(),
            RetryPolicy {
                timeout: Duration::from_millis(10),
                attempts: 3,
                backoff: Duration::from_millis(1),
            },
        )
    }

    #[test]
    fn id_mismatch_is_protocol_error() {
        let c = scripted(vec![Ok(r#"{"id": 99, "scores": [0.5]}"#.into())]);
        assert!(matches!(c.score_batch(&seqs(1)), Err(Error::Protocol(_))));
    }

    #[test]
    fn malformed_and_out_of_range_are_protocol_errors() {
        let c = scripted(vec![Ok("not json".into())]);
        assert!(matches!(c.score_batch(&seqs(1)), Err(Error::Protocol(_))));
        let c = scripted(vec![Ok(r#"{"id": 1, "scores": [1.5]}"#.into())]);
        assert!(matches!(c.score_batch(&seqs(1)), Err(Error::Protocol(_))));
        let c = scripted(vec![Ok(r#"{"id": 1, "scores": [0.5, 0.5]}"#.into())]);
        assert!(matches!(c.score_batch(&seqs(1)), Err(Error::Protocol(_))));
        let c = scripted(vec![Ok(r#"{"id": 1, "scores": [0.5], "plddt": [[10, 20]]}"#.into())]);
        assert!(matches!(c.score_batch(&seqs(1)), Err(Error::Protocol(_))));
    }

    #[test]
    fn transient_failures_are_retried() {
        let c = scripted(vec![
            Err(io::Error::new(io::ErrorKind::ConnectionReset, "reset")),
            Err(io::Error::new(io::ErrorKind::TimedOut, "slow")),
            Ok(r#"{"id": 1, "scores": [0.75], "plddt": [[10, 20, 30]]}"#.into()),
        ]);
        let out = c.score_batch(&seqs(1)).unwrap();
        assert_eq!(out[0].score, 0.75);
        assert_eq!(out[0].confidence.as_deref(), Some(&[10.0, 20.0, 30.0][..]));
    }

    #[test]
    fn exhausted_retries_time_out() {
        let c = scripted(vec![]);
        assert!(matches!(c.score_batch(&seqs(1)), Err(Error::Timeout(3))));
    }

    #[test]
    fn unreachable_endpoint_errors() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        let c = RemoteScorer::new(
            Box::new(TcpTransport::new(addr)),
            Alphabet::protein(),
            RetryPolicy {
                timeout: Duration::from_millis(100),
                attempts: 3,
                backoff: Duration::from_millis(1),
            },
        );
        assert!(c.score_batch(&seqs(1)).is_err());
    }

    #[test]
    fn serve_lines_answers_each_request() {
        let input = "{\"id\":7,\"sequences\":[\"AC\",\"DE\"]}\n\ngarbage\n{\"id\":8,\"sequences\":[]}\n";
        let mut out = Vec::new();
        serve_lines(input.as_bytes(), &mut out, constant_handler(0.5).as_ref()).unwrap();
        let lines: Vec<ScoreResponse> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].id, 7);
        assert_eq!(lines[0].scores, vec![0.5, 0.5]);
        assert_eq!(lines[1].id, 8);
    }
}
