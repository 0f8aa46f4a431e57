//! External generator process speaking line-delimited JSON.
//!
//! Each request is one line on the child's stdin:
//!
//! ```text
//! {"prompt": "...", "num_queries": 10, "max_tokens": 12}
//! ```
//!
//! and the child answers with one line on stdout:
//!
//! ```text
//! {"queries": [{"text": "...", "score": -1.25}, ...]}
//! ```
//!
//! The response must hold exactly `num_queries` entries with finite scores.
//! Requests are serialized per process.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{GenerationRequest, Query, QueryBatch, QueryGenerator};
use crate::error::Result;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

const EXCERPT_CHARS: usize = 120;

/// Failures of the external generator. Transport errors concern the
/// process and its pipes; protocol errors concern the content of a reply.
#[derive(Debug, thiserror::Error)]
pub enum ExternalError {
    #[error("failed to start generator `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("generator transport failure: {0}")]
    Transport(String),

    #[error("generator did not answer within {0:?}")]
    Timeout(Duration),

    #[error("generator protocol violation: {0}")]
    Protocol(String),

    #[error("generator returned {actual} queries, expected {expected}")]
    QueryCount { expected: usize, actual: usize },
}

impl ExternalError {
    /// True for violations of the message contract, false for process and
    /// pipe failures.
    pub fn is_protocol(&self) -> bool {
        matches!(self, ExternalError::Protocol(_) | ExternalError::QueryCount { .. })
    }
}

#[derive(Debug, Serialize)]
pub struct ExternalRequest<'a> {
    pub prompt: &'a str,
    pub num_queries: usize,
    pub max_tokens: usize,
}

#[derive(Debug, Deserialize)]
struct ExternalResponse {
    queries: Vec<Query>,
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

pub struct ExternalGenerator {
    command: String,
    timeout: Duration,
    channel: Mutex<Channel>,
}

impl ExternalGenerator {
    /// Starts `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self, ExternalError> {
        Self::spawn_with_timeout(command, DEFAULT_TIMEOUT)
    }

    pub fn spawn_with_timeout(command: &str, timeout: Duration) -> Result<Self, ExternalError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ExternalError::Spawn {
                command: command.to_string(),
                source,
            })?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
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
        Ok(Self {
            command: command.to_string(),
            timeout,
            channel: Mutex::new(Channel {
                child,
                stdin,
                lines: rx,
            }),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Sends one request and validates the reply. Queries are returned best
    /// first.
    pub fn request(&self, prompt: &str, num_queries: usize, max_tokens: usize) -> Result<Vec<Query>, ExternalError> {
        let mut line = serde_json::to_string(&ExternalRequest {
            prompt,
            num_queries,
            max_tokens,
        })
        .expect("request serializes");
        line.push('\n');

        let mut channel = self
            .channel
            .lock()
            .map_err(|_| ExternalError::Transport("generator channel poisoned".into()))?;
        channel
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| channel.stdin.flush())
            .map_err(|e| ExternalError::Transport(format!("writing request: {e}")))?;
        let reply = match channel.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(ExternalError::Transport(format!("reading response: {e}"))),
            Err(RecvTimeoutError::Timeout) => return Err(ExternalError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(ExternalError::Transport("generator closed its output stream".into()))
            }
        };
        drop(channel);
        parse_response(&reply, num_queries)
    }
}

impl Drop for ExternalGenerator {
    fn drop(&mut self) {
        if let Ok(channel) = self.channel.get_mut() {
            let _ = channel.child.kill();
            let _ = channel.child.wait();
        }
    }
}

impl QueryGenerator for ExternalGenerator {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<QueryBatch> {
        let queries = self.request(request.prompt, request.num_queries, request.max_tokens)?;
        Ok(QueryBatch {
            queries,
            requested: request.num_queries,
        })
    }
}

fn excerpt(line: &str) -> String {
    let trimmed = line.trim_end();
    let mut out: String = trimmed.chars().take(EXCERPT_CHARS).collect();
    if trimmed.chars().count() > EXCERPT_CHARS {
        out.push('…');
    }
    out
}

/// Validates one response line against the expected query count.
pub fn parse_response(line: &str, expected: usize) -> Result<Vec<Query>, ExternalError> {
    let response: ExternalResponse = serde_json::from_str(line.trim_end())
        .map_err(|e| ExternalError::Protocol(format!("{e}; line: {}", excerpt(line))))?;
    let mut queries = response.queries;
    if queries.len() != expected {
        return Err(ExternalError::QueryCount {
            expected,
            actual: queries.len(),
        });
    }
    if let Some(q) = queries.iter().find(|q| !q.score.is_finite()) {
        return Err(ExternalError::Protocol(format!(
            "non-finite score for query `{}`",
            excerpt(&q.text)
        )));
    }
    queries.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(queries)
}
