//! Client for an out-of-process predictor speaking newline-delimited JSON.
//!
//! Request:  `{"id", "op": "predict"|"meta", "prompt", "n", "revealed": [[pos, tok]...], "positions", "top_k"}`
//! Response: `{"id", "ok": true, "dists": [{"pos", "tokens", "probs"}], "truncated", "meta"}`
//! Error:    `{"id", "ok": false, "error"}`
//!
//! Requests are sent one at a time and each answer must carry the id of the
//! request it answers.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{check_query, PartialSequence, PredictiveDistribution, Predictor};
use crate::TokenId;

pub const DEFAULT_TOP_K: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Predict,
    Meta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revealed: Option<Vec<(usize, TokenId)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDist {
    pub pos: usize,
    pub tokens: Vec<TokenId>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub name: String,
    pub vocab_size: usize,
}

/// Either a success or an error frame, distinguished by `ok`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dists: Option<Vec<WireDist>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ModelMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn error(id: u64, message: impl Into<String>) -> Self {
        Self { id, ok: false, dists: None, truncated: None, meta: None, error: Some(message.into()) }
    }
}

/// A line-oriented duplex channel.
pub trait FrameTransport: Send {
    fn send(&mut self, frame: &str) -> std::io::Result<()>;
    /// Next frame, without its newline; `None` at end of stream.
    fn recv(&mut self) -> std::io::Result<Option<String>>;
}

/// Transport over a spawned child's stdin/stdout.
pub struct StdioTransport {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl StdioTransport {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Bridge(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { child, stdin, stdout })
    }
}

impl FrameTransport for StdioTransport {
    fn send(&mut self, frame: &str) -> std::io::Result<()> {
        self.stdin.write_all(frame.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()
    }

    fn recv(&mut self) -> std::io::Result<Option<String>> {
        let mut line = String::new();
        if self.stdout.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        Ok(Some(line.trim_end_matches(['\n', '\r']).to_string()))
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct Channel<T> {
    transport: T,
    next_id: u64,
}

/// Predictor backed by a bridge process.
pub struct BridgePredictor<T: FrameTransport> {
    channel: Mutex<Channel<T>>,
    meta: ModelMeta,
    top_k: usize,
}

impl BridgePredictor<StdioTransport> {
    pub fn spawn(program: &str, args: &[String], top_k: usize) -> Result<Self> {
        Self::connect(StdioTransport::spawn(program, args)?, top_k)
    }
}

impl<T: FrameTransport> BridgePredictor<T> {
    /// Performs the metadata handshake.
    pub fn connect(transport: T, top_k: usize) -> Result<Self> {
        if top_k == 0 {
            return Err(Error::Config("bridge top_k must be at least 1".into()));
        }
        let mut channel = Channel { transport, next_id: 0 };
        let resp = exchange(&mut channel, |id| Request {
            id,
            op: Op::Meta,
            prompt: None,
            n: None,
            revealed: None,
            positions: None,
            top_k: None,
        })?;
        let meta = resp.meta.ok_or_else(|| Error::Bridge("meta response without metadata".into()))?;
        Ok(Self { channel: Mutex::new(channel), meta, top_k })
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }
}

fn exchange<T: FrameTransport>(channel: &mut Channel<T>, build: impl FnOnce(u64) -> Request) -> Result<Response> {
    let id = channel.next_id;
    channel.next_id += 1;
    let frame = serde_json::to_string(&build(id))?;
    channel.transport.send(&frame).map_err(|e| Error::Bridge(format!("send failed: {e}")))?;
    let line = channel
        .transport
        .recv()
        .map_err(|e| Error::Bridge(format!("receive failed: {e}")))?
        .ok_or_else(|| Error::Bridge("bridge closed the stream".into()))?;
    let resp: Response = serde_json::from_str(&line).map_err(|e| Error::Bridge(format!("malformed frame: {e}")))?;
    if resp.id != id {
        return Err(Error::Bridge(format!("expected response id {id}, got {}", resp.id)));
    }
    if !resp.ok {
        let message = resp.error.unwrap_or_else(|| "unspecified bridge error".into());
        return Err(if message.starts_with("invalid-query") {
            Error::InvalidQuery(message)
        } else {
            Error::Bridge(message)
        });
    }
    Ok(resp)
}

impl<T: FrameTransport> Predictor for BridgePredictor<T> {
    fn vocab_size(&self) -> usize {
        self.meta.vocab_size
    }

    fn predict(&self, state: &PartialSequence, positions: &[usize]) -> Result<Vec<PredictiveDistribution>> {
        check_query(state, positions)?;
        let mut channel = self.channel.lock().map_err(|_| Error::Bridge("bridge channel poisoned".into()))?;
        let resp = exchange(&mut channel, |id| Request {
            id,
            op: Op::Predict,
            prompt: Some(state.prompt().to_vec()),
            n: Some(state.len()),
            revealed: Some(state.revealed().collect()),
            positions: Some(positions.to_vec()),
            top_k: Some(self.top_k),
        })?;
        let truncated = resp.truncated.unwrap_or(false);
        let dists = resp.dists.ok_or_else(|| Error::Bridge("predict response without dists".into()))?;
        if dists.len() != positions.len() {
            return Err(Error::Bridge(format!("asked for {} positions, got {}", positions.len(), dists.len())));
        }
        dists
            .into_iter()
            .zip(positions)
            .map(|(d, &pos)| {
                if d.pos != pos || d.tokens.len() != d.probs.len() {
                    return Err(Error::Bridge(format!("malformed distribution for position {pos}")));
                }
                if let Some(&t) = d.tokens.iter().find(|&&t| t as usize >= self.meta.vocab_size) {
                    return Err(Error::InvalidToken { token: t, vocab_size: self.meta.vocab_size });
                }
                let dist =
                    PredictiveDistribution::from_entries(pos, d.tokens.into_iter().zip(d.probs).collect(), truncated);
                dist.validate()?;
                Ok(dist)
            })
            .collect()
    }
}
