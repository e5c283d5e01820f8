//! Semantic loss computed by a child process speaking the VEMB protocol.
//!
//! Request: `"VEMB"`, u32 P, u32 pair count, u32 reserved (0), then per pair
//! the rendered and the target patch as P·P·3 f32 values (row-major RGB).
//! Reply, per pair: f32 loss followed by P·P·3 f32 gradients with respect to
//! the rendered patch. All values little-endian.

use std::io::{Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::Duration;

use voxify_core::embed::{EmbedError, Patch, SemanticLoss};
use voxify_core::Rgb;

pub const MAGIC: &[u8; 4] = b"VEMB";
pub const HEADER_LEN: usize = 16;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

pub fn encode_request(pairs: &[(&Patch, &Patch)]) -> Vec<u8> {
    let p = pairs.first().map_or(0, |(a, _)| a.size);
    let mut out = Vec::with_capacity(HEADER_LEN + pairs.len() * 24 * p * p);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(p as u32).to_le_bytes());
    out.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for (a, b) in pairs {
        for px in a.pixels.iter().chain(&b.pixels) {
            for c in px {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn reply_len(p: usize, pairs: usize) -> usize {
    pairs * 4 * (1 + 3 * p * p)
}

/// Splits a reply into `(loss, gradient)` per pair.
pub fn decode_reply(bytes: &[u8], p: usize, pairs: usize) -> Result<Vec<(f64, Vec<Rgb>)>, EmbedError> {
    if bytes.len() != reply_len(p, pairs) {
        return Err(EmbedError::Failed(format!("reply has {} bytes, expected {}", bytes.len(), reply_len(p, pairs))));
    }
    let f: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok(f.chunks_exact(1 + 3 * p * p)
        .map(|r| (r[0], r[1..].chunks_exact(3).map(|g| [g[0], g[1], g[2]]).collect()))
        .collect())
}

struct Job {
    request: Vec<u8>,
    reply_len: usize,
}

struct Running {
    child: Child,
    jobs: Sender<Job>,
    replies: Receiver<std::io::Result<Vec<u8>>>,
}

impl Running {
    fn spawn(command: &str) -> std::io::Result<Running> {
        let mut parts = command.split_whitespace();
        let program = parts.next().ok_or_else(|| std::io::Error::other("empty embedder command"))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (jobs, job_rx) = mpsc::channel::<Job>();
        let (reply_tx, replies) = mpsc::channel();
        thread::spawn(move || serve(stdin, stdout, job_rx, reply_tx));
        Ok(Running { child, jobs, replies })
    }
}

// Writes and reads happen off the training thread so a stuck child can only
// cost the timeout.
fn serve(
    mut stdin: ChildStdin,
    mut stdout: ChildStdout,
    jobs: Receiver<Job>,
    replies: Sender<std::io::Result<Vec<u8>>>,
) {
    for job in jobs {
        let res = stdin.write_all(&job.request).and_then(|_| stdin.flush()).and_then(|_| {
            let mut buf = vec![0u8; job.reply_len];
            stdout.read_exact(&mut buf).map(|_| buf)
        });
        let failed = res.is_err();
        if replies.send(res).is_err() || failed {
            return;
        }
    }
}

/// Persistent child process; one request in flight at a time. Any failure
/// kills the child, reports an error for that call and respawns on the next.
pub struct ExternalEmbedder {
    command: String,
    timeout: Duration,
    running: Option<Running>,
}

impl ExternalEmbedder {
    pub fn new(command: impl Into<String>) -> Self {
        Self::with_timeout(command, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(command: impl Into<String>, timeout: Duration) -> Self {
        ExternalEmbedder { command: command.into(), timeout, running: None }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn kill(&mut self) {
        if let Some(mut r) = self.running.take() {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }

    fn exchange(&mut self, request: Vec<u8>, reply_len: usize) -> Result<Vec<u8>, String> {
        if self.running.is_none() {
            self.running = Some(Running::spawn(&self.command).map_err(|e| format!("cannot start {:?}: {e}", self.command))?);
        }
        let r = self.running.as_mut().expect("spawned above");
        if r.jobs.send(Job { request, reply_len }).is_err() {
            return Err("embedder process is gone".into());
        }
        match r.replies.recv_timeout(self.timeout) {
            Ok(Ok(bytes)) => Ok(bytes),
            Ok(Err(e)) => Err(format!("embedder process failed: {e}")),
            Err(RecvTimeoutError::Timeout) => Err(format!("embedder timed out after {:?}", self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err("embedder process is gone".into()),
        }
    }
}

impl Drop for ExternalEmbedder {
    fn drop(&mut self) {
        self.kill();
    }
}

impl SemanticLoss for ExternalEmbedder {
    fn loss_and_grad(&mut self, rendered: &Patch, target: &Patch) -> Result<(f64, Vec<Rgb>), EmbedError> {
        if rendered.size != target.size {
            return Err(EmbedError::SizeMismatch(rendered.size, target.size));
        }
        let p = rendered.size;
        let result = self
            .exchange(encode_request(&[(rendered, target)]), reply_len(p, 1))
            .map_err(EmbedError::Failed)
            .and_then(|bytes| decode_reply(&bytes, p, 1))
            .and_then(|mut v| {
                let (l, g) = v.remove(0);
                if l.is_finite() && g.iter().flatten().all(|x| x.is_finite()) {
                    Ok((l, g))
                } else {
                    Err(EmbedError::NonFinite)
                }
            });
        if let Err(e) = &result {
            log::warn!("semantic term skipped: {e}");
            if !matches!(e, EmbedError::NonFinite) {
                self.kill();
            }
        }
        result
    }
}
