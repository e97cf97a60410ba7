//! How a query reaches a detector: HTTP POST, a local subprocess, or an
//! in-process mock.

use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use metaod_core::{DetectError, Detector, ImageBuffer, Probe};

use crate::mock::MockDetector;
use crate::protocol::encode_response;

const MAX_BODY: u64 = 16 << 20;

pub enum Reply {
    Body(Vec<u8>),
    /// HTTP 429.
    RateLimited,
}

pub trait Transport: Send + Sync {
    fn send(&self, png: &[u8], image: &ImageBuffer, probe: Option<&Probe>) -> Result<Reply, DetectError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    auth: Option<String>,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, auth: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { agent, url: url.into(), auth }
    }
}

impl Transport for HttpTransport {
    fn send(&self, png: &[u8], _image: &ImageBuffer, _probe: Option<&Probe>) -> Result<Reply, DetectError> {
        let mut req = self.agent.post(&self.url).set("Content-Type", "image/png");
        if let Some(auth) = &self.auth {
            req = req.set("Authorization", auth);
        }
        match req.send_bytes(png) {
            Ok(resp) => {
                let mut body = Vec::new();
                resp.into_reader()
                    .take(MAX_BODY)
                    .read_to_end(&mut body)
                    .map_err(|e| DetectError::Transport(format!("reading body: {e}")))?;
                Ok(Reply::Body(body))
            }
            Err(ureq::Error::Status(429, _)) => Ok(Reply::RateLimited),
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                Err(DetectError::Transport(format!("HTTP {code}: {}", text.chars().take(200).collect::<String>())))
            }
            Err(e) => Err(DetectError::Transport(e.to_string())),
        }
    }
}

/// Runs `program args... <image.png>` once per query and reads canonical JSON
/// from standard output. A nonzero exit status is a transport error.
pub struct SubprocessTransport {
    argv: Vec<String>,
    timeout: Duration,
    counter: AtomicU64,
}

impl SubprocessTransport {
    pub fn new(command_line: &str, timeout: Duration) -> Result<Self, DetectError> {
        let argv = shell_words::split(command_line)
            .map_err(|e| DetectError::Transport(format!("bad command line {command_line:?}: {e}")))?;
        if argv.is_empty() {
            return Err(DetectError::Transport("empty command line".into()));
        }
        Ok(Self { argv, timeout, counter: AtomicU64::new(0) })
    }

    fn temp_path(&self) -> PathBuf {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        std::env::temp_dir().join(format!("metaod-query-{}-{n}.png", std::process::id()))
    }
}

fn drain(mut pipe: impl Read + Send + 'static) -> std::thread::JoinHandle<Vec<u8>> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        buf
    })
}

impl Transport for SubprocessTransport {
    fn send(&self, png: &[u8], _image: &ImageBuffer, _probe: Option<&Probe>) -> Result<Reply, DetectError> {
        let path = self.temp_path();
        std::fs::write(&path, png).map_err(|e| DetectError::Transport(format!("writing {}: {e}", path.display())))?;
        let result = self.run(&path);
        let _ = std::fs::remove_file(&path);
        result
    }
}

impl SubprocessTransport {
    fn run(&self, image_path: &std::path::Path) -> Result<Reply, DetectError> {
        let mut child = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .arg(image_path)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| DetectError::Transport(format!("spawning {:?}: {e}", self.argv[0])))?;
        let out = drain(child.stdout.take().expect("piped stdout"));
        let err = drain(child.stderr.take().expect("piped stderr"));
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(DetectError::Transport(format!("detector process timed out after {:?}", self.timeout)));
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(2)),
                Err(e) => return Err(DetectError::Transport(format!("waiting for detector process: {e}"))),
            }
        };
        let stdout = out.join().unwrap_or_default();
        let stderr = err.join().unwrap_or_default();
        if !status.success() {
            let msg = String::from_utf8_lossy(&stderr);
            return Err(DetectError::Transport(format!(
                "detector process exited with {status}: {}",
                msg.trim().chars().take(200).collect::<String>()
            )));
        }
        Ok(Reply::Body(stdout))
    }
}

pub struct MockTransport(pub MockDetector);

impl Transport for MockTransport {
    fn send(&self, _png: &[u8], image: &ImageBuffer, probe: Option<&Probe>) -> Result<Reply, DetectError> {
        self.0.detect(image, probe).map(|set| Reply::Body(encode_response(&set)))
    }
}
