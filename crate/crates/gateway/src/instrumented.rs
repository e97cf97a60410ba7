//! A minimal local HTTP server that records every request it receives, used
//! to check the gateway's pacing, retry and caching behaviour end to end.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    /// Milliseconds since the server started, at the moment the body arrived.
    pub at_ms: f64,
    pub method: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    /// Requests being handled at arrival, this one included.
    pub concurrent: usize,
}

impl RequestRecord {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

type Responder = dyn Fn(usize, &RequestRecord) -> (u16, Vec<u8>) + Send + Sync;

pub struct InstrumentedServer {
    port: u16,
    log: Arc<Mutex<Vec<RequestRecord>>>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

struct Shared {
    started: Instant,
    log: Arc<Mutex<Vec<RequestRecord>>>,
    active: AtomicUsize,
    responder: Box<Responder>,
    delay: Duration,
}

impl InstrumentedServer {
    /// `responder` gets the request index and record and returns the status
    /// and body; every response is held back by `delay`.
    pub fn start(
        delay: Duration,
        responder: impl Fn(usize, &RequestRecord) -> (u16, Vec<u8>) + Send + Sync + 'static,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let port = listener.local_addr()?.port();
        let log = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let shared = Arc::new(Shared {
            started: Instant::now(),
            log: log.clone(),
            active: AtomicUsize::new(0),
            responder: Box::new(responder),
            delay,
        });
        let stop_flag = stop.clone();
        let accept = std::thread::spawn(move || {
            while !stop_flag.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let shared = shared.clone();
                        std::thread::spawn(move || {
                            let _ = serve(stream, &shared);
                        });
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(1));
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(Self { port, log, stop, accept: Some(accept) })
    }

    pub fn url(&self) -> String {
        format!("http://127.0.0.1:{}/detect", self.port)
    }

    pub fn requests(&self) -> Vec<RequestRecord> {
        self.log.lock().unwrap().clone()
    }

    /// Largest number of requests that arrived within any window of
    /// `window_ms` milliseconds.
    pub fn max_in_window(&self, window_ms: f64) -> usize {
        let times: Vec<f64> = self.requests().iter().map(|r| r.at_ms).collect();
        times.iter().map(|t| times.iter().filter(|u| **u >= *t && **u < t + window_ms).count()).max().unwrap_or(0)
    }

    pub fn peak_concurrency(&self) -> usize {
        self.requests().iter().map(|r| r.concurrent).max().unwrap_or(0)
    }
}

impl Drop for InstrumentedServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let method = line.split_whitespace().next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.trim_end().split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let len: usize = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body)?;

    let concurrent = shared.active.fetch_add(1, Ordering::SeqCst) + 1;
    let record = RequestRecord { at_ms: shared.started.elapsed().as_secs_f64() * 1000.0, method, headers, body, concurrent };
    let index = {
        let mut log = shared.log.lock().unwrap();
        log.push(record.clone());
        log.len() - 1
    };
    let (status, payload) = (shared.responder)(index, &record);
    std::thread::sleep(shared.delay);
    shared.active.fetch_sub(1, Ordering::SeqCst);

    let reason = match status {
        200 => "OK",
        429 => "Too Many Requests",
        _ => "Error",
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        payload.len()
    )?;
    stream.write_all(&payload)?;
    stream.flush()
}
