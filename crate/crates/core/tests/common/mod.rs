#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use society_core::backend::{Backend, BackendError, CallKey, GenerationParams};

/// Chat-completion endpoint that answers the first `good` requests with
/// `reply` and every later one with HTTP 500.
pub fn flaky_endpoint(good: usize, reply: &'static str) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let served = Arc::new(AtomicUsize::new(0));
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let served = Arc::clone(&served);
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let l = line.trim_end().to_ascii_lowercase();
                    if l.is_empty() {
                        break;
                    }
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0; len];
                let _ = reader.read_exact(&mut body);
                let n = served.fetch_add(1, Ordering::SeqCst);
                let (status, text) = if n < good {
                    let content = serde_json::json!({
                        "choices": [{"message": {"role": "assistant", "content": reply}}]
                    });
                    ("200 OK", content.to_string())
                } else {
                    ("500 Internal Server Error", "{}".to_string())
                };
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                    text.len()
                );
            });
        }
    });
    url
}

/// Wraps a backend and keeps every prompt it was asked, keyed by call.
pub struct Recording<B> {
    pub inner: B,
    pub calls: Mutex<Vec<(CallKey, String)>>,
}

impl<B> Recording<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }
}

impl<B: Backend> Backend for Recording<B> {
    fn generate(&self, key: &CallKey, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        self.calls.lock().unwrap().push((key.clone(), prompt.to_string()));
        self.inner.generate(key, prompt, params)
    }

    fn descriptor(&self) -> String {
        format!("recording({})", self.inner.descriptor())
    }
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &std::path::Path, d: &std::path::Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
