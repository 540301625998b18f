//! Scripted in-process HTTP server for exercising the completions wire
//! protocol without a real inference backend.
//!
//! The server is deliberately tiny: plain `std::net` sockets, one thread per
//! connection, HTTP/1.1 with `Connection: close`. Responses come from a
//! handler closure (for concurrent, request-dependent scripting) or a FIFO
//! queue (for simple sequential tests), and every request is recorded for
//! assertions. Serving raw scripted bytes is the point — golden-transcript
//! tests need the response body under full control of the test.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

/// Canned behavior for a completions endpoint: fixed text for generation
/// requests, uniform per-byte logprobs for echo-scoring requests.
///
/// Scoring responses tokenize the echoed prompt into single bytes with
/// byte offsets; the first token's logprob is null, every other token gets
/// `token_logprob`. Deterministic, so repeated identical requests yield
/// identical responses.
pub struct CompletionsScript {
    pub completion_text: String,
    pub token_logprob: f64,
}

impl CompletionsScript {
    pub fn handler(self) -> impl Fn(&RecordedRequest) -> MockResponse + Send + Sync {
        move |req: &RecordedRequest| {
            let body = match req.json() {
                Some(v) => v,
                None => return MockResponse::status_only(400),
            };
            if body.get("echo").and_then(|e| e.as_bool()) == Some(true) {
                let prompt = body.get("prompt").and_then(|p| p.as_str()).unwrap_or("");
                let n = prompt.len();
                let tokens: Vec<String> =
                    prompt.as_bytes().iter().map(|&b| (b as char).to_string()).collect();
                let token_logprobs: Vec<serde_json::Value> = (0..n)
                    .map(|i| {
                        if i == 0 {
                            serde_json::Value::Null
                        } else {
                            serde_json::json!(self.token_logprob)
                        }
                    })
                    .collect();
                let offsets: Vec<usize> = (0..n).collect();
                MockResponse::json_value(
                    200,
                    &serde_json::json!({
                        "choices": [{
                            "text": "",
                            "logprobs": {
                                "tokens": tokens,
                                "token_logprobs": token_logprobs,
                                "text_offset": offsets
                            }
                        }]
                    }),
                )
            } else {
                MockResponse::json_value(
                    200,
                    &serde_json::json!({"choices": [{"text": self.completion_text}]}),
                )
            }
        }
    }
}

/// A request as the server saw it.
#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl RecordedRequest {
    pub fn json(&self) -> Option<serde_json::Value> {
        serde_json::from_slice(&self.body).ok()
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// What to send back for one request.
#[derive(Debug, Clone)]
pub struct MockResponse {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
    /// Sleep before answering; longer than the client timeout simulates a
    /// hung server.
    pub delay: Duration,
    /// Close the socket without writing anything, simulating a transport
    /// failure.
    pub drop_connection: bool,
}

impl MockResponse {
    pub fn json_value(status: u16, body: &serde_json::Value) -> Self {
        Self::json_text(status, &body.to_string())
    }

    /// Serve `body` bytes exactly as given.
    pub fn json_text(status: u16, body: &str) -> Self {
        Self {
            status,
            content_type: "application/json".into(),
            body: body.as_bytes().to_vec(),
            delay: Duration::ZERO,
            drop_connection: false,
        }
    }

    pub fn status_only(status: u16) -> Self {
        Self {
            status,
            content_type: "text/plain".into(),
            body: Vec::new(),
            delay: Duration::ZERO,
            drop_connection: false,
        }
    }

    pub fn drop_connection() -> Self {
        Self { drop_connection: true, ..Self::status_only(500) }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

type Handler = Box<dyn Fn(&RecordedRequest) -> MockResponse + Send + Sync>;

struct Shared {
    handler: Handler,
    queue: Mutex<VecDeque<MockResponse>>,
    requests: Mutex<Vec<RecordedRequest>>,
    running: AtomicBool,
}

/// The running server; shuts down on drop.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept_thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Start with a handler that scripts every response from the request.
    pub fn start(handler: impl Fn(&RecordedRequest) -> MockResponse + Send + Sync + 'static) -> std::io::Result<Self> {
        Self::start_inner(Box::new(handler), VecDeque::new())
    }

    /// Start with a FIFO of responses; once drained, requests get 404.
    pub fn start_queue(responses: Vec<MockResponse>) -> std::io::Result<Self> {
        Self::start_inner(
            Box::new(|_| MockResponse::status_only(404)),
            responses.into(),
        )
    }

    fn start_inner(handler: Handler, queue: VecDeque<MockResponse>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            handler,
            queue: Mutex::new(queue),
            requests: Mutex::new(Vec::new()),
            running: AtomicBool::new(true),
        });
        let accept_shared = Arc::clone(&shared);
        let accept_thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if !accept_shared.running.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(stream) => {
                        let conn_shared = Arc::clone(&accept_shared);
                        std::thread::spawn(move || {
                            let _ = handle_connection(stream, &conn_shared);
                        });
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(Self { addr, shared, accept_thread: Some(accept_thread) })
    }

    /// `http://127.0.0.1:<port>` with no trailing slash.
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Requests received so far, in arrival order.
    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.shared.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.requests.lock().unwrap().len()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shared.running.store(false, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream);
    let request = read_request(&mut reader)?;
    shared.requests.lock().unwrap().push(request.clone());

    let response = shared
        .queue
        .lock()
        .unwrap()
        .pop_front()
        .unwrap_or_else(|| (shared.handler)(&request));

    if !response.delay.is_zero() {
        std::thread::sleep(response.delay);
    }
    let mut stream = reader.into_inner();
    if response.drop_connection {
        return stream.shutdown(std::net::Shutdown::Both);
    }
    let reason = match response.status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        404 => "Not Found",
        500 => "Internal Server Error",
        _ => "Response",
    };
    let head = format!(
        "HTTP/1.1 {} {}\r\ncontent-type: {}\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
        response.status,
        reason,
        response.content_type,
        response.body.len()
    );
    stream.write_all(head.as_bytes())?;
    stream.write_all(&response.body)?;
    stream.flush()
}

fn read_request(reader: &mut BufReader<TcpStream>) -> std::io::Result<RecordedRequest> {
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();

    let mut headers = Vec::new();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let name = name.trim().to_string();
            let value = value.trim().to_string();
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.parse().unwrap_or(0);
            }
            headers.push((name, value));
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    Ok(RecordedRequest { method, path, headers, body })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn raw_get(addr: SocketAddr, path: &str) -> (u16, Vec<u8>) {
        raw_request(addr, &format!("GET {path} HTTP/1.1\r\nhost: x\r\n\r\n"))
    }

    fn raw_request(addr: SocketAddr, request: &str) -> (u16, Vec<u8>) {
        let mut stream = TcpStream::connect(addr).unwrap();
        stream.write_all(request.as_bytes()).unwrap();
        let mut response = Vec::new();
        stream.read_to_end(&mut response).unwrap();
        let text = String::from_utf8_lossy(&response);
        let status: u16 = text.split_whitespace().nth(1).unwrap().parse().unwrap();
        let body_start = response.windows(4).position(|w| w == b"\r\n\r\n").unwrap() + 4;
        (status, response[body_start..].to_vec())
    }

    #[test]
    fn handler_sees_method_path_and_body() {
        let server = MockServer::start(|req| {
            assert_eq!(req.method, "POST");
            assert_eq!(req.path, "/v1/completions");
            let body = req.json().unwrap();
            MockResponse::json_value(200, &json!({"echoed": body["prompt"]}))
        })
        .unwrap();

        let body = json!({"prompt": "hello"}).to_string();
        let request = format!(
            "POST /v1/completions HTTP/1.1\r\nhost: x\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{}",
            body.len(),
            body
        );
        let (status, response_body) = raw_request(server.addr(), &request);
        assert_eq!(status, 200);
        let v: serde_json::Value = serde_json::from_slice(&response_body).unwrap();
        assert_eq!(v["echoed"], "hello");
        assert_eq!(server.request_count(), 1);
        assert_eq!(server.requests()[0].header("content-type"), Some("application/json"));
    }

    #[test]
    fn queue_serves_in_order_then_404() {
        let server = MockServer::start_queue(vec![
            MockResponse::json_text(200, r#"{"n":1}"#),
            MockResponse::status_only(500),
        ])
        .unwrap();
        assert_eq!(raw_get(server.addr(), "/a").0, 200);
        assert_eq!(raw_get(server.addr(), "/b").0, 500);
        assert_eq!(raw_get(server.addr(), "/c").0, 404);
    }

    #[test]
    fn body_bytes_are_served_exactly() {
        let body = r#"{"z":1,"a":[null,-1.5]}"#;
        let server = MockServer::start_queue(vec![MockResponse::json_text(200, body)]).unwrap();
        let (_, served) = raw_get(server.addr(), "/");
        assert_eq!(served, body.as_bytes());
    }

    #[test]
    fn drop_connection_closes_without_response() {
        let server = MockServer::start_queue(vec![MockResponse::drop_connection()]).unwrap();
        let mut stream = TcpStream::connect(server.addr()).unwrap();
        stream.write_all(b"GET / HTTP/1.1\r\nhost: x\r\n\r\n").unwrap();
        let mut buf = Vec::new();
        stream.read_to_end(&mut buf).unwrap();
        assert!(buf.is_empty());
    }
}
