use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::json;
use tiny_http::{Header, Response, Server};

/// What the mock chat-completions server answers.
#[derive(Debug, Clone)]
pub struct MockBehavior {
    /// Assistant content for answer requests.
    pub reply: String,
    /// Assistant content for concept-gap requests.
    pub gap_reply: String,
    /// The first `fail_first` requests get `fail_status` instead of a reply.
    pub fail_first: usize,
    pub fail_status: u16,
}

impl Default for MockBehavior {
    fn default() -> Self {
        Self {
            reply: "\\boxed{42}".into(),
            gap_reply: String::new(),
            fail_first: 0,
            fail_status: 500,
        }
    }
}

/// In-process OpenAI-compatible server that records every request body.
pub struct MockServer {
    addr: SocketAddr,
    server: Arc<Server>,
    requests: Arc<Mutex<Vec<String>>>,
    handle: Option<JoinHandle<()>>,
}

const GAP_MARKER: &str = "List the mathematical concepts";

impl MockServer {
    /// Binds `bind` (use port 0 for an ephemeral port) and serves on a thread.
    pub fn start(bind: &str, behavior: MockBehavior) -> io::Result<Self> {
        let server = Arc::new(Server::http(bind).map_err(io::Error::other)?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("mock server is not on an IP socket"))?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let served = AtomicUsize::new(0);
        let handle = {
            let server = Arc::clone(&server);
            let requests = Arc::clone(&requests);
            std::thread::spawn(move || {
                for mut request in server.incoming_requests() {
                    let mut body = String::new();
                    if request.as_reader().read_to_string(&mut body).is_err() {
                        continue;
                    }
                    requests
                        .lock()
                        .expect("request log poisoned")
                        .push(body.clone());
                    let n = served.fetch_add(1, Ordering::SeqCst);
                    let json_header =
                        Header::from_bytes("Content-Type", "application/json").expect("header");
                    let response = if n < behavior.fail_first {
                        Response::from_string(json!({"error": "injected failure"}).to_string())
                            .with_status_code(behavior.fail_status)
                    } else {
                        let content = if body.contains(GAP_MARKER) {
                            &behavior.gap_reply
                        } else {
                            &behavior.reply
                        };
                        let reply = json!({
                            "id": format!("mock-{n}"),
                            "object": "chat.completion",
                            "choices": [{
                                "index": 0,
                                "message": {"role": "assistant", "content": content},
                                "finish_reason": "stop"
                            }]
                        });
                        Response::from_string(reply.to_string())
                    };
                    let _ = request.respond(response.with_header(json_header));
                }
            })
        };
        Ok(Self {
            addr,
            server,
            requests,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Bodies received so far, in arrival order.
    pub fn requests(&self) -> Vec<String> {
        self.requests.lock().expect("request log poisoned").clone()
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
