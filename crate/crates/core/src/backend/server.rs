use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::{BackendError, Embedder, EmbeddingRequest, GenerationRequest, InfillBackend};

/// Serves an in-process backend pair over HTTP:
/// `POST /infill`, `POST /embed`, `GET /health`.
pub struct BackendServer {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

struct Handlers {
    infill: Arc<dyn InfillBackend>,
    embedder: Arc<dyn Embedder>,
    mask_token: String,
}

impl BackendServer {
    /// Binds `addr` (port 0 picks a free port) and starts `workers` handler threads.
    pub fn start(
        addr: &str,
        infill: Arc<dyn InfillBackend>,
        embedder: Arc<dyn Embedder>,
        mask_token: &str,
        workers: usize,
    ) -> std::io::Result<Self> {
        let server = Server::http(addr).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
        let server = Arc::new(server);
        let handlers = Arc::new(Handlers {
            infill,
            embedder,
            mask_token: mask_token.to_string(),
        });
        let workers = (0..workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let handlers = Arc::clone(&handlers);
                std::thread::spawn(move || {
                    for request in server.incoming_requests() {
                        handlers.handle(request);
                    }
                })
            })
            .collect();
        Ok(BackendServer {
            server,
            addr,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server is shut down from another thread.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for BackendServer {
    fn drop(&mut self) {
        self.stop();
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    infill: String,
    embed: String,
}

impl Handlers {
    fn handle(&self, mut request: Request) {
        let mut body = String::new();
        let (status, payload) = match request.as_reader().read_to_string(&mut body) {
            Err(e) => error(400, &format!("request body is not UTF-8: {e}")),
            Ok(_) => self.route(request.method(), request.url(), &body),
        };
        let header = Header::from_bytes("Content-Type", "application/json; charset=utf-8")
            .expect("static header");
        let response = Response::from_string(payload)
            .with_status_code(status)
            .with_header(header);
        if let Err(e) = request.respond(response) {
            log::warn!("failed to send response: {e}");
        }
    }

    fn route(&self, method: &Method, url: &str, body: &str) -> (u16, String) {
        match (method, url) {
            (Method::Post, "/infill") => match serde_json::from_str::<GenerationRequest>(body) {
                Err(e) => error(400, &format!("malformed generation request: {e}")),
                Ok(req) => match req
                    .validate(&self.mask_token)
                    .and_then(|_| self.infill.generate(&req))
                {
                    Ok(resp) => ok(&resp),
                    Err(e) => backend_error(&e),
                },
            },
            (Method::Post, "/embed") => match serde_json::from_str::<EmbeddingRequest>(body) {
                Err(e) => error(400, &format!("malformed embedding request: {e}")),
                Ok(req) => match self.embedder.embed(&req) {
                    Ok(resp) => ok(&resp),
                    Err(e) => backend_error(&e),
                },
            },
            (Method::Get, "/health") => ok(&Health {
                status: "ok",
                infill: self.infill.name(),
                embed: self.embedder.name(),
            }),
            _ => error(404, &format!("no route for {method} {url}")),
        }
    }
}

fn ok<T: Serialize>(value: &T) -> (u16, String) {
    match serde_json::to_string(value) {
        Ok(s) => (200, s),
        Err(e) => error(500, &e.to_string()),
    }
}

fn error(status: u16, message: &str) -> (u16, String) {
    let body = serde_json::to_string(&ErrorBody { error: message })
        .unwrap_or_else(|_| "{\"error\":\"unencodable error\"}".to_string());
    (status, body)
}

fn backend_error(e: &BackendError) -> (u16, String) {
    match e {
        BackendError::Protocol(msg) => error(422, msg),
        BackendError::Transport { .. } => error(503, &e.to_string()),
    }
}
