//! HTTP surface of the certificate server.
//!
//! - `PUT /v1/certificates` — upload a signed certificate (201 stored,
//!   200 duplicate, 422 invalid with `{error, detail}`).
//! - `GET /v1/certificates/{aggregate-hex}` — all certificates for a
//!   software digest, `{certificates: [...]}`.
//! - `GET /v1/healthz` — liveness.

use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::json;
use thiserror::Error;
use tiny_http::{Header, Method, Request, Response, Server};

use super::store::{CertificateStore, PutOutcome, StoreError};
use crate::model::{SignedCertificate, VerifyError};

const MAX_BODY_BYTES: usize = 4 << 20;
const WORKERS: usize = 4;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("failed to bind {addr}: {detail}")]
    BindFailure { addr: String, detail: String },
}

/// A certificate server accepting requests on its own threads.
pub struct RunningServer {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl RunningServer {
    /// Bind `listen` (host:port; port 0 picks an ephemeral port) and start
    /// serving the store.
    pub fn start(listen: &str, store: Arc<CertificateStore>) -> Result<RunningServer, ServeError> {
        let server = Server::http(listen).map_err(|e| ServeError::BindFailure {
            addr: listen.to_string(),
            detail: e.to_string(),
        })?;
        let addr = match server.server_addr() {
            tiny_http::ListenAddr::IP(addr) => addr,
            #[allow(unreachable_patterns)]
            _ => unreachable!("http listener always has an IP address"),
        };
        let server = Arc::new(server);
        let workers = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let store = Arc::clone(&store);
                std::thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        handle_request(request, &store);
                    }
                })
            })
            .collect();
        log::info!("certificate server listening on {addr}");
        Ok(RunningServer {
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

    /// Stop accepting requests and wait (bounded) for the workers. Storage
    /// needs no extra flushing: every acknowledged write is already durable.
    /// A worker pinned by a half-open client connection is detached rather
    /// than waited on forever.
    pub fn shutdown(mut self) {
        self.server.unblock();
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(2);
        while std::time::Instant::now() < deadline
            && !self.workers.iter().all(|w| w.is_finished())
        {
            std::thread::sleep(std::time::Duration::from_millis(10));
        }
        for worker in self.workers.drain(..) {
            if worker.is_finished() {
                let _ = worker.join();
            }
        }
    }

    /// Block until the server is shut down from another thread or the
    /// process exits.
    pub fn join(mut self) {
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.server.unblock();
    }
}

fn handle_request(mut request: Request, store: &CertificateStore) {
    let method = request.method().clone();
    let url = request.url().to_string();
    let response = route(&method, &url, &mut request, store);
    log::debug!("{method} {url}");
    if let Err(e) = respond(request, response) {
        log::warn!("failed to send response: {e}");
    }
}

struct JsonResponse {
    status: u16,
    body: serde_json::Value,
}

fn json_response(status: u16, body: serde_json::Value) -> JsonResponse {
    JsonResponse { status, body }
}

fn respond(request: Request, response: JsonResponse) -> std::io::Result<()> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    request.respond(
        Response::from_string(response.body.to_string())
            .with_status_code(response.status)
            .with_header(header),
    )
}

fn route(method: &Method, url: &str, request: &mut Request, store: &CertificateStore) -> JsonResponse {
    match (method, url) {
        (Method::Get, "/v1/healthz") => json_response(200, json!({"status": "ok"})),
        (Method::Put, "/v1/certificates") => put_certificate(request, store),
        (Method::Get, path) if path.starts_with("/v1/certificates/") => {
            get_certificates(&path["/v1/certificates/".len()..], store)
        }
        _ => json_response(404, json!({"error": "NotFound", "detail": url})),
    }
}

fn put_certificate(request: &mut Request, store: &CertificateStore) -> JsonResponse {
    let mut body = Vec::new();
    let mut reader = request.as_reader().take(MAX_BODY_BYTES as u64 + 1);
    if reader.read_to_end(&mut body).is_err() || body.len() > MAX_BODY_BYTES {
        return json_response(400, json!({"error": "Malformed", "detail": "unreadable or oversized body"}));
    }
    let cert: SignedCertificate = match serde_json::from_slice(&body) {
        Ok(cert) => cert,
        Err(e) => {
            return json_response(400, json!({"error": "Malformed", "detail": e.to_string()}))
        }
    };
    match store.put(&cert) {
        Ok(PutOutcome::Stored) => json_response(
            201,
            json!({"status": "stored", "body_digest": cert.body_digest.to_hex()}),
        ),
        Ok(PutOutcome::Duplicate) => json_response(
            200,
            json!({"status": "duplicate", "body_digest": cert.body_digest.to_hex()}),
        ),
        Err(StoreError::Invalid(e)) => {
            let code = match e {
                VerifyError::UnknownSigner { .. } => "UnknownSigner",
                VerifyError::DigestMismatch | VerifyError::BadSignature => "InvalidSignature",
            };
            json_response(422, json!({"error": code, "detail": e.to_string()}))
        }
        Err(e) => json_response(500, json!({"error": "Storage", "detail": e.to_string()})),
    }
}

fn get_certificates(aggregate_hex: &str, store: &CertificateStore) -> JsonResponse {
    if aggregate_hex.len() != 64 || !aggregate_hex.chars().all(|c| c.is_ascii_hexdigit()) {
        return json_response(
            400,
            json!({"error": "Malformed", "detail": "aggregate must be 64 hex chars"}),
        );
    }
    let certs = store.get(&aggregate_hex.to_ascii_lowercase());
    json_response(200, json!({ "certificates": certs }))
}
