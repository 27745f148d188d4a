//! Verifier daemon: accepts prover TCP connections, runs the attestation
//! exchange, fetches certificates by attested hash, and answers with the
//! admission decision.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::attestation::{verify_quote, DeviceRegistry, NonceManager};
use crate::certserver::CertServerClient;
use crate::model::TrustStore;
use crate::wire::{read_frame, write_frame, WireMessage};

use super::audit::AuditLog;
use super::{decide_admission, AttestationSession, CertFetch, Decision, SecurityPolicy};

const SESSION_TIMEOUT: Duration = Duration::from_secs(10);

/// Everything one admission session needs; shared across sessions.
pub struct Verifier {
    pub policy: SecurityPolicy,
    pub trust: TrustStore,
    pub registry: DeviceRegistry,
    pub nonces: NonceManager,
    pub cert_client: CertServerClient,
    pub audit: AuditLog,
}

impl Verifier {
    pub fn new(
        policy: SecurityPolicy,
        trust: TrustStore,
        registry: DeviceRegistry,
        cert_server_url: &str,
        audit: AuditLog,
    ) -> Self {
        Verifier {
            policy,
            trust,
            registry,
            nonces: NonceManager::default(),
            cert_client: CertServerClient::new(cert_server_url),
            audit,
        }
    }

    /// Run one admission session over an accepted prover connection: issue a
    /// fresh nonce, collect the quote, verify, fetch certificates, decide,
    /// and send the decision back. Every failure converges on a Deny
    /// decision; protocol errors also get an error frame.
    pub fn handle_session(&self, mut stream: TcpStream) -> Decision {
        let _ = stream.set_read_timeout(Some(SESSION_TIMEOUT));
        let _ = stream.set_write_timeout(Some(SESSION_TIMEOUT));

        let nonce = self.nonces.issue();
        let session = match write_frame(&mut stream, &WireMessage::Challenge { nonce }) {
            Err(e) => AttestationSession::Failed {
                device_id: None,
                quote_pcr: None,
                detail: format!("failed to send challenge: {e}"),
            },
            Ok(()) => match read_frame(&mut stream) {
                Ok(WireMessage::Quote(quote)) => {
                    // Single-use check first: a replayed quote carries a nonce
                    // that is no longer outstanding.
                    if !self.nonces.consume(&quote.nonce) {
                        AttestationSession::Failed {
                            device_id: Some(quote.device_id.clone()),
                            quote_pcr: Some(quote.pcr),
                            detail: "nonce not outstanding (replay or stale)".into(),
                        }
                    } else {
                        match verify_quote(&quote, &nonce, &self.registry) {
                            Ok(software_digest) => AttestationSession::Verified {
                                device_id: quote.device_id.clone(),
                                quote_pcr: quote.pcr,
                                software_digest,
                            },
                            Err(e) => AttestationSession::Failed {
                                device_id: Some(quote.device_id.clone()),
                                quote_pcr: Some(quote.pcr),
                                detail: e.to_string(),
                            },
                        }
                    }
                }
                Ok(WireMessage::Error { code, detail }) => AttestationSession::Failed {
                    device_id: None,
                    quote_pcr: None,
                    detail: format!("prover error {code}: {detail}"),
                },
                Ok(other) => {
                    let _ = write_frame(
                        &mut stream,
                        &WireMessage::error("protocol", "expected a quote message"),
                    );
                    AttestationSession::Failed {
                        device_id: None,
                        quote_pcr: None,
                        detail: format!("unexpected message: {other:?}"),
                    }
                }
                Err(e) => {
                    let _ = write_frame(&mut stream, &WireMessage::error("protocol", e.to_string()));
                    AttestationSession::Failed {
                        device_id: None,
                        quote_pcr: None,
                        detail: format!("failed to read quote: {e}"),
                    }
                }
            },
        };

        let cert_fetch = match &session {
            AttestationSession::Verified {
                software_digest, ..
            } => match self
                .cert_client
                .get_certificates(&software_digest.aggregate.to_hex())
            {
                Ok(certs) => CertFetch::Fetched(certs),
                Err(e) => CertFetch::Unavailable(e.to_string()),
            },
            AttestationSession::Failed { .. } => CertFetch::Fetched(Vec::new()),
        };

        let decision =
            decide_admission(&session, &cert_fetch, &self.policy, &self.trust, &self.audit);
        let _ = write_frame(&mut stream, &WireMessage::Decision(decision.clone()));
        decision
    }
}

/// Verifier daemon accepting prover connections until shut down.
pub struct RunningVerifier {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl RunningVerifier {
    /// Bind `listen` (port 0 for ephemeral) and serve admission sessions,
    /// one thread per connection.
    pub fn start(listen: &str, verifier: Arc<Verifier>) -> std::io::Result<RunningVerifier> {
        let listener = TcpListener::bind(listen)?;
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let stop = Arc::clone(&shutdown);
        let acceptor = std::thread::spawn(move || {
            let mut sessions: Vec<JoinHandle<()>> = Vec::new();
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = stream.set_nonblocking(false);
                        let verifier = Arc::clone(&verifier);
                        sessions.push(std::thread::spawn(move || {
                            let decision = verifier.handle_session(stream);
                            log::debug!("session decided: {:?}", decision.outcome);
                        }));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(10));
                    }
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        std::thread::sleep(Duration::from_millis(50));
                    }
                }
            }
            for session in sessions {
                let _ = session.join();
            }
        });
        log::info!("verifier listening on {addr}");
        Ok(RunningVerifier {
            addr,
            shutdown,
            acceptor: Some(acceptor),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        if let Some(acceptor) = self.acceptor.take() {
            let _ = acceptor.join();
        }
    }

    /// Block forever (daemon mode).
    pub fn join(mut self) {
        if let Some(acceptor) = self.acceptor.take() {
            let _ = acceptor.join();
        }
    }
}

impl Drop for RunningVerifier {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
    }
}
