//! HTTP client for the certificate server, used by inspectors to upload and
//! by the verifier to fetch candidates by attested software digest.

use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use super::store::PutOutcome;
use crate::model::SignedCertificate;

#[derive(Debug, Error)]
pub enum ClientError {
    /// The server understood the request and said no (4xx).
    #[error("server rejected the request ({status} {error}): {detail}")]
    Rejected {
        status: u16,
        error: String,
        detail: String,
    },
    /// Transport failure or server fault; callers treat this as the
    /// certificate server being unavailable (fail-closed upstream).
    #[error("certificate server unavailable: {0}")]
    Unavailable(String),
}

pub struct CertServerClient {
    base: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ErrorBody {
    #[serde(default)]
    error: String,
    #[serde(default)]
    detail: String,
}

#[derive(Deserialize)]
struct CertificatesBody {
    certificates: Vec<SignedCertificate>,
}

impl CertServerClient {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(3))
            .timeout(Duration::from_secs(10))
            .build();
        CertServerClient {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn healthz(&self) -> Result<(), ClientError> {
        self.agent
            .get(&format!("{}/v1/healthz", self.base))
            // No keep-alive: pooled idle connections would pin server reader
            // threads across shutdown.
            .set("Connection", "close")
            .call()
            .map_err(|e| ClientError::Unavailable(e.to_string()))?;
        Ok(())
    }

    pub fn put_certificate(&self, cert: &SignedCertificate) -> Result<PutOutcome, ClientError> {
        let url = format!("{}/v1/certificates", self.base);
        let result = self
            .agent
            .request("PUT", &url)
            .set("Connection", "close")
            .send_json(serde_json::to_value(cert).expect("certificate serializes"));
        match result {
            Ok(response) => match response.status() {
                201 => Ok(PutOutcome::Stored),
                200 => Ok(PutOutcome::Duplicate),
                other => Err(ClientError::Unavailable(format!(
                    "unexpected status {other}"
                ))),
            },
            Err(ureq::Error::Status(status, response)) => {
                let body: ErrorBody = response
                    .into_json()
                    .unwrap_or_else(|_| ErrorBody {
                        error: "Unknown".into(),
                        detail: String::new(),
                    });
                if (400..500).contains(&status) {
                    Err(ClientError::Rejected {
                        status,
                        error: body.error,
                        detail: body.detail,
                    })
                } else {
                    Err(ClientError::Unavailable(format!(
                        "status {status}: {}",
                        body.detail
                    )))
                }
            }
            Err(e) => Err(ClientError::Unavailable(e.to_string())),
        }
    }

    pub fn get_certificates(
        &self,
        aggregate_hex: &str,
    ) -> Result<Vec<SignedCertificate>, ClientError> {
        let url = format!("{}/v1/certificates/{aggregate_hex}", self.base);
        let response = self
            .agent
            .get(&url)
            .set("Connection", "close")
            .call()
            .map_err(|e| match e {
                ureq::Error::Status(status, response) => {
                    let body: ErrorBody = response.into_json().unwrap_or_else(|_| ErrorBody {
                        error: "Unknown".into(),
                        detail: String::new(),
                    });
                    if (400..500).contains(&status) {
                        ClientError::Rejected {
                            status,
                            error: body.error,
                            detail: body.detail,
                        }
                    } else {
                        ClientError::Unavailable(format!("status {status}"))
                    }
                }
                other => ClientError::Unavailable(other.to_string()),
            })?;
        let body: CertificatesBody = response
            .into_json()
            .map_err(|e| ClientError::Unavailable(format!("bad response body: {e}")))?;
        Ok(body.certificates)
    }
}
