//! Simulated device agent: boots (measures) a firmware bundle once, then
//! answers attestation challenges over the wire protocol.
//!
//! Tamper modes exist as explicit test hooks so end-to-end negative paths
//! can be driven from the harness; without them the agent only ever signs
//! the (log, pcr) pair produced by its own boot measurement.

use std::net::TcpStream;
use std::str::FromStr;
use std::time::Duration;

use ed25519_dalek::SigningKey;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::attestation::{measure_boot, sign_quote, AttestationQuote, MeasurementLog, Nonce};
use crate::keys::DeviceIdentityFile;
use crate::model::{Digest, FirmwareBundle};
use crate::verifier::Decision;
use crate::wire::{read_frame, write_frame, WireError, WireMessage};

const SESSION_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum ProverError {
    #[error("firmware bundle has no components; cannot boot")]
    EmptyBundle,
    #[error("identity error: {0}")]
    Identity(#[from] crate::keys::KeyError),
    #[error("connection error: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TamperMode {
    #[default]
    None,
    /// Mutate one measurement log digest after boot (log/pcr mismatch).
    Log,
    /// Echo a stale nonce instead of the challenge nonce (replay).
    Nonce,
    /// Sign with a key other than the enrolled device key.
    Key,
}

impl FromStr for TamperMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(TamperMode::None),
            "log" => Ok(TamperMode::Log),
            "nonce" => Ok(TamperMode::Nonce),
            "key" => Ok(TamperMode::Key),
            other => Err(format!("unknown tamper mode {other} (log|nonce|key)")),
        }
    }
}

/// Booted prover: measurement fixed once per state, plus the device identity.
pub struct ProverState {
    log: MeasurementLog,
    pcr: Digest,
    device_id: String,
    key: SigningKey,
    tamper: TamperMode,
}

impl ProverState {
    pub fn boot(bundle: &FirmwareBundle, identity: &DeviceIdentityFile) -> Result<Self, ProverError> {
        let (log, pcr) = measure_boot(bundle).map_err(|_| ProverError::EmptyBundle)?;
        Ok(ProverState {
            log,
            pcr,
            device_id: identity.device_id.clone(),
            key: identity.signing_key()?,
            tamper: TamperMode::None,
        })
    }

    pub fn with_tamper(mut self, tamper: TamperMode) -> Self {
        self.tamper = tamper;
        self
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn pcr(&self) -> Digest {
        self.pcr
    }

    /// Answer one challenge message; anything other than a well-formed
    /// challenge gets an error message back.
    pub fn handle_challenge(&self, message: &WireMessage) -> WireMessage {
        match message {
            WireMessage::Challenge { nonce } => WireMessage::Quote(self.build_quote(*nonce)),
            _ => WireMessage::error("protocol", "expected a challenge message"),
        }
    }

    fn build_quote(&self, nonce: Nonce) -> AttestationQuote {
        match self.tamper {
            TamperMode::None => {
                sign_quote(self.pcr, nonce, self.log.clone(), &self.device_id, &self.key)
            }
            TamperMode::Log => {
                let mut log = self.log.clone();
                let mut bytes = *log.0[0].digest.as_bytes();
                bytes[0] ^= 0x01;
                log.0[0].digest = Digest::from_bytes(bytes);
                // Signed consistently over the mutated log, but the pcr still
                // reflects the real boot: replay fails at the verifier.
                sign_quote(self.pcr, nonce, log, &self.device_id, &self.key)
            }
            TamperMode::Nonce => {
                let stale = Nonce::from_bytes([0xAA; 32]);
                sign_quote(self.pcr, stale, self.log.clone(), &self.device_id, &self.key)
            }
            TamperMode::Key => {
                let mut hasher = Sha256::new();
                hasher.update(self.key.to_bytes());
                hasher.update(b"wrong-key");
                let wrong = SigningKey::from_bytes(&hasher.finalize().into());
                sign_quote(self.pcr, nonce, self.log.clone(), &self.device_id, &wrong)
            }
        }
    }
}

/// What one attestation session against a verifier produced.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionOutcome {
    Decided(Decision),
    VerifierError { code: String, detail: String },
}

/// Connect to a verifier, answer its challenge, and collect the decision.
pub fn run_session(state: &ProverState, verifier_addr: &str) -> Result<SessionOutcome, ProverError> {
    let mut stream = TcpStream::connect(verifier_addr)?;
    stream.set_read_timeout(Some(SESSION_TIMEOUT))?;
    stream.set_write_timeout(Some(SESSION_TIMEOUT))?;

    let challenge = match read_frame(&mut stream) {
        Ok(message) => message,
        Err(WireError::Io(e)) => return Err(ProverError::Io(e)),
        Err(e) => {
            let _ = write_frame(&mut stream, &WireMessage::error("protocol", e.to_string()));
            return Err(ProverError::Protocol(e.to_string()));
        }
    };
    let reply = state.handle_challenge(&challenge);
    let failed_challenge = matches!(reply, WireMessage::Error { .. });
    write_frame(&mut stream, &reply).map_err(|e| ProverError::Protocol(e.to_string()))?;
    if failed_challenge {
        return Err(ProverError::Protocol("malformed challenge".into()));
    }

    match read_frame(&mut stream) {
        Ok(WireMessage::Decision(decision)) => Ok(SessionOutcome::Decided(decision)),
        Ok(WireMessage::Error { code, detail }) => {
            Ok(SessionOutcome::VerifierError { code, detail })
        }
        Ok(other) => Err(ProverError::Protocol(format!("unexpected message: {other:?}"))),
        Err(e) => Err(ProverError::Protocol(e.to_string())),
    }
}
