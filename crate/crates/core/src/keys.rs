//! Ed25519 key generation and the small JSON key-file formats used by the
//! CLI: inspector organization signing keys and prover device identities.

use std::path::Path;

use ed25519_dalek::{SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("failed to read key file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid key file: {0}")]
    Parse(String),
}

pub fn generate_signing_key<R: RngCore + CryptoRng>(rng: &mut R) -> SigningKey {
    SigningKey::generate(rng)
}

/// Signing key for an inspector organization, keyed into trust stores by
/// (org, key_id).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrgKeyFile {
    pub org: String,
    pub key_id: String,
    pub secret_key_hex: String,
    pub public_key_hex: String,
}

/// Device identity for a prover: the attestation key held by the simulated
/// TPM plus the device id enrolled with the verifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceIdentityFile {
    pub device_id: String,
    pub secret_key_hex: String,
    pub public_key_hex: String,
}

impl OrgKeyFile {
    pub fn generate<R: RngCore + CryptoRng>(
        rng: &mut R,
        org: impl Into<String>,
        key_id: impl Into<String>,
    ) -> Self {
        let key = generate_signing_key(rng);
        OrgKeyFile {
            org: org.into(),
            key_id: key_id.into(),
            secret_key_hex: hex::encode(key.to_bytes()),
            public_key_hex: hex::encode(key.verifying_key().to_bytes()),
        }
    }

    pub fn signing_key(&self) -> Result<SigningKey, KeyError> {
        signing_key_from_hex(&self.secret_key_hex)
    }

    pub fn load(path: &Path) -> Result<Self, KeyError> {
        load_json(path)
    }
}

impl DeviceIdentityFile {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R, device_id: impl Into<String>) -> Self {
        let key = generate_signing_key(rng);
        DeviceIdentityFile {
            device_id: device_id.into(),
            secret_key_hex: hex::encode(key.to_bytes()),
            public_key_hex: hex::encode(key.verifying_key().to_bytes()),
        }
    }

    pub fn signing_key(&self) -> Result<SigningKey, KeyError> {
        signing_key_from_hex(&self.secret_key_hex)
    }

    pub fn verifying_key(&self) -> Result<VerifyingKey, KeyError> {
        Ok(self.signing_key()?.verifying_key())
    }

    pub fn load(path: &Path) -> Result<Self, KeyError> {
        load_json(path)
    }
}

pub fn signing_key_from_hex(s: &str) -> Result<SigningKey, KeyError> {
    let bytes = hex::decode(s).map_err(|e| KeyError::Parse(e.to_string()))?;
    let seed: [u8; 32] = bytes
        .try_into()
        .map_err(|_| KeyError::Parse("secret key must be 32 bytes".into()))?;
    Ok(SigningKey::from_bytes(&seed))
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, KeyError> {
    let text = std::fs::read_to_string(path).map_err(|e| KeyError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| KeyError::Parse(e.to_string()))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)
}
