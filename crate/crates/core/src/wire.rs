//! Attestation wire protocol: length-prefixed (4-byte big-endian) JSON
//! messages over TCP.
//!
//! Verifier -> prover: `{"type":"challenge","nonce":hex}`.
//! Prover -> verifier: `{"type":"quote",pcr,nonce,log,device_id,signature}`.
//! Either side may send `{"type":"error","code","detail"}`. After deciding,
//! the verifier sends `{"type":"decision",...}` so the prover learns the
//! outcome.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attestation::{AttestationQuote, Nonce};
use crate::verifier::Decision;

/// Upper bound on a single frame; anything larger is treated as hostile.
pub const MAX_FRAME_LEN: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_LEN}-byte limit")]
    FrameTooLarge(u32),
    #[error("malformed message: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum WireMessage {
    Challenge { nonce: Nonce },
    Quote(AttestationQuote),
    Error { code: String, detail: String },
    Decision(Decision),
}

impl WireMessage {
    pub fn error(code: impl Into<String>, detail: impl Into<String>) -> Self {
        WireMessage::Error {
            code: code.into(),
            detail: detail.into(),
        }
    }
}

pub fn write_frame<W: Write>(writer: &mut W, message: &WireMessage) -> Result<(), WireError> {
    let payload = serde_json::to_vec(message).map_err(|e| WireError::Malformed(e.to_string()))?;
    let len = u32::try_from(payload.len()).map_err(|_| WireError::FrameTooLarge(u32::MAX))?;
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    writer.write_all(&len.to_be_bytes())?;
    writer.write_all(&payload)?;
    writer.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(reader: &mut R) -> Result<WireMessage, WireError> {
    let mut len_bytes = [0u8; 4];
    reader.read_exact(&mut len_bytes)?;
    let len = u32::from_be_bytes(len_bytes);
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut payload = vec![0u8; len as usize];
    reader.read_exact(&mut payload)?;
    serde_json::from_slice(&payload).map_err(|e| WireError::Malformed(e.to_string()))
}
