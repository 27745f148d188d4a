//! Append-only JSON-lines audit log: one decision per line.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::model::Digest;

use super::{Decision, Obligation, Outcome, ReasonCode};

/// One audit line: when, who, what was decided, and the evidence references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub timestamp: u64,
    pub device_id: String,
    pub outcome: Outcome,
    pub reasons: Vec<ReasonCode>,
    pub obligations: Vec<Obligation>,
    pub quote_pcr: Option<Digest>,
    pub certificate_body_digest: Option<Digest>,
}

impl AuditRecord {
    pub fn for_decision(device_id: &str, decision: &Decision) -> Self {
        AuditRecord {
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            device_id: device_id.to_string(),
            outcome: decision.outcome,
            reasons: decision.reasons.clone(),
            obligations: decision.obligations.clone(),
            quote_pcr: decision.evidence.quote_pcr,
            certificate_body_digest: decision.evidence.certificate_body_digest,
        }
    }
}

enum Sink {
    File(File),
    Memory(Vec<String>),
}

/// Thread-safe append-only decision log. Lines are flushed as they are
/// written so concurrent admission sessions never interleave partial records.
pub struct AuditLog {
    sink: Mutex<Sink>,
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog {
            sink: Mutex::new(Sink::File(file)),
        })
    }

    /// In-memory log for tests and embedded runs.
    pub fn in_memory() -> Self {
        AuditLog {
            sink: Mutex::new(Sink::Memory(Vec::new())),
        }
    }

    pub fn append(&self, record: &AuditRecord) {
        let line = serde_json::to_string(record).expect("audit record serializes");
        let mut sink = self.sink.lock().expect("audit log lock");
        match &mut *sink {
            Sink::File(file) => {
                // A failed append must not crash an admission session.
                if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                    log::error!("audit append failed: {e}");
                }
            }
            Sink::Memory(lines) => lines.push(line),
        }
    }

    /// Recorded lines (in-memory sinks only).
    pub fn lines(&self) -> Vec<String> {
        match &*self.sink.lock().expect("audit log lock") {
            Sink::Memory(lines) => lines.clone(),
            Sink::File(_) => Vec::new(),
        }
    }
}
