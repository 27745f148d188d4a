//! Durable certificate storage: an append-only JSON-lines journal of
//! canonical-encoded signed certificates, compacted on startup.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use thiserror::Error;

use crate::canonical::canonical_encode;
use crate::model::{verify_certificate, Digest, SignedCertificate, TrustStore, VerifyError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("certificate rejected: {0}")]
    Invalid(#[from] VerifyError),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("storage failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Stored,
    Duplicate,
}

struct Inner {
    journal: File,
    by_aggregate: HashMap<String, Vec<SignedCertificate>>,
    seen_bodies: HashSet<Digest>,
}

/// Certificate store keyed by software aggregate digest.
///
/// Uploads are signature-verified against the server's trust store and made
/// durable (flush + fsync) before the success response. Reads are concurrent;
/// writes are serialized through the journal.
pub struct CertificateStore {
    path: PathBuf,
    trust: TrustStore,
    inner: RwLock<Inner>,
}

impl CertificateStore {
    /// Load (and compact) the journal at `path`, creating it if absent.
    /// A journal that fails to parse or whose records fail their body-digest
    /// recomputation refuses to open.
    pub fn open(path: &Path, trust: TrustStore) -> Result<Self, StoreError> {
        let mut by_aggregate: HashMap<String, Vec<SignedCertificate>> = HashMap::new();
        let mut seen_bodies: HashSet<Digest> = HashSet::new();
        let mut records: Vec<SignedCertificate> = Vec::new();

        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let cert: SignedCertificate = serde_json::from_str(&line).map_err(|e| {
                    StoreError::Corrupt(format!("line {}: {e}", lineno + 1))
                })?;
                if cert.body.body_digest() != cert.body_digest {
                    return Err(StoreError::Corrupt(format!(
                        "line {}: body digest does not match body",
                        lineno + 1
                    )));
                }
                if seen_bodies.insert(cert.body_digest) {
                    records.push(cert);
                }
            }
            compact(path, &records)?;
        }

        for cert in records {
            by_aggregate
                .entry(cert.body.software_digest.aggregate.to_hex())
                .or_default()
                .push(cert);
        }

        let journal = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(CertificateStore {
            path: path.to_path_buf(),
            trust,
            inner: RwLock::new(Inner {
                journal,
                by_aggregate,
                seen_bodies,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Verify and store a certificate. Idempotent on body digest; the record
    /// is durable before this returns.
    pub fn put(&self, cert: &SignedCertificate) -> Result<PutOutcome, StoreError> {
        verify_certificate(cert, &self.trust)?;
        let mut inner = self.inner.write().expect("store lock");
        if inner.seen_bodies.contains(&cert.body_digest) {
            return Ok(PutOutcome::Duplicate);
        }
        let mut line = canonical_encode(cert);
        line.push(b'\n');
        inner.journal.write_all(&line)?;
        inner.journal.flush()?;
        inner.journal.sync_data()?;
        inner.seen_bodies.insert(cert.body_digest);
        inner
            .by_aggregate
            .entry(cert.body.software_digest.aggregate.to_hex())
            .or_default()
            .push(cert.clone());
        Ok(PutOutcome::Stored)
    }

    /// All certificates for an aggregate digest, newest `issued_at` first
    /// (ties by smallest body digest). Unknown digests yield an empty list.
    pub fn get(&self, aggregate_hex: &str) -> Vec<SignedCertificate> {
        let inner = self.inner.read().expect("store lock");
        let mut certs = inner
            .by_aggregate
            .get(aggregate_hex)
            .cloned()
            .unwrap_or_default();
        certs.sort_by(|a, b| {
            b.body
                .issued_at
                .cmp(&a.body.issued_at)
                .then_with(|| a.body_digest.cmp(&b.body_digest))
        });
        certs
    }

    pub fn certificate_count(&self) -> usize {
        self.inner.read().expect("store lock").seen_bodies.len()
    }
}

/// Rewrite the journal as deduplicated canonical lines via tmp + rename.
fn compact(path: &Path, records: &[SignedCertificate]) -> Result<(), StoreError> {
    let tmp_path = path.with_extension("tmp");
    {
        let mut tmp = File::create(&tmp_path)?;
        for cert in records {
            tmp.write_all(&canonical_encode(cert))?;
            tmp.write_all(b"\n")?;
        }
        tmp.sync_all()?;
    }
    std::fs::rename(&tmp_path, path)?;
    Ok(())
}
