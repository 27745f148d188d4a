//! Simulated measured boot and TPM-style quoting.
//!
//! The prover folds its firmware components into a single register
//! (pcr' = SHA-256(pcr || event digest), starting from 32 zero bytes) and
//! signs a quote binding the register, the event log, a verifier nonce, and
//! its device id. The verifier replays the log, checks freshness and the
//! device signature, and reconstructs the software digest used as the
//! certificate lookup key.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::canonical::canonical_encode;
use crate::model::{
    software_digest_from_pairs, verifying_key_from_hex, Digest, FirmwareBundle, ModelError,
    SignatureBytes, SoftwareDigest,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttestationError {
    #[error("firmware bundle has no components; nothing to measure")]
    EmptyBundle,
    #[error("quote nonce does not match the challenge nonce")]
    NonceMismatch,
    #[error("device {0} is not enrolled")]
    UnknownDevice(String),
    #[error("quote signature verification failed")]
    BadSignature,
    #[error("measurement log does not replay to the quoted register value")]
    LogPcrMismatch,
    #[error("malformed measurement log: {0}")]
    MalformedLog(String),
}

/// 32-byte verifier challenge, hex on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Nonce([u8; 32]);

impl Nonce {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Nonce(bytes)
    }

    pub fn random<R: RngCore>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        Nonce(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, ModelError> {
        Ok(Nonce(*Digest::from_hex(s)?.as_bytes()))
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Nonce {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Nonce {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Nonce::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// One boot measurement: component name plus its content digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementEvent {
    pub name: String,
    pub digest: Digest,
}

/// Ordered measurement events; order is boot order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementLog(pub Vec<MeasurementEvent>);

impl MeasurementLog {
    pub fn events(&self) -> &[MeasurementEvent] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The PCR extend operation: H(pcr || event_digest). The initial register is
/// 32 zero bytes.
pub fn extend_register(pcr: &Digest, event_digest: &Digest) -> Digest {
    let mut hasher = Sha256::new();
    hasher.update(pcr.as_bytes());
    hasher.update(event_digest.as_bytes());
    Digest::from_bytes(hasher.finalize().into())
}

/// Fold a measurement log into a register value, starting from zero.
pub fn replay_log(log: &MeasurementLog) -> Digest {
    log.0
        .iter()
        .fold(Digest::ZERO, |pcr, event| extend_register(&pcr, &event.digest))
}

/// Measure a bundle in boot order: one event per component, register folded
/// over the events.
pub fn measure_boot(bundle: &FirmwareBundle) -> Result<(MeasurementLog, Digest), AttestationError> {
    if !bundle.is_bootable() {
        return Err(AttestationError::EmptyBundle);
    }
    let log = MeasurementLog(
        bundle
            .components()
            .iter()
            .map(|c| MeasurementEvent {
                name: c.name.clone(),
                digest: c.content_digest,
            })
            .collect(),
    );
    let pcr = replay_log(&log);
    Ok((log, pcr))
}

/// Signed attestation evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttestationQuote {
    pub pcr: Digest,
    pub nonce: Nonce,
    pub log: MeasurementLog,
    pub device_id: String,
    pub signature: SignatureBytes,
}

#[derive(Serialize)]
struct QuotePayload<'a> {
    pcr: &'a Digest,
    nonce: &'a Nonce,
    log: &'a MeasurementLog,
    device_id: &'a str,
}

fn quote_payload_bytes(pcr: &Digest, nonce: &Nonce, log: &MeasurementLog, device_id: &str) -> Vec<u8> {
    canonical_encode(&QuotePayload {
        pcr,
        nonce,
        log,
        device_id,
    })
}

/// Sign a quote over the canonical encoding of (pcr, nonce, log, device_id).
pub fn sign_quote(
    pcr: Digest,
    nonce: Nonce,
    log: MeasurementLog,
    device_id: &str,
    key: &SigningKey,
) -> AttestationQuote {
    let payload = quote_payload_bytes(&pcr, &nonce, &log, device_id);
    let signature = key.sign(&payload);
    AttestationQuote {
        pcr,
        nonce,
        log,
        device_id: device_id.to_string(),
        signature: SignatureBytes::from_bytes(signature.to_bytes()),
    }
}

/// Verifier-side enrollment of device attestation keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceRegistry {
    devices: BTreeMap<String, VerifyingKey>,
}

impl DeviceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enroll(&mut self, device_id: impl Into<String>, key: VerifyingKey) {
        self.devices.insert(device_id.into(), key);
    }

    pub fn key_for(&self, device_id: &str) -> Option<&VerifyingKey> {
        self.devices.get(device_id)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| ModelError::Invalid {
                what: "device registry",
                detail: e.to_string(),
            })?;
        let mut registry = DeviceRegistry::new();
        for (device_id, key_hex) in raw {
            registry.enroll(device_id, verifying_key_from_hex(&key_hex)?);
        }
        Ok(registry)
    }

    pub fn to_json(&self) -> String {
        let raw: BTreeMap<&String, String> = self
            .devices
            .iter()
            .map(|(id, key)| (id, hex::encode(key.to_bytes())))
            .collect();
        serde_json::to_string_pretty(&raw).expect("registry serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Invalid {
            what: "device registry file",
            detail: format!("{}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }
}

/// Verify an attestation quote against a fresh nonce and the device registry.
///
/// Checks, in order: nonce equality, device enrollment, quote signature, log
/// shape (non-empty, unique component names), and that the log replays to the
/// quoted register. Returns the software digest reconstructed from the log —
/// the key used to look up backdoor inspection certificates. The verifier
/// never trusts a prover-supplied aggregate.
pub fn verify_quote(
    quote: &AttestationQuote,
    expected_nonce: &Nonce,
    registry: &DeviceRegistry,
) -> Result<SoftwareDigest, AttestationError> {
    if quote.nonce != *expected_nonce {
        return Err(AttestationError::NonceMismatch);
    }
    let key = registry
        .key_for(&quote.device_id)
        .ok_or_else(|| AttestationError::UnknownDevice(quote.device_id.clone()))?;
    let payload = quote_payload_bytes(&quote.pcr, &quote.nonce, &quote.log, &quote.device_id);
    let signature = Signature::from_bytes(quote.signature.as_bytes());
    key.verify(&payload, &signature)
        .map_err(|_| AttestationError::BadSignature)?;
    if quote.log.is_empty() {
        return Err(AttestationError::MalformedLog("empty measurement log".into()));
    }
    if replay_log(&quote.log) != quote.pcr {
        return Err(AttestationError::LogPcrMismatch);
    }
    let pairs = quote
        .log
        .events()
        .iter()
        .map(|e| (e.name.clone(), e.digest))
        .collect();
    software_digest_from_pairs(pairs)
        .map_err(|e| AttestationError::MalformedLog(e.to_string()))
}

/// Single-use challenge nonces with expiry, shared across concurrent
/// admission sessions.
pub struct NonceManager {
    ttl: Duration,
    issued: Mutex<HashMap<[u8; 32], Instant>>,
}

impl Default for NonceManager {
    fn default() -> Self {
        NonceManager::new(Duration::from_secs(300))
    }
}

impl NonceManager {
    pub fn new(ttl: Duration) -> Self {
        NonceManager {
            ttl,
            issued: Mutex::new(HashMap::new()),
        }
    }

    /// Issue a fresh random nonce and remember it until consumed or expired.
    pub fn issue(&self) -> Nonce {
        let nonce = Nonce::random(&mut rand::rngs::OsRng);
        let mut issued = self.issued.lock().expect("nonce set lock");
        let now = Instant::now();
        issued.retain(|_, t| now.duration_since(*t) < self.ttl);
        issued.insert(nonce.0, now);
        nonce
    }

    /// Consume a nonce: true exactly once per issued, unexpired nonce.
    pub fn consume(&self, nonce: &Nonce) -> bool {
        let mut issued = self.issued.lock().expect("nonce set lock");
        match issued.remove(&nonce.0) {
            Some(t) => Instant::now().duration_since(t) < self.ttl,
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::generate_signing_key;
    use crate::model::{hash_bundle, sha256, Component};
    use rand::rngs::OsRng;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    // extend(zeros, sha256("ABC")), computed with an independent tool.
    const EXTEND_ZERO_ABC: &str = "7198f6a012eed119e684456ea8488f45f3d245a4118d05b01f98a7efa0014250";
    // pcr after measuring boot=b"x", kernel=b"yz" in that order.
    const PCR_BOOT_KERNEL: &str = "be7654dd6ab937749f377f4b86cc0de3711bc96bd8e24a880234d7b9c31a8329";

    fn bundle(parts: &[(&str, &[u8])]) -> FirmwareBundle {
        FirmwareBundle::new(
            "fw",
            "1",
            "web-server",
            parts
                .iter()
                .map(|(n, c)| Component::new(*n, c.to_vec()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn extend_matches_pinned_reference() {
        let extended = extend_register(&Digest::ZERO, &sha256(b"ABC"));
        assert_eq!(extended.to_hex(), EXTEND_ZERO_ABC);
    }

    #[test]
    fn extend_is_order_sensitive() {
        let a = sha256(b"A");
        let b = sha256(b"B");
        let ab = extend_register(&extend_register(&Digest::ZERO, &a), &b);
        let ba = extend_register(&extend_register(&Digest::ZERO, &b), &a);
        assert_ne!(ab, ba);
    }

    #[test]
    fn empty_log_replays_to_zero() {
        assert_eq!(replay_log(&MeasurementLog::default()), Digest::ZERO);
    }

    #[test]
    fn single_component_boot() {
        let b = bundle(&[("fw.bin", b"ABC")]);
        let (log, pcr) = measure_boot(&b).unwrap();
        assert_eq!(log.events().len(), 1);
        assert_eq!(pcr, extend_register(&Digest::ZERO, &sha256(b"ABC")));
        assert_eq!(pcr.to_hex(), EXTEND_ZERO_ABC);
    }

    #[test]
    fn two_component_boot_matches_pinned_reference() {
        let b = bundle(&[("kernel", b"yz"), ("boot", b"x")]);
        let (log, pcr) = measure_boot(&b).unwrap();
        // Boot order is the canonical component order.
        assert_eq!(log.events()[0].name, "boot");
        assert_eq!(pcr.to_hex(), PCR_BOOT_KERNEL);
        assert_eq!(replay_log(&log), pcr);
    }

    #[test]
    fn swapped_boot_order_changes_pcr() {
        let a = MeasurementLog(vec![
            MeasurementEvent { name: "a".into(), digest: sha256(b"1") },
            MeasurementEvent { name: "b".into(), digest: sha256(b"2") },
        ]);
        let b = MeasurementLog(vec![a.0[1].clone(), a.0[0].clone()]);
        assert_ne!(replay_log(&a), replay_log(&b));
    }

    #[test]
    fn empty_bundle_cannot_boot() {
        assert_eq!(measure_boot(&bundle(&[])).unwrap_err(), AttestationError::EmptyBundle);
    }

    fn quote_fixture() -> (AttestationQuote, Nonce, DeviceRegistry, FirmwareBundle, SigningKey) {
        let b = bundle(&[("app", b"code"), ("boot", b"loader")]);
        let (log, pcr) = measure_boot(&b).unwrap();
        let key = generate_signing_key(&mut OsRng);
        let nonce = Nonce::random(&mut OsRng);
        let quote = sign_quote(pcr, nonce, log, "device-1", &key);
        let mut registry = DeviceRegistry::new();
        registry.enroll("device-1", key.verifying_key());
        (quote, nonce, registry, b, key)
    }

    #[test]
    fn honest_quote_recovers_bundle_aggregate() {
        let (quote, nonce, registry, b, _) = quote_fixture();
        let digest = verify_quote(&quote, &nonce, &registry).unwrap();
        assert_eq!(digest, hash_bundle(&b));
    }

    #[test]
    fn wrong_nonce_rejected() {
        let (quote, _, registry, _, _) = quote_fixture();
        let other = Nonce::random(&mut OsRng);
        assert_eq!(
            verify_quote(&quote, &other, &registry).unwrap_err(),
            AttestationError::NonceMismatch
        );
    }

    #[test]
    fn unenrolled_device_rejected() {
        let (quote, nonce, _, _, _) = quote_fixture();
        assert!(matches!(
            verify_quote(&quote, &nonce, &DeviceRegistry::new()).unwrap_err(),
            AttestationError::UnknownDevice(_)
        ));
    }

    #[test]
    fn altered_log_digest_fails_replay() {
        let (mut quote, nonce, registry, _, key) = quote_fixture();
        // Re-sign a mutated log with the original pcr: the signature holds
        // but the replay does not.
        let mut log = quote.log.clone();
        log.0[0].digest = sha256(b"tampered");
        quote = sign_quote(quote.pcr, quote.nonce, log, &quote.device_id, &key);
        assert_eq!(
            verify_quote(&quote, &nonce, &registry).unwrap_err(),
            AttestationError::LogPcrMismatch
        );
    }

    #[test]
    fn flipped_pcr_breaks_signature() {
        let (mut quote, nonce, registry, _, _) = quote_fixture();
        let mut bytes = *quote.pcr.as_bytes();
        bytes[0] ^= 1;
        quote.pcr = Digest::from_bytes(bytes);
        assert_eq!(
            verify_quote(&quote, &nonce, &registry).unwrap_err(),
            AttestationError::BadSignature
        );
    }

    #[test]
    fn empty_log_quote_rejected() {
        let key = generate_signing_key(&mut OsRng);
        let nonce = Nonce::random(&mut OsRng);
        let quote = sign_quote(Digest::ZERO, nonce, MeasurementLog::default(), "d", &key);
        let mut registry = DeviceRegistry::new();
        registry.enroll("d", key.verifying_key());
        assert!(matches!(
            verify_quote(&quote, &nonce, &registry).unwrap_err(),
            AttestationError::MalformedLog(_)
        ));
    }

    #[test]
    fn duplicate_log_names_rejected() {
        let key = generate_signing_key(&mut OsRng);
        let nonce = Nonce::random(&mut OsRng);
        let log = MeasurementLog(vec![
            MeasurementEvent { name: "a".into(), digest: sha256(b"1") },
            MeasurementEvent { name: "a".into(), digest: sha256(b"2") },
        ]);
        let pcr = replay_log(&log);
        let quote = sign_quote(pcr, nonce, log, "d", &key);
        let mut registry = DeviceRegistry::new();
        registry.enroll("d", key.verifying_key());
        assert!(matches!(
            verify_quote(&quote, &nonce, &registry).unwrap_err(),
            AttestationError::MalformedLog(_)
        ));
    }

    #[test]
    fn aggregate_equals_hash_bundle_over_random_bundles() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.gen_range(1..6);
            let components: Vec<Component> = (0..n)
                .map(|i| {
                    let len = rng.gen_range(0..64);
                    let mut content = vec![0u8; len];
                    rng.fill_bytes(&mut content);
                    Component::new(format!("c{i}"), content)
                })
                .collect();
            let b = FirmwareBundle::new("fw", "1", "web-server", components).unwrap();
            let (log, pcr) = measure_boot(&b).unwrap();
            let key = generate_signing_key(&mut rng);
            let nonce = Nonce::random(&mut rng);
            let quote = sign_quote(pcr, nonce, log, "dev", &key);
            let mut registry = DeviceRegistry::new();
            registry.enroll("dev", key.verifying_key());
            let digest = verify_quote(&quote, &nonce, &registry).unwrap();
            assert_eq!(digest.aggregate, hash_bundle(&b).aggregate);
        }
    }

    #[test]
    fn nonce_manager_is_single_use() {
        let manager = NonceManager::default();
        let nonce = manager.issue();
        assert!(manager.consume(&nonce));
        assert!(!manager.consume(&nonce));
        assert!(!manager.consume(&Nonce::random(&mut OsRng)));
    }

    #[test]
    fn expired_nonce_not_consumable() {
        let manager = NonceManager::new(Duration::from_millis(0));
        let nonce = manager.issue();
        std::thread::sleep(Duration::from_millis(2));
        assert!(!manager.consume(&nonce));
    }

    #[test]
    fn registry_json_round_trip() {
        let key = generate_signing_key(&mut OsRng);
        let mut registry = DeviceRegistry::new();
        registry.enroll("cam-1", key.verifying_key());
        let loaded = DeviceRegistry::from_json(&registry.to_json()).unwrap();
        assert_eq!(registry, loaded);
    }
}
