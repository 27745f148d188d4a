//! Shared data model: firmware bundles, software digests, inspection
//! certificates, and the signature envelope.
//!
//! Everything here is immutable after construction and hashed/signed over the
//! canonical encoding from [`crate::canonical`]. Hash is SHA-256, signatures
//! are Ed25519 over the 32-byte body digest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::canonical::canonical_encode;
use crate::inspection::cfg::ControlFlowGraph;
use crate::inspection::InspectionEntry;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("duplicate component name: {0}")]
    DuplicateComponentName(String),
    #[error("component {0}: content digest does not match content")]
    ComponentDigestMismatch(String),
    #[error("duplicate key id {key_id} for organization {org}")]
    DuplicateKeyId { org: String, key_id: String },
    #[error("invalid certificate body: {0}")]
    InvalidBody(String),
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
}

/// Certificate verification failures, in the order they are checked.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("signer not in trust store: {org} / {key_id}")]
    UnknownSigner { org: String, key_id: String },
    #[error("certificate body digest does not match body")]
    DigestMismatch,
    #[error("signature verification failed")]
    BadSignature,
}

// ---------------------------------------------------------------------------
// byte newtypes
// ---------------------------------------------------------------------------

/// Decode a hex field. The interface is lowercase hex exactly; mixed or
/// upper case is a parse error, not an alternate spelling.
pub(crate) fn decode_lower_hex(s: &str, what: &'static str) -> Result<Vec<u8>, ModelError> {
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err(ModelError::Invalid {
            what,
            detail: "hex must be lowercase".into(),
        });
    }
    hex::decode(s).map_err(|e| ModelError::Invalid {
        what,
        detail: e.to_string(),
    })
}

/// 32-byte SHA-256 digest, hex-encoded (lowercase) on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest([u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, ModelError> {
        let bytes = decode_lower_hex(s, "digest hex")?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| ModelError::Invalid {
            what: "digest hex",
            detail: format!("expected 32 bytes, got {}", s.len() / 2),
        })?;
        Ok(Digest(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::from_hex(s)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Detached Ed25519 signature bytes, hex-encoded on the wire.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SignatureBytes([u8; 64]);

impl SignatureBytes {
    pub fn from_bytes(bytes: [u8; 64]) -> Self {
        SignatureBytes(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 64] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, ModelError> {
        let bytes = decode_lower_hex(s, "signature hex")?;
        let arr: [u8; 64] = bytes.try_into().map_err(|_| ModelError::Invalid {
            what: "signature hex",
            detail: "expected 64 bytes".into(),
        })?;
        Ok(SignatureBytes(arr))
    }
}

impl fmt::Debug for SignatureBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for SignatureBytes {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for SignatureBytes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SignatureBytes::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// SHA-256 over a byte slice.
pub fn sha256(data: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(data);
    Digest(h.finalize().into())
}

/// Hex (de)serialization for raw content bytes.
pub(crate) mod hex_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        super::decode_lower_hex(&s, "byte field hex").map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// firmware bundles
// ---------------------------------------------------------------------------

/// A named firmware component: raw bytes plus an optional control-flow
/// sidecar and supplier attribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComponentWire")]
pub struct Component {
    pub name: String,
    #[serde(with = "hex_vec")]
    pub content: Vec<u8>,
    pub content_digest: Digest,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfg_sidecar: Option<ControlFlowGraph>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supplier: Option<String>,
}

#[derive(Deserialize)]
struct ComponentWire {
    name: String,
    #[serde(with = "hex_vec")]
    content: Vec<u8>,
    #[serde(default)]
    content_digest: Option<Digest>,
    #[serde(default)]
    cfg_sidecar: Option<ControlFlowGraph>,
    #[serde(default)]
    supplier: Option<String>,
}

impl TryFrom<ComponentWire> for Component {
    type Error = ModelError;

    fn try_from(wire: ComponentWire) -> Result<Self, Self::Error> {
        let computed = sha256(&wire.content);
        if let Some(declared) = wire.content_digest {
            if declared != computed {
                return Err(ModelError::ComponentDigestMismatch(wire.name));
            }
        }
        Ok(Component {
            name: wire.name,
            content: wire.content,
            content_digest: computed,
            cfg_sidecar: wire.cfg_sidecar,
            supplier: wire.supplier,
        })
    }
}

impl Component {
    pub fn new(name: impl Into<String>, content: impl Into<Vec<u8>>) -> Self {
        let content = content.into();
        let content_digest = sha256(&content);
        Component {
            name: name.into(),
            content,
            content_digest,
            cfg_sidecar: None,
            supplier: None,
        }
    }

    pub fn with_supplier(mut self, supplier: impl Into<String>) -> Self {
        self.supplier = Some(supplier.into());
        self
    }

    pub fn with_cfg(mut self, cfg: ControlFlowGraph) -> Self {
        self.cfg_sidecar = Some(cfg);
        self
    }

    /// Recompute-and-compare check for the cached digest.
    pub fn digest_matches(&self) -> bool {
        sha256(&self.content) == self.content_digest
    }
}

/// A firmware bundle: the unit of hashing, inspection, and measurement.
///
/// Components are kept in canonical order (lexicographic by name), which is
/// also the simulated boot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BundleWire")]
pub struct FirmwareBundle {
    pub name: String,
    pub version: String,
    pub device_class: String,
    components: Vec<Component>,
}

#[derive(Deserialize)]
struct BundleWire {
    name: String,
    version: String,
    device_class: String,
    components: Vec<Component>,
}

impl TryFrom<BundleWire> for FirmwareBundle {
    type Error = ModelError;

    fn try_from(wire: BundleWire) -> Result<Self, Self::Error> {
        FirmwareBundle::new(wire.name, wire.version, wire.device_class, wire.components)
    }
}

impl FirmwareBundle {
    pub fn new(
        name: impl Into<String>,
        version: impl Into<String>,
        device_class: impl Into<String>,
        mut components: Vec<Component>,
    ) -> Result<Self, ModelError> {
        components.sort_by(|a, b| a.name.cmp(&b.name));
        for pair in components.windows(2) {
            if pair[0].name == pair[1].name {
                return Err(ModelError::DuplicateComponentName(pair[0].name.clone()));
            }
        }
        Ok(FirmwareBundle {
            name: name.into(),
            version: version.into(),
            device_class: device_class.into(),
            components,
        })
    }

    /// Components in canonical (boot) order.
    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn component_names(&self) -> Vec<String> {
        self.components.iter().map(|c| c.name.clone()).collect()
    }

    /// Empty bundles are hashable but not bootable.
    pub fn is_bootable(&self) -> bool {
        !self.components.is_empty()
    }
}

/// Per-component digests plus the deterministic aggregate used as the
/// certificate lookup key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftwareDigest {
    /// (component name, content digest) pairs, sorted by name.
    pub component_digests: Vec<(String, Digest)>,
    /// SHA-256 over the canonical encoding of `component_digests`.
    pub aggregate: Digest,
}

impl SoftwareDigest {
    pub fn component_names(&self) -> impl Iterator<Item = &str> {
        self.component_digests.iter().map(|(n, _)| n.as_str())
    }
}

/// Digest a bundle: per-component SHA-256 plus the canonical aggregate.
///
/// Pure in the (name, content) pairs; insertion order never matters because
/// bundles hold components in canonical order.
pub fn hash_bundle(bundle: &FirmwareBundle) -> SoftwareDigest {
    let pairs: Vec<(String, Digest)> = bundle
        .components
        .iter()
        .map(|c| (c.name.clone(), c.content_digest))
        .collect();
    software_digest_from_pairs(pairs).expect("bundle invariants guarantee unique sorted names")
}

/// Build a [`SoftwareDigest`] from raw (name, digest) pairs, e.g. recovered
/// from a measurement log. Sorts by name and rejects duplicates.
pub fn software_digest_from_pairs(
    mut pairs: Vec<(String, Digest)>,
) -> Result<SoftwareDigest, ModelError> {
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    for w in pairs.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(ModelError::DuplicateComponentName(w[0].0.clone()));
        }
    }
    let aggregate = sha256(&canonical_encode(&pairs));
    Ok(SoftwareDigest {
        component_digests: pairs,
        aggregate,
    })
}

// ---------------------------------------------------------------------------
// certificates
// ---------------------------------------------------------------------------

/// The signed payload of a backdoor inspection certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateBody {
    pub software_digest: SoftwareDigest,
    pub bundle_name: String,
    pub bundle_version: String,
    pub device_class: String,
    pub inspection_entries: Vec<InspectionEntry>,
    pub covered_backdoor_types: BTreeSet<String>,
    pub inspector_org: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engineer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supply_chain: Option<Vec<(String, String)>>,
    pub issued_at: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<Digest>,
}

impl CertificateBody {
    /// Check the structural invariants that issuance must establish.
    pub fn validate(&self) -> Result<(), ModelError> {
        let union: BTreeSet<String> = self
            .inspection_entries
            .iter()
            .flat_map(|e| e.backdoor_types.iter().cloned())
            .collect();
        if union != self.covered_backdoor_types {
            return Err(ModelError::InvalidBody(
                "covered_backdoor_types must equal the union of entry backdoor types".into(),
            ));
        }
        if let Some(chain) = &self.supply_chain {
            let known: BTreeSet<&str> = self.software_digest.component_names().collect();
            for (component, _) in chain {
                if !known.contains(component.as_str()) {
                    return Err(ModelError::InvalidBody(format!(
                        "supply_chain references unknown component {component}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn body_digest(&self) -> Digest {
        sha256(&canonical_encode(self))
    }
}

/// A certificate body plus the inspector organization's signature envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedCertificate {
    pub body: CertificateBody,
    pub body_digest: Digest,
    pub signature: SignatureBytes,
    pub signer_key_id: String,
}

/// A certificate whose digest and signature have been checked against a
/// trust store.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifiedCertificate {
    pub body: CertificateBody,
    pub inspector_org: String,
    pub body_digest: Digest,
}

/// Sign a certificate body: Ed25519 over the 32-byte canonical body digest.
pub fn sign_certificate(
    body: CertificateBody,
    signing_key: &SigningKey,
    key_id: impl Into<String>,
) -> SignedCertificate {
    let body_digest = body.body_digest();
    let signature = signing_key.sign(body_digest.as_bytes());
    SignedCertificate {
        body,
        body_digest,
        signature: SignatureBytes::from_bytes(signature.to_bytes()),
        signer_key_id: key_id.into(),
    }
}

/// Verify a signed certificate against a trust store.
///
/// Succeeds iff the body digest matches a recomputation over the canonical
/// body encoding and the signature verifies under the key registered for
/// (body.inspector_org, signer_key_id).
pub fn verify_certificate(
    cert: &SignedCertificate,
    trust: &TrustStore,
) -> Result<VerifiedCertificate, VerifyError> {
    let recomputed = cert.body.body_digest();
    if recomputed != cert.body_digest {
        return Err(VerifyError::DigestMismatch);
    }
    let key = trust
        .key_for(&cert.body.inspector_org, &cert.signer_key_id)
        .ok_or_else(|| VerifyError::UnknownSigner {
            org: cert.body.inspector_org.clone(),
            key_id: cert.signer_key_id.clone(),
        })?;
    let signature = Signature::from_bytes(cert.signature.as_bytes());
    key.verify(cert.body_digest.as_bytes(), &signature)
        .map_err(|_| VerifyError::BadSignature)?;
    Ok(VerifiedCertificate {
        body: cert.body.clone(),
        inspector_org: cert.body.inspector_org.clone(),
        body_digest: cert.body_digest,
    })
}

// ---------------------------------------------------------------------------
// trust store
// ---------------------------------------------------------------------------

/// Verifier- or server-side registry of inspector organization keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrustStore {
    orgs: BTreeMap<String, BTreeMap<String, VerifyingKey>>,
}

#[derive(Serialize, Deserialize)]
struct TrustStoreEntry {
    key_id: String,
    public_key_hex: String,
}

impl TrustStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_key(
        &mut self,
        org: impl Into<String>,
        key_id: impl Into<String>,
        key: VerifyingKey,
    ) -> Result<(), ModelError> {
        let org = org.into();
        let key_id = key_id.into();
        let keys = self.orgs.entry(org.clone()).or_default();
        if keys.contains_key(&key_id) {
            return Err(ModelError::DuplicateKeyId { org, key_id });
        }
        keys.insert(key_id, key);
        Ok(())
    }

    pub fn key_for(&self, org: &str, key_id: &str) -> Option<&VerifyingKey> {
        self.orgs.get(org)?.get(key_id)
    }

    pub fn contains_org(&self, org: &str) -> bool {
        self.orgs.contains_key(org)
    }

    pub fn organizations(&self) -> impl Iterator<Item = &str> {
        self.orgs.keys().map(String::as_str)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: BTreeMap<String, Vec<TrustStoreEntry>> =
            serde_json::from_str(text).map_err(|e| ModelError::Invalid {
                what: "trust store",
                detail: e.to_string(),
            })?;
        let mut store = TrustStore::new();
        for (org, entries) in raw {
            for entry in entries {
                let key = verifying_key_from_hex(&entry.public_key_hex)?;
                store.add_key(org.clone(), entry.key_id, key)?;
            }
        }
        Ok(store)
    }

    pub fn to_json(&self) -> String {
        let raw: BTreeMap<&String, Vec<TrustStoreEntry>> = self
            .orgs
            .iter()
            .map(|(org, keys)| {
                let entries = keys
                    .iter()
                    .map(|(key_id, key)| TrustStoreEntry {
                        key_id: key_id.clone(),
                        public_key_hex: hex::encode(key.to_bytes()),
                    })
                    .collect();
                (org, entries)
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("trust store serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Invalid {
            what: "trust store file",
            detail: format!("{}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}

pub fn verifying_key_from_hex(s: &str) -> Result<VerifyingKey, ModelError> {
    let bytes = decode_lower_hex(s, "public key hex")?;
    let arr: [u8; 32] = bytes.try_into().map_err(|_| ModelError::Invalid {
        what: "public key hex",
        detail: "expected 32 bytes".into(),
    })?;
    VerifyingKey::from_bytes(&arr).map_err(|e| ModelError::Invalid {
        what: "public key",
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::generate_signing_key;
    use rand::rngs::OsRng;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    // Reference values computed with an independent SHA-256 tool.
    const SHA256_ABC: &str = "b5d4045c3f466fa91fe2cc6abe79232a1a57cdf104f7a26e716e0a1e2789df78";
    const AGG_EMPTY: &str = "4f53cda18c2baa0c0354bb5f9a3ecbe5ed12ab4d8e11ba873c2f11161202b945";
    const AGG_SINGLE: &str = "dee51899620149f8499f02dd2ca9b380085d49d6e2b3a15223a121caaca6c044";
    const AGG_TWO: &str = "def9dda918d88406606b61b461a74e1979b24216dd2c64cbbe657a457383d530";

    fn bundle(components: Vec<Component>) -> FirmwareBundle {
        FirmwareBundle::new("fw", "1.0", "web-server", components).unwrap()
    }

    fn sample_body() -> CertificateBody {
        let b = bundle(vec![Component::new("fw.bin", b"ABC".to_vec())]);
        CertificateBody {
            software_digest: hash_bundle(&b),
            bundle_name: b.name.clone(),
            bundle_version: b.version.clone(),
            device_class: b.device_class.clone(),
            inspection_entries: vec![],
            covered_backdoor_types: BTreeSet::new(),
            inspector_org: "acme-inspections".into(),
            engineer: None,
            supply_chain: None,
            issued_at: 1_700_000_000,
            supersedes: None,
        }
    }

    #[test]
    fn empty_bundle_aggregate_matches_reference() {
        let b = bundle(vec![]);
        let digest = hash_bundle(&b);
        assert!(digest.component_digests.is_empty());
        assert_eq!(digest.aggregate.to_hex(), AGG_EMPTY);
    }

    #[test]
    fn single_component_digest_matches_reference() {
        let b = bundle(vec![Component::new("fw.bin", b"ABC".to_vec())]);
        let digest = hash_bundle(&b);
        assert_eq!(digest.component_digests[0].1.to_hex(), SHA256_ABC);
        assert_eq!(digest.aggregate.to_hex(), AGG_SINGLE);
    }

    #[test]
    fn two_component_aggregate_matches_reference() {
        let b = bundle(vec![
            Component::new("kernel", b"yz".to_vec()),
            Component::new("boot", b"x".to_vec()),
        ]);
        assert_eq!(hash_bundle(&b).aggregate.to_hex(), AGG_TWO);
    }

    #[test]
    fn insertion_order_does_not_change_digest() {
        let a = bundle(vec![
            Component::new("a", b"1".to_vec()),
            Component::new("b", b"2".to_vec()),
        ]);
        let b = bundle(vec![
            Component::new("b", b"2".to_vec()),
            Component::new("a", b"1".to_vec()),
        ]);
        assert_eq!(hash_bundle(&a), hash_bundle(&b));
    }

    #[test]
    fn duplicate_component_name_rejected() {
        let err = FirmwareBundle::new(
            "fw",
            "1",
            "web-server",
            vec![
                Component::new("a", b"1".to_vec()),
                Component::new("a", b"2".to_vec()),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::DuplicateComponentName(n) if n == "a"));
    }

    #[test]
    fn component_deserialize_rejects_wrong_digest() {
        let json = format!(
            r#"{{"name":"c","content":"414243","content_digest":"{}"}}"#,
            "00".repeat(32)
        );
        assert!(serde_json::from_str::<Component>(&json).is_err());
        let ok = format!(r#"{{"name":"c","content":"414243","content_digest":"{SHA256_ABC}"}}"#);
        let c: Component = serde_json::from_str(&ok).unwrap();
        assert!(c.digest_matches());
    }

    #[test]
    fn sign_verify_round_trip() {
        let key = generate_signing_key(&mut OsRng);
        let mut trust = TrustStore::new();
        trust
            .add_key("acme-inspections", "k1", key.verifying_key())
            .unwrap();
        let cert = sign_certificate(sample_body(), &key, "k1");
        let verified = verify_certificate(&cert, &trust).unwrap();
        assert_eq!(verified.inspector_org, "acme-inspections");
        assert_eq!(verified.body_digest, cert.body_digest);
    }

    #[test]
    fn unknown_signer_rejected() {
        let key = generate_signing_key(&mut OsRng);
        let cert = sign_certificate(sample_body(), &key, "k1");
        let err = verify_certificate(&cert, &TrustStore::new()).unwrap_err();
        assert!(matches!(err, VerifyError::UnknownSigner { .. }));
    }

    #[test]
    fn renamed_inspector_org_fails_verification() {
        let key = generate_signing_key(&mut OsRng);
        let mut trust = TrustStore::new();
        trust.add_key("acme-inspections", "k1", key.verifying_key()).unwrap();
        trust.add_key("evil-lab", "k1", key.verifying_key()).unwrap();
        let mut cert = sign_certificate(sample_body(), &key, "k1");
        cert.body.inspector_org = "evil-lab".into();
        assert_eq!(
            verify_certificate(&cert, &trust).unwrap_err(),
            VerifyError::DigestMismatch
        );
    }

    #[test]
    fn tampered_body_bytes_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let key = generate_signing_key(&mut rng);
        let mut trust = TrustStore::new();
        trust.add_key("acme-inspections", "k1", key.verifying_key()).unwrap();
        let cert = sign_certificate(sample_body(), &key, "k1");
        let encoded = serde_json::to_vec(&cert).unwrap();
        let mut accepted = 0;
        let mut trials = 0;
        while trials < 1000 {
            let mut mutated = encoded.clone();
            let idx = rng.gen_range(0..mutated.len());
            let bit = 1u8 << rng.gen_range(0..8);
            mutated[idx] ^= bit;
            if mutated == encoded {
                continue;
            }
            trials += 1;
            if let Ok(parsed) = serde_json::from_slice::<SignedCertificate>(&mutated) {
                if parsed != cert && verify_certificate(&parsed, &trust).is_ok() {
                    accepted += 1;
                }
            }
        }
        assert_eq!(accepted, 0, "tampered certificates must never verify");
    }

    #[test]
    fn body_validate_checks_union_and_supply_chain() {
        let mut body = sample_body();
        body.validate().unwrap();
        body.covered_backdoor_types.insert("auth-bypass".into());
        assert!(body.validate().is_err());

        let mut body = sample_body();
        body.supply_chain = Some(vec![("nonexistent".into(), "acme".into())]);
        assert!(body.validate().is_err());
        let mut body = sample_body();
        body.supply_chain = Some(vec![("fw.bin".into(), "acme".into())]);
        body.validate().unwrap();
    }

    #[test]
    fn trust_store_json_round_trip() {
        let key = generate_signing_key(&mut OsRng);
        let mut store = TrustStore::new();
        store.add_key("org-a", "k1", key.verifying_key()).unwrap();
        store.add_key("org-a", "k2", key.verifying_key()).unwrap();
        store.add_key("org-b", "main", key.verifying_key()).unwrap();
        let loaded = TrustStore::from_json(&store.to_json()).unwrap();
        assert_eq!(store, loaded);
    }

    #[test]
    fn uppercase_hex_rejected_everywhere() {
        assert!(Digest::from_hex(&"AB".repeat(32)).is_err());
        assert!(Digest::from_hex(&"ab".repeat(32)).is_ok());
        assert!(SignatureBytes::from_hex(&"0A".repeat(64)).is_err());
        let json = r#"{"name":"c","content":"41424A"}"#;
        assert!(serde_json::from_str::<Component>(json).is_err());
    }

    #[test]
    fn trust_store_duplicate_key_id_rejected() {
        let key = generate_signing_key(&mut OsRng);
        let mut store = TrustStore::new();
        store.add_key("org-a", "k1", key.verifying_key()).unwrap();
        assert!(store.add_key("org-a", "k1", key.verifying_key()).is_err());
    }
}
