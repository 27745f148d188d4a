//! Network access control from remote attestation plus backdoor inspection
//! certificates.
//!
//! Devices are admitted to a network only when (a) a simulated measured-boot
//! attestation proves their software state and (b) a signed backdoor
//! inspection certificate, looked up by the attested software hash, satisfies
//! the verifier's security policy. The crate covers the whole flow at desk
//! scale: hashing and canonical encoding, pluggable backdoor detectors,
//! certificate issuance and storage, the attestation wire protocol, the
//! policy-driven decision point with obligations, a simulated prover, and a
//! scenario runner that exercises everything end to end over loopback TCP.

pub mod attestation;
pub mod bundle_io;
pub mod canonical;
pub mod certserver;
pub mod inspection;
pub mod keys;
pub mod model;
pub mod prover;
pub mod scenario;
pub mod verifier;
pub mod wire;

pub use canonical::canonical_encode;
pub use model::{
    hash_bundle, sign_certificate, verify_certificate, CertificateBody, Component, Digest,
    FirmwareBundle, SignedCertificate, SoftwareDigest, TrustStore,
};
