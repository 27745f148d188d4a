//! The network-access-control decision point: certificate selection, policy
//! evaluation, obligation derivation, and the final admission decision.
//!
//! Everything fails closed: any attestation failure, missing certificate, or
//! unreachable certificate server yields Deny, never default admission.

pub mod audit;
pub mod daemon;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inspection::{ParamMap, ParamValue, Verdict};
use crate::model::{
    verify_certificate, CertificateBody, Digest, SignedCertificate, SoftwareDigest, TrustStore,
    VerifiedCertificate,
};
use audit::{AuditLog, AuditRecord};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy: {0}")]
    Invalid(String),
    #[error("score {score} is outside the grey band [{grey_threshold}, {deny_threshold})")]
    OutOfBand {
        score: f64,
        grey_threshold: f64,
        deny_threshold: f64,
    },
}

// ---------------------------------------------------------------------------
// policy
// ---------------------------------------------------------------------------

/// A required detection algorithm: id plus the parameters the policy pins.
/// Recorded-but-unpinned parameters are accepted (subset match).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequiredAlgorithm {
    pub algorithm: String,
    #[serde(default)]
    pub parameters: ParamMap,
}

/// Monitoring band for grey devices: the anomaly threshold interpolates from
/// `t_lax` (barely grey) down to `t_strict` (almost denied).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitoringBand {
    pub t_strict: f64,
    pub t_lax: f64,
}

impl Default for MonitoringBand {
    fn default() -> Self {
        MonitoringBand {
            t_strict: 0.5,
            t_lax: 0.9,
        }
    }
}

/// Obligation templates attached to grey admissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObligationTemplates {
    #[serde(default)]
    pub monitoring: MonitoringBand,
    #[serde(default = "default_logging_level")]
    pub logging_level: String,
    #[serde(default)]
    pub vlan_quarantine: bool,
    #[serde(default)]
    pub ip_allowlist: Option<Vec<String>>,
    #[serde(default)]
    pub minimal_permissions: bool,
}

fn default_logging_level() -> String {
    "detailed".to_string()
}

impl Default for ObligationTemplates {
    fn default() -> Self {
        ObligationTemplates {
            monitoring: MonitoringBand::default(),
            logging_level: default_logging_level(),
            vlan_quarantine: false,
            ip_allowlist: None,
            minimal_permissions: false,
        }
    }
}

/// Verifier-side security policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityPolicy {
    #[serde(default)]
    pub required_backdoor_types: BTreeSet<String>,
    #[serde(default)]
    pub required_algorithms: Vec<RequiredAlgorithm>,
    pub trusted_orgs: BTreeSet<String>,
    #[serde(default)]
    pub trusted_suppliers: Option<BTreeSet<String>>,
    #[serde(default = "default_deny_threshold")]
    pub deny_threshold: f64,
    #[serde(default = "default_grey_threshold")]
    pub grey_threshold: f64,
    #[serde(default)]
    pub obligation_templates: ObligationTemplates,
    #[serde(default)]
    pub require_engineer_record: bool,
}

fn default_deny_threshold() -> f64 {
    0.8
}

fn default_grey_threshold() -> f64 {
    0.3
}

impl SecurityPolicy {
    /// A permissive baseline trusting the given organizations.
    pub fn trusting<I: IntoIterator<Item = S>, S: Into<String>>(orgs: I) -> Self {
        SecurityPolicy {
            required_backdoor_types: BTreeSet::new(),
            required_algorithms: Vec::new(),
            trusted_orgs: orgs.into_iter().map(Into::into).collect(),
            trusted_suppliers: None,
            deny_threshold: default_deny_threshold(),
            grey_threshold: default_grey_threshold(),
            obligation_templates: ObligationTemplates::default(),
            require_engineer_record: false,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.deny_threshold > 0.0 && self.deny_threshold <= 1.0) {
            return Err(PolicyError::Invalid("deny_threshold must be in (0, 1]".into()));
        }
        if !(self.grey_threshold >= 0.0 && self.grey_threshold < self.deny_threshold) {
            return Err(PolicyError::Invalid(
                "grey_threshold must be in [0, deny_threshold)".into(),
            ));
        }
        let band = &self.obligation_templates.monitoring;
        if !(band.t_strict > 0.0 && band.t_strict < band.t_lax && band.t_lax <= 1.0) {
            return Err(PolicyError::Invalid(
                "monitoring band must satisfy 0 < t_strict < t_lax <= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PolicyError::Invalid(format!("{}: {e}", path.display())))?;
        let policy: SecurityPolicy =
            serde_json::from_str(&text).map_err(|e| PolicyError::Invalid(e.to_string()))?;
        policy.validate()?;
        Ok(policy)
    }
}

// ---------------------------------------------------------------------------
// decisions and obligations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Allow,
    AllowWithObligations,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReasonCode {
    Attestation,
    NoCertificate,
    CertServerUnavailable,
    Coverage,
    Algorithm,
    Backdoor,
    Supplier,
    Engineer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IsolationDirective {
    VlanQuarantine,
    IpAllowlist,
}

/// Post-admission security directive attached to a conditional allow.
/// Enforcement (IDS thresholds, SELinux, VLAN config) is external.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Obligation {
    Monitoring {
        anomaly_threshold: f64,
    },
    DetailedLogging {
        level: String,
    },
    NetworkIsolation {
        directive: IsolationDirective,
        parameters: BTreeMap<String, String>,
    },
    MinimalPermissions {
        component: String,
    },
}

/// References tying a decision back to its inputs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evidence {
    pub quote_pcr: Option<Digest>,
    pub certificate_body_digest: Option<Digest>,
}

/// The output of an admission evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub reasons: Vec<ReasonCode>,
    pub obligations: Vec<Obligation>,
    pub evidence: Evidence,
}

impl Decision {
    fn deny(reasons: Vec<ReasonCode>, evidence: Evidence) -> Self {
        debug_assert!(!reasons.is_empty());
        Decision {
            outcome: Outcome::Deny,
            reasons,
            obligations: Vec::new(),
            evidence,
        }
    }
}

// ---------------------------------------------------------------------------
// certificate selection
// ---------------------------------------------------------------------------

/// Pick the certificate the policy evaluation will use.
///
/// Filters to certificates that verify against the trust store, whose
/// inspector organization is trusted by the policy, and that are not
/// superseded by another surviving certificate; among survivors picks the
/// newest `issued_at`, ties broken by smallest body digest. Absence is a
/// value, not an error.
pub fn select_certificate(
    certs: &[SignedCertificate],
    policy: &SecurityPolicy,
    trust: &TrustStore,
) -> Option<VerifiedCertificate> {
    let survivors: Vec<VerifiedCertificate> = certs
        .iter()
        .filter_map(|c| verify_certificate(c, trust).ok())
        .filter(|v| policy.trusted_orgs.contains(&v.inspector_org))
        .collect();
    let superseded: BTreeSet<Digest> = survivors
        .iter()
        .filter_map(|v| v.body.supersedes)
        .collect();
    survivors
        .into_iter()
        .filter(|v| !superseded.contains(&v.body_digest))
        .max_by(|a, b| {
            a.body
                .issued_at
                .cmp(&b.body.issued_at)
                // On equal age prefer the smallest digest: max_by keeps the
                // ordering's maximum, so reverse the digest comparison.
                .then_with(|| b.body_digest.cmp(&a.body_digest))
        })
}

// ---------------------------------------------------------------------------
// policy evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyOutcome {
    Pass,
    Grey { max_score: f64 },
    Fail { reasons: Vec<ReasonCode> },
}

fn param_matches(pinned: &ParamValue, recorded: &ParamValue) -> bool {
    match (numeric(pinned), numeric(recorded)) {
        (Some(a), Some(b)) => a == b,
        _ => pinned == recorded,
    }
}

fn numeric(v: &ParamValue) -> Option<f64> {
    match v {
        ParamValue::Int(i) => Some(*i as f64),
        ParamValue::Float(f) => Some(*f),
        _ => None,
    }
}

/// Evaluate a verified, org-trusted certificate body against the policy.
///
/// All violated checks are reported, not just the first.
pub fn evaluate_policy(body: &CertificateBody, policy: &SecurityPolicy) -> PolicyOutcome {
    let mut reasons = Vec::new();

    if !policy
        .required_backdoor_types
        .is_subset(&body.covered_backdoor_types)
    {
        reasons.push(ReasonCode::Coverage);
    }

    let algorithms_ok = policy.required_algorithms.iter().all(|required| {
        body.inspection_entries.iter().any(|entry| {
            entry.algorithm == required.algorithm
                && required
                    .parameters
                    .iter()
                    .all(|(k, v)| entry.parameters.get(k).is_some_and(|r| param_matches(v, r)))
        })
    });
    if !algorithms_ok {
        reasons.push(ReasonCode::Algorithm);
    }

    let backdoor = body.inspection_entries.iter().any(|entry| {
        entry.verdict == Verdict::BackdoorFound || entry.score >= policy.deny_threshold
    });
    if backdoor {
        reasons.push(ReasonCode::Backdoor);
    }

    if let Some(trusted_suppliers) = &policy.trusted_suppliers {
        let chain: BTreeMap<&str, &str> = body
            .supply_chain
            .as_deref()
            .unwrap_or_default()
            .iter()
            .map(|(c, s)| (c.as_str(), s.as_str()))
            .collect();
        let all_trusted = body.software_digest.component_names().all(|component| {
            chain
                .get(component)
                .is_some_and(|supplier| trusted_suppliers.contains(*supplier))
        });
        if !all_trusted {
            reasons.push(ReasonCode::Supplier);
        }
    }

    if policy.require_engineer_record && body.engineer.is_none() {
        reasons.push(ReasonCode::Engineer);
    }

    if !reasons.is_empty() {
        return PolicyOutcome::Fail { reasons };
    }

    let max_score = body
        .inspection_entries
        .iter()
        .map(|e| e.score)
        .fold(0.0f64, f64::max);
    if max_score >= policy.grey_threshold {
        PolicyOutcome::Grey { max_score }
    } else {
        PolicyOutcome::Pass
    }
}

// ---------------------------------------------------------------------------
// obligations
// ---------------------------------------------------------------------------

/// Derive the obligations for a grey admission.
///
/// The monitoring anomaly threshold interpolates linearly across the grey
/// band — strictly decreasing in the score, so more suspicious devices get
/// stricter monitoring. `grey_components` names the components implicated by
/// in-band findings (used for minimal-permission directives).
pub fn derive_obligations(
    grey_score: f64,
    policy: &SecurityPolicy,
    grey_components: &[String],
) -> Result<Vec<Obligation>, PolicyError> {
    if !(grey_score >= policy.grey_threshold && grey_score < policy.deny_threshold) {
        return Err(PolicyError::OutOfBand {
            score: grey_score,
            grey_threshold: policy.grey_threshold,
            deny_threshold: policy.deny_threshold,
        });
    }
    let templates = &policy.obligation_templates;
    let band = &templates.monitoring;
    let fraction =
        (grey_score - policy.grey_threshold) / (policy.deny_threshold - policy.grey_threshold);
    let anomaly_threshold = band.t_lax - (band.t_lax - band.t_strict) * fraction;

    let mut obligations = vec![
        Obligation::Monitoring { anomaly_threshold },
        Obligation::DetailedLogging {
            level: templates.logging_level.clone(),
        },
    ];
    if templates.vlan_quarantine {
        obligations.push(Obligation::NetworkIsolation {
            directive: IsolationDirective::VlanQuarantine,
            parameters: BTreeMap::from([("vlan".to_string(), "quarantine".to_string())]),
        });
    }
    if let Some(allowlist) = &templates.ip_allowlist {
        obligations.push(Obligation::NetworkIsolation {
            directive: IsolationDirective::IpAllowlist,
            parameters: BTreeMap::from([("allow".to_string(), allowlist.join(","))]),
        });
    }
    if templates.minimal_permissions {
        let components: BTreeSet<&String> =
            grey_components.iter().filter(|c| c.as_str() != "*").collect();
        for component in components {
            obligations.push(Obligation::MinimalPermissions {
                component: component.clone(),
            });
        }
    }
    Ok(obligations)
}

// ---------------------------------------------------------------------------
// admission
// ---------------------------------------------------------------------------

/// Result of the attestation exchange with a prover.
#[derive(Debug, Clone, PartialEq)]
pub enum AttestationSession {
    Verified {
        device_id: String,
        quote_pcr: Digest,
        software_digest: SoftwareDigest,
    },
    Failed {
        device_id: Option<String>,
        quote_pcr: Option<Digest>,
        detail: String,
    },
}

/// Result of asking the certificate server for candidates.
#[derive(Debug, Clone, PartialEq)]
pub enum CertFetch {
    Fetched(Vec<SignedCertificate>),
    Unavailable(String),
}

/// Make the admission decision for one session and append it to the audit
/// log before returning.
///
/// Every failure path is a Deny decision: attestation failures, a missing or
/// unselectable certificate, policy violations, and certificate-server
/// unavailability (fail-closed).
pub fn decide_admission(
    session: &AttestationSession,
    cert_fetch: &CertFetch,
    policy: &SecurityPolicy,
    trust: &TrustStore,
    audit_log: &AuditLog,
) -> Decision {
    let (device_id, decision) = match session {
        AttestationSession::Failed {
            device_id,
            quote_pcr,
            ..
        } => {
            let evidence = Evidence {
                quote_pcr: *quote_pcr,
                certificate_body_digest: None,
            };
            (
                device_id.clone().unwrap_or_else(|| "unknown".to_string()),
                Decision::deny(vec![ReasonCode::Attestation], evidence),
            )
        }
        AttestationSession::Verified {
            device_id,
            quote_pcr,
            ..
        } => {
            let evidence = Evidence {
                quote_pcr: Some(*quote_pcr),
                certificate_body_digest: None,
            };
            let decision = match cert_fetch {
                CertFetch::Unavailable(_) => {
                    Decision::deny(vec![ReasonCode::CertServerUnavailable], evidence)
                }
                CertFetch::Fetched(certs) => match select_certificate(certs, policy, trust) {
                    None => Decision::deny(vec![ReasonCode::NoCertificate], evidence),
                    Some(selected) => {
                        let evidence = Evidence {
                            certificate_body_digest: Some(selected.body_digest),
                            ..evidence
                        };
                        match evaluate_policy(&selected.body, policy) {
                            PolicyOutcome::Fail { reasons } => Decision::deny(reasons, evidence),
                            PolicyOutcome::Pass => Decision {
                                outcome: Outcome::Allow,
                                reasons: Vec::new(),
                                obligations: Vec::new(),
                                evidence,
                            },
                            PolicyOutcome::Grey { max_score } => {
                                let grey_components = implicated_components(&selected.body, policy);
                                let obligations =
                                    derive_obligations(max_score, policy, &grey_components)
                                        .expect("grey score is inside the band by construction");
                                Decision {
                                    outcome: Outcome::AllowWithObligations,
                                    reasons: Vec::new(),
                                    obligations,
                                    evidence,
                                }
                            }
                        }
                    }
                },
            };
            (device_id.clone(), decision)
        }
    };

    audit_log.append(&AuditRecord::for_decision(&device_id, &decision));
    decision
}

/// Components named by weighted findings of entries inside the grey band.
fn implicated_components(body: &CertificateBody, policy: &SecurityPolicy) -> Vec<String> {
    let mut components = BTreeSet::new();
    for entry in &body.inspection_entries {
        if entry.score >= policy.grey_threshold && entry.score < policy.deny_threshold {
            for finding in &entry.findings {
                if finding.weight > 0.0 {
                    components.insert(finding.component.clone());
                }
            }
        }
    }
    components.into_iter().collect()
}
