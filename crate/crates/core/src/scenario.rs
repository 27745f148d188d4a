//! Scenario runner: spins up an in-process certificate server and verifier
//! over loopback TCP, provisions certificates per each device's plan, runs
//! every device's admission session through the real wire protocol, and
//! reports actual vs expected decisions.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attestation::DeviceRegistry;
use crate::bundle_io::InlineBundle;
use crate::certserver::{CertServerClient, CertificateStore, RunningServer};
use crate::inspection::{
    issue_certificate, run_inspection, standard_suite, DetectorContext, DeviceClassProfile,
    InspectionEntry, InspectionReport, IssueOptions, Verdict,
};
use crate::keys::{generate_signing_key, DeviceIdentityFile};
use crate::model::{FirmwareBundle, TrustStore};
use crate::prover::{run_session, ProverState, SessionOutcome, TamperMode};
use crate::verifier::audit::AuditLog;
use crate::verifier::daemon::{RunningVerifier, Verifier};
use crate::verifier::{Decision, Outcome, ReasonCode, SecurityPolicy};

const ISSUED_AT_BASE: u64 = 1_700_000_000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario invariant violated: {0}")]
    Invariant(String),
    #[error("provisioning failed for {device}: {detail}")]
    Provision { device: String, detail: String },
    #[error("infrastructure failure: {0}")]
    Infra(String),
}

/// How a device's certificate is provisioned before its admission session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertPlan {
    /// No certificate uploaded at all.
    None,
    /// Inspect, expect a clean result, sign with the trusted org, upload.
    Clean,
    /// Inspect, expect a grey result, sign with the trusted org, upload.
    Grey,
    /// Inspect, expect backdoor-found, sign with the trusted org, upload.
    Backdoor,
    /// Sign with an organization the policy does not trust, upload.
    UntrustedOrg,
    /// Certificate issued for an older build of the firmware; the running
    /// bundle's digest has no certificate.
    Stale,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub device_id: String,
    pub bundle: InlineBundle,
    #[serde(default)]
    pub tamper: TamperMode,
    pub cert_plan: CertPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedDecision {
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasons: Option<Vec<ReasonCode>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub policy: SecurityPolicy,
    pub devices: Vec<DeviceSpec>,
    pub expected: Vec<ExpectedDecision>,
}

fn default_name() -> String {
    "scenario".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceResult {
    pub device: String,
    pub expected: ExpectedDecision,
    pub actual: Decision,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub results: Vec<DeviceResult>,
    pub pass: bool,
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario =
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    if scenario.devices.len() != scenario.expected.len() {
        return Err(ScenarioError::Invariant(format!(
            "expected list has {} entries for {} devices",
            scenario.expected.len(),
            scenario.devices.len()
        )));
    }
    scenario
        .policy
        .validate()
        .map_err(|e| ScenarioError::Invariant(e.to_string()))?;
    Ok(scenario)
}

/// The detector configuration scenarios run with: a hidden-credential
/// pattern, one profile per device class forbidding shell capabilities, and
/// no advisories.
pub fn scenario_detector_context(scenario: &Scenario) -> DetectorContext {
    let classes: BTreeSet<String> = scenario
        .devices
        .iter()
        .map(|d| d.bundle.device_class.clone())
        .collect();
    DetectorContext {
        patterns: vec![b"admin_password=".to_vec()],
        profiles: classes
            .into_iter()
            .map(|class_name| DeviceClassProfile {
                class_name,
                expected_capabilities: BTreeSet::new(),
                forbidden_capabilities: ["telnet-shell".to_string(), "debug-shell".to_string()]
                    .into(),
            })
            .collect(),
        advisories: Default::default(),
    }
}

fn classify(entries: &[InspectionEntry], policy: &SecurityPolicy) -> CertPlan {
    let backdoor = entries
        .iter()
        .any(|e| e.verdict == Verdict::BackdoorFound || e.score >= policy.deny_threshold);
    if backdoor {
        return CertPlan::Backdoor;
    }
    let max = entries.iter().map(|e| e.score).fold(0.0f64, f64::max);
    if max >= policy.grey_threshold {
        CertPlan::Grey
    } else {
        CertPlan::Clean
    }
}

/// Run a scenario end to end. Expectation mismatches are reported in the
/// returned report (pass = false), not as errors.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioReport, ScenarioError> {
    let workdir = tempfile::tempdir().map_err(|e| ScenarioError::Infra(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed);

    // Inspector organizations: the first policy-trusted org signs honest
    // certificates; a second org outside the policy's trust signs the
    // untrusted-org plans. Both are in the server and verifier trust stores,
    // so only the policy filter excludes the latter.
    let trusted_org = scenario
        .policy
        .trusted_orgs
        .iter()
        .next()
        .cloned()
        .ok_or_else(|| ScenarioError::Invariant("policy trusts no organization".into()))?;
    let mut untrusted_org = "shadow-lab".to_string();
    while scenario.policy.trusted_orgs.contains(&untrusted_org) {
        untrusted_org.push('x');
    }
    let trusted_key = generate_signing_key(&mut rng);
    let untrusted_key = generate_signing_key(&mut rng);
    let mut trust = TrustStore::new();
    trust
        .add_key(&trusted_org, "k1", trusted_key.verifying_key())
        .and_then(|_| trust.add_key(&untrusted_org, "k1", untrusted_key.verifying_key()))
        .map_err(|e| ScenarioError::Infra(e.to_string()))?;

    // Device identities, deterministic from the seed.
    let identities: Vec<DeviceIdentityFile> = scenario
        .devices
        .iter()
        .map(|d| DeviceIdentityFile::generate(&mut rng, &d.device_id))
        .collect();
    let mut registry = DeviceRegistry::new();
    for identity in &identities {
        registry.enroll(
            &identity.device_id,
            identity
                .verifying_key()
                .map_err(|e| ScenarioError::Infra(e.to_string()))?,
        );
    }

    // Certificate server on an ephemeral loopback port with a temp store.
    let store = CertificateStore::open(&workdir.path().join("certs.jsonl"), trust.clone())
        .map_err(|e| ScenarioError::Infra(e.to_string()))?;
    let server = RunningServer::start("127.0.0.1:0", Arc::new(store))
        .map_err(|e| ScenarioError::Infra(e.to_string()))?;
    let client = CertServerClient::new(&server.url());

    // Provision certificates per plan.
    let ctx = scenario_detector_context(scenario);
    let mut bundles = Vec::with_capacity(scenario.devices.len());
    for (index, device) in scenario.devices.iter().enumerate() {
        let bundle = device.bundle.clone().into_bundle().map_err(|e| {
            ScenarioError::Provision {
                device: device.device_id.clone(),
                detail: e.to_string(),
            }
        })?;
        provision_certificate(
            device,
            &bundle,
            index,
            scenario,
            &ctx,
            &client,
            (&trusted_org, &trusted_key),
            (&untrusted_org, &untrusted_key),
        )?;
        bundles.push(bundle);
    }

    // Verifier daemon wired to the live certificate server.
    let audit = AuditLog::open(&workdir.path().join("audit.jsonl"))
        .map_err(|e| ScenarioError::Infra(e.to_string()))?;
    let verifier = Arc::new(Verifier::new(
        scenario.policy.clone(),
        trust,
        registry,
        &server.url(),
        audit,
    ));
    let running = RunningVerifier::start("127.0.0.1:0", Arc::clone(&verifier))
        .map_err(|e| ScenarioError::Infra(e.to_string()))?;
    let verifier_addr = running.addr().to_string();

    // Run each device's admission session over the wire.
    let mut results = Vec::with_capacity(scenario.devices.len());
    for ((device, identity), bundle) in
        scenario.devices.iter().zip(&identities).zip(&bundles)
    {
        let state = ProverState::boot(bundle, identity)
            .map_err(|e| ScenarioError::Provision {
                device: device.device_id.clone(),
                detail: e.to_string(),
            })?
            .with_tamper(device.tamper);
        let outcome = run_session(&state, &verifier_addr).map_err(|e| ScenarioError::Infra(
            format!("session for {}: {e}", device.device_id),
        ))?;
        let actual = match outcome {
            SessionOutcome::Decided(decision) => decision,
            SessionOutcome::VerifierError { code, detail } => {
                return Err(ScenarioError::Infra(format!(
                    "verifier error for {}: {code}: {detail}",
                    device.device_id
                )))
            }
        };
        results.push((device.device_id.clone(), actual));
    }

    running.shutdown();
    server.shutdown();

    let results: Vec<DeviceResult> = results
        .into_iter()
        .zip(&scenario.expected)
        .map(|((device, actual), expected)| {
            let pass = decision_matches(expected, &actual);
            DeviceResult {
                device,
                expected: expected.clone(),
                actual,
                pass,
            }
        })
        .collect();
    let pass = results.iter().all(|r| r.pass);
    Ok(ScenarioReport {
        scenario: scenario.name.clone(),
        results,
        pass,
    })
}

fn decision_matches(expected: &ExpectedDecision, actual: &Decision) -> bool {
    if expected.outcome != actual.outcome {
        return false;
    }
    match &expected.reasons {
        None => true,
        Some(reasons) => {
            let want: BTreeSet<ReasonCode> = reasons.iter().copied().collect();
            let got: BTreeSet<ReasonCode> = actual.reasons.iter().copied().collect();
            want == got
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn provision_certificate(
    device: &DeviceSpec,
    bundle: &FirmwareBundle,
    index: usize,
    scenario: &Scenario,
    ctx: &DetectorContext,
    client: &CertServerClient,
    trusted: (&str, &ed25519_dalek::SigningKey),
    untrusted: (&str, &ed25519_dalek::SigningKey),
) -> Result<(), ScenarioError> {
    let provision = |bundle: &FirmwareBundle,
                     org: &str,
                     key: &ed25519_dalek::SigningKey,
                     expect_plan: Option<CertPlan>|
     -> Result<(), ScenarioError> {
        let entries = run_inspection(bundle, &standard_suite(), ctx).map_err(|e| {
            ScenarioError::Provision {
                device: device.device_id.clone(),
                detail: e.to_string(),
            }
        })?;
        if let Some(plan) = expect_plan {
            let actual = classify(&entries, &scenario.policy);
            if actual != plan {
                return Err(ScenarioError::Provision {
                    device: device.device_id.clone(),
                    detail: format!(
                        "bundle inspects as {actual:?} but the cert plan says {plan:?}; \
                         fix the scenario fixture"
                    ),
                });
            }
        }
        let report = InspectionReport::new(bundle, entries);
        let cert = issue_certificate(
            bundle,
            &report,
            org,
            key,
            "k1",
            &IssueOptions {
                include_supply_chain: true,
                issued_at: Some(ISSUED_AT_BASE + index as u64),
                ..Default::default()
            },
        )
        .map_err(|e| ScenarioError::Provision {
            device: device.device_id.clone(),
            detail: e.to_string(),
        })?;
        client.put_certificate(&cert).map_err(|e| ScenarioError::Provision {
            device: device.device_id.clone(),
            detail: format!("upload failed: {e}"),
        })?;
        Ok(())
    };

    match device.cert_plan {
        CertPlan::None => Ok(()),
        CertPlan::Clean => provision(bundle, trusted.0, trusted.1, Some(CertPlan::Clean)),
        CertPlan::Grey => provision(bundle, trusted.0, trusted.1, Some(CertPlan::Grey)),
        CertPlan::Backdoor => provision(bundle, trusted.0, trusted.1, Some(CertPlan::Backdoor)),
        CertPlan::UntrustedOrg => provision(bundle, untrusted.0, untrusted.1, None),
        CertPlan::Stale => {
            // Certify yesterday's build: same names, different bytes.
            let mut components: Vec<_> = bundle.components().to_vec();
            if let Some(first) = components.first_mut() {
                let mut content = first.content.clone();
                content.extend_from_slice(b"+previous-build");
                *first = crate::model::Component {
                    supplier: first.supplier.clone(),
                    cfg_sidecar: first.cfg_sidecar.clone(),
                    ..crate::model::Component::new(first.name.clone(), content)
                };
            }
            let old_build = FirmwareBundle::new(
                bundle.name.clone(),
                format!("{}-prev", bundle.version),
                bundle.device_class.clone(),
                components,
            )
            .map_err(|e| ScenarioError::Provision {
                device: device.device_id.clone(),
                detail: e.to_string(),
            })?;
            provision(&old_build, trusted.0, trusted.1, None)
        }
    }
}
