//! Backdoor inspection: a pluggable suite of detectors over a firmware
//! bundle, scored inspection entries, certificate issuance, and partial
//! re-inspection after software updates.

pub mod cfg;
pub mod detectors;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ed25519_dalek::SigningKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::canonical_encode;
use crate::model::{
    hash_bundle, sha256, sign_certificate, CertificateBody, Component, Digest, FirmwareBundle,
    ModelError, SignedCertificate,
};
use cfg::MalformedGraph;

pub const ALG_AUTH_BYPASS: &str = "auth-bypass-reach@1";
pub const ALG_STATIC_COMPARE: &str = "static-compare-score@1";
pub const ALG_CREDENTIAL_SCAN: &str = "credential-scan@1";
pub const ALG_PROFILE_DEVIATION: &str = "profile-deviation@1";
pub const ALG_VULN_LOOKUP: &str = "vuln-lookup@1";

pub const TYPE_AUTH_BYPASS: &str = "auth-bypass";
pub const TYPE_HIDDEN_CREDENTIAL: &str = "hidden-credential";
pub const TYPE_HIDDEN_FUNCTIONALITY: &str = "hidden-functionality";
pub const TYPE_KNOWN_VULNERABILITY: &str = "known-vulnerability";

#[derive(Debug, Error)]
pub enum InspectionError {
    #[error(transparent)]
    MalformedGraph(#[from] MalformedGraph),
    #[error("unknown algorithm: {0}")]
    UnknownAlgorithm(String),
    #[error("bad parameters for {algorithm}: {detail}")]
    BadParameters { algorithm: String, detail: String },
    #[error(transparent)]
    ProfileMismatch(#[from] detectors::ProfileMismatch),
    #[error("inspection entries do not correspond to the given bundle (software digest mismatch)")]
    DigestMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

// ---------------------------------------------------------------------------
// entries and findings
// ---------------------------------------------------------------------------

/// A canonical scalar recorded verbatim in entry parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl ParamValue {
    fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Float(f) => Some(*f),
            ParamValue::Int(i) => Some(*i as f64),
            _ => None,
        }
    }
}

impl From<&str> for ParamValue {
    fn from(s: &str) -> Self {
        ParamValue::Str(s.to_string())
    }
}

impl From<f64> for ParamValue {
    fn from(f: f64) -> Self {
        ParamValue::Float(f)
    }
}

pub type ParamMap = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Clean,
    Grey,
    BackdoorFound,
}

/// Verdict cut points. Global defaults 0.3 / 0.8, overridable per algorithm
/// through the `grey_cut` / `backdoor_cut` parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerdictCuts {
    pub grey_at: f64,
    pub backdoor_at: f64,
}

impl Default for VerdictCuts {
    fn default() -> Self {
        VerdictCuts {
            grey_at: 0.3,
            backdoor_at: 0.8,
        }
    }
}

impl VerdictCuts {
    pub fn from_parameters(algorithm: &str, params: &ParamMap) -> Result<Self, InspectionError> {
        let mut cuts = VerdictCuts::default();
        if let Some(v) = params.get("grey_cut") {
            cuts.grey_at = v.as_f64().ok_or_else(|| bad_params(algorithm, "grey_cut must be numeric"))?;
        }
        if let Some(v) = params.get("backdoor_cut") {
            cuts.backdoor_at = v
                .as_f64()
                .ok_or_else(|| bad_params(algorithm, "backdoor_cut must be numeric"))?;
        }
        if !(0.0..=1.0).contains(&cuts.grey_at)
            || !(0.0..=1.0).contains(&cuts.backdoor_at)
            || cuts.grey_at >= cuts.backdoor_at
        {
            return Err(bad_params(algorithm, "cut points must satisfy 0 <= grey_cut < backdoor_cut <= 1"));
        }
        Ok(cuts)
    }

    pub fn verdict_for(&self, score: f64) -> Verdict {
        if score >= self.backdoor_at {
            Verdict::BackdoorFound
        } else if score >= self.grey_at {
            Verdict::Grey
        } else {
            Verdict::Clean
        }
    }
}

fn bad_params(algorithm: &str, detail: &str) -> InspectionError {
    InspectionError::BadParameters {
        algorithm: algorithm.to_string(),
        detail: detail.to_string(),
    }
}

/// Human-readable evidence record attached to an inspection entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub component: String,
    pub location: String,
    pub kind: String,
    pub detail: String,
    pub weight: f64,
}

/// One detector's result over a component scope: recorded algorithm id and
/// parameters, covered backdoor types, score, verdict, and evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionEntry {
    pub algorithm: String,
    pub parameters: ParamMap,
    pub backdoor_types: BTreeSet<String>,
    pub component_scope: Vec<String>,
    pub score: f64,
    pub verdict: Verdict,
    pub findings: Vec<Finding>,
}

/// The artifact written by `inspect`: entries bound to the software digest
/// they were produced from, so later consumers can digest-check them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionReport {
    pub software_digest: crate::model::SoftwareDigest,
    pub entries: Vec<InspectionEntry>,
}

impl InspectionReport {
    pub fn new(bundle: &FirmwareBundle, entries: Vec<InspectionEntry>) -> Self {
        InspectionReport {
            software_digest: hash_bundle(bundle),
            entries,
        }
    }

    pub fn matches(&self, bundle: &FirmwareBundle) -> bool {
        self.software_digest == hash_bundle(bundle)
    }
}

// ---------------------------------------------------------------------------
// detector configuration
// ---------------------------------------------------------------------------

/// Device-class profile: capabilities a class is expected to expose and
/// capabilities it must never expose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceClassProfile {
    pub class_name: String,
    #[serde(default)]
    pub expected_capabilities: BTreeSet<String>,
    #[serde(default)]
    pub forbidden_capabilities: BTreeSet<String>,
}

impl DeviceClassProfile {
    pub fn validate(&self) -> Result<(), InspectionError> {
        if self
            .expected_capabilities
            .intersection(&self.forbidden_capabilities)
            .next()
            .is_some()
        {
            return Err(bad_params(
                ALG_PROFILE_DEVIATION,
                "expected and forbidden capabilities must be disjoint",
            ));
        }
        Ok(())
    }
}

/// Advisory database keyed by component content digest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdvisoryDb(BTreeMap<Digest, Vec<String>>);

impl AdvisoryDb {
    pub fn insert(&mut self, digest: Digest, advisories: Vec<String>) {
        self.0.insert(digest, advisories);
    }

    pub fn advisories_for(&self, digest: &Digest) -> Option<&[String]> {
        self.0.get(digest).map(Vec::as_slice)
    }

    pub fn from_json(text: &str) -> Result<Self, InspectionError> {
        serde_json::from_str(text).map_err(|e| bad_params(ALG_VULN_LOOKUP, &e.to_string()))
    }
}

/// Databases the detector suite runs against.
#[derive(Debug, Clone, Default)]
pub struct DetectorContext {
    /// Byte patterns for the credential scanner.
    pub patterns: Vec<Vec<u8>>,
    /// Device-class profiles for deviation scoring.
    pub profiles: Vec<DeviceClassProfile>,
    /// Known-vulnerability advisories by content digest.
    pub advisories: AdvisoryDb,
}

impl DetectorContext {
    pub fn profile_for(&self, class: &str) -> Option<&DeviceClassProfile> {
        self.profiles.iter().find(|p| p.class_name == class)
    }

    pub fn load_patterns(path: &Path) -> Result<Vec<Vec<u8>>, InspectionError> {
        let text = read(path, ALG_CREDENTIAL_SCAN)?;
        let hexes: Vec<String> =
            serde_json::from_str(&text).map_err(|e| bad_params(ALG_CREDENTIAL_SCAN, &e.to_string()))?;
        hexes
            .iter()
            .map(|h| hex::decode(h).map_err(|e| bad_params(ALG_CREDENTIAL_SCAN, &e.to_string())))
            .collect()
    }

    pub fn load_profiles(path: &Path) -> Result<Vec<DeviceClassProfile>, InspectionError> {
        let text = read(path, ALG_PROFILE_DEVIATION)?;
        let profiles: Vec<DeviceClassProfile> =
            serde_json::from_str(&text).map_err(|e| bad_params(ALG_PROFILE_DEVIATION, &e.to_string()))?;
        for p in &profiles {
            p.validate()?;
        }
        Ok(profiles)
    }

    pub fn load_advisories(path: &Path) -> Result<AdvisoryDb, InspectionError> {
        AdvisoryDb::from_json(&read(path, ALG_VULN_LOOKUP)?)
    }
}

fn read(path: &Path, algorithm: &str) -> Result<String, InspectionError> {
    std::fs::read_to_string(path)
        .map_err(|e| bad_params(algorithm, &format!("{}: {e}", path.display())))
}

/// One requested detector run: algorithm id plus parameter overrides that are
/// merged into the recorded parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteItem {
    pub algorithm: String,
    #[serde(default)]
    pub parameters: ParamMap,
}

impl SuiteItem {
    pub fn new(algorithm: &str) -> Self {
        SuiteItem {
            algorithm: algorithm.to_string(),
            parameters: ParamMap::new(),
        }
    }
}

/// The standard five-detector suite.
pub fn standard_suite() -> Vec<SuiteItem> {
    [
        ALG_AUTH_BYPASS,
        ALG_STATIC_COMPARE,
        ALG_CREDENTIAL_SCAN,
        ALG_PROFILE_DEVIATION,
        ALG_VULN_LOOKUP,
    ]
    .iter()
    .map(|a| SuiteItem::new(a))
    .collect()
}

pub fn backdoor_types_for(algorithm: &str) -> Option<BTreeSet<String>> {
    let types: &[&str] = match algorithm {
        ALG_AUTH_BYPASS => &[TYPE_AUTH_BYPASS],
        ALG_STATIC_COMPARE => &[TYPE_HIDDEN_CREDENTIAL, TYPE_HIDDEN_FUNCTIONALITY],
        ALG_CREDENTIAL_SCAN => &[TYPE_HIDDEN_CREDENTIAL],
        ALG_PROFILE_DEVIATION => &[TYPE_HIDDEN_FUNCTIONALITY],
        ALG_VULN_LOOKUP => &[TYPE_KNOWN_VULNERABILITY],
        _ => return None,
    };
    Some(types.iter().map(|s| s.to_string()).collect())
}

fn is_component_local(algorithm: &str) -> bool {
    matches!(
        algorithm,
        ALG_AUTH_BYPASS | ALG_STATIC_COMPARE | ALG_CREDENTIAL_SCAN | ALG_VULN_LOOKUP
    )
}

// ---------------------------------------------------------------------------
// suite execution
// ---------------------------------------------------------------------------

/// Entries plus the number of detector executions performed (one per
/// component for component-local detectors, one per bundle-global run).
#[derive(Debug, Clone)]
pub struct InspectionOutcome {
    pub entries: Vec<InspectionEntry>,
    pub detector_executions: usize,
}

/// Run a detector suite over every component of a bundle.
pub fn run_inspection(
    bundle: &FirmwareBundle,
    suite: &[SuiteItem],
    ctx: &DetectorContext,
) -> Result<Vec<InspectionEntry>, InspectionError> {
    Ok(run_inspection_detailed(bundle, suite, ctx)?.entries)
}

/// [`run_inspection`] with execution accounting.
pub fn run_inspection_detailed(
    bundle: &FirmwareBundle,
    suite: &[SuiteItem],
    ctx: &DetectorContext,
) -> Result<InspectionOutcome, InspectionError> {
    let mut entries = Vec::with_capacity(suite.len());
    let mut executions = 0usize;
    for item in suite {
        let scope = bundle.component_names();
        let (entry, execs) = run_suite_item(bundle, item, ctx, &scope, None)?;
        entries.push(entry);
        executions += execs;
    }
    Ok(InspectionOutcome {
        entries,
        detector_executions: executions,
    })
}

/// Run one suite item. `rerun_scope` limits component-local detectors to a
/// subset of components; `carried` supplies findings for components outside
/// that subset (partial re-inspection).
fn run_suite_item(
    bundle: &FirmwareBundle,
    item: &SuiteItem,
    ctx: &DetectorContext,
    rerun_scope: &[String],
    carried: Option<&BTreeMap<String, Vec<Finding>>>,
) -> Result<(InspectionEntry, usize), InspectionError> {
    let algorithm = item.algorithm.as_str();
    let backdoor_types = backdoor_types_for(algorithm)
        .ok_or_else(|| InspectionError::UnknownAlgorithm(algorithm.to_string()))?;
    let mut parameters = base_parameters(algorithm, bundle, ctx)?;
    parameters.extend(item.parameters.clone());
    let cuts = VerdictCuts::from_parameters(algorithm, &parameters)?;

    let mut findings = Vec::new();
    let mut executions = 0usize;
    let score;

    if is_component_local(algorithm) {
        for component in bundle.components() {
            if rerun_scope.iter().any(|n| *n == component.name) {
                findings.extend(run_local_detector(algorithm, component, ctx)?);
                executions += 1;
            } else if let Some(carried) = carried {
                if let Some(old) = carried.get(&component.name) {
                    findings.extend(old.iter().cloned());
                }
            }
        }
        score = findings.iter().map(|f| f.weight).fold(0.0f64, f64::max);
    } else {
        // profile-deviation: bundle-global, always a single full run.
        let profile = ctx.profile_for(&bundle.device_class).ok_or_else(|| {
            bad_params(
                algorithm,
                &format!("no profile for device class {}", bundle.device_class),
            )
        })?;
        profile.validate()?;
        let capabilities: BTreeMap<String, BTreeSet<String>> = bundle
            .components()
            .iter()
            .map(|c| (c.name.clone(), detectors::extract_capabilities(c)))
            .collect();
        let (s, f) = detectors::profile_deviation(bundle, &capabilities, profile)?;
        score = s;
        findings = f;
        executions = 1;
    }

    debug_assert!((0.0..=1.0).contains(&score));
    let entry = InspectionEntry {
        algorithm: algorithm.to_string(),
        parameters,
        backdoor_types,
        component_scope: bundle.component_names(),
        score,
        verdict: cuts.verdict_for(score),
        findings,
    };
    Ok((entry, executions))
}

fn run_local_detector(
    algorithm: &str,
    component: &Component,
    ctx: &DetectorContext,
) -> Result<Vec<Finding>, InspectionError> {
    match algorithm {
        ALG_AUTH_BYPASS => match &component.cfg_sidecar {
            Some(cfg) => Ok(detectors::detect_auth_bypass(cfg, &component.name)?.1),
            None => Ok(Vec::new()),
        },
        ALG_STATIC_COMPARE => match &component.cfg_sidecar {
            Some(cfg) => Ok(detectors::score_static_compares(cfg, &component.name)?.1),
            None => Ok(Vec::new()),
        },
        ALG_CREDENTIAL_SCAN => Ok(detectors::scan_credentials(component, &ctx.patterns).1),
        ALG_VULN_LOOKUP => {
            let mut findings = Vec::new();
            if let Some(advisories) = ctx.advisories.advisories_for(&component.content_digest) {
                for advisory in advisories {
                    findings.push(Finding {
                        component: component.name.clone(),
                        location: component.content_digest.to_hex(),
                        kind: detectors::KIND_KNOWN_ADVISORY.to_string(),
                        detail: format!("content digest matches advisory {advisory}"),
                        weight: 1.0,
                    });
                }
            }
            Ok(findings)
        }
        other => Err(InspectionError::UnknownAlgorithm(other.to_string())),
    }
}

fn base_parameters(
    algorithm: &str,
    bundle: &FirmwareBundle,
    ctx: &DetectorContext,
) -> Result<ParamMap, InspectionError> {
    let mut params = ParamMap::new();
    match algorithm {
        ALG_CREDENTIAL_SCAN => {
            if ctx.patterns.is_empty() || ctx.patterns.iter().any(Vec::is_empty) {
                return Err(bad_params(algorithm, "patterns must be non-empty"));
            }
            let joined = ctx
                .patterns
                .iter()
                .map(|p| hex::encode(p))
                .collect::<Vec<_>>()
                .join(",");
            params.insert("patterns".into(), ParamValue::Str(joined));
        }
        ALG_PROFILE_DEVIATION => {
            let profile = ctx.profile_for(&bundle.device_class).ok_or_else(|| {
                bad_params(
                    algorithm,
                    &format!("no profile for device class {}", bundle.device_class),
                )
            })?;
            params.insert("class".into(), ParamValue::Str(profile.class_name.clone()));
            params.insert(
                "expected".into(),
                ParamValue::Str(join_set(&profile.expected_capabilities)),
            );
            params.insert(
                "forbidden".into(),
                ParamValue::Str(join_set(&profile.forbidden_capabilities)),
            );
        }
        ALG_VULN_LOOKUP => {
            let digest = sha256(&canonical_encode(&ctx.advisories));
            params.insert("db_digest".into(), ParamValue::Str(digest.to_hex()));
        }
        _ => {}
    }
    Ok(params)
}

fn join_set(set: &BTreeSet<String>) -> String {
    set.iter().cloned().collect::<Vec<_>>().join(",")
}

// ---------------------------------------------------------------------------
// certificate issuance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct IssueOptions {
    pub include_supply_chain: bool,
    pub engineer: Option<String>,
    pub supersedes: Option<Digest>,
    /// UTC seconds; defaults to the current time.
    pub issued_at: Option<u64>,
}

/// Build and sign a backdoor inspection certificate for a bundle from an
/// inspection report produced over that exact bundle (digest-checked).
pub fn issue_certificate(
    bundle: &FirmwareBundle,
    report: &InspectionReport,
    inspector_org: &str,
    key: &SigningKey,
    key_id: &str,
    options: &IssueOptions,
) -> Result<SignedCertificate, InspectionError> {
    if !report.matches(bundle) {
        return Err(InspectionError::DigestMismatch);
    }
    let covered_backdoor_types: BTreeSet<String> = report
        .entries
        .iter()
        .flat_map(|e| e.backdoor_types.iter().cloned())
        .collect();
    let supply_chain = if options.include_supply_chain {
        Some(
            bundle
                .components()
                .iter()
                .filter_map(|c| c.supplier.as_ref().map(|s| (c.name.clone(), s.clone())))
                .collect(),
        )
    } else {
        None
    };
    let issued_at = options.issued_at.unwrap_or_else(now_unix);
    let body = CertificateBody {
        software_digest: report.software_digest.clone(),
        bundle_name: bundle.name.clone(),
        bundle_version: bundle.version.clone(),
        device_class: bundle.device_class.clone(),
        inspection_entries: report.entries.clone(),
        covered_backdoor_types,
        inspector_org: inspector_org.to_string(),
        engineer: options.engineer.clone(),
        supply_chain,
        issued_at,
        supersedes: options.supersedes,
    };
    body.validate()?;
    Ok(sign_certificate(body, key, key_id))
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

// ---------------------------------------------------------------------------
// partial re-inspection
// ---------------------------------------------------------------------------

/// Re-inspect only the updated parts of a bundle.
///
/// Components whose (name, digest) pair differs between the bundles — plus
/// added components and components whose control-flow sidecar changed — are
/// re-scanned; findings for unchanged components are carried forward with
/// scopes intersected to surviving components. Bundle-global detectors are
/// always re-run. For component-local detectors the result is
/// verdict-identical to a full `run_inspection` on the new bundle.
pub fn reinspect_updated(
    old_bundle: &FirmwareBundle,
    new_bundle: &FirmwareBundle,
    old_report: &InspectionReport,
    suite: &[SuiteItem],
    ctx: &DetectorContext,
) -> Result<Vec<InspectionEntry>, InspectionError> {
    Ok(reinspect_updated_detailed(old_bundle, new_bundle, old_report, suite, ctx)?.entries)
}

/// [`reinspect_updated`] with execution accounting.
pub fn reinspect_updated_detailed(
    old_bundle: &FirmwareBundle,
    new_bundle: &FirmwareBundle,
    old_report: &InspectionReport,
    suite: &[SuiteItem],
    ctx: &DetectorContext,
) -> Result<InspectionOutcome, InspectionError> {
    if !old_report.matches(old_bundle) {
        return Err(InspectionError::DigestMismatch);
    }

    let changed: Vec<String> = new_bundle
        .components()
        .iter()
        .filter(|new| match old_bundle.component(&new.name) {
            None => true,
            Some(old) => {
                old.content_digest != new.content_digest || old.cfg_sidecar != new.cfg_sidecar
            }
        })
        .map(|c| c.name.clone())
        .collect();

    let mut entries = Vec::with_capacity(suite.len());
    let mut executions = 0usize;
    for item in suite {
        let old_entry = find_matching_entry(old_report, item, new_bundle, ctx)?;
        let (entry, execs) = match old_entry {
            Some(old) if is_component_local(&item.algorithm) => {
                // Index the carried findings by component; the changed set
                // plus carry-forward covers every surviving component.
                let mut carried: BTreeMap<String, Vec<Finding>> = BTreeMap::new();
                for finding in &old.findings {
                    carried
                        .entry(finding.component.clone())
                        .or_default()
                        .push(finding.clone());
                }
                run_suite_item(new_bundle, item, ctx, &changed, Some(&carried))?
            }
            // No matching prior entry (or bundle-global detector): full run.
            _ => run_suite_item(new_bundle, item, ctx, &new_bundle.component_names(), None)?,
        };
        entries.push(entry);
        executions += execs;
    }
    Ok(InspectionOutcome {
        entries,
        detector_executions: executions,
    })
}

/// An old entry can seed carry-forward only if it ran the same algorithm with
/// the same recorded parameters the new run would record.
fn find_matching_entry<'a>(
    old_report: &'a InspectionReport,
    item: &SuiteItem,
    new_bundle: &FirmwareBundle,
    ctx: &DetectorContext,
) -> Result<Option<&'a InspectionEntry>, InspectionError> {
    if !is_component_local(&item.algorithm) {
        return Ok(None);
    }
    let mut expected = base_parameters(&item.algorithm, new_bundle, ctx)?;
    expected.extend(item.parameters.clone());
    Ok(old_report
        .entries
        .iter()
        .find(|e| e.algorithm == item.algorithm && e.parameters == expected))
}
