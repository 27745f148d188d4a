//! The desk-scale backdoor detectors.
//!
//! Each detector is a pure function from its inputs to a score in [0, 1]
//! plus evidence findings. Scores are deliberately simple and monotone:
//! reachability gives 0/1, static-compare sites are weighted by the fraction
//! of the graph they exclusively guard, profile deviations cost 0.5 each.

use std::collections::{BTreeMap, BTreeSet};

use super::cfg::{ControlFlowGraph, MalformedGraph, NodeLabel};
use super::{AdvisoryDb, DeviceClassProfile, Finding};
use crate::model::{Component, FirmwareBundle};

pub const KIND_AUTH_BYPASS: &str = "auth-bypass-path";
pub const KIND_GUARDED_FUNCTIONALITY: &str = "guarded-functionality";
pub const KIND_HIDDEN_CREDENTIAL: &str = "hidden-credential";
pub const KIND_FORBIDDEN_CAPABILITY: &str = "forbidden-capability";
pub const KIND_MISSING_CAPABILITY: &str = "missing-capability";
pub const KIND_KNOWN_ADVISORY: &str = "known-advisory";

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
#[error("profile mismatch: profile is for class {profile_class}, bundle is {bundle_class}")]
pub struct ProfileMismatch {
    pub profile_class: String,
    pub bundle_class: String,
}

/// Is a privileged node reachable from entry along a path that visits no
/// auth-check node?
///
/// Score 1.0 with one finding (and witness path) per reachable privileged
/// node, 0.0 otherwise. Visited-set reachability, so cyclic graphs are fine.
pub fn detect_auth_bypass(
    cfg: &ControlFlowGraph,
    component: &str,
) -> Result<(f64, Vec<Finding>), MalformedGraph> {
    cfg.validate()?;
    let compiled = cfg.compiled();
    let banned = |n: usize| compiled.has_label(n, NodeLabel::AuthCheck);
    let reachable = compiled.reachable_avoiding(compiled.entry, banned);

    let mut findings = Vec::new();
    for node in 0..compiled.node_count() {
        if compiled.has_label(node, NodeLabel::Privileged) && reachable.contains(&node) {
            let path = compiled
                .witness_path(compiled.entry, node, banned)
                .expect("reachable node has a witness path");
            findings.push(Finding {
                component: component.to_string(),
                location: compiled.id(node).to_string(),
                kind: KIND_AUTH_BYPASS.to_string(),
                detail: format!(
                    "privileged node {} reachable without auth check: {}",
                    compiled.id(node),
                    path.join(" -> ")
                ),
                weight: 1.0,
            });
        }
    }
    let score = if findings.is_empty() { 0.0 } else { 1.0 };
    Ok((score, findings))
}

/// Weight each comparison-with-static-data site by the fraction of the graph
/// it exclusively guards.
///
/// guarded(c) = nodes reachable from c but not reachable from entry without
/// passing through c; weight(c) = |guarded(c)| / |nodes|. Overall score is
/// the maximum site weight (0.0 with no sites).
pub fn score_static_compares(
    cfg: &ControlFlowGraph,
    component: &str,
) -> Result<(f64, Vec<Finding>), MalformedGraph> {
    cfg.validate()?;
    let compiled = cfg.compiled();
    let total = compiled.node_count();

    let mut findings = Vec::new();
    let mut score = 0.0f64;
    for site in &cfg.static_compares {
        let site_node = compiled.index[site.node.as_str()];
        let from_site = compiled.reachable_avoiding(site_node, |_| false);
        let bypassing = compiled.reachable_avoiding(compiled.entry, |n| n == site_node);
        let guarded = from_site.difference(&bypassing).count();
        let weight = guarded as f64 / total as f64;
        score = score.max(weight);
        if weight > 0.0 {
            findings.push(Finding {
                component: component.to_string(),
                location: site.node.clone(),
                kind: KIND_GUARDED_FUNCTIONALITY.to_string(),
                detail: format!(
                    "comparison with static data {} exclusively guards {guarded} of {total} nodes",
                    render_literal(&site.literal)
                ),
                weight,
            });
        }
    }
    Ok((score, findings))
}

/// Exact byte-substring scan for configured credential patterns.
///
/// One finding per occurrence (overlaps included), score 1.0 on any match.
pub fn scan_credentials(component: &Component, patterns: &[Vec<u8>]) -> (f64, Vec<Finding>) {
    let mut findings = Vec::new();
    for pattern in patterns {
        if pattern.is_empty() {
            continue;
        }
        for offset in find_occurrences(&component.content, pattern) {
            findings.push(Finding {
                component: component.name.clone(),
                location: offset.to_string(),
                kind: KIND_HIDDEN_CREDENTIAL.to_string(),
                detail: format!(
                    "credential pattern {} at byte offset {offset}",
                    render_literal(pattern)
                ),
                weight: 1.0,
            });
        }
    }
    let score = if findings.is_empty() { 0.0 } else { 1.0 };
    (score, findings)
}

/// Compare observed component capabilities against the class profile.
///
/// Forbidden capabilities present anywhere in the bundle each cost 0.5
/// (clamped to 1.0). Missing expected capabilities are reported as
/// weight-0 informational findings and do not affect the score.
pub fn profile_deviation(
    bundle: &FirmwareBundle,
    capabilities: &BTreeMap<String, BTreeSet<String>>,
    profile: &DeviceClassProfile,
) -> Result<(f64, Vec<Finding>), ProfileMismatch> {
    if profile.class_name != bundle.device_class {
        return Err(ProfileMismatch {
            profile_class: profile.class_name.clone(),
            bundle_class: bundle.device_class.clone(),
        });
    }

    let mut providers: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (component, caps) in capabilities {
        for cap in caps {
            providers.entry(cap).or_default().push(component);
        }
    }

    let mut findings = Vec::new();
    let mut deviations = 0usize;
    for cap in &profile.forbidden_capabilities {
        if let Some(comps) = providers.get(cap.as_str()) {
            deviations += 1;
            findings.push(Finding {
                component: comps[0].to_string(),
                location: cap.clone(),
                kind: KIND_FORBIDDEN_CAPABILITY.to_string(),
                detail: format!(
                    "forbidden capability {cap} exposed by component(s) {}",
                    comps.join(", ")
                ),
                weight: 0.5,
            });
        }
    }
    for cap in &profile.expected_capabilities {
        if !providers.contains_key(cap.as_str()) {
            findings.push(Finding {
                component: "*".to_string(),
                location: cap.clone(),
                kind: KIND_MISSING_CAPABILITY.to_string(),
                detail: format!("expected capability {cap} not exposed by any component"),
                weight: 0.0,
            });
        }
    }

    let score = (0.5 * deviations as f64).min(1.0);
    Ok((score, findings))
}

/// Look up each component's content digest in the advisory database.
pub fn vuln_lookup(bundle: &FirmwareBundle, db: &AdvisoryDb) -> (f64, Vec<Finding>) {
    let mut findings = Vec::new();
    for component in bundle.components() {
        if let Some(advisories) = db.advisories_for(&component.content_digest) {
            for advisory in advisories {
                findings.push(Finding {
                    component: component.name.clone(),
                    location: component.content_digest.to_hex(),
                    kind: KIND_KNOWN_ADVISORY.to_string(),
                    detail: format!("content digest matches advisory {advisory}"),
                    weight: 1.0,
                });
            }
        }
    }
    let score = if findings.is_empty() { 0.0 } else { 1.0 };
    (score, findings)
}

/// Extract declared capabilities from component content.
///
/// Toy firmware convention: any occurrence of `cap:<name>` (ASCII, name in
/// [a-z0-9-]) declares that the component exposes capability `<name>`.
pub fn extract_capabilities(component: &Component) -> BTreeSet<String> {
    const MARKER: &[u8] = b"cap:";
    let mut caps = BTreeSet::new();
    let content = &component.content;
    for start in find_occurrences(content, MARKER) {
        let rest = &content[start + MARKER.len()..];
        let end = rest
            .iter()
            .position(|b| !(b.is_ascii_lowercase() || b.is_ascii_digit() || *b == b'-'))
            .unwrap_or(rest.len());
        if end > 0 {
            caps.insert(String::from_utf8_lossy(&rest[..end]).into_owned());
        }
    }
    caps
}

fn find_occurrences(haystack: &[u8], needle: &[u8]) -> Vec<usize> {
    if needle.is_empty() || haystack.len() < needle.len() {
        return Vec::new();
    }
    haystack
        .windows(needle.len())
        .enumerate()
        .filter(|(_, w)| *w == needle)
        .map(|(i, _)| i)
        .collect()
}

fn render_literal(bytes: &[u8]) -> String {
    if bytes.iter().all(|b| b.is_ascii_graphic() || *b == b' ') {
        format!("\"{}\"", String::from_utf8_lossy(bytes))
    } else {
        format!("0x{}", hex::encode(bytes))
    }
}
