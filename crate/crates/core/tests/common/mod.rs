//! Shared test helpers: brute-force oracles written independently of the
//! library's reachability code (simple-path enumeration over the raw node
//! and edge lists), plus random input generators.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, RngCore};
use rand_chacha::ChaCha20Rng;

use bicnet_core::inspection::cfg::{CfgNode, ControlFlowGraph, NodeLabel, StaticCompare};
use bicnet_core::inspection::{DetectorContext, DeviceClassProfile};
use bicnet_core::model::{Component, FirmwareBundle};

// ---------------------------------------------------------------------------
// oracles (simple-path enumeration; exponential, fine for <= 12 nodes)
// ---------------------------------------------------------------------------

fn adjacency(cfg: &ControlFlowGraph) -> BTreeMap<&str, Vec<&str>> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for node in &cfg.nodes {
        adj.entry(node.id.as_str()).or_default();
    }
    for (from, to) in &cfg.edges {
        adj.get_mut(from.as_str()).unwrap().push(to.as_str());
    }
    adj
}

fn labels_of<'a>(cfg: &'a ControlFlowGraph, id: &str) -> &'a BTreeSet<NodeLabel> {
    &cfg.nodes.iter().find(|n| n.id == id).unwrap().labels
}

fn entry_of(cfg: &ControlFlowGraph) -> &str {
    cfg.nodes
        .iter()
        .find(|n| n.labels.contains(&NodeLabel::Entry))
        .map(|n| n.id.as_str())
        .expect("graph has an entry")
}

/// Does a simple path from..to exist that visits no banned node? `from` and
/// `to` themselves must not be banned (checked by the caller).
fn exists_simple_path(
    adj: &BTreeMap<&str, Vec<&str>>,
    from: &str,
    to: &str,
    banned: &HashSet<&str>,
    on_path: &mut Vec<String>,
) -> bool {
    if from == to {
        return true;
    }
    on_path.push(from.to_string());
    for next in &adj[from] {
        if banned.contains(next) || on_path.iter().any(|p| p == next) {
            continue;
        }
        if exists_simple_path(adj, next, to, banned, on_path) {
            on_path.pop();
            return true;
        }
    }
    on_path.pop();
    false
}

/// Privileged nodes reachable from entry along some simple path that visits
/// no auth-check node.
pub fn oracle_bypass_targets(cfg: &ControlFlowGraph) -> BTreeSet<String> {
    let adj = adjacency(cfg);
    let entry = entry_of(cfg);
    let banned: HashSet<&str> = cfg
        .nodes
        .iter()
        .filter(|n| n.labels.contains(&NodeLabel::AuthCheck))
        .map(|n| n.id.as_str())
        .collect();
    if banned.contains(entry) {
        return BTreeSet::new();
    }
    cfg.nodes
        .iter()
        .filter(|n| n.labels.contains(&NodeLabel::Privileged))
        .filter(|n| !banned.contains(n.id.as_str()))
        .filter(|n| {
            exists_simple_path(&adj, entry, &n.id, &banned, &mut Vec::new())
        })
        .map(|n| n.id.clone())
        .collect()
}

/// guarded(site) per the node-removal definition, via path enumeration:
/// nodes reachable from the site minus nodes reachable from entry on paths
/// that never touch the site.
pub fn oracle_guarded_set(cfg: &ControlFlowGraph, site: &str) -> BTreeSet<String> {
    let adj = adjacency(cfg);
    let entry = entry_of(cfg);
    let none: HashSet<&str> = HashSet::new();
    let from_site: BTreeSet<String> = cfg
        .nodes
        .iter()
        .filter(|n| exists_simple_path(&adj, site, &n.id, &none, &mut Vec::new()))
        .map(|n| n.id.clone())
        .collect();
    let without_site: BTreeSet<String> = if entry == site {
        BTreeSet::new()
    } else {
        let banned: HashSet<&str> = HashSet::from([site]);
        cfg.nodes
            .iter()
            .filter(|n| n.id != site)
            .filter(|n| exists_simple_path(&adj, entry, &n.id, &banned, &mut Vec::new()))
            .map(|n| n.id.clone())
            .collect()
    };
    from_site.difference(&without_site).cloned().collect()
}

/// The static-compare score the oracle predicts: max over sites of
/// |guarded| / |nodes|.
pub fn oracle_static_compare_score(cfg: &ControlFlowGraph) -> f64 {
    cfg.static_compares
        .iter()
        .map(|s| oracle_guarded_set(cfg, &s.node).len() as f64 / cfg.nodes.len() as f64)
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// random generators
// ---------------------------------------------------------------------------

pub fn random_cfg(rng: &mut ChaCha20Rng, max_nodes: usize) -> ControlFlowGraph {
    let n = rng.gen_range(1..=max_nodes);
    let nodes: Vec<CfgNode> = (0..n)
        .map(|i| {
            let mut labels = BTreeSet::new();
            if i == 0 {
                labels.insert(NodeLabel::Entry);
                if rng.gen_bool(0.15) {
                    labels.insert(NodeLabel::Privileged);
                }
            } else {
                if rng.gen_bool(0.2) {
                    labels.insert(NodeLabel::AuthCheck);
                }
                if rng.gen_bool(0.3) {
                    labels.insert(NodeLabel::Privileged);
                }
            }
            CfgNode {
                id: format!("n{i}"),
                labels,
            }
        })
        .collect();
    let m = rng.gen_range(0..=n * 2);
    let edges = (0..m)
        .map(|_| {
            (
                format!("n{}", rng.gen_range(0..n)),
                format!("n{}", rng.gen_range(0..n)),
            )
        })
        .collect();
    let sites = rng.gen_range(0..=3.min(n));
    let static_compares = (0..sites)
        .map(|_| {
            let len = rng.gen_range(1..6);
            let mut literal = vec![0u8; len];
            rng.fill_bytes(&mut literal);
            StaticCompare {
                node: format!("n{}", rng.gen_range(0..n)),
                literal,
            }
        })
        .collect();
    ControlFlowGraph {
        nodes,
        edges,
        static_compares,
    }
}

/// Random bundle of opaque components (for attestation-side tests).
pub fn random_bundle(rng: &mut ChaCha20Rng) -> FirmwareBundle {
    let n = rng.gen_range(1..=5);
    let components = (0..n)
        .map(|i| {
            let len = rng.gen_range(0..64);
            let mut content = vec![0u8; len];
            rng.fill_bytes(&mut content);
            Component::new(format!("c{i}"), content)
        })
        .collect();
    FirmwareBundle::new("fw", "1", "web-server", components).unwrap()
}

/// Detector configuration used by inspection-side tests: one credential
/// pattern, a web-server profile, no advisories.
pub fn detector_ctx() -> DetectorContext {
    DetectorContext {
        patterns: vec![b"admin_password=".to_vec()],
        profiles: vec![DeviceClassProfile {
            class_name: "web-server".into(),
            expected_capabilities: ["http-serve".to_string()].into(),
            forbidden_capabilities: ["telnet-shell".to_string(), "debug-shell".to_string()].into(),
        }],
        advisories: Default::default(),
    }
}

/// Random component content that sometimes trips the credential scanner or
/// the profile detector.
fn random_component_content(rng: &mut ChaCha20Rng) -> Vec<u8> {
    let mut content = Vec::new();
    for _ in 0..rng.gen_range(1..5) {
        match rng.gen_range(0..6) {
            0 => content.extend_from_slice(b"admin_password=root "),
            1 => content.extend_from_slice(b"cap:telnet-shell "),
            2 => content.extend_from_slice(b"cap:http-serve "),
            _ => {
                let len = rng.gen_range(1..24);
                let mut noise = vec![0u8; len];
                rng.fill_bytes(&mut noise);
                // Keep noise out of the marker alphabet.
                for b in &mut noise {
                    *b |= 0x80;
                }
                content.extend_from_slice(&noise);
                content.push(b' ');
            }
        }
    }
    content
}

/// Random web-server bundle rich enough to drive every detector.
pub fn random_inspection_bundle(rng: &mut ChaCha20Rng) -> FirmwareBundle {
    let n = rng.gen_range(2..=5);
    let components = (0..n)
        .map(|i| {
            let mut component = Component::new(format!("c{i}"), random_component_content(rng));
            if rng.gen_bool(0.5) {
                component = component.with_cfg(random_cfg(rng, 8));
            }
            if rng.gen_bool(0.5) {
                component = component.with_supplier("acme-parts");
            }
            component
        })
        .collect();
    FirmwareBundle::new("fw", "1", "web-server", components).unwrap()
}

/// Random software update: mutate content, mutate a sidecar, add, or remove
/// components. Returns the updated bundle.
pub fn random_update(rng: &mut ChaCha20Rng, old: &FirmwareBundle) -> FirmwareBundle {
    let mut components: Vec<Component> = old.components().to_vec();
    let ops = rng.gen_range(0..=2);
    for _ in 0..ops {
        match rng.gen_range(0..4) {
            0 if !components.is_empty() => {
                // Content change.
                let idx = rng.gen_range(0..components.len());
                let target = &components[idx];
                let mut rebuilt =
                    Component::new(target.name.clone(), random_component_content(rng));
                rebuilt.supplier = target.supplier.clone();
                rebuilt.cfg_sidecar = target.cfg_sidecar.clone();
                components[idx] = rebuilt;
            }
            1 if !components.is_empty() => {
                // Sidecar change with identical content bytes.
                let idx = rng.gen_range(0..components.len());
                let target = &components[idx];
                let mut rebuilt = Component::new(target.name.clone(), target.content.clone());
                rebuilt.supplier = target.supplier.clone();
                rebuilt.cfg_sidecar = Some(random_cfg(rng, 8));
                components[idx] = rebuilt;
            }
            2 => {
                let name = format!("added{}", rng.gen_range(0..100));
                if !components.iter().any(|c| c.name == name) {
                    components.push(Component::new(name, random_component_content(rng)));
                }
            }
            _ if components.len() > 1 => {
                let idx = rng.gen_range(0..components.len());
                components.remove(idx);
            }
            _ => {}
        }
    }
    FirmwareBundle::new(
        old.name.clone(),
        "2".to_string(),
        old.device_class.clone(),
        components,
    )
    .unwrap()
}
