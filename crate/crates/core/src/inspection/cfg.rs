//! Control-flow sidecar graphs attached to firmware components.
//!
//! Desk-scale stand-in for real binary lifting: detectors work on explicit
//! node/edge graphs with `entry`, `auth-check`, and `privileged` labels plus
//! comparison-with-static-data sites. Graphs may be cyclic; all analyses are
//! visited-set reachability and terminate regardless.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::hex_vec;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed graph: {0}")]
pub struct MalformedGraph(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeLabel {
    #[serde(rename = "entry")]
    Entry,
    #[serde(rename = "auth-check")]
    AuthCheck,
    #[serde(rename = "privileged")]
    Privileged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfgNode {
    pub id: String,
    #[serde(default)]
    pub labels: BTreeSet<NodeLabel>,
}

/// A comparison-with-static-data site: node plus the literal it compares
/// against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticCompare {
    pub node: String,
    #[serde(rename = "literal_hex", with = "hex_vec")]
    pub literal: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlFlowGraph {
    pub nodes: Vec<CfgNode>,
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub static_compares: Vec<StaticCompare>,
}

impl ControlFlowGraph {
    pub fn from_json(text: &str) -> Result<Self, MalformedGraph> {
        let cfg: ControlFlowGraph =
            serde_json::from_str(text).map_err(|e| MalformedGraph(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check the structural invariants: exactly one entry node, unique node
    /// ids, edges and compare sites referencing existing nodes.
    pub fn validate(&self) -> Result<(), MalformedGraph> {
        let mut ids = HashSet::new();
        for node in &self.nodes {
            if !ids.insert(node.id.as_str()) {
                return Err(MalformedGraph(format!("duplicate node id {}", node.id)));
            }
        }
        let entries = self
            .nodes
            .iter()
            .filter(|n| n.labels.contains(&NodeLabel::Entry))
            .count();
        if entries != 1 {
            return Err(MalformedGraph(format!(
                "expected exactly one entry node, found {entries}"
            )));
        }
        for (from, to) in &self.edges {
            if !ids.contains(from.as_str()) || !ids.contains(to.as_str()) {
                return Err(MalformedGraph(format!("edge {from} -> {to} references unknown node")));
            }
        }
        for site in &self.static_compares {
            if !ids.contains(site.node.as_str()) {
                return Err(MalformedGraph(format!(
                    "static compare references unknown node {}",
                    site.node
                )));
            }
        }
        Ok(())
    }

    /// Compile adjacency for the analyses. Must be called on a validated graph.
    pub(crate) fn compiled(&self) -> CompiledGraph<'_> {
        let index: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut successors = vec![Vec::new(); self.nodes.len()];
        for (from, to) in &self.edges {
            successors[index[from.as_str()]].push(index[to.as_str()]);
        }
        let entry = self
            .nodes
            .iter()
            .position(|n| n.labels.contains(&NodeLabel::Entry))
            .expect("validated graph has an entry node");
        CompiledGraph {
            graph: self,
            index,
            successors,
            entry,
        }
    }
}

pub(crate) struct CompiledGraph<'a> {
    pub graph: &'a ControlFlowGraph,
    pub index: HashMap<&'a str, usize>,
    pub successors: Vec<Vec<usize>>,
    pub entry: usize,
}

impl CompiledGraph<'_> {
    pub fn node_count(&self) -> usize {
        self.graph.nodes.len()
    }

    pub fn id(&self, node: usize) -> &str {
        &self.graph.nodes[node].id
    }

    pub fn has_label(&self, node: usize, label: NodeLabel) -> bool {
        self.graph.nodes[node].labels.contains(&label)
    }

    /// Nodes reachable from `start`, never entering a node for which `banned`
    /// holds (including `start` itself). Plain BFS, safe on cycles.
    pub fn reachable_avoiding(
        &self,
        start: usize,
        banned: impl Fn(usize) -> bool,
    ) -> HashSet<usize> {
        let mut visited = HashSet::new();
        if banned(start) {
            return visited;
        }
        let mut queue = VecDeque::from([start]);
        visited.insert(start);
        while let Some(node) = queue.pop_front() {
            for &next in &self.successors[node] {
                if !banned(next) && visited.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        visited
    }

    /// BFS witness path from `start` to `target` through allowed nodes, as
    /// node ids. Deterministic: successors are explored in edge order.
    pub fn witness_path(
        &self,
        start: usize,
        target: usize,
        banned: impl Fn(usize) -> bool,
    ) -> Option<Vec<String>> {
        if banned(start) {
            return None;
        }
        let mut parent: HashMap<usize, usize> = HashMap::new();
        let mut visited = HashSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == target {
                let mut path = vec![node];
                let mut cur = node;
                while let Some(&p) = parent.get(&cur) {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path.into_iter().map(|n| self.id(n).to_string()).collect());
            }
            for &next in &self.successors[node] {
                if !banned(next) && visited.insert(next) {
                    parent.insert(next, node);
                    queue.push_back(next);
                }
            }
        }
        None
    }
}
