//! Layered graph matching between a generated workflow and a reference
//! workflow, and the similarity reward built on it.
//!
//! Nodes are layered by depth (longest path to a sink step, sinks at 0) and
//! only nodes of equal depth may be paired. Within a layer the pairing is a
//! maximum-weight assignment over node similarity; pairs scoring below the
//! threshold are discarded afterwards.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::Serialize;

use crate::hungarian::hungarian_assign;
use crate::registry::Registry;
use crate::workflow::{workflow_graph, ValueRef, Workflow};

pub const MATCH_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub step: usize,
    /// Canonical tool name when the registry knows the tool, otherwise the
    /// name as written.
    pub tool: String,
    pub inputs: IndexMap<String, ValueRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredGraph {
    pub nodes: Vec<Node>,
    pub depth: BTreeMap<usize, usize>,
}

impl LayeredGraph {
    pub fn build(w: &Workflow, registry: &Registry) -> Self {
        let nodes = w
            .steps
            .iter()
            .map(|s| Node {
                step: s.index,
                tool: registry
                    .lookup(&s.model)
                    .map(|t| t.canonical_name.clone())
                    .unwrap_or_else(|_| s.model.clone()),
                inputs: s.inputs.clone(),
            })
            .collect();
        LayeredGraph {
            nodes,
            depth: node_depths(w),
        }
    }

    pub fn max_depth(&self) -> usize {
        self.depth.values().copied().max().unwrap_or(0)
    }

    pub fn layer(&self, d: usize) -> Vec<&Node> {
        self.nodes.iter().filter(|n| self.depth.get(&n.step) == Some(&d)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedPair {
    pub generated: usize,
    pub reference: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub generated_nodes: usize,
    pub reference_nodes: usize,
}

impl MatchResult {
    pub fn denominator(&self) -> usize {
        self.generated_nodes.max(self.reference_nodes)
    }

    fn partner_of(&self, generated: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.generated == generated).map(|p| p.reference)
    }
}

/// Longest path (in edges) from each step to a step that no other step
/// consumes.
pub fn node_depths(w: &Workflow) -> BTreeMap<usize, usize> {
    let g = workflow_graph(w);
    let mut depth = BTreeMap::new();
    // consumers always have larger indices, so walk backwards
    for &v in g.vertices.iter().rev() {
        let d = g
            .consumers(v)
            .map(|c| depth.get(&c).copied().unwrap_or(0) + 1)
            .max()
            .unwrap_or(0);
        depth.insert(v, d);
    }
    depth
}

fn normalize_text(t: &str) -> String {
    t.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn identical(a: &ValueRef, b: &ValueRef, matched: &MatchResult) -> bool {
    match (a, b) {
        (ValueRef::Text(x), ValueRef::Text(y)) => normalize_text(x) == normalize_text(y),
        (ValueRef::Null, ValueRef::Null) => true,
        (ValueRef::Number(x), ValueRef::Number(y)) => (x - y).abs() <= 1e-9,
        (ValueRef::Init { field: f }, ValueRef::Init { field: g }) => f == g,
        (ValueRef::Step { step: s, field: f }, ValueRef::Step { step: t, field: g }) => {
            f == g && matched.partner_of(*s) == Some(*t)
        }
        _ => false,
    }
}

/// Mean of "same tool" and "share of identical parameters" over the union of
/// both nodes' bound input slots. Step references count as identical only
/// when their producers are already matched to each other.
pub fn node_similarity(a: &Node, b: &Node, matched_so_far: &MatchResult) -> f64 {
    let same_tool = if a.tool == b.tool { 1.0 } else { 0.0 };
    let mut union: Vec<&String> = a.inputs.keys().collect();
    for k in b.inputs.keys() {
        if !a.inputs.contains_key(k) {
            union.push(k);
        }
    }
    let share = if union.is_empty() {
        1.0
    } else {
        let same = union
            .iter()
            .filter(|k| match (a.inputs.get(k.as_str()), b.inputs.get(k.as_str())) {
                (Some(x), Some(y)) => identical(x, y, matched_so_far),
                _ => false,
            })
            .count();
        same as f64 / union.len() as f64
    };
    0.5 * same_tool + 0.5 * share
}

/// Matches with an explicit threshold and registry (for alias folding).
pub fn match_workflows_with(g: &Workflow, gt: &Workflow, registry: &Registry, threshold: f64) -> MatchResult {
    let lg = LayeredGraph::build(g, registry);
    let lt = LayeredGraph::build(gt, registry);
    let mut result = MatchResult {
        pairs: Vec::new(),
        generated_nodes: g.steps.len(),
        reference_nodes: gt.steps.len(),
    };
    // deepest layer first: producers are paired before the consumers whose
    // references depend on that pairing
    let top = lg.max_depth().max(lt.max_depth());
    for d in (0..=top).rev() {
        let rows = lg.layer(d);
        let cols = lt.layer(d);
        if rows.is_empty() || cols.is_empty() {
            continue;
        }
        let score: Vec<Vec<f64>> = rows
            .iter()
            .map(|a| cols.iter().map(|b| node_similarity(a, b, &result)).collect())
            .collect();
        let accepted: Vec<MatchedPair> = hungarian_assign(&score)
            .into_iter()
            .filter(|&(r, c)| score[r][c] >= threshold)
            .map(|(r, c)| MatchedPair {
                generated: rows[r].step,
                reference: cols[c].step,
                similarity: score[r][c],
            })
            .collect();
        result.pairs.extend(accepted);
    }
    result
}

pub fn match_workflows(g: &Workflow, gt: &Workflow) -> MatchResult {
    match_workflows_with(g, gt, &Registry::default_tools(), MATCH_THRESHOLD)
}

/// Half node coverage, half mean similarity of matched pairs; zero when
/// nothing matches.
pub fn reward_from_match(m: &MatchResult) -> f64 {
    if m.pairs.is_empty() || m.denominator() == 0 {
        return 0.0;
    }
    let k = m.pairs.len() as f64;
    let coverage = k / m.denominator() as f64;
    let mean_sim = m.pairs.iter().map(|p| p.similarity).sum::<f64>() / k;
    0.5 * coverage + 0.5 * mean_sim
}

pub fn similarity_reward_with(g: &Workflow, gt: &Workflow, registry: &Registry) -> f64 {
    reward_from_match(&match_workflows_with(g, gt, registry, MATCH_THRESHOLD))
}

pub fn similarity_reward(g: &Workflow, gt: &Workflow) -> f64 {
    reward_from_match(&match_workflows(g, gt))
}
