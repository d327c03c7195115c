//! Splitting a workflow into editing chains: one editing tool each, plus the
//! predictive and auxiliary steps that feed it.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::registry::{Registry, ToolKind};
use crate::workflow::{workflow_graph, ValueRef, Workflow};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditChain {
    pub editor: usize,
    /// Ascending step indices.
    pub support: Vec<usize>,
    /// `init[..]` references and outputs of other chains' editors consumed by
    /// this chain, in first-seen order.
    pub inputs_from: Vec<String>,
}

/// Steps whose tool is an editing tool in `registry` start a chain.
pub fn is_chain_forming(w: &Workflow, registry: &Registry, step: usize) -> bool {
    w.step(step)
        .and_then(|s| registry.lookup(&s.model).ok())
        .is_some_and(|t| t.kind == ToolKind::Editing)
}

pub fn decompose_chains(w: &Workflow, registry: &Registry) -> Vec<EditChain> {
    let g = workflow_graph(w);
    let mut chains = Vec::new();
    for s in &w.steps {
        if !is_chain_forming(w, registry, s.index) {
            continue;
        }
        let mut support = BTreeSet::new();
        let mut stack = vec![s.index];
        let mut members = vec![s.index];
        while let Some(v) = stack.pop() {
            for p in g.producers(v) {
                if is_chain_forming(w, registry, p) || !support.insert(p) {
                    continue;
                }
                stack.push(p);
                members.push(p);
            }
        }
        members.sort_unstable();
        let mut inputs_from: Vec<String> = Vec::new();
        for m in &members {
            let Some(step) = w.step(*m) else { continue };
            for r in step.inputs.values() {
                let external = match r {
                    ValueRef::Init { .. } => true,
                    ValueRef::Step { step: p, .. } => is_chain_forming(w, registry, *p),
                    _ => false,
                };
                let text = r.to_string();
                if external && !inputs_from.contains(&text) {
                    inputs_from.push(text);
                }
            }
        }
        chains.push(EditChain {
            editor: s.index,
            support: support.into_iter().collect(),
            inputs_from,
        });
    }
    chains
}
