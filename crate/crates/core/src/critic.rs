//! Meta-edit abstraction of editing chains and the add/remove critics that
//! judge them against an instruction.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::EditChain;
use crate::registry::Registry;
use crate::workflow::{ValueRef, Workflow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verb {
    Add,
    Remove,
    Recolor,
    Restyle,
    ReEnvironment,
    RePose,
    Fill,
    ChangeBackground,
    /// Editing tools without a dedicated verb, e.g. ones registered later.
    Edit,
}

impl Verb {
    pub const ALL: [Verb; 9] = [
        Verb::Add,
        Verb::Remove,
        Verb::Recolor,
        Verb::Restyle,
        Verb::ReEnvironment,
        Verb::RePose,
        Verb::Fill,
        Verb::ChangeBackground,
        Verb::Edit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Add => "add",
            Verb::Remove => "remove",
            Verb::Recolor => "recolor",
            Verb::Restyle => "restyle",
            Verb::ReEnvironment => "re-environment",
            Verb::RePose => "re-pose",
            Verb::Fill => "fill",
            Verb::ChangeBackground => "change-background",
            Verb::Edit => "edit",
        }
    }

    pub fn parse(s: &str) -> Option<Verb> {
        Verb::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Verb plus target; the unit the critics compare.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditKey {
    pub verb: Verb,
    pub target: String,
}

impl EditKey {
    pub fn new(verb: Verb, target: impl Into<String>) -> Self {
        EditKey {
            verb,
            target: target.into(),
        }
    }

    /// Case-folded, whitespace-collapsed form used for equality.
    pub fn canonical(&self) -> (Verb, String) {
        let target = self.target.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        (self.verb, target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaEdit {
    pub verb: Verb,
    pub target: String,
    pub region_provenance: String,
    pub editor_tool: String,
}

impl MetaEdit {
    pub fn key(&self) -> EditKey {
        EditKey::new(self.verb, self.target.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub remove_indices: Vec<usize>,
    pub additions: Vec<EditKey>,
    pub n_add: usize,
    pub n_remove: usize,
}

impl Critique {
    pub fn new(remove_indices: Vec<usize>, additions: Vec<EditKey>) -> Self {
        Critique {
            n_add: additions.len(),
            n_remove: remove_indices.len(),
            remove_indices,
            additions,
        }
    }

    /// Checks the record against the number of judged chains.
    pub fn check(&self, n_chains: usize) -> Result<(), CriticError> {
        if self.n_remove != self.remove_indices.len() || self.n_add != self.additions.len() {
            return Err(CriticError::MalformedCritique("counts disagree with contents".into()));
        }
        let mut seen = BTreeSet::new();
        for &i in &self.remove_indices {
            if i >= n_chains {
                return Err(CriticError::MalformedCritique(format!(
                    "remove index {i} out of range for {n_chains} chains"
                )));
            }
            if !seen.insert(i) {
                return Err(CriticError::MalformedCritique(format!("remove index {i} repeated")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub instruction: String,
    pub required_edits: Vec<EditKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CriticError {
    #[error("critic unavailable: {0}")]
    CriticUnavailable(String),
    #[error("malformed critique: {0}")]
    MalformedCritique(String),
}

pub trait Critic {
    fn critique(&self, meta_edits: &[MetaEdit], instruction: &str) -> Result<Critique, CriticError>;
}

pub fn judge(meta_edits: &[MetaEdit], instruction: &str, critic: &dyn Critic) -> Result<Critique, CriticError> {
    let c = critic.critique(meta_edits, instruction)?;
    c.check(meta_edits.len())?;
    Ok(c)
}

fn prompt_of(w: &Workflow, step: usize) -> Option<String> {
    match w.step(step)?.inputs.get("prompt")? {
        ValueRef::Text(t) => Some(t.clone()),
        _ => None,
    }
}

fn canonical_tool(w: &Workflow, registry: &Registry, step: usize) -> String {
    let model = w.step(step).map(|s| s.model.as_str()).unwrap_or_default();
    registry
        .lookup(model)
        .map(|t| t.canonical_name.clone())
        .unwrap_or_else(|_| model.to_string())
}

pub fn abstract_chain(c: &EditChain, w: &Workflow, registry: &Registry) -> MetaEdit {
    let editor_tool = canonical_tool(w, registry, c.editor);
    let support_tools: Vec<(usize, String)> = c
        .support
        .iter()
        .rev()
        .map(|&s| (s, canonical_tool(w, registry, s)))
        .collect();
    let verb = match editor_tool.as_str() {
        "INPAINT" => Verb::Remove,
        "FILL" if support_tools.iter().any(|(_, t)| t == "ADD-PRED") => Verb::Add,
        "FILL" => Verb::Fill,
        "RCM" => Verb::Recolor,
        "STYLE" => Verb::Restyle,
        "ENV" => Verb::ReEnvironment,
        "POSE" => Verb::RePose,
        "CBG" => Verb::ChangeBackground,
        _ => Verb::Edit,
    };
    let target = std::iter::once(c.editor)
        .chain(support_tools.iter().map(|(s, _)| *s))
        .find_map(|s| prompt_of(w, s))
        .unwrap_or_default();
    let region_provenance = support_tools
        .iter()
        .find_map(|(s, t)| match t.as_str() {
            "RES" => {
                let prompt = w
                    .step(*s)
                    .and_then(|st| st.inputs.get("prompt"))
                    .map(|p| match p {
                        ValueRef::Text(t) => t.clone(),
                        other => other.to_string(),
                    })
                    .unwrap_or_default();
                Some(format!("segmented by '{prompt}'"))
            }
            "SOS" => Some("salient object".to_string()),
            "ADD-PRED" => Some("predicted placement".to_string()),
            _ => None,
        })
        .unwrap_or_else(|| "whole image".to_string());
    MetaEdit {
        verb,
        target,
        region_provenance,
        editor_tool,
    }
}

/// Set-difference critic against a fixed list of required edits.
#[derive(Debug, Clone)]
pub struct MockCritic {
    pub task: TaskSpec,
}

pub fn mock_critic(task: TaskSpec) -> MockCritic {
    MockCritic { task }
}

impl Critic for MockCritic {
    fn critique(&self, meta_edits: &[MetaEdit], _instruction: &str) -> Result<Critique, CriticError> {
        let required: BTreeSet<(Verb, String)> = self.task.required_edits.iter().map(EditKey::canonical).collect();
        let generated: BTreeSet<(Verb, String)> = meta_edits.iter().map(|m| m.key().canonical()).collect();
        let mut flagged = BTreeSet::new();
        let mut remove_indices = Vec::new();
        for (i, m) in meta_edits.iter().enumerate() {
            let k = m.key().canonical();
            if !required.contains(&k) && flagged.insert(k) {
                remove_indices.push(i);
            }
        }
        let mut added = BTreeSet::new();
        let additions = self
            .task
            .required_edits
            .iter()
            .filter(|e| {
                let k = e.canonical();
                !generated.contains(&k) && added.insert(k)
            })
            .cloned()
            .collect();
        Ok(Critique::new(remove_indices, additions))
    }
}

/// Strict decoding of a remote critic's JSON reply.
pub fn parse_critique_response(body: &str, n_chains: usize) -> Result<Critique, CriticError> {
    let bad = |m: String| CriticError::MalformedCritique(m);
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| bad(format!("not JSON: {e}")))?;
    let obj = v.as_object().ok_or_else(|| bad("reply is not an object".into()))?;
    let indices = obj
        .get("remove_indices")
        .ok_or_else(|| bad("missing remove_indices".into()))?
        .as_array()
        .ok_or_else(|| bad("remove_indices is not an array".into()))?;
    let mut remove_indices = Vec::with_capacity(indices.len());
    for i in indices {
        let i = i
            .as_u64()
            .ok_or_else(|| bad(format!("remove index {i} is not a non-negative integer")))?;
        remove_indices.push(usize::try_from(i).map_err(|_| bad(format!("remove index {i} too large")))?);
    }
    let adds = obj
        .get("additions")
        .ok_or_else(|| bad("missing additions".into()))?
        .as_array()
        .ok_or_else(|| bad("additions is not an array".into()))?;
    let mut additions = Vec::with_capacity(adds.len());
    for a in adds {
        let a = a.as_object().ok_or_else(|| bad("addition is not an object".into()))?;
        let verb = a
            .get("verb")
            .and_then(|v| v.as_str())
            .ok_or_else(|| bad("addition without a string verb".into()))?;
        let verb = Verb::parse(verb).ok_or_else(|| bad(format!("unknown verb `{verb}`")))?;
        let target = a
            .get("target")
            .and_then(|v| v.as_str())
            .ok_or_else(|| bad("addition without a string target".into()))?;
        additions.push(EditKey::new(verb, target));
    }
    let c = Critique::new(remove_indices, additions);
    c.check(n_chains)?;
    Ok(c)
}

pub fn critique_request(meta_edits: &[MetaEdit], instruction: &str) -> serde_json::Value {
    serde_json::json!({
        "instruction": instruction,
        "meta_edits": meta_edits,
    })
}

#[cfg(feature = "remote")]
pub use remote::{RemoteCritic, ENDPOINT_VAR, TOKEN_VAR};

#[cfg(feature = "remote")]
mod remote {
    use std::time::Duration;

    use super::*;

    pub const ENDPOINT_VAR: &str = "LEGO_CRITIC_ENDPOINT";
    pub const TOKEN_VAR: &str = "LEGO_CRITIC_TOKEN";

    /// JSON-over-HTTP critic. One retry on transport failure.
    #[derive(Debug, Clone)]
    pub struct RemoteCritic {
        pub endpoint: String,
        pub token: Option<String>,
        pub timeout: Duration,
    }

    impl RemoteCritic {
        pub fn new(endpoint: impl Into<String>) -> Self {
            RemoteCritic {
                endpoint: endpoint.into(),
                token: None,
                timeout: Duration::from_secs(30),
            }
        }

        pub fn from_env() -> Result<Self, CriticError> {
            let endpoint = std::env::var(ENDPOINT_VAR)
                .map_err(|_| CriticError::CriticUnavailable(format!("{ENDPOINT_VAR} is not set")))?;
            let mut c = RemoteCritic::new(endpoint);
            c.token = std::env::var(TOKEN_VAR).ok().filter(|t| !t.is_empty());
            Ok(c)
        }

        pub fn with_token(mut self, token: impl Into<String>) -> Self {
            self.token = Some(token.into());
            self
        }

        pub fn with_timeout(mut self, timeout: Duration) -> Self {
            self.timeout = timeout;
            self
        }

        fn attempt(&self, agent: &ureq::Agent, body: &serde_json::Value) -> Result<String, String> {
            let mut req = agent.post(&self.endpoint).set("Content-Type", "application/json");
            if let Some(t) = &self.token {
                req = req.set("Authorization", &format!("Bearer {t}"));
            }
            let resp = req.send_string(&body.to_string()).map_err(|e| e.to_string())?;
            resp.into_string().map_err(|e| e.to_string())
        }
    }

    impl Critic for RemoteCritic {
        fn critique(&self, meta_edits: &[MetaEdit], instruction: &str) -> Result<Critique, CriticError> {
            let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
            let body = critique_request(meta_edits, instruction);
            let text = match self.attempt(&agent, &body) {
                Ok(t) => t,
                Err(_) => self
                    .attempt(&agent, &body)
                    .map_err(|e| CriticError::CriticUnavailable(format!("{} after retry: {e}", self.endpoint)))?,
            };
            parse_critique_response(&text, meta_edits.len())
        }
    }
}
