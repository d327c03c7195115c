//! Declarative tool registry.
//!
//! Tools are described by a JSON document rather than code, so adding a tool
//! is a data change: validation, execution and prompt assembly all read the
//! registry.

use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workflow::{SemanticType, ValueRef};
use crate::exec::Value;

pub const DEFAULT_REGISTRY: &str = include_str!("../assets/default_registry.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToolKind {
    /// Produces masks, regions or captions without touching pixels.
    Predictive,
    /// Modifies pixels. Each editing step seeds one editing chain.
    Editing,
    /// Pixel utilities that support an edit but do not form a chain.
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: SemanticType,
    #[serde(default)]
    pub nullable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: SemanticType,
    /// The output is produced only when at least one of these inputs is
    /// non-null. Empty means always produced.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub present_if: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Constraint {
    /// Exactly one of the two groups carries a non-null value.
    ExactlyOneKind { group_a: Vec<String>, group_b: Vec<String> },
    AllOrNoneNull { slots: Vec<String> },
    RequiresNonNull { slot: String },
    /// Literal text in `slot` must start with `prefix` (case-insensitive).
    PromptPrefix { slot: String, prefix: String },
    PairedNullability { slots: Vec<String> },
}

impl Constraint {
    pub fn slots(&self) -> Vec<&str> {
        match self {
            Constraint::ExactlyOneKind { group_a, group_b } => {
                group_a.iter().chain(group_b).map(String::as_str).collect()
            }
            Constraint::AllOrNoneNull { slots } | Constraint::PairedNullability { slots } => {
                slots.iter().map(String::as_str).collect()
            }
            Constraint::RequiresNonNull { slot } | Constraint::PromptPrefix { slot, .. } => vec![slot],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Constraint::ExactlyOneKind { .. } => "ExactlyOneKind",
            Constraint::AllOrNoneNull { .. } => "AllOrNoneNull",
            Constraint::RequiresNonNull { .. } => "RequiresNonNull",
            Constraint::PromptPrefix { .. } => "PromptPrefix",
            Constraint::PairedNullability { .. } => "PairedNullability",
        }
    }

    /// Human-readable rule, used in the builder prompt.
    pub fn prose(&self) -> String {
        match self {
            Constraint::ExactlyOneKind { group_a, group_b } => format!(
                "Set either {} or {} in one call, never both; the unused group must be null.",
                group_a.join("/"),
                group_b.join("/")
            ),
            Constraint::AllOrNoneNull { slots } => {
                format!("{} must be all null or all set.", slots.join(", "))
            }
            Constraint::RequiresNonNull { slot } => format!("{slot} must not be null."),
            Constraint::PromptPrefix { slot, prefix } => format!("{slot} must start with '{prefix} ...'."),
            Constraint::PairedNullability { slots } => {
                format!("{} must be null together or set together.", slots.join(" and "))
            }
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name(), self.slots().join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    #[serde(rename = "name")]
    pub canonical_name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub kind: ToolKind,
    pub inputs: Vec<SlotSpec>,
    pub outputs: Vec<OutputSpec>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    #[serde(default)]
    pub description: String,
    /// Convenience input names that bind several slots at once, e.g. a
    /// single `ratio` for all four expansion ratios.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub shorthands: IndexMap<String, Vec<String>>,
}

impl ToolSpec {
    pub fn input(&self, name: &str) -> Option<&SlotSpec> {
        self.inputs.iter().find(|s| s.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&OutputSpec> {
        self.outputs.iter().find(|s| s.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }

    /// Expands shorthand inputs into the slots they stand for. Explicitly
    /// bound slots win over a shorthand.
    pub fn expand_inputs<T: Clone>(&self, raw: &IndexMap<String, T>) -> IndexMap<String, T> {
        let mut out = IndexMap::new();
        for (name, value) in raw {
            match self.shorthands.get(name) {
                Some(targets) if self.input(name).is_none() => {
                    for t in targets {
                        if !raw.contains_key(t) {
                            out.insert(t.clone(), value.clone());
                        }
                    }
                }
                _ => {
                    out.insert(name.clone(), value.clone());
                }
            }
        }
        out
    }

    fn check(&self) -> Result<(), RegistryError> {
        if self.canonical_name.trim().is_empty() {
            return Err(RegistryError::Syntax("tool with empty name".into()));
        }
        for (dir, names) in [
            ("input", self.inputs.iter().map(|s| &s.name).collect::<Vec<_>>()),
            ("output", self.outputs.iter().map(|s| &s.name).collect()),
        ] {
            for (i, n) in names.iter().enumerate() {
                if names[..i].contains(n) {
                    return Err(RegistryError::Syntax(format!(
                        "{}: duplicate {dir} slot `{n}`",
                        self.canonical_name
                    )));
                }
            }
        }
        let dangling = |slot: &str| RegistryError::DanglingConstraintSlot {
            tool: self.canonical_name.clone(),
            slot: slot.to_string(),
        };
        for c in &self.constraints {
            if let Some(s) = c.slots().into_iter().find(|s| self.input(s).is_none()) {
                return Err(dangling(s));
            }
        }
        for o in &self.outputs {
            if let Some(s) = o.present_if.iter().find(|s| self.input(s).is_none()) {
                return Err(dangling(s));
            }
        }
        for targets in self.shorthands.values() {
            if let Some(s) = targets.iter().find(|s| self.input(s).is_none()) {
                return Err(dangling(s));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("registry document: {0}")]
    Syntax(String),
    #[error("tool name or alias `{0}` is registered twice")]
    DuplicateTool(String),
    #[error("constraint of {tool} names unknown slot `{slot}`")]
    DanglingConstraintSlot { tool: String, slot: String },
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
}

/// Immutable set of tool specs with alias lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    tools: IndexMap<String, ToolSpec>,
    index: HashMap<String, String>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry::default()
    }

    /// The bundled sixteen-tool library.
    pub fn default_tools() -> Self {
        load_registry(DEFAULT_REGISTRY).expect("bundled registry is valid")
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn tools(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.values()
    }

    pub fn lookup(&self, name: &str) -> Result<&ToolSpec, RegistryError> {
        self.index
            .get(name)
            .and_then(|canonical| self.tools.get(canonical))
            .ok_or_else(|| RegistryError::UnknownTool(name.to_string()))
    }

    fn insert(&mut self, spec: ToolSpec) -> Result<(), RegistryError> {
        spec.check()?;
        let names: Vec<String> = spec.names().map(str::to_string).collect();
        for (i, n) in names.iter().enumerate() {
            if self.index.contains_key(n) || names[..i].contains(n) {
                return Err(RegistryError::DuplicateTool(n.clone()));
            }
        }
        for n in names {
            self.index.insert(n, spec.canonical_name.clone());
        }
        self.tools.insert(spec.canonical_name.clone(), spec);
        Ok(())
    }

    /// Returns a new registry with `spec` added; `self` is untouched.
    pub fn register_tool(&self, spec: ToolSpec) -> Result<Registry, RegistryError> {
        let mut next = self.clone();
        next.insert(spec)?;
        Ok(next)
    }

    pub fn to_document(&self) -> String {
        let specs: Vec<&ToolSpec> = self.tools.values().collect();
        serde_json::to_string_pretty(&specs).expect("tool specs serialize")
    }
}

pub fn load_registry(document: &str) -> Result<Registry, RegistryError> {
    let specs: Vec<ToolSpec> =
        serde_json::from_str(document).map_err(|e| RegistryError::Syntax(e.to_string()))?;
    let mut registry = Registry::empty();
    for spec in specs {
        registry.insert(spec)?;
    }
    Ok(registry)
}

pub fn lookup_tool<'r>(registry: &'r Registry, name: &str) -> Result<&'r ToolSpec, RegistryError> {
    registry.lookup(name)
}

pub fn register_tool(registry: &Registry, spec: ToolSpec) -> Result<Registry, RegistryError> {
    registry.register_tool(spec)
}

/// What constraint checking needs to know about a bound slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Bound {
    Null,
    /// Non-null with known text.
    Text(String),
    /// Non-null, content not known or not textual.
    Present,
}

impl Bound {
    pub fn is_null(&self) -> bool {
        matches!(self, Bound::Null)
    }
}

impl From<&ValueRef> for Bound {
    fn from(r: &ValueRef) -> Self {
        match r {
            ValueRef::Null => Bound::Null,
            ValueRef::Text(t) => Bound::Text(t.clone()),
            _ => Bound::Present,
        }
    }
}

impl From<&Value> for Bound {
    fn from(v: &Value) -> Self {
        match v {
            Value::Nil => Bound::Null,
            Value::Txt(t) => Bound::Text(t.clone()),
            _ => Bound::Present,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConstraintViolation {
    pub constraint: String,
    pub message: String,
}

/// Checks every constraint of `spec`. Absent slots count as null.
pub fn check_constraints(spec: &ToolSpec, bound: &IndexMap<String, Bound>) -> Vec<ConstraintViolation> {
    let null = |slot: &str| bound.get(slot).is_none_or(Bound::is_null);
    let any_set = |slots: &[String]| slots.iter().any(|s| !null(s));
    let mut out = Vec::new();
    for c in &spec.constraints {
        let failure = match c {
            Constraint::ExactlyOneKind { group_a, group_b } => {
                let (a, b) = (any_set(group_a), any_set(group_b));
                (a == b).then(|| {
                    if a {
                        format!("both {} and {} are set", group_a.join("/"), group_b.join("/"))
                    } else {
                        format!("neither {} nor {} is set", group_a.join("/"), group_b.join("/"))
                    }
                })
            }
            Constraint::AllOrNoneNull { slots } | Constraint::PairedNullability { slots } => {
                let set = slots.iter().filter(|s| !null(s)).count();
                (set != 0 && set != slots.len())
                    .then(|| format!("{set} of {} are set; need all or none", slots.join(", ")))
            }
            Constraint::RequiresNonNull { slot } => null(slot).then(|| format!("{slot} is null")),
            Constraint::PromptPrefix { slot, prefix } => match bound.get(slot.as_str()) {
                Some(Bound::Text(t)) if !t.trim_start().to_lowercase().starts_with(&prefix.to_lowercase()) => {
                    Some(format!("{slot} must start with \"{prefix}\""))
                }
                _ => None,
            },
        };
        if let Some(message) = failure {
            out.push(ConstraintViolation {
                constraint: c.name().to_string(),
                message: format!("{}: {message}", spec.canonical_name),
            });
        }
    }
    out
}
