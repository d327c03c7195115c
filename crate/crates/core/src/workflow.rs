//! Workflow IR: the tool-invocation graph emitted by a builder model.
//!
//! The wire format is a JSON document
//!
//! ```text
//! { "process": "...",
//!   "pipeline": [ {"step": 1, "model": "RES", "input": {...}, "output": {...}},
//!                 ...,
//!                 {"result": ["step1[image]"]} ] }
//! ```
//!
//! where inputs are references (`init[slot]`, `stepK[slot]`), literals, or
//! `null`. Parsing goes through [`crate::lenient`], so the comma and key-less
//! member slips common in hand-written exemplars are accepted.

use std::collections::BTreeSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lenient::{self, Doc};

/// The four value types a tool slot can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SemanticType {
    Image,
    Mask,
    Str,
    Float,
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SemanticType::Image => "Image",
            SemanticType::Mask => "Mask",
            SemanticType::Str => "Str",
            SemanticType::Float => "Float",
        })
    }
}

/// A step input or result entry.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueRef {
    Init { field: String },
    Step { step: usize, field: String },
    Text(String),
    Number(f64),
    Null,
}

impl ValueRef {
    pub fn init(field: impl Into<String>) -> Self {
        ValueRef::Init {
            field: field.into(),
        }
    }

    pub fn step(step: usize, field: impl Into<String>) -> Self {
        ValueRef::Step {
            step,
            field: field.into(),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, ValueRef::Null)
    }

    pub fn step_index(&self) -> Option<usize> {
        match self {
            ValueRef::Step { step, .. } => Some(*step),
            _ => None,
        }
    }
}

impl fmt::Display for ValueRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueRef::Init { field } => write!(f, "init[{field}]"),
            ValueRef::Step { step, field } => write!(f, "step{step}[{field}]"),
            ValueRef::Text(t) => f.write_str(t),
            ValueRef::Number(n) => write!(f, "{}", format_number(*n)),
            ValueRef::Null => f.write_str("null"),
        }
    }
}

fn format_number(n: f64) -> String {
    serde_json::Number::from_f64(n)
        .map(|n| n.to_string())
        .unwrap_or_else(|| "null".to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub index: usize,
    pub model: String,
    pub inputs: IndexMap<String, ValueRef>,
    /// As written by the author. Advisory only: the tool spec decides what a
    /// step actually produces.
    pub declared_outputs: IndexMap<String, String>,
    /// Unrecognised keys, kept for round-tripping.
    pub extra: IndexMap<String, serde_json::Value>,
}

impl Step {
    pub fn new(index: usize, model: impl Into<String>) -> Self {
        Step {
            index,
            model: model.into(),
            inputs: IndexMap::new(),
            declared_outputs: IndexMap::new(),
            extra: IndexMap::new(),
        }
    }

    pub fn with_input(mut self, slot: impl Into<String>, value: ValueRef) -> Self {
        self.inputs.insert(slot.into(), value);
        self
    }

    pub fn with_output(mut self, slot: impl Into<String>) -> Self {
        let slot = slot.into();
        let reference = format!("step{}[{}]", self.index, slot);
        self.declared_outputs.insert(slot, reference);
        self
    }
}

/// Non-fatal oddities noticed while parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseWarning {
    pub step: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Workflow {
    pub process: String,
    pub steps: Vec<Step>,
    pub result: Vec<ValueRef>,
    pub warnings: Vec<ParseWarning>,
}

/// Equality ignores parse warnings.
impl PartialEq for Workflow {
    fn eq(&self, other: &Self) -> bool {
        self.process == other.process && self.steps == other.steps && self.result == other.result
    }
}

impl Workflow {
    pub fn step(&self, index: usize) -> Option<&Step> {
        index.checked_sub(1).and_then(|i| self.steps.get(i))
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Dependency edges between steps: `(i, j)` means step `j` reads an output
/// of step `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepGraph {
    pub vertices: Vec<usize>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl DepGraph {
    pub fn producers(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.1 == j).map(|e| e.0)
    }

    pub fn consumers(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.range((i, 0)..=(i, usize::MAX)).map(|e| e.1)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkflowError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("malformed reference `{0}`")]
    MalformedRef(String),
    #[error("step numbering must be 1..K without gaps: expected {expected}, found {found}")]
    NonConsecutiveSteps { expected: usize, found: i64 },
    #[error("workflow has an empty result")]
    EmptyResult,
    #[error("step {step} references step {target}, which does not precede it")]
    ForwardReference { step: usize, target: usize },
}

fn is_slot_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_decimal(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let (int, frac) = match mantissa.split_once('.') {
        Some((a, b)) => (a, Some(b)),
        None => (mantissa, None),
    };
    let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
    digits(int)
        && frac.is_none_or(digits)
        && exponent.is_none_or(|e| digits(e.strip_prefix(['+', '-']).unwrap_or(e)))
}

/// Does the token start like a reference? Such tokens must parse as one.
fn looks_like_ref(token: &str) -> bool {
    if token.starts_with("init[") {
        return true;
    }
    if let Some(rest) = token.strip_prefix("step") {
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        let after = &rest[digits..];
        return after.starts_with('[') || (digits > 0 && after.contains(']'));
    }
    false
}

/// Parses one reference token: `init[slot]`, `stepK[slot]`, `null`, a decimal
/// number, or free text.
pub fn parse_value_ref(token: &str) -> Result<ValueRef, WorkflowError> {
    let token = token.trim();
    if token == "null" {
        return Ok(ValueRef::Null);
    }
    if looks_like_ref(token) {
        let malformed = || WorkflowError::MalformedRef(token.to_string());
        let open = token.find('[').ok_or_else(malformed)?;
        let inner = token[open + 1..].strip_suffix(']').ok_or_else(malformed)?;
        if !is_slot_name(inner) {
            return Err(malformed());
        }
        let head = &token[..open];
        if head == "init" {
            return Ok(ValueRef::init(inner));
        }
        let digits = head.strip_prefix("step").ok_or_else(malformed)?;
        if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(malformed());
        }
        let step = digits.parse::<usize>().map_err(|_| malformed())?;
        return Ok(ValueRef::step(step, inner));
    }
    if is_decimal(token) {
        if let Ok(v) = token.parse::<f64>() {
            if v.is_finite() {
                return Ok(ValueRef::Number(v));
            }
        }
    }
    Ok(ValueRef::Text(token.to_string()))
}

fn doc_to_ref(doc: &Doc, context: &str) -> Result<ValueRef, WorkflowError> {
    match doc {
        Doc::Str(s) => parse_value_ref(s),
        Doc::Number(n) => Ok(ValueRef::Number(*n)),
        Doc::Null => Ok(ValueRef::Null),
        other => Err(WorkflowError::Syntax(format!(
            "{context}: expected string, number or null, found {}",
            other.kind_name()
        ))),
    }
}

/// Splits `"[a, b]"` at top-level commas.
fn split_bracketed_list(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts.into_iter().map(str::trim).filter(|p| !p.is_empty()).collect()
}

fn parse_result(doc: &Doc) -> Result<Vec<ValueRef>, WorkflowError> {
    match doc {
        Doc::Array(items) => items.iter().map(|d| doc_to_ref(d, "result")).collect(),
        Doc::Str(s) => {
            let t = s.trim();
            match t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                Some(inner) => split_bracketed_list(inner)
                    .into_iter()
                    .map(parse_value_ref)
                    .collect(),
                None if t.is_empty() => Ok(Vec::new()),
                None => Ok(vec![parse_value_ref(t)?]),
            }
        }
        Doc::Null => Ok(Vec::new()),
        other => Err(WorkflowError::Syntax(format!(
            "result: expected list or string, found {}",
            other.kind_name()
        ))),
    }
}

fn parse_step(doc: &Doc, expected: usize, warnings: &mut Vec<ParseWarning>) -> Result<Step, WorkflowError> {
    let Doc::Object(members) = doc else {
        return Err(WorkflowError::Syntax(format!(
            "pipeline element {expected} is a {}, expected object",
            doc.kind_name()
        )));
    };
    let index = match doc.get("step") {
        Some(Doc::Number(n)) if n.fract() == 0.0 => *n as i64,
        Some(Doc::Str(s)) if s.trim().parse::<i64>().is_ok() => s.trim().parse::<i64>().unwrap(),
        Some(_) => return Err(WorkflowError::Syntax(format!("element {expected}: `step` must be an integer"))),
        None => return Err(WorkflowError::Syntax(format!("element {expected}: missing `step`"))),
    };
    if index != expected as i64 {
        return Err(WorkflowError::NonConsecutiveSteps {
            expected,
            found: index,
        });
    }
    let model = match doc.get("model") {
        Some(Doc::Str(s)) => s.trim().to_string(),
        _ => return Err(WorkflowError::Syntax(format!("step {expected}: `model` must be a string"))),
    };
    let mut step = Step::new(expected, model);

    for member in members {
        let Some(key) = member.key.as_deref() else {
            return Err(WorkflowError::Syntax(format!("step {expected}: key-less member")));
        };
        match key {
            "step" | "model" => {}
            "input" => {
                let Doc::Object(inputs) = &member.value else {
                    return Err(WorkflowError::Syntax(format!("step {expected}: `input` must be an object")));
                };
                for m in inputs {
                    let slot = m.key.as_deref().ok_or_else(|| {
                        WorkflowError::Syntax(format!("step {expected}: key-less input"))
                    })?;
                    let value = doc_to_ref(&m.value, &format!("step {expected} input `{slot}`"))?;
                    if let ValueRef::Step { step: target, .. } = value {
                        if target >= expected {
                            return Err(WorkflowError::ForwardReference {
                                step: expected,
                                target,
                            });
                        }
                    }
                    step.inputs.insert(slot.to_string(), value);
                }
            }
            "output" => parse_outputs(&member.value, &mut step, warnings)?,
            other => {
                step.extra.insert(other.to_string(), member.value.to_json());
            }
        }
    }
    Ok(step)
}

fn parse_outputs(doc: &Doc, step: &mut Step, warnings: &mut Vec<ParseWarning>) -> Result<(), WorkflowError> {
    let index = step.index;
    let members = match doc {
        Doc::Object(m) => m,
        Doc::Null => return Ok(()),
        other => {
            return Err(WorkflowError::Syntax(format!(
                "step {index}: `output` must be an object, found {}",
                other.kind_name()
            )))
        }
    };
    for m in members {
        let Doc::Str(reference) = &m.value else {
            return Err(WorkflowError::Syntax(format!("step {index}: output values must be strings")));
        };
        let parsed = parse_value_ref(reference).ok();
        match &m.key {
            Some(key) => {
                let consistent = matches!(&parsed, Some(ValueRef::Step { step: s, field }) if *s == index && field == key);
                if !consistent {
                    warnings.push(ParseWarning {
                        step: index,
                        message: format!("declared output `{key}` is labelled `{reference}`"),
                    });
                }
                step.declared_outputs.insert(key.clone(), reference.clone());
            }
            None => match parsed {
                Some(ValueRef::Step { step: s, field }) if s == index => {
                    warnings.push(ParseWarning {
                        step: index,
                        message: format!("key-less output `{reference}` read as `{field}`"),
                    });
                    step.declared_outputs.insert(field, reference.clone());
                }
                _ => {
                    return Err(WorkflowError::Syntax(format!(
                        "step {index}: key-less output `{reference}` is not a reference to this step"
                    )))
                }
            },
        }
    }
    Ok(())
}

/// Parses a workflow document.
pub fn parse_workflow(document: &str) -> Result<Workflow, WorkflowError> {
    let doc = lenient::read(document).map_err(|e| WorkflowError::Syntax(e.to_string()))?;
    if !matches!(doc, Doc::Object(_)) {
        return Err(WorkflowError::Syntax(format!("top level is a {}, expected object", doc.kind_name())));
    }
    let process = match doc.get("process") {
        Some(Doc::Str(s)) => s.clone(),
        None | Some(Doc::Null) => String::new(),
        Some(other) => {
            return Err(WorkflowError::Syntax(format!("`process` must be a string, found {}", other.kind_name())))
        }
    };
    let Some(Doc::Array(pipeline)) = doc.get("pipeline") else {
        return Err(WorkflowError::Syntax("missing `pipeline` array".into()));
    };

    let mut warnings = Vec::new();
    let mut steps = Vec::new();
    let mut result = None;
    for element in pipeline {
        if result.is_some() {
            return Err(WorkflowError::Syntax("pipeline elements after `result`".into()));
        }
        if element.get("step").is_none() {
            if let Some(r) = element.get("result") {
                result = Some(parse_result(r)?);
                continue;
            }
        }
        steps.push(parse_step(element, steps.len() + 1, &mut warnings)?);
    }
    let result = result.unwrap_or_default();
    if result.is_empty() {
        return Err(WorkflowError::EmptyResult);
    }
    for r in &result {
        if let ValueRef::Step { step, .. } = r {
            if *step == 0 || *step > steps.len() {
                return Err(WorkflowError::ForwardReference {
                    step: steps.len() + 1,
                    target: *step,
                });
            }
        }
    }
    Ok(Workflow {
        process,
        steps,
        result,
        warnings,
    })
}

fn ref_to_json(r: &ValueRef) -> serde_json::Value {
    match r {
        ValueRef::Number(n) => serde_json::Number::from_f64(*n)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null),
        ValueRef::Null => serde_json::Value::Null,
        other => serde_json::Value::String(other.to_string()),
    }
}

fn json(v: &serde_json::Value) -> String {
    serde_json::to_string(v).expect("JSON values always serialize")
}

fn indent_json(v: &serde_json::Value, indent: &str) -> String {
    let pretty = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    pretty.replace('\n', &format!("\n{indent}"))
}

/// Canonical text form: keys in the order step/model/input/output, declared
/// outputs keyed by slot, and `result` as a proper list.
pub fn serialize_workflow(w: &Workflow) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    out.push_str(&format!("  \"process\": {},\n", json(&w.process.clone().into())));
    out.push_str("  \"pipeline\": [\n");
    for step in &w.steps {
        out.push_str("    {\n");
        out.push_str(&format!("      \"step\": {},\n", step.index));
        out.push_str(&format!("      \"model\": {},\n", json(&step.model.clone().into())));
        write_map(&mut out, "input", step.inputs.iter().map(|(k, v)| (k, ref_to_json(v))));
        out.push_str(",\n");
        write_map(
            &mut out,
            "output",
            step.declared_outputs
                .iter()
                .map(|(k, v)| (k, serde_json::Value::String(v.clone()))),
        );
        for (k, v) in &step.extra {
            out.push_str(&format!(",\n      {}: {}", json(&k.clone().into()), indent_json(v, "      ")));
        }
        out.push_str("\n    },\n");
    }
    let result: Vec<String> = w.result.iter().map(|r| json(&ref_to_json(r))).collect();
    out.push_str(&format!("    {{\n      \"result\": [{}]\n    }}\n", result.join(", ")));
    out.push_str("  ]\n}\n");
    out
}

fn write_map<'a>(out: &mut String, name: &str, entries: impl Iterator<Item = (&'a String, serde_json::Value)>) {
    let body: Vec<String> = entries
        .map(|(k, v)| format!("        {}: {}", json(&k.clone().into()), json(&v)))
        .collect();
    if body.is_empty() {
        out.push_str(&format!("      \"{name}\": {{}}"));
    } else {
        out.push_str(&format!("      \"{name}\": {{\n{}\n      }}", body.join(",\n")));
    }
}

/// Dependency graph induced by step references.
pub fn workflow_graph(w: &Workflow) -> DepGraph {
    let mut edges = BTreeSet::new();
    for step in &w.steps {
        for r in step.inputs.values() {
            if let ValueRef::Step { step: producer, .. } = r {
                edges.insert((*producer, step.index));
            }
        }
    }
    DepGraph {
        vertices: w.steps.iter().map(|s| s.index).collect(),
        edges,
    }
}
