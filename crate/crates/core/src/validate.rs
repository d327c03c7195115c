//! Static executability check of a workflow against a registry.
//!
//! Nullness is tracked exactly: an output with `present_if` inputs exists
//! only when one of those inputs is non-null, and that is known statically
//! because every input is a literal, an init slot or another step's output.

use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;
use serde::Serialize;

use crate::registry::{check_constraints, Bound, Registry, ToolSpec};
use crate::workflow::{SemanticType, ValueRef, Workflow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum DiagnosticCode {
    NonConsecutiveSteps,
    UnknownTool,
    ForwardReference,
    UnresolvedRef,
    TypeMismatch,
    ConstraintViolation,
    EmptyResult,
    BadResultType,
    OutputKeyMismatch,
    RedundantStep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    /// `None` for findings about the result list.
    pub step: Option<usize>,
    #[serde(rename = "ref", skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub executable: bool,
    pub errors: Vec<Diagnostic>,
    pub warnings: Vec<Diagnostic>,
    pub inferred_types: BTreeMap<String, SemanticType>,
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn has_error(&self, code: DiagnosticCode) -> bool {
        self.errors.iter().any(|d| d.code == code)
    }

    pub fn has_warning(&self, code: DiagnosticCode) -> bool {
        self.warnings.iter().any(|d| d.code == code)
    }
}

/// `{"image": Image}`, the usual single-image input.
pub fn default_init_slots() -> BTreeMap<String, SemanticType> {
    BTreeMap::from([("image".to_string(), SemanticType::Image)])
}

/// What is statically known about one produced value.
#[derive(Debug, Clone, Copy)]
enum Produced {
    Known { ty: SemanticType, present: bool },
}

enum Resolved {
    Typed { ty: SemanticType, null: bool, text: Option<String> },
    Null,
    Opaque,
}

struct Checker<'a> {
    w: &'a Workflow,
    registry: &'a Registry,
    init: &'a BTreeMap<String, SemanticType>,
    errors: Vec<Diagnostic>,
    warnings: Vec<Diagnostic>,
    inferred: BTreeMap<String, SemanticType>,
    /// Outputs of each step by slot; `None` when the step's tool is unknown.
    outputs: HashMap<usize, Option<IndexMap<String, Produced>>>,
}

impl<'a> Checker<'a> {
    fn error(&mut self, code: DiagnosticCode, step: Option<usize>, reference: Option<&ValueRef>, message: String) {
        self.errors.push(Diagnostic {
            code,
            step,
            reference: reference.map(ToString::to_string),
            message,
        });
    }

    fn warn(&mut self, code: DiagnosticCode, step: Option<usize>, reference: Option<&ValueRef>, message: String) {
        self.warnings.push(Diagnostic {
            code,
            step,
            reference: reference.map(ToString::to_string),
            message,
        });
    }

    /// Resolves a reference made from `at` (a step index, or `None` for the
    /// result list). Reports unresolved and forward references.
    fn resolve(&mut self, at: Option<usize>, r: &ValueRef) -> Resolved {
        match r {
            ValueRef::Null => Resolved::Null,
            ValueRef::Text(t) => Resolved::Typed {
                ty: SemanticType::Str,
                null: false,
                text: Some(t.clone()),
            },
            ValueRef::Number(_) => Resolved::Typed {
                ty: SemanticType::Float,
                null: false,
                text: None,
            },
            ValueRef::Init { field } => match self.init.get(field) {
                Some(ty) => {
                    self.inferred.insert(r.to_string(), *ty);
                    Resolved::Typed {
                        ty: *ty,
                        null: false,
                        text: None,
                    }
                }
                None => {
                    self.error(DiagnosticCode::UnresolvedRef, at, Some(r), format!("no initial input named `{field}`"));
                    Resolved::Opaque
                }
            },
            ValueRef::Step { step, field } => {
                if at.is_some_and(|j| *step >= j) || *step == 0 || *step > self.w.steps.len() {
                    self.error(
                        DiagnosticCode::ForwardReference,
                        at,
                        Some(r),
                        format!("step {step} does not precede this reference"),
                    );
                    return Resolved::Opaque;
                }
                match self.outputs.get(step) {
                    Some(Some(outs)) => match outs.get(field).copied() {
                        Some(Produced::Known { ty, present }) => {
                            self.inferred.insert(r.to_string(), ty);
                            Resolved::Typed {
                                ty,
                                null: !present,
                                text: None,
                            }
                        }
                        None => {
                            let tool = self.w.step(*step).map(|s| s.model.clone()).unwrap_or_default();
                            self.error(
                                DiagnosticCode::UnresolvedRef,
                                at,
                                Some(r),
                                format!("{tool} has no output `{field}`"),
                            );
                            Resolved::Opaque
                        }
                    },
                    _ => Resolved::Opaque,
                }
            }
        }
    }

    fn check_step(&mut self, position: usize) {
        let step = &self.w.steps[position];
        let j = step.index;
        let tool: ToolSpec = match self.registry.lookup(&step.model) {
            Ok(t) => t.clone(),
            Err(_) => {
                self.error(DiagnosticCode::UnknownTool, Some(j), None, format!("unknown tool `{}`", step.model));
                // still look at references so forward/unresolved refs are reported
                for r in step.inputs.values() {
                    self.resolve(Some(j), r);
                }
                self.outputs.insert(j, None);
                return;
            }
        };

        let expanded = tool.expand_inputs(&step.inputs);
        let mut bounds: IndexMap<String, Bound> = IndexMap::new();
        for (slot, r) in &expanded {
            let resolved = self.resolve(Some(j), r);
            let Some(spec) = tool.input(slot) else {
                self.error(
                    DiagnosticCode::TypeMismatch,
                    Some(j),
                    Some(r),
                    format!("{} has no input `{slot}`", tool.canonical_name),
                );
                continue;
            };
            let bound = match resolved {
                Resolved::Opaque => Bound::Present,
                Resolved::Null => Bound::Null,
                Resolved::Typed { null: true, .. } => Bound::Null,
                Resolved::Typed { ty, text, .. } => {
                    if ty != spec.ty {
                        if ty == SemanticType::Float && spec.ty == SemanticType::Str && matches!(r, ValueRef::Number(_)) {
                            self.warn(
                                DiagnosticCode::TypeMismatch,
                                Some(j),
                                Some(r),
                                format!("number for Str slot `{slot}` is used as text"),
                            );
                        } else {
                            self.error(
                                DiagnosticCode::TypeMismatch,
                                Some(j),
                                Some(r),
                                format!("`{slot}` expects {} but `{r}` is {ty}", spec.ty),
                            );
                        }
                    }
                    text.map_or(Bound::Present, Bound::Text)
                }
            };
            if bound.is_null() && !spec.nullable {
                let why = if r.is_null() { "is null".to_string() } else { format!("receives `{r}`, which is never produced here") };
                self.error(
                    DiagnosticCode::TypeMismatch,
                    Some(j),
                    Some(r),
                    format!("`{slot}` is not nullable but {why}"),
                );
            }
            bounds.insert(slot.clone(), bound);
        }
        for spec in &tool.inputs {
            if !spec.nullable && !expanded.contains_key(&spec.name) {
                self.error(
                    DiagnosticCode::TypeMismatch,
                    Some(j),
                    None,
                    format!("required input `{}` ({}) is missing", spec.name, spec.ty),
                );
            }
        }
        for v in check_constraints(&tool, &bounds) {
            self.error(DiagnosticCode::ConstraintViolation, Some(j), None, v.message);
        }

        let mut produced = IndexMap::new();
        for o in &tool.outputs {
            let present = o.present_if.is_empty()
                || o.present_if.iter().any(|s| bounds.get(s).is_some_and(|b| !b.is_null()));
            produced.insert(o.name.clone(), Produced::Known { ty: o.ty, present });
        }
        self.outputs.insert(j, Some(produced));

        for (key, label) in &step.declared_outputs {
            let expected = format!("step{j}[{key}]");
            if tool.output(key).is_none() {
                self.warn(
                    DiagnosticCode::OutputKeyMismatch,
                    Some(j),
                    None,
                    format!("{} has no output `{key}` (declared as `{label}`)", tool.canonical_name),
                );
            } else if *label != expected {
                self.warn(
                    DiagnosticCode::OutputKeyMismatch,
                    Some(j),
                    None,
                    format!("output `{key}` is labelled `{label}`, expected `{expected}`"),
                );
            }
        }
    }

    fn check_result(&mut self) {
        if self.w.result.is_empty() {
            self.error(DiagnosticCode::EmptyResult, None, None, "result list is empty".into());
            return;
        }
        for r in self.w.result.clone() {
            match self.resolve(None, &r) {
                Resolved::Null | Resolved::Typed { null: true, .. } => self.error(
                    DiagnosticCode::UnresolvedRef,
                    None,
                    Some(&r),
                    format!("result `{r}` has no value"),
                ),
                Resolved::Typed { ty, .. } if !matches!(r, ValueRef::Init { .. } | ValueRef::Step { .. }) => self.warn(
                    DiagnosticCode::BadResultType,
                    None,
                    Some(&r),
                    format!("result `{r}` is a {ty} literal, not an image"),
                ),
                Resolved::Typed { ty, .. } if ty != SemanticType::Image => self.warn(
                    DiagnosticCode::BadResultType,
                    None,
                    Some(&r),
                    format!("result `{r}` is a {ty}, not an image"),
                ),
                _ => {}
            }
        }
    }

    fn check_redundancy(&mut self) {
        let mut used = vec![false; self.w.steps.len() + 1];
        let refs = self
            .w
            .steps
            .iter()
            .flat_map(|s| s.inputs.values())
            .chain(self.w.result.iter());
        for r in refs {
            if let Some(k) = r.step_index() {
                if k < used.len() {
                    used[k] = true;
                }
            }
        }
        for step in &self.w.steps {
            let known = matches!(self.outputs.get(&step.index), Some(Some(_)));
            if known && !used[step.index] {
                self.warnings.push(Diagnostic {
                    code: DiagnosticCode::RedundantStep,
                    step: Some(step.index),
                    reference: None,
                    message: format!("no output of step {} ({}) is used", step.index, step.model),
                });
            }
        }
    }
}

fn sort_key(d: &Diagnostic) -> (usize, DiagnosticCode, String, String) {
    (
        d.step.unwrap_or(usize::MAX),
        d.code,
        d.reference.clone().unwrap_or_default(),
        d.message.clone(),
    )
}

/// Decides whether `w` can run against `registry` given the types of the
/// initial inputs. Never fails; every finding lands in the report.
pub fn validate_workflow(
    w: &Workflow,
    registry: &Registry,
    init_slots: &BTreeMap<String, SemanticType>,
) -> ValidationReport {
    let mut c = Checker {
        w,
        registry,
        init: init_slots,
        errors: Vec::new(),
        warnings: Vec::new(),
        inferred: BTreeMap::new(),
        outputs: HashMap::new(),
    };
    for (pos, step) in w.steps.iter().enumerate() {
        if step.index != pos + 1 {
            c.error(
                DiagnosticCode::NonConsecutiveSteps,
                Some(step.index),
                None,
                format!("step at position {} is numbered {}", pos + 1, step.index),
            );
        }
    }
    for pos in 0..w.steps.len() {
        c.check_step(pos);
    }
    c.check_result();
    c.check_redundancy();

    let mut errors = c.errors;
    let mut warnings = c.warnings;
    errors.sort_by_key(sort_key);
    errors.dedup();
    warnings.sort_by_key(sort_key);
    warnings.dedup();
    ValidationReport {
        executable: errors.is_empty(),
        errors,
        warnings,
        inferred_types: c.inferred,
    }
}
