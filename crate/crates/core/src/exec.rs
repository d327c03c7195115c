//! Workflow execution.
//!
//! Steps run in dependency order (lowest ready index first). INVERSE,
//! COMPOSE, RESIZE and BBOX are evaluated in-engine; every other tool is
//! dispatched to a [`Backend`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use crate::raster::{op_bbox, op_compose, op_inverse, op_resize, ImageBuf, MaskBuf, Raster, RasterError};
use crate::registry::{check_constraints, Bound, Registry, ToolSpec};
use crate::workflow::{workflow_graph, DepGraph, SemanticType, ValueRef, Workflow};

/// Runtime value flowing along workflow edges.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Img(ImageBuf),
    Msk(MaskBuf),
    Txt(String),
    Num(f64),
    Nil,
}

impl Value {
    pub fn semantic_type(&self) -> Option<SemanticType> {
        match self {
            Value::Img(_) => Some(SemanticType::Image),
            Value::Msk(_) => Some(SemanticType::Mask),
            Value::Txt(_) => Some(SemanticType::Str),
            Value::Num(_) => Some(SemanticType::Float),
            Value::Nil => None,
        }
    }

    pub fn as_image(&self) -> Option<&ImageBuf> {
        match self {
            Value::Img(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_mask(&self) -> Option<&MaskBuf> {
        match self {
            Value::Msk(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Txt(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Num(n) => Some(*n),
            _ => None,
        }
    }

    pub fn is_nil(&self) -> bool {
        matches!(self, Value::Nil)
    }

    /// Short description for traces.
    pub fn summary(&self) -> String {
        match self {
            Value::Img(i) => format!("image {}x{}", i.width(), i.height()),
            Value::Msk(m) => format!("mask {}x{} ({} set)", m.width(), m.height(), m.count()),
            Value::Txt(t) => format!("text {t:?}"),
            Value::Num(n) => format!("number {n}"),
            Value::Nil => "null".to_string(),
        }
    }
}

impl From<Raster> for Value {
    fn from(r: Raster) -> Self {
        match r {
            Raster::Mask(m) => Value::Msk(m),
            Raster::Image(i) => Value::Img(i),
        }
    }
}

pub type Bindings = IndexMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("no mock rule for tool `{0}`")]
    MockUnsupportedTool(String),
    #[error("{0}")]
    Invalid(String),
}

/// Executes model tools. Implementations must be deterministic in
/// `(tool, inputs, seed)`.
pub trait Backend {
    fn invoke(&self, tool: &ToolSpec, inputs: &Bindings, seed: u64) -> Result<Bindings, BackendError>;
}

/// A backend with no model tools; only the built-in pixel tools can run.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoBackend;

impl Backend for NoBackend {
    fn invoke(&self, tool: &ToolSpec, _: &Bindings, _: u64) -> Result<Bindings, BackendError> {
        Err(BackendError::Invalid(format!("no backend configured for `{}`", tool.canonical_name)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FaultReason {
    BackendError(String),
    ConstraintViolation(String),
    MissingBinding(String),
    TypeMismatch(String),
}

impl fmt::Display for FaultReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultReason::BackendError(m) => write!(f, "backend error: {m}"),
            FaultReason::ConstraintViolation(m) => write!(f, "constraint violation: {m}"),
            FaultReason::MissingBinding(m) => write!(f, "missing binding: {m}"),
            FaultReason::TypeMismatch(m) => write!(f, "type mismatch: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    /// Step index of the failure; 0 when the result list cannot be
    /// materialised.
    Fault { step: usize, reason: FaultReason },
}

impl Status {
    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub tool: String,
    #[serde(skip)]
    pub duration: Duration,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionResult {
    pub results: Vec<Value>,
    pub trace: Vec<TraceRecord>,
    pub status: Status,
}

impl ExecutionResult {
    /// One JSON object per executed step. Durations are left out so that
    /// identical runs produce identical bytes.
    pub fn trace_jsonl(&self, seed: u64) -> String {
        self.trace
            .iter()
            .map(|r| {
                let mut v = serde_json::to_value(r).expect("trace records serialize");
                v["seed"] = seed.into();
                format!("{v}\n")
            })
            .collect()
    }

    /// Writes `result_<i>.ppm|pgm|txt` for each result value plus
    /// `trace.jsonl` into `dir`, returning the paths in write order.
    pub fn write_artifacts(&self, dir: &Path, seed: u64) -> Result<Vec<PathBuf>, RasterError> {
        let io = |e: std::io::Error| RasterError::Io(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        let mut written = Vec::new();
        for (i, v) in self.results.iter().enumerate() {
            let path = match v {
                Value::Img(img) => {
                    let p = dir.join(format!("result_{i}.ppm"));
                    img.write_ppm(BufWriter::new(File::create(&p).map_err(io)?))?;
                    p
                }
                Value::Msk(m) => {
                    let p = dir.join(format!("result_{i}.pgm"));
                    m.write_pgm(BufWriter::new(File::create(&p).map_err(io)?))?;
                    p
                }
                other => {
                    let text = match other {
                        Value::Txt(t) => t.clone(),
                        Value::Num(n) => n.to_string(),
                        _ => "null".to_string(),
                    };
                    let p = dir.join(format!("result_{i}.txt"));
                    fs::write(&p, format!("{text}\n")).map_err(io)?;
                    p
                }
            };
            written.push(path);
        }
        let trace = dir.join("trace.jsonl");
        fs::write(&trace, self.trace_jsonl(seed)).map_err(io)?;
        written.push(trace);
        Ok(written)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("dependency cycle through steps {0:?}")]
    CycleDetected(Vec<usize>),
}

/// Kahn's algorithm; among ready steps the lowest index goes first.
pub fn topological_schedule(g: &DepGraph) -> Result<Vec<usize>, ScheduleError> {
    let mut indegree: HashMap<usize, usize> = g.vertices.iter().map(|v| (*v, 0)).collect();
    for (_, j) in &g.edges {
        *indegree.entry(*j).or_default() += 1;
    }
    let mut ready: BTreeSet<usize> = indegree.iter().filter(|(_, d)| **d == 0).map(|(v, _)| *v).collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for c in g.consumers(v) {
            let d = indegree.get_mut(&c).expect("edge endpoints are vertices");
            *d -= 1;
            if *d == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() < indegree.len() {
        let mut stuck: Vec<usize> = indegree.into_iter().filter(|(_, d)| *d > 0).map(|(v, _)| v).collect();
        stuck.sort_unstable();
        return Err(ScheduleError::CycleDetected(stuck));
    }
    Ok(order)
}

pub const BUILTIN_TOOLS: [&str; 4] = ["INVERSE", "COMPOSE", "RESIZE", "BBOX"];

pub fn is_builtin(name: &str) -> bool {
    BUILTIN_TOOLS.contains(&name)
}

fn type_matches(value: &Value, ty: SemanticType) -> bool {
    value.is_nil() || value.semantic_type() == Some(ty)
}

struct Fault(FaultReason);

impl From<RasterError> for Fault {
    fn from(e: RasterError) -> Self {
        Fault(match e {
            RasterError::KindViolation(m) => FaultReason::ConstraintViolation(m),
            other => FaultReason::BackendError(other.to_string()),
        })
    }
}

fn run_builtin(tool: &ToolSpec, inputs: &Bindings) -> Result<Bindings, Fault> {
    let mask = |k: &str| inputs.get(k).and_then(Value::as_mask);
    let image = |k: &str| inputs.get(k).and_then(Value::as_image);
    let raster = match tool.canonical_name.as_str() {
        "INVERSE" => op_inverse(mask("mask1"), mask("mask2"), image("image1"), image("image2"))?,
        "COMPOSE" => op_compose(mask("mask1"), mask("mask2"), image("image1"), image("image2"))?,
        "RESIZE" => {
            let ratio = inputs.get("ratio").and_then(Value::as_number).ok_or_else(|| {
                Fault(FaultReason::MissingBinding("RESIZE needs a ratio".into()))
            })?;
            op_resize(mask("mask"), image("image"), ratio)?
        }
        "BBOX" => {
            let m = mask("mask").ok_or_else(|| Fault(FaultReason::MissingBinding("BBOX needs a mask".into())))?;
            Raster::Mask(op_bbox(m)?)
        }
        other => unreachable!("`{other}` is not a built-in"),
    };
    let mut out = Bindings::new();
    let (is_mask, value) = match raster {
        Raster::Mask(m) => (true, Value::Msk(m)),
        Raster::Image(i) => (false, Value::Img(i)),
    };
    for o in &tool.outputs {
        let wanted = o.ty == SemanticType::Mask;
        out.insert(o.name.clone(), if wanted == is_mask { value.clone() } else { Value::Nil });
    }
    Ok(out)
}

/// Gathers and checks the inputs of one step.
fn bind_inputs(
    tool: &ToolSpec,
    raw: &IndexMap<String, ValueRef>,
    init: &Bindings,
    store: &HashMap<(usize, String), Value>,
) -> Result<Bindings, Fault> {
    let expanded = tool.expand_inputs(raw);
    let mut bound = Bindings::new();
    for (slot, r) in &expanded {
        let Some(spec) = tool.input(slot) else {
            return Err(Fault(FaultReason::TypeMismatch(format!(
                "{} has no input `{slot}`",
                tool.canonical_name
            ))));
        };
        let value = match r {
            ValueRef::Null => Value::Nil,
            ValueRef::Text(t) => Value::Txt(t.clone()),
            ValueRef::Number(n) if spec.ty == SemanticType::Str => Value::Txt(crate::workflow::ValueRef::Number(*n).to_string()),
            ValueRef::Number(n) => Value::Num(*n),
            ValueRef::Init { field } => init
                .get(field)
                .cloned()
                .ok_or_else(|| Fault(FaultReason::MissingBinding(format!("init[{field}] is not bound"))))?,
            // producers always run first, so an absent entry is a conditional
            // output that was not emitted and reads as null
            ValueRef::Step { step, field } => store.get(&(*step, field.clone())).cloned().unwrap_or(Value::Nil),
        };
        if !type_matches(&value, spec.ty) {
            return Err(Fault(FaultReason::TypeMismatch(format!(
                "`{slot}` expects {} but got {}",
                spec.ty,
                value.summary()
            ))));
        }
        if value.is_nil() && !spec.nullable {
            return Err(Fault(FaultReason::MissingBinding(format!("`{slot}` may not be null"))));
        }
        bound.insert(slot.clone(), value);
    }
    for spec in &tool.inputs {
        if !bound.contains_key(&spec.name) {
            if !spec.nullable {
                return Err(Fault(FaultReason::MissingBinding(format!("`{}` is not provided", spec.name))));
            }
            bound.insert(spec.name.clone(), Value::Nil);
        }
    }
    let bounds: IndexMap<String, Bound> = bound.iter().map(|(k, v)| (k.clone(), Bound::from(v))).collect();
    let violations = check_constraints(tool, &bounds);
    if let Some(v) = violations.first() {
        return Err(Fault(FaultReason::ConstraintViolation(v.message.clone())));
    }
    Ok(bound)
}

/// Runs `w` against `init` (e.g. `{"image": ...}`).
pub fn execute_workflow(
    w: &Workflow,
    registry: &Registry,
    backend: &dyn Backend,
    init: &Bindings,
    seed: u64,
) -> ExecutionResult {
    let mut trace = Vec::new();
    let fault = |trace, step, reason| ExecutionResult {
        results: Vec::new(),
        trace,
        status: Status::Fault { step, reason },
    };
    let order = match topological_schedule(&workflow_graph(w)) {
        Ok(o) => o,
        Err(e) => return fault(trace, 0, FaultReason::MissingBinding(e.to_string())),
    };
    let mut store: HashMap<(usize, String), Value> = HashMap::new();
    for index in order {
        let step = w.step(index).expect("scheduled steps exist");
        let tool = match registry.lookup(&step.model) {
            Ok(t) => t,
            Err(e) => return fault(trace, index, FaultReason::BackendError(e.to_string())),
        };
        let inputs = match bind_inputs(tool, &step.inputs, init, &store) {
            Ok(b) => b,
            Err(Fault(reason)) => return fault(trace, index, reason),
        };
        let started = Instant::now();
        let outputs = if is_builtin(&tool.canonical_name) {
            run_builtin(tool, &inputs)
        } else {
            backend
                .invoke(tool, &inputs, seed)
                .map_err(|e| Fault(FaultReason::BackendError(e.to_string())))
        };
        let outputs = match outputs {
            Ok(o) => o,
            Err(Fault(reason)) => return fault(trace, index, reason),
        };
        let mut summaries = BTreeMap::new();
        for spec in &tool.outputs {
            let value = outputs.get(&spec.name).cloned().unwrap_or(Value::Nil);
            if !type_matches(&value, spec.ty) {
                return fault(
                    trace,
                    index,
                    FaultReason::TypeMismatch(format!("backend returned {} for `{}`", value.summary(), spec.name)),
                );
            }
            summaries.insert(spec.name.clone(), value.summary());
            if !value.is_nil() {
                store.insert((index, spec.name.clone()), value);
            }
        }
        trace.push(TraceRecord {
            step: index,
            tool: tool.canonical_name.clone(),
            duration: started.elapsed(),
            outputs: summaries,
        });
    }

    let mut results = Vec::with_capacity(w.result.len());
    for r in &w.result {
        let value = match r {
            ValueRef::Init { field } => init.get(field).cloned(),
            ValueRef::Step { step, field } => store.get(&(*step, field.clone())).cloned(),
            ValueRef::Text(t) => Some(Value::Txt(t.clone())),
            ValueRef::Number(n) => Some(Value::Num(*n)),
            ValueRef::Null => None,
        };
        match value {
            Some(v) => results.push(v),
            None => return fault(trace, 0, FaultReason::MissingBinding(format!("result `{r}` has no value"))),
        }
    }
    ExecutionResult {
        results,
        trace,
        status: Status::Ok,
    }
}
