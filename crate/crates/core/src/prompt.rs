//! Builder prompt assembly: task framing, the tool library rendered from the
//! registry, worked workflow examples and the closing instruction line.

use std::fmt::Write;

use thiserror::Error;

use crate::fixtures;
use crate::registry::{Registry, ToolKind, ToolSpec};
use crate::workflow::{parse_workflow, serialize_workflow, Workflow};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("the registry has no tools")]
    EmptyRegistry,
}

const FRAMING: &str = "\
You compose image-editing workflows out of the model tools listed below.
Reply with a short plan followed by a JSON workflow.

How to call tools:
- Number steps consecutively from 1. Each step names one tool in `model`.
- Inputs are `init[image]` for the user's image, `stepK[slot]` for an output of an earlier step K, a literal, or null.
- A step may only use outputs of steps that come before it.
- Slot types must match: Image, Mask, Str or Float.
- The last pipeline entry is {\"result\": [...]} listing the images to return.
";

const CLOSING: &str = "Now, I give you the image and the user instruction: ";

fn render_tool(out: &mut String, t: &ToolSpec) {
    let _ = writeln!(out, "- {}: {}", t.canonical_name, t.description);
    let inputs: Vec<String> = t
        .inputs
        .iter()
        .map(|s| {
            if s.nullable {
                format!("{} ({}, may be null)", s.name, s.ty)
            } else {
                format!("{} ({})", s.name, s.ty)
            }
        })
        .collect();
    let outputs: Vec<String> = t.outputs.iter().map(|o| format!("{} ({})", o.name, o.ty)).collect();
    let _ = writeln!(out, "  inputs: {}", inputs.join(", "));
    let _ = writeln!(out, "  outputs: {}", outputs.join(", "));
    for (short, slots) in &t.shorthands {
        let _ = writeln!(out, "  `{short}` sets {} at once.", slots.join(", "));
    }
    for c in &t.constraints {
        let _ = writeln!(out, "  rule: {}", c.prose());
    }
}

/// The three bundled examples paired with their own process text.
pub fn default_examples() -> Vec<(String, Workflow)> {
    fixtures::ALL
        .iter()
        .map(|doc| {
            let w = parse_workflow(doc).expect("bundled example parses");
            (w.process.clone(), w)
        })
        .collect()
}

pub fn assemble_builder_prompt(
    registry: &Registry,
    examples: &[(String, Workflow)],
    instruction: &str,
) -> Result<String, PromptError> {
    if registry.is_empty() {
        return Err(PromptError::EmptyRegistry);
    }
    let mut out = String::from(FRAMING);
    out.push_str("\nModel library\n");
    for (kind, header) in [
        (ToolKind::Predictive, "PREDICT"),
        (ToolKind::Editing, "EDIT"),
        (ToolKind::Auxiliary, "AUXILIARY"),
    ] {
        let tools: Vec<&ToolSpec> = registry.tools().filter(|t| t.kind == kind).collect();
        if tools.is_empty() {
            continue;
        }
        let _ = writeln!(out, "\n{header}:");
        for t in tools {
            render_tool(&mut out, t);
        }
    }
    for (i, (text, w)) in examples.iter().enumerate() {
        let _ = write!(out, "\nActual example{}:\nInstruction: {}\n{}\n", i + 1, text, serialize_workflow(w));
    }
    let _ = write!(out, "\n{CLOSING}{instruction}\n");
    Ok(out)
}
