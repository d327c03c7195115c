//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! Each export is a thin wrapper over a plain function so the logic stays
//! testable on the host.

use lego_core::exec::{Bindings, Status, Value};
use lego_core::raster::ImageBuf;
use lego_core::toy::{default_toy_tasks, toy_train, TrainConfig};
use lego_core::validate::default_init_slots;
use lego_core::{
    execute_workflow, fixtures, parse_workflow, similarity_reward, validate_workflow, MockBackend, Registry,
};
use wasm_bindgen::prelude::*;

pub const DEMO_SIZE: usize = 96;

/// One rendered result: RGBA pixels ready for `ImageData`.
#[wasm_bindgen]
pub struct Frame {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl Frame {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

#[wasm_bindgen]
pub struct RunOutput {
    summary: String,
    frames: Vec<Frame>,
}

#[wasm_bindgen]
impl RunOutput {
    /// JSON: `{status, fault_step, trace}`.
    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> String {
        self.summary.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, i: usize) -> Option<Frame> {
        self.frames.get(i).map(|f| Frame {
            width: f.width,
            height: f.height,
            rgba: f.rgba.clone(),
        })
    }
}

fn to_frame(v: &Value) -> Option<Frame> {
    match v {
        Value::Img(img) => Some(Frame {
            width: img.width(),
            height: img.height(),
            rgba: img.pixels().chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect(),
        }),
        Value::Msk(m) => Some(Frame {
            width: m.width(),
            height: m.height(),
            rgba: m.bits().iter().flat_map(|&b| if b { [255; 4] } else { [0, 0, 0, 255] }).collect(),
        }),
        _ => None,
    }
}

pub fn example_text(i: usize) -> Option<&'static str> {
    fixtures::ALL.get(i).copied()
}

pub fn validate_text(workflow: &str) -> Result<String, String> {
    let w = parse_workflow(workflow).map_err(|e| e.to_string())?;
    Ok(validate_workflow(&w, &Registry::default_tools(), &default_init_slots()).to_json())
}

pub fn similarity_text(generated: &str, reference: &str) -> Result<f64, String> {
    let g = parse_workflow(generated).map_err(|e| format!("generated: {e}"))?;
    let r = parse_workflow(reference).map_err(|e| format!("reference: {e}"))?;
    Ok(similarity_reward(&g, &r))
}

pub fn run_text(workflow: &str, seed: u64) -> Result<(String, Vec<Frame>), String> {
    let w = parse_workflow(workflow).map_err(|e| e.to_string())?;
    let init = Bindings::from([(
        "image".to_string(),
        Value::Img(ImageBuf::checkerboard(DEMO_SIZE, DEMO_SIZE, 12)),
    )]);
    let run = execute_workflow(&w, &Registry::default_tools(), &MockBackend::new(), &init, seed);
    let trace: Vec<serde_json::Value> = run.trace_jsonl(seed).lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
    let (status, fault_step) = match &run.status {
        Status::Ok => ("ok".to_string(), None),
        Status::Fault { step, reason } => (reason.to_string(), Some(*step)),
    };
    let summary = serde_json::json!({ "status": status, "fault_step": fault_step, "trace": trace });
    Ok((summary.to_string(), run.results.iter().filter_map(to_frame).collect()))
}

pub fn train_text(iterations: usize, group_size: usize, seed: u64) -> Result<String, String> {
    let cfg = TrainConfig {
        iterations,
        group_size,
        seed,
        ..TrainConfig::default()
    };
    toy_train(&default_toy_tasks(), &Registry::default_tools(), &cfg)
        .map(|r| r.to_csv())
        .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn example(i: usize) -> Option<String> {
    example_text(i).map(str::to_string)
}

#[wasm_bindgen]
pub fn validate(workflow: &str) -> Result<String, JsError> {
    validate_text(workflow).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn similarity(generated: &str, reference: &str) -> Result<f64, JsError> {
    similarity_text(generated, reference).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn run(workflow: &str, seed: u32) -> Result<RunOutput, JsError> {
    let (summary, frames) = run_text(workflow, seed.into()).map_err(|e| JsError::new(&e))?;
    Ok(RunOutput { summary, frames })
}

/// Reward curve CSV for the bundled toy tasks.
#[wasm_bindgen]
pub fn train_toy(iterations: usize, group_size: usize, seed: u32) -> Result<String, JsError> {
    train_text(iterations, group_size, seed.into()).map_err(|e| JsError::new(&e))
}
