//! Deterministic stand-ins for the model tools.
//!
//! Every output is a function of the tool name, the textual and numeric
//! inputs, the input canvas size and the seed, so identical calls give
//! identical buffers. The shapes are crude on purpose: they only need to be
//! plausible enough to drive the engine and the rewards.

use sha2::{Digest, Sha256};

use crate::exec::{Backend, BackendError, Bindings, Value};
use crate::raster::{ImageBuf, MaskBuf};
use crate::registry::ToolSpec;

/// Mock rules for the bundled tools, plus any `extra` editing tools that
/// should behave like a whole-image recolor.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    extra_editors: Vec<String>,
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend::default()
    }

    /// Treats `tool` as a generic editor: recolor the masked region, or the
    /// whole image when no mask is bound.
    pub fn with_editor(mut self, tool: impl Into<String>) -> Self {
        self.extra_editors.push(tool.into());
        self
    }
}

/// 32 bytes of hash over everything that determines a mock output.
fn digest(tool: &ToolSpec, inputs: &Bindings, seed: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(tool.canonical_name.as_bytes());
    h.update([0]);
    let mut keys: Vec<&String> = inputs.keys().collect();
    keys.sort();
    for k in keys {
        h.update(k.as_bytes());
        h.update(*b"=");
        match &inputs[k] {
            Value::Txt(t) => h.update(t.as_bytes()),
            Value::Num(n) => h.update(n.to_le_bytes()),
            Value::Img(i) => h.update(format!("img{}x{}", i.width(), i.height())),
            Value::Msk(m) => h.update(format!("msk{}x{}", m.width(), m.height())),
            Value::Nil => h.update(b"nil"),
        }
        h.update([0]);
    }
    h.update(seed.to_le_bytes());
    h.finalize().into()
}

fn word(d: &[u8; 32], i: usize) -> u64 {
    u64::from_le_bytes(d[i * 8..i * 8 + 8].try_into().unwrap())
}

fn hash_color(d: &[u8; 32]) -> [u8; 3] {
    // keep every channel away from 0 so recolored pixels are never transparent
    [d[24] | 0x21, d[25] | 0x21, d[26] | 0x21]
}

/// A rectangle between a quarter and a half of each side, hash-positioned.
fn hash_rect(d: &[u8; 32], width: usize, height: usize) -> MaskBuf {
    let rw = (width / 4 + (word(d, 0) as usize) % (width / 4 + 1)).clamp(1, width);
    let rh = (height / 4 + (word(d, 1) as usize) % (height / 4 + 1)).clamp(1, height);
    let left = (word(d, 2) as usize) % (width - rw + 1);
    let top = (word(d, 3) as usize) % (height - rh + 1);
    MaskBuf::rect(width, height, left, top, rw, rh)
}

fn image_input<'a>(inputs: &'a Bindings, slot: &str) -> Result<&'a ImageBuf, BackendError> {
    inputs
        .get(slot)
        .and_then(Value::as_image)
        .ok_or_else(|| BackendError::Invalid(format!("`{slot}` must be an image")))
}

fn mask_on(inputs: &Bindings, slot: &str, image: &ImageBuf) -> Option<MaskBuf> {
    inputs
        .get(slot)
        .and_then(Value::as_mask)
        .map(|m| m.resampled(image.width(), image.height()))
}

fn cutout(image: &ImageBuf, mask: &MaskBuf) -> ImageBuf {
    let mut out = ImageBuf::filled(image.width(), image.height(), [0, 0, 0]);
    for y in 0..image.height() {
        for x in 0..image.width() {
            if mask.get(x, y) {
                out.set(x, y, image.get(x, y));
            }
        }
    }
    out
}

fn paint(image: &ImageBuf, mask: Option<&MaskBuf>, color: [u8; 3]) -> ImageBuf {
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if mask.is_none_or(|m| m.get(x, y)) {
                out.set(x, y, color);
            }
        }
    }
    out
}

fn ratio(inputs: &Bindings, slot: &str) -> Result<Option<f64>, BackendError> {
    match inputs.get(slot) {
        None | Some(Value::Nil) => Ok(None),
        Some(Value::Num(r)) if *r >= 0.0 && r.is_finite() => Ok(Some(*r)),
        Some(other) => Err(BackendError::Invalid(format!("`{slot}` must be a non-negative number, got {}", other.summary()))),
    }
}

fn expand_canvas(image: &ImageBuf, l: f64, r: f64, t: f64, b: f64) -> (ImageBuf, MaskBuf) {
    let (w, h) = (image.width(), image.height());
    let grow = |ratio: f64, size: usize| (ratio * size as f64).round() as usize;
    let (gl, gr, gt, gb) = (grow(l, w), grow(r, w), grow(t, h), grow(b, h));
    let (nw, nh) = (w + gl + gr, h + gt + gb);
    let mut canvas = ImageBuf::filled(nw, nh, [0, 0, 0]);
    let mut mask = MaskBuf::full(nw, nh);
    for y in 0..h {
        for x in 0..w {
            canvas.set(x + gl, y + gt, image.get(x, y));
            mask.set(x + gl, y + gt, false);
        }
    }
    (canvas, mask)
}

impl Backend for MockBackend {
    fn invoke(&self, tool: &ToolSpec, inputs: &Bindings, seed: u64) -> Result<Bindings, BackendError> {
        let d = digest(tool, inputs, seed);
        let mut out = Bindings::new();
        let name = tool.canonical_name.as_str();
        match name {
            "RES" | "SOS" => {
                let image = image_input(inputs, "image")?;
                let mask = hash_rect(&d, image.width(), image.height());
                out.insert("image".into(), Value::Img(cutout(image, &mask)));
                out.insert("mask".into(), Value::Msk(mask));
            }
            "ADD-PRED" => {
                let image = image_input(inputs, "image")?;
                let (w, h) = (image.width(), image.height());
                let placed = match mask_on(inputs, "mask", image) {
                    None => hash_rect(&d, w, h),
                    Some(region) => {
                        let (x0, y0, x1, y1) = region
                            .bounds()
                            .ok_or_else(|| BackendError::Invalid("placement mask is empty".into()))?;
                        let rect = hash_rect(&d, x1 - x0 + 1, y1 - y0 + 1);
                        let mut m = MaskBuf::empty(w, h);
                        for y in y0..=y1 {
                            for x in x0..=x1 {
                                m.set(x, y, rect.get(x - x0, y - y0) && region.get(x, y));
                            }
                        }
                        if m.count() == 0 {
                            // keep one pixel of the region so the result is never empty
                            let set: Vec<usize> = (0..w * h).filter(|i| region.get(i % w, i / w)).collect();
                            let i = set[(word(&d, 3) as usize) % set.len()];
                            m.set(i % w, i / w, true);
                        }
                        m
                    }
                };
                out.insert("mask".into(), Value::Msk(placed));
            }
            "CAP-PRED" => {
                let image = image_input(inputs, "image")?;
                let hex: String = d[..4].iter().map(|b| format!("{b:02x}")).collect();
                out.insert("caption".into(), Value::Txt(format!("a synthetic scene {hex}")));
                let ratios = [
                    ratio(inputs, "left_ratio")?,
                    ratio(inputs, "right_ratio")?,
                    ratio(inputs, "top_ratio")?,
                    ratio(inputs, "bottom_ratio")?,
                ];
                if let [Some(l), Some(r), Some(t), Some(b)] = ratios {
                    let (canvas, mask) = expand_canvas(image, l, r, t, b);
                    out.insert("image".into(), Value::Img(canvas));
                    out.insert("mask".into(), Value::Msk(mask));
                } else {
                    out.insert("image".into(), Value::Nil);
                    out.insert("mask".into(), Value::Nil);
                }
            }
            "FASTINPAINT" => {
                let image = image_input(inputs, "image")?;
                let mask = mask_on(inputs, "mask", image)
                    .ok_or_else(|| BackendError::Invalid("FASTINPAINT needs a mask".into()))?;
                let outside: Vec<[u8; 3]> = (0..image.height())
                    .flat_map(|y| (0..image.width()).map(move |x| (x, y)))
                    .filter(|(x, y)| !mask.get(*x, *y))
                    .map(|(x, y)| image.get(x, y))
                    .collect();
                let source: Vec<[u8; 3]> = if outside.is_empty() {
                    image.pixels().chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect()
                } else {
                    outside
                };
                let mut mean = [0u8; 3];
                for (c, slot) in mean.iter_mut().enumerate() {
                    let sum: u64 = source.iter().map(|p| p[c] as u64).sum();
                    *slot = (sum / source.len() as u64) as u8;
                }
                let fraction = mask.count() as f64 / (mask.width() * mask.height()) as f64;
                out.insert("image".into(), Value::Img(paint(image, Some(&mask), mean)));
                out.insert("score".into(), Value::Num((fraction * 1000.0).round() / 1000.0));
            }
            "FILL" | "INPAINT" | "RCM" | "STYLE" | "ENV" | "POSE" | "CBG" => {
                let image = image_input(inputs, "image")?;
                let mask = mask_on(inputs, "mask", image);
                out.insert("image".into(), Value::Img(paint(image, mask.as_ref(), hash_color(&d))));
            }
            other if self.extra_editors.iter().any(|e| e == other) => {
                let image = image_input(inputs, "image")?;
                let mask = mask_on(inputs, "mask", image);
                let painted = paint(image, mask.as_ref(), hash_color(&d));
                for o in &tool.outputs {
                    out.insert(o.name.clone(), Value::Img(painted.clone()));
                }
            }
            other => return Err(BackendError::MockUnsupportedTool(other.to_string())),
        }
        Ok(out)
    }
}

/// Convenience wrapper matching the engine's backend call.
pub fn mock_backend_invoke(tool: &ToolSpec, inputs: &Bindings, seed: u64) -> Result<Bindings, BackendError> {
    MockBackend::new().invoke(tool, inputs, seed)
}
