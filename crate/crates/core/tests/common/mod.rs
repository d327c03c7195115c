#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use lego_core::exec::{Bindings, Value};
use lego_core::raster::ImageBuf;
use lego_core::registry::Registry;
use lego_core::workflow::{Step, ValueRef, Workflow};
use proptest::prelude::*;

pub const TEXTS: [&str; 4] = ["dog", "cat", "car", "change the background to a beach"];
pub const NUMBERS: [f64; 3] = [0.5, 1.0, 2.0];

pub fn checker_init() -> Bindings {
    Bindings::from([("image".to_string(), Value::Img(ImageBuf::checkerboard(64, 64, 8)))])
}

/// Builds a workflow from raw choices. Every reference points backwards, so
/// the result always parses; types and constraints are left to chance.
pub fn build_workflow(registry: &Registry, raw: &[(usize, Vec<u32>)], result_picks: &[u32]) -> Workflow {
    let tools: Vec<_> = registry.tools().collect();
    let mut steps: Vec<Step> = Vec::new();
    for (i, (tool_pick, choices)) in raw.iter().enumerate() {
        let index = i + 1;
        let spec = tools[tool_pick % tools.len()];
        let mut step = Step::new(index, spec.canonical_name.clone());
        for (s, slot) in spec.inputs.iter().enumerate() {
            let c = choices[s % choices.len()];
            let v = match c % 6 {
                0 => ValueRef::Null,
                1 => ValueRef::init("image"),
                2 => ValueRef::Text(TEXTS[(c / 6) as usize % TEXTS.len()].into()),
                3 => ValueRef::Number(NUMBERS[(c / 6) as usize % NUMBERS.len()]),
                _ if index > 1 => {
                    let j = 1 + (c / 6) as usize % (index - 1);
                    let producer = registry.lookup(&steps[j - 1].model).unwrap();
                    let out = &producer.outputs[(c / 36) as usize % producer.outputs.len()];
                    ValueRef::step(j, out.name.clone())
                }
                _ => ValueRef::init("image"),
            };
            step = step.with_input(slot.name.clone(), v);
        }
        for o in &spec.outputs {
            step = step.with_output(o.name.clone());
        }
        steps.push(step);
    }
    let n = steps.len();
    let result = result_picks
        .iter()
        .map(|&c| {
            let j = 1 + c as usize % n;
            let producer = registry.lookup(&steps[j - 1].model).unwrap();
            let out = &producer.outputs[(c as usize / n) % producer.outputs.len()];
            ValueRef::step(j, out.name.clone())
        })
        .collect();
    Workflow {
        process: "random".into(),
        steps,
        result,
        warnings: Vec::new(),
    }
}

pub fn arb_raw() -> impl Strategy<Value = (Vec<(usize, Vec<u32>)>, Vec<u32>)> {
    (
        prop::collection::vec((0usize..64, prop::collection::vec(any::<u32>(), 4)), 1..7),
        prop::collection::vec(any::<u32>(), 1..3),
    )
}

pub fn arb_workflow() -> impl Strategy<Value = Workflow> {
    arb_raw().prop_map(|(raw, picks)| build_workflow(&Registry::default_tools(), &raw, &picks))
}

/// Minimal HTTP/1.1 server answering every POST with `reply(body)`.
/// `delay` stalls before answering, for timeout tests.
pub struct StubServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub last_request: Arc<std::sync::Mutex<Option<(String, String)>>>,
}

pub fn stub_server(reply: impl Fn(&str) -> String + Send + Sync + 'static, delay: Option<Duration>) -> StubServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/critique", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let last_request = Arc::new(std::sync::Mutex::new(None));
    let reply = Arc::new(reply);
    {
        let hits = hits.clone();
        let last = last_request.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                hits.fetch_add(1, Ordering::SeqCst);
                let reply = reply.clone();
                let last = last.clone();
                thread::spawn(move || {
                    let _ = handle(stream, &*reply, delay, &last);
                });
            }
        });
    }
    StubServer {
        url,
        hits,
        last_request,
    }
}

fn handle(
    stream: TcpStream,
    reply: &dyn Fn(&str) -> String,
    delay: Option<Duration>,
    last: &std::sync::Mutex<Option<(String, String)>>,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut headers = String::new();
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        if line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            length = v.trim().parse().unwrap_or(0);
        }
        headers.push_str(&line);
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();
    *last.lock().unwrap() = Some((headers, body.clone()));
    if let Some(d) = delay {
        thread::sleep(d);
    }
    let out = reply(&body);
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        out.len(),
        out
    )?;
    stream.flush()
}

/// Like [`build_workflow`], but every slot is bound to a value of its own
/// type when one is available, so a useful share of results validate.
pub fn build_typed_workflow(registry: &Registry, raw: &[(usize, Vec<u32>)]) -> Workflow {
    use lego_core::workflow::SemanticType;
    let tools: Vec<_> = registry.tools().collect();
    let mut steps: Vec<Step> = Vec::new();
    let mut produced: Vec<(usize, String, SemanticType)> = Vec::new();
    for (i, (tool_pick, choices)) in raw.iter().enumerate() {
        let index = i + 1;
        let spec = tools[tool_pick % tools.len()];
        let mut step = Step::new(index, spec.canonical_name.clone());
        for (s, slot) in spec.inputs.iter().enumerate() {
            let c = choices[s % choices.len()] as usize;
            let candidates: Vec<ValueRef> = produced
                .iter()
                .filter(|(_, _, ty)| *ty == slot.ty)
                .map(|(j, f, _)| ValueRef::step(*j, f.clone()))
                .chain((slot.ty == SemanticType::Image).then(|| ValueRef::init("image")))
                .collect();
            let v = if slot.nullable && c.is_multiple_of(3) {
                ValueRef::Null
            } else {
                match slot.ty {
                    SemanticType::Str => ValueRef::Text(TEXTS[c / 3 % TEXTS.len()].into()),
                    SemanticType::Float => ValueRef::Number(NUMBERS[c / 3 % NUMBERS.len()]),
                    _ if candidates.is_empty() => ValueRef::Null,
                    _ => candidates[c / 3 % candidates.len()].clone(),
                }
            };
            step = step.with_input(slot.name.clone(), v);
        }
        for o in &spec.outputs {
            step = step.with_output(o.name.clone());
            produced.push((index, o.name.clone(), o.ty));
        }
        steps.push(step);
    }
    let n = steps.len();
    Workflow {
        process: "random".into(),
        steps,
        result: vec![ValueRef::step(n, registry.lookup(&raw_tool_name(registry, raw, n)).unwrap().outputs[0].name.clone())],
        warnings: Vec::new(),
    }
}

fn raw_tool_name(registry: &Registry, raw: &[(usize, Vec<u32>)], index: usize) -> String {
    let tools: Vec<_> = registry.tools().collect();
    tools[raw[index - 1].0 % tools.len()].canonical_name.clone()
}

pub fn arb_typed_workflow() -> impl Strategy<Value = Workflow> {
    prop::collection::vec((0usize..64, prop::collection::vec(any::<u32>(), 4)), 1..7)
        .prop_map(|raw| build_typed_workflow(&Registry::default_tools(), &raw))
}
