//! Tabular softmax policy over a fixed candidate set per task, trained with
//! the clipped group-relative objective using exact gradients.

use std::fmt::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{execute_workflow, Bindings, Value};
use crate::graph_match::similarity_reward_with;
use crate::mock::MockBackend;
use crate::raster::ImageBuf;
use crate::registry::Registry;
use crate::rewards::{
    clipped_surrogate_slope, group_advantages, grpo_objective, stage_reward, valid_reward, GroupBatch,
    RewardBreakdown, RewardError, Stage,
};
use crate::validate::{default_init_slots, validate_workflow};
use crate::workflow::{parse_workflow, Workflow};

pub const TOY_TASKS: &str = include_str!("../assets/toy_tasks.json");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToyError {
    #[error("group size {0} is below 2")]
    GroupTooSmall(usize),
    #[error("task `{0}` has fewer than 2 candidates")]
    NoCandidates(String),
    #[error("bad fixture: {0}")]
    Fixture(String),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub group_size: usize,
    pub iterations: usize,
    pub step_size: f64,
    /// Gradient steps per sampled group, all against the same old policy.
    pub inner_steps: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            group_size: 8,
            iterations: 300,
            step_size: 0.1,
            inner_steps: 1,
            epsilon: crate::rewards::DEFAULT_EPSILON,
            beta: crate::rewards::DEFAULT_BETA,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<(), ToyError> {
        if self.group_size < 2 {
            return Err(ToyError::GroupTooSmall(self.group_size));
        }
        let finite = [self.step_size, self.epsilon, self.beta, self.temperature];
        if finite.iter().any(|v| !v.is_finite())
            || self.temperature <= 0.0
            || self.epsilon <= 0.0
            || self.beta < 0.0
            || self.step_size < 0.0
        {
            return Err(ToyError::BadConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| ((z - m) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scaled.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    scaled.into_iter().map(|z| z - lse).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyPolicy {
    pub task_ids: Vec<String>,
    pub candidate_ids: Vec<Vec<String>>,
    pub logits: Vec<Vec<f64>>,
    pub temperature: f64,
}

impl ToyPolicy {
    pub fn uniform(task_ids: Vec<String>, candidate_ids: Vec<Vec<String>>, temperature: f64) -> Self {
        let logits = candidate_ids.iter().map(|c| vec![0.0; c.len()]).collect();
        ToyPolicy {
            task_ids,
            candidate_ids,
            logits,
            temperature,
        }
    }

    pub fn probabilities(&self, task: usize) -> Vec<f64> {
        softmax(&self.logits[task], self.temperature)
    }
}

/// One task's sampled group, seen from the logits being optimised.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularGroup {
    pub old_logits: Vec<f64>,
    pub ref_logits: Vec<f64>,
    pub samples: Vec<usize>,
    pub advantages: Vec<f64>,
    pub epsilon: f64,
    pub beta: f64,
    pub temperature: f64,
}

impl TabularGroup {
    fn batch(&self, logits: &[f64]) -> GroupBatch {
        let new = log_softmax(logits, self.temperature);
        let old = log_softmax(&self.old_logits, self.temperature);
        let reference = log_softmax(&self.ref_logits, self.temperature);
        GroupBatch {
            rewards: Vec::new(),
            advantages: self.advantages.clone(),
            logp_new: self.samples.iter().map(|&c| new[c]).collect(),
            logp_old: self.samples.iter().map(|&c| old[c]).collect(),
            logp_ref: self.samples.iter().map(|&c| reference[c]).collect(),
            epsilon: self.epsilon,
            beta: self.beta,
        }
    }

    pub fn objective(&self, logits: &[f64]) -> Result<f64, RewardError> {
        grpo_objective(&self.batch(logits))
    }

    /// Exact gradient of [`TabularGroup::objective`] with respect to the logits.
    pub fn gradient(&self, logits: &[f64]) -> Vec<f64> {
        let b = self.batch(logits);
        let pi = softmax(logits, self.temperature);
        let g = self.samples.len() as f64;
        let mut grad = vec![0.0; logits.len()];
        for (j, &c) in self.samples.iter().enumerate() {
            let ratio = (b.logp_new[j] - b.logp_old[j]).exp();
            let surrogate = clipped_surrogate_slope(ratio, b.advantages[j], b.epsilon) * ratio;
            let delta = b.logp_ref[j] - b.logp_new[j];
            let kl = b.beta * delta.exp_m1();
            let w = (surrogate + kl) / g;
            for (k, gk) in grad.iter_mut().enumerate() {
                let indicator = if k == c { 1.0 } else { 0.0 };
                *gk += w * (indicator - pi[k]) / self.temperature;
            }
        }
        grad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_reward: f64,
    pub objective: f64,
    /// Mean sampled reward of each task this iteration.
    pub task_rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub policy: ToyPolicy,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,mean_reward,objective\n");
        for p in &self.curve {
            let _ = writeln!(out, "{},{:.6},{:.6}", p.iteration, p.mean_reward, p.objective);
        }
        out
    }

    pub fn mean_rewards(&self) -> Vec<f64> {
        self.curve.iter().map(|p| p.mean_reward).collect()
    }

    /// Mean reward over the last tenth of iterations minus the first tenth.
    pub fn decile_gain(&self) -> f64 {
        decile_gain(&self.mean_rewards())
    }

    pub fn task_decile_gain(&self, task: usize) -> f64 {
        decile_gain(&self.curve.iter().map(|p| p.task_rewards[task]).collect::<Vec<_>>())
    }
}

fn decile_gain(r: &[f64]) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    let k = (r.len() / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    mean(&r[r.len() - k..]) - mean(&r[..k])
}

/// Trains on a fixed reward per (task, candidate).
pub fn train_on_rewards(rewards: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainReport, ToyError> {
    let task_ids = (0..rewards.len()).map(|t| format!("task{t}")).collect();
    let candidate_ids = rewards
        .iter()
        .map(|r| (0..r.len()).map(|k| format!("cand{k}")).collect())
        .collect();
    train(ToyPolicy::uniform(task_ids, candidate_ids, cfg.temperature), rewards, cfg)
}

fn train(mut policy: ToyPolicy, rewards: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainReport, ToyError> {
    cfg.check()?;
    for (t, r) in rewards.iter().enumerate() {
        if r.len() < 2 {
            return Err(ToyError::NoCandidates(policy.task_ids[t].clone()));
        }
    }
    let reference = policy.logits.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let mut task_means = Vec::with_capacity(rewards.len());
        let mut objective_sum = 0.0;
        for (t, task_rewards) in rewards.iter().enumerate() {
            let probs = policy.probabilities(t);
            let dist = WeightedIndex::new(&probs).map_err(|e| ToyError::BadConfig(e.to_string()))?;
            let samples: Vec<usize> = (0..cfg.group_size).map(|_| dist.sample(&mut rng)).collect();
            let sampled: Vec<f64> = samples.iter().map(|&c| task_rewards[c]).collect();
            task_means.push(sampled.iter().sum::<f64>() / cfg.group_size as f64);
            let group = TabularGroup {
                old_logits: policy.logits[t].clone(),
                ref_logits: reference[t].clone(),
                samples,
                advantages: group_advantages(&sampled)?,
                epsilon: cfg.epsilon,
                beta: cfg.beta,
                temperature: cfg.temperature,
            };
            for _ in 0..cfg.inner_steps {
                let grad = group.gradient(&policy.logits[t]);
                for (z, g) in policy.logits[t].iter_mut().zip(grad) {
                    *z += cfg.step_size * g;
                }
            }
            objective_sum += group.objective(&policy.logits[t])?;
        }
        let n = rewards.len() as f64;
        curve.push(CurvePoint {
            iteration,
            mean_reward: task_means.iter().sum::<f64>() / n,
            objective: objective_sum / n,
            task_rewards: task_means,
        });
    }
    Ok(TrainReport { curve, policy })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub id: String,
    pub instruction: String,
    pub gt: Workflow,
    pub candidates: Vec<(String, Workflow)>,
}

#[derive(Deserialize)]
struct RawTask {
    id: String,
    instruction: String,
    gt: serde_json::Value,
    candidates: Vec<RawCandidate>,
}

#[derive(Deserialize)]
struct RawCandidate {
    id: String,
    workflow: serde_json::Value,
}

/// Reads a task file: `[{"id", "instruction", "gt", "candidates": [{"id", "workflow"}]}]`.
pub fn load_toy_tasks(document: &str) -> Result<Vec<ToyTask>, ToyError> {
    let raw: Vec<RawTask> = serde_json::from_str(document).map_err(|e| ToyError::Fixture(e.to_string()))?;
    let parse = |id: &str, v: &serde_json::Value| {
        parse_workflow(&v.to_string()).map_err(|e| ToyError::Fixture(format!("{id}: {e}")))
    };
    raw.into_iter()
        .map(|t| {
            let gt = parse(&t.id, &t.gt)?;
            let candidates = t
                .candidates
                .iter()
                .map(|c| Ok((c.id.clone(), parse(&c.id, &c.workflow)?)))
                .collect::<Result<Vec<_>, ToyError>>()?;
            Ok(ToyTask {
                id: t.id,
                instruction: t.instruction,
                gt,
                candidates,
            })
        })
        .collect()
}

pub fn default_toy_tasks() -> Vec<ToyTask> {
    load_toy_tasks(TOY_TASKS).expect("bundled toy tasks load")
}

/// Stage-2 reward of one candidate: validate, run on the mock backend with a
/// 64x64 checkerboard, and compare against the reference workflow.
pub fn candidate_reward(candidate: &Workflow, gt: &Workflow, registry: &Registry) -> RewardBreakdown {
    let report = validate_workflow(candidate, registry, &default_init_slots());
    let r_valid = if report.executable {
        let init = Bindings::from([("image".to_string(), Value::Img(ImageBuf::checkerboard(64, 64, 8)))]);
        let run = execute_workflow(candidate, registry, &MockBackend::new(), &init, 0);
        valid_reward(&report, Some(&run))
    } else {
        valid_reward(&report, None)
    };
    let r_sim = similarity_reward_with(candidate, gt, registry);
    stage_reward(Stage::Two, r_valid, Some(r_sim), None).expect("stage 2 parts present")
}

pub fn reward_table(tasks: &[ToyTask], registry: &Registry) -> Vec<Vec<f64>> {
    tasks
        .iter()
        .map(|t| {
            t.candidates
                .iter()
                .map(|(_, w)| candidate_reward(w, &t.gt, registry).total)
                .collect()
        })
        .collect()
}

pub fn toy_train(tasks: &[ToyTask], registry: &Registry, cfg: &TrainConfig) -> Result<TrainReport, ToyError> {
    for t in tasks {
        if t.candidates.len() < 2 {
            return Err(ToyError::NoCandidates(t.id.clone()));
        }
    }
    let policy = ToyPolicy::uniform(
        tasks.iter().map(|t| t.id.clone()).collect(),
        tasks
            .iter()
            .map(|t| t.candidates.iter().map(|(id, _)| id.clone()).collect())
            .collect(),
        cfg.temperature,
    );
    train(policy, &reward_table(tasks, registry), cfg)
}
