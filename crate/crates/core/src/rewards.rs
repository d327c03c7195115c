//! Stage rewards and the group-relative policy objective.

use serde::Serialize;
use thiserror::Error;

use crate::exec::ExecutionResult;
use crate::validate::ValidationReport;

pub const DEFAULT_EPSILON: f64 = 0.2;
pub const DEFAULT_BETA: f64 = 0.04;

/// Groups whose reward spread is below this get zero advantages.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("stage {stage} reward needs {component}")]
    MissingComponent { stage: u8, component: &'static str },
    #[error("a group needs at least 2 samples, got {0}")]
    GroupTooSmall(usize),
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
    #[error("mismatched batch: {0}")]
    BadBatch(String),
}

/// 0 when the workflow validates and (if it was run) executed cleanly,
/// otherwise -1.
pub fn valid_reward(report: &ValidationReport, exec: Option<&ExecutionResult>) -> i32 {
    let ran_ok = exec.is_none_or(|e| e.status.is_ok());
    if report.executable && ran_ok {
        0
    } else {
        -1
    }
}

/// `1 - 0.5 * (n_add + n_remove)`; not clamped.
pub fn effect_reward(n_add: usize, n_remove: usize) -> f64 {
    1.0 - 0.5 * (n_add + n_remove) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stage {
    /// Reference-workflow stage: validity plus graph similarity.
    Two,
    /// Critic stage: validity plus effectiveness.
    Three,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardBreakdown {
    pub r_valid: i32,
    pub r_sim: Option<f64>,
    pub r_effect: Option<f64>,
    pub total: f64,
}

pub fn stage_reward(
    stage: Stage,
    r_valid: i32,
    r_sim: Option<f64>,
    r_effect: Option<f64>,
) -> Result<RewardBreakdown, RewardError> {
    let total = match stage {
        Stage::Two => {
            let sim = r_sim.ok_or(RewardError::MissingComponent {
                stage: 2,
                component: "r_sim",
            })?;
            r_valid as f64 + sim
        }
        Stage::Three => {
            let effect = r_effect.ok_or(RewardError::MissingComponent {
                stage: 3,
                component: "r_effect",
            })?;
            r_valid as f64 + effect
        }
    };
    Ok(RewardBreakdown {
        r_valid,
        r_sim,
        r_effect,
        total,
    })
}

/// `(r - mean) / std` with the population standard deviation.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(RewardError::NonFiniteInput("rewards"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < STD_FLOOR {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// One sampled group with sequence-level log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub logp_new: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub epsilon: f64,
    pub beta: f64,
}

impl GroupBatch {
    pub fn new(
        rewards: Vec<f64>,
        logp_new: Vec<f64>,
        logp_old: Vec<f64>,
        logp_ref: Vec<f64>,
        epsilon: f64,
        beta: f64,
    ) -> Result<Self, RewardError> {
        let advantages = group_advantages(&rewards)?;
        Ok(GroupBatch {
            rewards,
            advantages,
            logp_new,
            logp_old,
            logp_ref,
            epsilon,
            beta,
        })
    }

    fn check(&self) -> Result<(), RewardError> {
        let g = self.advantages.len();
        if g == 0 || [self.logp_new.len(), self.logp_old.len(), self.logp_ref.len()].iter().any(|&l| l != g) {
            return Err(RewardError::BadBatch(format!(
                "{} advantages, {}/{}/{} log-probs",
                g,
                self.logp_new.len(),
                self.logp_old.len(),
                self.logp_ref.len()
            )));
        }
        if !(self.epsilon > 0.0) || !(self.beta >= 0.0) {
            return Err(RewardError::BadBatch(format!("epsilon {} beta {}", self.epsilon, self.beta)));
        }
        let all = self
            .advantages
            .iter()
            .chain(&self.logp_new)
            .chain(&self.logp_old)
            .chain(&self.logp_ref);
        if all.clone().any(|v| !v.is_finite()) || !self.epsilon.is_finite() || !self.beta.is_finite() {
            return Err(RewardError::NonFiniteInput("batch"));
        }
        Ok(())
    }
}

/// `min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// `d surrogate / d ratio`; the unclipped branch is taken on ties.
pub fn clipped_surrogate_slope(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

/// Per-sample KL estimate `exp(d) - d - 1` with `d = logp_ref - logp_new`.
/// Non-negative for every finite pair.
pub fn kl_estimate(logp_ref: f64, logp_new: f64) -> f64 {
    let d = logp_ref - logp_new;
    d.exp_m1() - d
}

/// Clipped surrogate averaged over the group minus `beta` times the mean KL
/// estimate against the reference policy.
pub fn grpo_objective(batch: &GroupBatch) -> Result<f64, RewardError> {
    batch.check()?;
    let g = batch.advantages.len() as f64;
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    for j in 0..batch.advantages.len() {
        let ratio = (batch.logp_new[j] - batch.logp_old[j]).exp();
        surrogate += clipped_surrogate(ratio, batch.advantages[j], batch.epsilon);
        kl += kl_estimate(batch.logp_ref[j], batch.logp_new[j]);
    }
    Ok(surrogate / g - batch.beta * kl / g)
}

/// `-sum(log p)` over a token sequence.
pub fn sft_nll(token_logprobs: &[f64]) -> Result<f64, RewardError> {
    if token_logprobs.iter().any(|v| !v.is_finite()) {
        return Err(RewardError::NonFiniteInput("token log-probabilities"));
    }
    if token_logprobs.iter().any(|v| *v > 0.0) {
        return Err(RewardError::BadBatch("log-probabilities must be <= 0".into()));
    }
    Ok(-token_logprobs.iter().sum::<f64>())
}
