//! Accuracy metrics, the weighted reward and GRPO objective arithmetic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("threshold list is empty")]
    EmptyThresholds,
    #[error("threshold {0} is outside (0, 1)")]
    ThresholdOutOfRange(f64),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("reward weights must be non-negative (got w_f = {w_f}, w_a = {w_a})")]
    NegativeWeight { w_f: f64, w_a: f64 },
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("sequence lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("log-probability sequences are empty")]
    EmptySequence,
    #[error("importance ratio is not representable: exp({0})")]
    RatioOutOfRange(f64),
    #[error("invalid rollout group {question_id}: {reason}")]
    InvalidGroup { question_id: String, reason: String },
}

/// `{0.50, 0.55, ..., 0.95}`.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Mean relative accuracy: the fraction of thresholds `t` with
/// `|pred - truth| / |truth| < 1 - t`. A zero truth scores 1 only for an
/// exact zero prediction.
pub fn mra(prediction: f64, truth: f64, thresholds: &[f64]) -> Result<f64, RewardError> {
    if thresholds.is_empty() {
        return Err(RewardError::EmptyThresholds);
    }
    if let Some(&t) = thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(RewardError::ThresholdOutOfRange(t));
    }
    if !truth.is_finite() {
        return Err(RewardError::NonFinite(format!("truth {truth}")));
    }
    if truth == 0.0 {
        return Ok(if prediction == 0.0 { 1.0 } else { 0.0 });
    }
    let relative = (prediction - truth).abs() / truth.abs();
    let passed = thresholds.iter().filter(|&&t| relative < 1.0 - t).count();
    Ok(passed as f64 / thresholds.len() as f64)
}

/// Distinct option letters in `text`: standalone single-letter tokens A-D.
pub fn extract_option_letters(text: &str) -> Vec<char> {
    let mut letters = Vec::new();
    for token in text.split(|c: char| !c.is_alphanumeric()) {
        let mut chars = token.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            let upper = c.to_ascii_uppercase();
            if ('A'..='D').contains(&upper) && !letters.contains(&upper) {
                letters.push(upper);
            }
        }
    }
    letters
}

/// 1 when exactly one option letter can be read from `answer_text` and it is `truth`.
pub fn mcq_accuracy(answer_text: &str, truth: char) -> u8 {
    match extract_option_letters(answer_text).as_slice() {
        [one] => u8::from(*one == truth.to_ascii_uppercase()),
        _ => 0,
    }
}

pub fn combined_reward(format_score: f64, accuracy_score: f64, w_f: f64, w_a: f64) -> Result<f64, RewardError> {
    if !(w_f >= 0.0 && w_a >= 0.0) {
        return Err(RewardError::NegativeWeight { w_f, w_a });
    }
    Ok(w_f * format_score + w_a * accuracy_score)
}

/// `(R_i - mean) / std` with the population standard deviation; a group of
/// identical rewards gets all-zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(RewardError::NonFinite(format!("reward {r}")));
    }
    let n = rewards.len() as f64;
    let (lo, hi) = rewards.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    if lo == hi {
        return Ok(vec![0.0; rewards.len()]);
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let deviations: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    let std = (deviations.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    if std == 0.0 || !std.is_finite() {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(deviations.iter().map(|d| d / std).collect())
}

pub fn importance_ratio(policy_logprob_sum: f64, old_logprob_sum: f64) -> Result<f64, RewardError> {
    let diff = policy_logprob_sum - old_logprob_sum;
    let ratio = diff.exp();
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(RewardError::RatioOutOfRange(diff));
    }
    Ok(ratio)
}

pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlReduction {
    #[default]
    Mean,
    Sum,
}

/// `exp(d) - d - 1`, accurate near zero.
pub fn kl_term(delta: f64) -> f64 {
    if delta.abs() < 1e-3 {
        let d2 = delta * delta;
        d2 * (0.5 + delta * (1.0 / 6.0 + delta * (1.0 / 24.0 + delta / 120.0)))
    } else {
        delta.exp_m1() - delta
    }
}

pub fn kl_penalty(policy_logprobs: &[f64], ref_logprobs: &[f64]) -> Result<f64, RewardError> {
    kl_penalty_with(policy_logprobs, ref_logprobs, KlReduction::Mean)
}

/// Per-token `exp(d) - d - 1` with `d = ref - policy`, reduced over tokens.
pub fn kl_penalty_with(policy_logprobs: &[f64], ref_logprobs: &[f64], reduction: KlReduction) -> Result<f64, RewardError> {
    if policy_logprobs.len() != ref_logprobs.len() {
        return Err(RewardError::LengthMismatch {
            left: policy_logprobs.len(),
            right: ref_logprobs.len(),
        });
    }
    if policy_logprobs.is_empty() {
        return Err(RewardError::EmptySequence);
    }
    let mut total = 0.0;
    for (p, r) in policy_logprobs.iter().zip(ref_logprobs) {
        if !(p.is_finite() && r.is_finite()) {
            return Err(RewardError::NonFinite(format!("log-probability pair ({p}, {r})")));
        }
        total += kl_term(r - p);
    }
    Ok(match reduction {
        KlReduction::Mean => total / policy_logprobs.len() as f64,
        KlReduction::Sum => total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    #[serde(default)]
    pub response_text: String,
    pub reward: f64,
    pub policy_logprobs: Vec<f64>,
    pub old_logprobs: Vec<f64>,
    pub ref_logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<usize>,
}

impl Rollout {
    pub fn token_count(&self) -> usize {
        self.policy_logprobs.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.policy_logprobs.len();
        if n == 0 {
            return Err("empty log-probability sequence".into());
        }
        if self.old_logprobs.len() != n || self.ref_logprobs.len() != n {
            return Err(format!(
                "log-probability lengths differ: policy {n}, old {}, ref {}",
                self.old_logprobs.len(),
                self.ref_logprobs.len()
            ));
        }
        if let Some(declared) = self.token_count {
            if declared != n {
                return Err(format!("token_count {declared} does not match {n} log-probabilities"));
            }
        }
        let all = self.policy_logprobs.iter().chain(&self.old_logprobs).chain(&self.ref_logprobs);
        if let Some(bad) = all.into_iter().find(|x| !(x.is_finite() && **x <= 0.0)) {
            return Err(format!("log-probability {bad} is not a finite value <= 0"));
        }
        if !self.reward.is_finite() {
            return Err(format!("reward {} is not finite", self.reward));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub question_id: String,
    pub epsilon: f64,
    pub beta: f64,
    pub rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn validate(&self) -> Result<(), RewardError> {
        let invalid = |reason: String| RewardError::InvalidGroup {
            question_id: self.question_id.clone(),
            reason,
        };
        if self.rollouts.len() < 2 {
            return Err(invalid(format!("needs at least 2 rollouts, has {}", self.rollouts.len())));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid(format!("epsilon {} is outside (0, 1)", self.epsilon)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("beta {} must be a finite value >= 0", self.beta)));
        }
        for (i, r) in self.rollouts.iter().enumerate() {
            r.validate().map_err(|e| invalid(format!("rollout {i}: {e}")))?;
        }
        Ok(())
    }
}

/// Every intermediate quantity of the objective, per rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoAudit {
    pub question_id: String,
    pub objective: f64,
    pub advantages: Vec<f64>,
    pub ratios: Vec<f64>,
    pub surrogates: Vec<f64>,
    pub kl: Vec<f64>,
    /// Rollouts whose surrogate took the clipped branch.
    pub clipped: usize,
}

pub fn grpo_objective(group: &RolloutGroup) -> Result<f64, RewardError> {
    grpo_audit(group, KlReduction::Mean).map(|a| a.objective)
}

/// `(1/G) sum_i [clipped_surrogate(r_i, A_i, eps) - beta * KL_i]` with
/// sequence-level ratios.
pub fn grpo_audit(group: &RolloutGroup, reduction: KlReduction) -> Result<GrpoAudit, RewardError> {
    group.validate()?;
    let rewards: Vec<f64> = group.rollouts.iter().map(|r| r.reward).collect();
    let advantages = group_advantages(&rewards)?;
    let mut ratios = Vec::with_capacity(rewards.len());
    let mut surrogates = Vec::with_capacity(rewards.len());
    let mut kl = Vec::with_capacity(rewards.len());
    let mut clipped = 0;
    let mut total = 0.0;
    for (rollout, &advantage) in group.rollouts.iter().zip(&advantages) {
        let ratio = importance_ratio(rollout.policy_logprobs.iter().sum(), rollout.old_logprobs.iter().sum())?;
        let surrogate = clipped_surrogate(ratio, advantage, group.epsilon);
        if surrogate != ratio * advantage {
            clipped += 1;
        }
        let k = kl_penalty_with(&rollout.policy_logprobs, &rollout.ref_logprobs, reduction)?;
        total += surrogate - group.beta * k;
        ratios.push(ratio);
        surrogates.push(surrogate);
        kl.push(k);
    }
    Ok(GrpoAudit {
        question_id: group.question_id.clone(),
        objective: total / group.rollouts.len() as f64,
        advantages,
        ratios,
        surrogates,
        kl,
        clipped,
    })
}
