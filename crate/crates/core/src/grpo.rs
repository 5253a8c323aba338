//! Group-relative policy optimization.
//!
//! Rewards of the `N` samples drawn for one task are standardized within the
//! group, and the policy is moved along the gradient of the clipped
//! importance-ratio surrogate minus a KL penalty towards a frozen reference
//! policy.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, GrpoError, PolicyError};
use crate::geometry::BBox;
use crate::policy::DiagGaussian;

/// Spread below which a group counts as having identical rewards.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub std_floor: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.04,
            learning_rate: 0.002,
            std_floor: 1e-8,
            steps: 2000,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Grpo(m));
        if self.group_size < 2 {
            return bad(format!("group size must be at least 2, got {}", self.group_size));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon.is_finite()) {
            return bad(format!("clip epsilon must be positive, got {}", self.clip_epsilon));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad(format!("KL beta must be non-negative, got {}", self.kl_beta));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.std_floor.is_nan() || self.std_floor <= 0.0 {
            return bad(format!("std floor must be positive, got {}", self.std_floor));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSample {
    pub action: Vec<f64>,
    pub pred_box: BBox,
    pub reward: f64,
    pub logp_old: f64,
    pub logp_ref: f64,
}

/// The samples drawn for one task, with their group-normalized advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub task_id: String,
    pub features: Vec<f64>,
    pub samples: Vec<RolloutSample>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(task_id: impl Into<String>, features: Vec<f64>, samples: Vec<RolloutSample>) -> Self {
        Self {
            task_id: task_id.into(),
            features,
            samples,
            advantages: Vec::new(),
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.reward).collect()
    }

    pub fn normalize(&mut self, std_floor: f64) -> Result<(), GrpoError> {
        self.advantages = normalize_advantages(&self.rewards(), std_floor)?;
        Ok(())
    }
}

/// A policy whose log-density and KL to a reference are differentiable in a
/// flat parameter vector.
pub trait StochasticPolicy {
    fn parameters(&self) -> Vec<f64>;

    fn set_parameters(&mut self, params: &[f64]) -> Result<(), PolicyError>;

    /// Log-density of `action` given `features`, and its gradient.
    fn log_prob_with_grad(&self, features: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>), PolicyError>;

    /// `KL[self || reference]` of the action distributions at `features`,
    /// and its gradient with respect to `self`'s parameters.
    fn kl_with_grad(&self, reference: &Self, features: &[f64]) -> Result<(f64, Vec<f64>), PolicyError>;
}

/// Population statistics of a slice: `(mean, std)`.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardizes rewards within a group with the population std. A group of
/// (numerically) identical rewards carries no preference and maps to zeros.
pub fn normalize_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let (mean, std) = mean_std(rewards);
    if std < DEGENERATE_STD {
        return Ok(vec![0.0; rewards.len()]);
    }
    let denom = std.max(std_floor);
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Per-sample clipped surrogate `min(ρA, clip(ρ, 1-ε, 1+ε)A)` with
/// `ρ = exp(logp_new - logp_old)`. To be maximized.
pub fn clipped_surrogate(logp_new: f64, logp_old: f64, advantage: f64, epsilon: f64) -> f64 {
    let ratio = (logp_new - logp_old).exp();
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to `logp_new`.
pub fn clipped_surrogate_dlogp(logp_new: f64, logp_old: f64, advantage: f64, epsilon: f64) -> f64 {
    let ratio = (logp_new - logp_old).exp();
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    if ratio * advantage <= clipped * advantage {
        ratio * advantage
    } else {
        0.0
    }
}

/// Exact `KL[p || q]` between diagonal Gaussians, summed over dimensions.
pub fn kl_penalty(p: &DiagGaussian, q: &DiagGaussian) -> f64 {
    p.mean
        .iter()
        .zip(&p.std)
        .zip(q.mean.iter().zip(&q.std))
        .map(|((mp, sp), (mq, sq))| {
            let d = mp - mq;
            (sq / sp).ln() + (sp * sp + d * d) / (2.0 * sq * sq) - 0.5
        })
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateReport {
    pub mean_reward: f64,
    pub reward_std: f64,
    pub mean_abs_advantage: f64,
    pub kl_value: f64,
    pub grad_norm: f64,
    /// Objective at the parameters the gradient was taken at.
    pub objective_value: f64,
}

/// Value and parameter gradient of the GRPO objective on a frozen batch:
/// the mean over all samples of the clipped surrogate minus `beta` times the
/// KL to the reference. Also returns the mean KL.
pub fn objective_with_grad<P: StochasticPolicy>(
    groups: &[RolloutGroup],
    policy: &P,
    reference: &P,
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<f64>, f64), GrpoError> {
    let n_params = policy.parameters().len();
    let mut grad = vec![0.0; n_params];
    let mut objective = 0.0;
    let mut kl_sum = 0.0;
    let mut count = 0usize;
    for group in groups {
        if group.advantages.len() != group.samples.len() {
            return Err(GrpoError::MissingAdvantages(group.task_id.clone()));
        }
        let (kl, kl_grad) = policy.kl_with_grad(reference, &group.features)?;
        let n = group.samples.len() as f64;
        for (sample, &adv) in group.samples.iter().zip(&group.advantages) {
            let (logp, logp_grad) = policy.log_prob_with_grad(&group.features, &sample.action)?;
            objective += clipped_surrogate(logp, sample.logp_old, adv, cfg.clip_epsilon);
            let w = clipped_surrogate_dlogp(logp, sample.logp_old, adv, cfg.clip_epsilon);
            if w != 0.0 {
                grad.iter_mut().zip(&logp_grad).for_each(|(g, d)| *g += w * d);
            }
        }
        objective -= cfg.kl_beta * kl * n;
        kl_sum += kl * n;
        if cfg.kl_beta != 0.0 {
            grad.iter_mut().zip(&kl_grad).for_each(|(g, d)| *g -= cfg.kl_beta * n * d);
        }
        count += group.samples.len();
    }
    if count == 0 {
        return Ok((0.0, grad, 0.0));
    }
    let inv = 1.0 / count as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((objective * inv, grad, kl_sum * inv))
}

/// One plain gradient-ascent step on the GRPO objective.
///
/// The gradient is computed even when it ends up being all zeros; the update
/// is skipped when `apply` is false, which lets a driver record statistics of
/// the final policy without moving it.
pub fn grpo_step<P: StochasticPolicy>(
    groups: &[RolloutGroup],
    policy: &mut P,
    reference: &P,
    cfg: &GrpoConfig,
    apply: bool,
) -> Result<UpdateReport, GrpoError> {
    let (objective_value, grad, kl_value) = objective_with_grad(groups, policy, reference, cfg)?;
    if let Some((index, &value)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        let task_id = groups
            .iter()
            .find(|g| g.samples.iter().any(|s| !s.reward.is_finite()))
            .or(groups.first())
            .map(|g| g.task_id.clone())
            .unwrap_or_default();
        return Err(GrpoError::NonFiniteGradient { task_id, index, value });
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if apply && grad_norm > 0.0 {
        let mut params = policy.parameters();
        params
            .iter_mut()
            .zip(&grad)
            .for_each(|(p, g)| *p += cfg.learning_rate * g);
        policy.set_parameters(&params)?;
    }

    let rewards: Vec<f64> = groups.iter().flat_map(|g| g.samples.iter().map(|s| s.reward)).collect();
    let (mean_reward, reward_std) = if rewards.is_empty() { (0.0, 0.0) } else { mean_std(&rewards) };
    let advs: Vec<f64> = groups.iter().flat_map(|g| g.advantages.iter().copied()).collect();
    let mean_abs_advantage = if advs.is_empty() {
        0.0
    } else {
        advs.iter().map(|a| a.abs()).sum::<f64>() / advs.len() as f64
    };
    Ok(UpdateReport {
        mean_reward,
        reward_std,
        mean_abs_advantage,
        kl_value,
        grad_norm,
        objective_value,
    })
}
