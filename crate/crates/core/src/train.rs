//! GRPO training of the box policy on synthetic tasks.
//!
//! Each step draws a batch of training tasks, samples a group of boxes per
//! task, scores them with the configured reward, normalizes advantages within
//! every group and takes one ascent step. Every `eval_every` steps (and at the
//! last step) the greedy hold-out accuracy and the probe-set center distance
//! are recorded.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{self, DistanceTrace, GeneratorConfig, TaskInstance, FEATURE_DIM};
use crate::error::{ConfigError, Error};
use crate::grpo::{self, GrpoConfig, RolloutGroup, RolloutSample};
use crate::policy::GaussianBoxPolicy;
use crate::rewards::RewardConfig;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub generator: GeneratorConfig,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    /// Tasks per optimization step.
    pub batch_tasks: usize,
    pub holdout_tasks: usize,
    pub probe_tasks: usize,
    /// Sampled predictions per probe task.
    pub probe_samples: usize,
    pub eval_every: usize,
    pub init_log_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            reward: RewardConfig::default(),
            grpo: GrpoConfig::default(),
            batch_tasks: 8,
            holdout_tasks: 500,
            probe_tasks: 10,
            probe_samples: 8,
            eval_every: 200,
            init_log_std: 0.0,
        }
    }
}

impl TrainConfig {
    /// Uses one seed for task generation, rollouts and the random rewards.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.generator.seed = seed;
        self.grpo.seed = seed;
        self.reward.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.generator.validate()?;
        self.reward.validate()?;
        self.grpo.validate()?;
        let bad = |m: &str| Err(ConfigError::Train(m.to_string()));
        if self.batch_tasks == 0 {
            return bad("batch must hold at least one task");
        }
        if self.generator.n_tasks == 0 {
            return bad("need at least one training task");
        }
        if self.holdout_tasks == 0 || self.probe_tasks == 0 || self.probe_tasks > self.holdout_tasks {
            return bad("need 1 <= probe tasks <= hold-out tasks");
        }
        if self.probe_samples == 0 || self.eval_every == 0 {
            return bad("probe samples and eval interval must be positive");
        }
        if !self.init_log_std.is_finite() {
            return bad("initial log std must be finite");
        }
        Ok(())
    }
}

/// One row of the per-step metrics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub mean_reward: f64,
    pub reward_std: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub holdout_accuracy: f64,
    pub probe_distance: f64,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 7] = [
        "step",
        "mean_reward",
        "reward_std",
        "kl",
        "grad_norm",
        "holdout_accuracy",
        "probe_distance",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.step as f64,
            self.mean_reward,
            self.reward_std,
            self.kl,
            self.grad_norm,
            self.holdout_accuracy,
            self.probe_distance,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub trace: DistanceTrace,
    pub policy: GaussianBoxPolicy,
    pub baseline_accuracy: f64,
    pub final_accuracy: f64,
    pub final_probe_distance: f64,
}

/// Training, hold-out and probe task sets for one configuration.
#[derive(Debug, Clone)]
pub struct TaskSplit {
    pub train: Vec<TaskInstance>,
    pub holdout: Vec<TaskInstance>,
    pub probes: Vec<TaskInstance>,
}

pub fn build_tasks(cfg: &TrainConfig, initial: &GaussianBoxPolicy) -> Result<TaskSplit, Error> {
    let train = env::generate(&cfg.generator)?;
    let holdout_cfg = GeneratorConfig {
        seed: rng::mix(cfg.generator.seed, &[rng::domain::HOLDOUT]),
        n_tasks: cfg.holdout_tasks,
        ..cfg.generator.clone()
    };
    let mut holdout = env::generate(&holdout_cfg)?;
    for t in &mut holdout {
        t.task_id += cfg.generator.n_tasks;
    }
    let probes = env::select_probes(initial, &holdout, cfg.probe_tasks, cfg.probe_samples, cfg.grpo.seed)?;
    Ok(TaskSplit { train, holdout, probes })
}

/// Samples one group per task in the step's batch.
pub fn rollout(
    step: usize,
    tasks: &[TaskInstance],
    policy: &GaussianBoxPolicy,
    reference: &GaussianBoxPolicy,
    cfg: &TrainConfig,
) -> Result<Vec<RolloutGroup>, Error> {
    let seed = cfg.grpo.seed;
    let n = cfg.grpo.group_size;
    let mut pick = rng::stream(seed, &[rng::domain::BATCH, step as u64]);
    let indices: Vec<usize> = (0..cfg.batch_tasks).map(|_| pick.random_range(0..tasks.len())).collect();
    let mut groups = Vec::with_capacity(indices.len());
    for (slot, &ti) in indices.iter().enumerate() {
        let task = &tasks[ti];
        let mut samples = Vec::with_capacity(n);
        for k in 0..n {
            let mut r = rng::stream(seed, &[rng::domain::ROLLOUT, step as u64, slot as u64, k as u64]);
            let s = policy.sample(&task.features, task.screen, &mut r)?;
            let draw = ((step * cfg.batch_tasks + slot) * n + k) as u64;
            let reward = cfg.reward.score(&s.pred_box, &task.gt_box, draw).total;
            samples.push(RolloutSample {
                logp_ref: reference.log_prob(&task.features, &s.action)?,
                action: s.action.to_vec(),
                pred_box: s.pred_box,
                reward,
                logp_old: s.logp,
            });
        }
        let mut group = RolloutGroup::new(format!("step{step}/task{}", task.task_id), task.features.clone(), samples);
        group.normalize(cfg.grpo.std_floor)?;
        groups.push(group);
    }
    Ok(groups)
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, Error> {
    train_with(cfg, |_| {})
}

/// Runs training, handing every metrics row to `on_row` as soon as it exists.
pub fn train_with<F: FnMut(&MetricsRow)>(cfg: &TrainConfig, mut on_row: F) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    let reference = GaussianBoxPolicy::new(FEATURE_DIM, cfg.init_log_std);
    let mut policy = reference.clone();
    let split = build_tasks(cfg, &reference)?;
    let mut trace = DistanceTrace::new(cfg.eval_every, cfg.probe_samples, cfg.grpo.seed);
    let mut rows = Vec::new();
    let steps = cfg.grpo.steps;

    for step in 0..=steps {
        let groups = rollout(step, &split.train, &policy, &reference, cfg)?;
        let is_last = step == steps;
        let logged = step % cfg.eval_every == 0 || is_last;
        if !logged {
            grpo::grpo_step(&groups, &mut policy, &reference, &cfg.grpo, true)?;
            continue;
        }
        // Evaluate the policy that produced this batch, then update it.
        let holdout = env::evaluate_policy(&policy, &split.holdout)?;
        let probe_distance = env::sampled_center_distance(&policy, &split.probes, cfg.probe_samples, cfg.grpo.seed, step as u64)?;
        trace.points.push((step, probe_distance));
        let report = grpo::grpo_step(&groups, &mut policy, &reference, &cfg.grpo, !is_last)?;
        let row = MetricsRow {
            step,
            mean_reward: report.mean_reward,
            reward_std: report.reward_std,
            kl: report.kl_value,
            grad_norm: report.grad_norm,
            holdout_accuracy: holdout.accuracy,
            probe_distance,
        };
        on_row(&row);
        rows.push(row);
    }

    let first = rows.first().expect("step 0 is always logged");
    let last = rows.last().expect("step 0 is always logged");
    Ok(TrainOutcome {
        baseline_accuracy: first.holdout_accuracy,
        final_accuracy: last.holdout_accuracy,
        final_probe_distance: last.probe_distance,
        rows,
        trace,
        policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        let mut c = TrainConfig::default().with_seed(5);
        c.generator.n_tasks = 100;
        c.holdout_tasks = 50;
        c.grpo.steps = 40;
        c.eval_every = 10;
        c
    }

    #[test]
    fn zero_steps_logs_only_the_baseline() {
        let mut c = small();
        c.grpo.steps = 0;
        let out = train(&c).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].step, 0);
        assert_eq!(out.baseline_accuracy, out.final_accuracy);
        assert_eq!(out.policy, GaussianBoxPolicy::new(FEATURE_DIM, c.init_log_std));
    }

    #[test]
    fn training_is_deterministic() {
        let a = train(&small()).unwrap();
        let b = train(&small()).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.rows.len(), 5);
    }

    #[test]
    fn rollouts_record_consistent_log_probs() {
        let c = small();
        let p = GaussianBoxPolicy::new(FEATURE_DIM, 0.0);
        let split = build_tasks(&c, &p).unwrap();
        let groups = rollout(3, &split.train, &p, &p, &c).unwrap();
        assert_eq!(groups.len(), c.batch_tasks);
        for g in &groups {
            assert_eq!(g.samples.len(), c.grpo.group_size);
            assert_eq!(g.advantages.len(), c.grpo.group_size);
            for s in &g.samples {
                assert_eq!(s.logp_old, s.logp_ref);
                assert!((p.log_prob(&g.features, &s.action).unwrap() - s.logp_old).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = small();
        c.probe_tasks = 100;
        assert!(train(&c).is_err());
        let mut c = small();
        c.grpo.group_size = 1;
        assert!(train(&c).is_err());
    }
}
