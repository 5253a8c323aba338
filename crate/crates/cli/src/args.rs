//! Flag groups shared by the subcommands. Flag names follow the reward and
//! optimizer symbols: `--alpha`, `--nu`, `--gamma`, `--beta`, `--epsilon`,
//! `--group-size`.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use groundrl::env::GeneratorConfig;
use groundrl::grpo::GrpoConfig;
use groundrl::policy::ScreenSize;
use groundrl::train::TrainConfig;
use groundrl::{BBox, RewardConfig, RewardVariant};

pub const OUT_ROOT_ENV: &str = "GROUNDRL_OUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "groundrl", version, about = "Gaussian grounding rewards and GRPO training harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one predicted box against a ground-truth box.
    Reward(RewardCmd),
    /// Score an annotation file (one JSON record per line).
    Score(ScoreCmd),
    /// Train the box policy with GRPO on synthetic tasks.
    Train(TrainCmd),
    /// Run a training grid over several seeds and summarize it.
    Sweep(SweepCmd),
}

#[derive(Debug, Args, Clone)]
pub struct RewardFlags {
    /// Reward variant, e.g. gaussian, sparse-point, sparse-iou, inside-gaussian, random-binary.
    #[arg(long = "reward", visible_alias = "variant", default_value = "gaussian")]
    pub variant: String,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub nu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub sigma_floor: f64,
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    /// Add the format reward to every total.
    #[arg(long)]
    pub format_bonus: bool,
    /// Use this fixed sigma (pixels) instead of the size-adaptive one.
    #[arg(long)]
    pub fixed_sigma: Option<f64>,
    /// Seed of the random reward variants (defaults to the run seed).
    #[arg(long)]
    pub reward_seed: Option<u64>,
}

impl RewardFlags {
    pub fn to_config(&self, default_seed: u64) -> Result<RewardConfig> {
        let cfg = RewardConfig {
            variant: self.variant.parse::<RewardVariant>()?,
            alpha: self.alpha,
            nu: self.nu,
            gamma: self.gamma,
            sigma_floor: self.sigma_floor,
            iou_threshold: self.iou_threshold,
            format_bonus_enabled: self.format_bonus,
            rng_seed: self.reward_seed.unwrap_or(default_seed),
            fixed_sigma: self.fixed_sigma,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args, Clone)]
pub struct GrpoFlags {
    #[arg(long, default_value_t = 8)]
    pub group_size: usize,
    #[arg(long, default_value_t = 0.2)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.04)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.002)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub std_floor: f64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tasks per optimization step.
    #[arg(long, default_value_t = 8)]
    pub batch_tasks: usize,
    /// Steps between hold-out evaluations and probe-distance records.
    #[arg(long, default_value_t = 200)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub init_log_std: f64,
}

#[derive(Debug, Args, Clone)]
pub struct GeneratorFlags {
    #[arg(long, default_value_t = 1000)]
    pub train_tasks: usize,
    #[arg(long, default_value_t = 500)]
    pub holdout_tasks: usize,
    #[arg(long, default_value_t = 10)]
    pub probe_tasks: usize,
    /// Sampled predictions per probe task.
    #[arg(long, default_value_t = 8)]
    pub probe_samples: usize,
    /// Screen size as WIDTHxHEIGHT.
    #[arg(long, default_value = "1920x1080")]
    pub screen: String,
    /// Smallest element size as WIDTHxHEIGHT.
    #[arg(long, default_value = "8x8")]
    pub min_size: String,
    /// Largest element size as WIDTHxHEIGHT.
    #[arg(long, default_value = "512x512")]
    pub max_size: String,
    /// Proportions of text,icon,widget elements.
    #[arg(long, default_value = "0.4,0.35,0.25")]
    pub kind_mix: String,
    /// Inclusive distractor-count range as MIN-MAX.
    #[arg(long, default_value = "0-20")]
    pub distractors: String,
}

fn parse_pair(s: &str, sep: char, what: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once(sep)
        .ok_or_else(|| anyhow!("{what} must look like A{sep}B, got `{s}`"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

pub fn parse_box(s: &str) -> Result<BBox> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        bail!("a box needs four comma-separated numbers, got `{s}`");
    }
    let mut c = [0.0; 4];
    for (o, p) in c.iter_mut().zip(&parts) {
        *o = p
            .trim()
            .parse()
            .map_err(|_| anyhow!("`{}` is not a number in box `{s}`", p.trim()))?;
    }
    Ok(BBox::from_array(c)?)
}

#[derive(Debug, Clone, Args)]
pub struct TrainSetup {
    #[command(flatten)]
    pub reward: RewardFlags,
    #[command(flatten)]
    pub grpo: GrpoFlags,
    #[command(flatten)]
    pub generator: GeneratorFlags,
}

impl TrainSetup {
    pub fn to_config(&self) -> Result<TrainConfig> {
        let g = &self.generator;
        let (w, h) = parse_pair(&g.screen, 'x', "--screen")?;
        let kinds: Vec<f64> = g
            .kind_mix
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()?;
        let kind_mix: [f64; 3] = kinds
            .try_into()
            .map_err(|_| anyhow!("--kind-mix needs three proportions"))?;
        let (dlo, dhi) = parse_pair(&g.distractors, '-', "--distractors")?;
        let generator = GeneratorConfig {
            seed: self.grpo.seed,
            n_tasks: g.train_tasks,
            screen: ScreenSize::new(w, h),
            min_size: parse_pair(&g.min_size, 'x', "--min-size")?,
            max_size: parse_pair(&g.max_size, 'x', "--max-size")?,
            kind_mix,
            distractors: (dlo as u32, dhi as u32),
        };
        let p = &self.grpo;
        let grpo = GrpoConfig {
            group_size: p.group_size,
            clip_epsilon: p.epsilon,
            kl_beta: p.beta,
            learning_rate: p.lr,
            std_floor: p.std_floor,
            steps: p.steps,
            seed: p.seed,
        };
        let cfg = TrainConfig {
            generator,
            reward: self.reward.to_config(p.seed)?,
            grpo,
            batch_tasks: p.batch_tasks,
            holdout_tasks: g.holdout_tasks,
            probe_tasks: g.probe_tasks,
            probe_samples: g.probe_samples,
            eval_every: p.eval_every,
            init_log_std: p.init_log_std,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RewardCmd {
    #[arg(long)]
    pub pred: Option<String>,
    /// Raw prediction text, e.g. "[10, 20, 30, 40]"; also scored for format.
    #[arg(long, conflicts_with = "pred")]
    pub pred_raw: Option<String>,
    #[arg(long)]
    pub gt: String,
    /// Also print every sparse and gated baseline.
    #[arg(long)]
    pub all: bool,
    /// Draw index of the random variants.
    #[arg(long, default_value_t = 0)]
    pub draw: u64,
    #[command(flatten)]
    pub reward: RewardFlags,
}

#[derive(Debug, Args)]
pub struct ScoreCmd {
    pub annotations: PathBuf,
    /// Output directory (default: $GROUNDRL_OUT_ROOT/score).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub reward: RewardFlags,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    /// Output directory (default: $GROUNDRL_OUT_ROOT/train).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub setup: TrainSetup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Alpha,
    Weights,
    RewardVariant,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Grid points, `;`-separated. Alpha: numbers or `fixed`. Weights:
    /// `NU:GAMMA`. Variants: names. Defaults to the standard ablation grid.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Output directory (default: $GROUNDRL_OUT_ROOT/sweep-<axis>).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Sigma used by the `fixed` alpha grid point, in pixels.
    #[arg(long, default_value_t = 32.0)]
    pub fixed_sigma_px: f64,
    #[command(flatten)]
    pub setup: TrainSetup,
}

pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}
