//! Spatial rewards for box predictions.
//!
//! The dense rewards model both the target element and the prediction as
//! diagonal Gaussians whose spread follows the box size:
//!
//! * the **point** reward is the unnormalized Gaussian kernel of the target
//!   evaluated at the predicted center, so it peaks at exactly 1;
//! * the **coverage** reward is the Bhattacharyya coefficient between the
//!   predicted and target Gaussians, evaluated in closed form;
//! * the **combined** reward is `nu * point + gamma * coverage`.
//!
//! The sparse baselines (center hit, IoU threshold, their sum), the gated
//! inside-box Gaussian, and the spurious random controls live here too so
//! that every training run goes through one dispatch point,
//! [`RewardConfig::score`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::geometry::{center, contains, iou, BBox};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardVariant {
    GaussianCombined,
    GaussianPoint,
    GaussianCoverage,
    SparsePoint,
    SparseIoU,
    SparsePointPlusIoU,
    InsideGaussian,
    RandomUniform,
    RandomBinary,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 9] = [
        RewardVariant::GaussianCombined,
        RewardVariant::GaussianPoint,
        RewardVariant::GaussianCoverage,
        RewardVariant::SparsePoint,
        RewardVariant::SparseIoU,
        RewardVariant::SparsePointPlusIoU,
        RewardVariant::InsideGaussian,
        RewardVariant::RandomUniform,
        RewardVariant::RandomBinary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardVariant::GaussianCombined => "gaussian",
            RewardVariant::GaussianPoint => "gaussian-point",
            RewardVariant::GaussianCoverage => "gaussian-coverage",
            RewardVariant::SparsePoint => "sparse-point",
            RewardVariant::SparseIoU => "sparse-iou",
            RewardVariant::SparsePointPlusIoU => "sparse-point+iou",
            RewardVariant::InsideGaussian => "inside-gaussian",
            RewardVariant::RandomUniform => "random-uniform",
            RewardVariant::RandomBinary => "random-binary",
        }
    }

    /// Variants built from the size-adaptive Gaussians everywhere on screen.
    pub fn is_dense_gaussian(self) -> bool {
        matches!(
            self,
            RewardVariant::GaussianCombined
                | RewardVariant::GaussianPoint
                | RewardVariant::GaussianCoverage
        )
    }

    pub fn is_random(self) -> bool {
        matches!(self, RewardVariant::RandomUniform | RewardVariant::RandomBinary)
    }
}

impl fmt::Display for RewardVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardVariant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let alias = match s.as_str() {
            "gaussian-combined" | "combined" => Some(RewardVariant::GaussianCombined),
            "point" | "gaussian-point-only" => Some(RewardVariant::GaussianPoint),
            "coverage" => Some(RewardVariant::GaussianCoverage),
            "sparse-point-plus-iou" | "sparse-point-iou" => Some(RewardVariant::SparsePointPlusIoU),
            "ig" => Some(RewardVariant::InsideGaussian),
            "random" | "uniform" => Some(RewardVariant::RandomUniform),
            "binary" => Some(RewardVariant::RandomBinary),
            _ => None,
        };
        alias
            .or_else(|| RewardVariant::ALL.into_iter().find(|v| v.name() == s))
            .ok_or_else(|| ConfigError::Reward(format!("unknown reward variant `{s}`")))
    }
}

/// Reward selection and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub variant: RewardVariant,
    /// Standard deviation per unit of box extent.
    pub alpha: f64,
    /// Weight of the point reward.
    pub nu: f64,
    /// Weight of the coverage reward.
    pub gamma: f64,
    /// Lower bound on every Gaussian standard deviation, in pixels.
    pub sigma_floor: f64,
    /// Sparse IoU reward fires when IoU strictly exceeds this.
    pub iou_threshold: f64,
    pub format_bonus_enabled: bool,
    /// Seed of the random control variants.
    pub rng_seed: u64,
    /// When set, every Gaussian uses this standard deviation (pixels) on both
    /// axes instead of the size-adaptive one.
    pub fixed_sigma: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            variant: RewardVariant::GaussianCombined,
            alpha: 0.5,
            nu: 1.0,
            gamma: 1.0,
            sigma_floor: 1e-3,
            iou_threshold: 0.5,
            format_bonus_enabled: false,
            rng_seed: 0,
            fixed_sigma: None,
        }
    }
}

impl RewardConfig {
    pub fn with_variant(variant: RewardVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Reward(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            return bad(format!("sigma floor must be positive, got {}", self.sigma_floor));
        }
        if !(self.nu >= 0.0 && self.gamma >= 0.0) || !self.nu.is_finite() || !self.gamma.is_finite() {
            return bad(format!("nu and gamma must be non-negative, got {} and {}", self.nu, self.gamma));
        }
        if self.variant.is_dense_gaussian() && self.point_weight() + self.coverage_weight() <= 0.0 {
            return bad("nu + gamma must be positive for Gaussian rewards".into());
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return bad(format!("IoU threshold must lie in (0, 1], got {}", self.iou_threshold));
        }
        if let Some(s) = self.fixed_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("fixed sigma must be positive, got {s}"));
            }
        }
        Ok(())
    }

    /// Effective point weight after the variant has zeroed unused components.
    pub fn point_weight(&self) -> f64 {
        match self.variant {
            RewardVariant::GaussianCoverage => 0.0,
            _ => self.nu,
        }
    }

    pub fn coverage_weight(&self) -> f64 {
        match self.variant {
            RewardVariant::GaussianPoint => 0.0,
            _ => self.gamma,
        }
    }

    /// Per-axis standard deviations for a box, plus `d sigma / d extent` on
    /// each axis (zero where the floor or a fixed sigma is in effect).
    fn sigmas(&self, b: &BBox) -> AxisSigmas {
        match self.fixed_sigma {
            Some(s) => {
                let s = s.max(self.sigma_floor);
                AxisSigmas {
                    sx: s,
                    sy: s,
                    dsx: 0.0,
                    dsy: 0.0,
                }
            }
            None => {
                let axis = |extent: f64| {
                    let raw = self.alpha * extent;
                    if raw > self.sigma_floor {
                        (raw, self.alpha)
                    } else {
                        (self.sigma_floor, 0.0)
                    }
                };
                let (sx, dsx) = axis(b.width());
                let (sy, dsy) = axis(b.height());
                AxisSigmas { sx, sy, dsx, dsy }
            }
        }
    }

    /// Scores one predicted box against the ground truth under the selected
    /// variant. `draw` addresses the random stream of the spurious-reward
    /// variants and is ignored by every other variant.
    pub fn score(&self, pred: &BBox, gt: &BBox, draw: u64) -> RewardBreakdown {
        let format = if self.format_bonus_enabled { 1.0 } else { 0.0 };
        let (point, coverage, core) = match self.variant {
            RewardVariant::GaussianCombined
            | RewardVariant::GaussianPoint
            | RewardVariant::GaussianCoverage => {
                let p = point_reward(pred, gt, self);
                let c = coverage_reward(pred, gt, self);
                (p, c, self.point_weight() * p + self.coverage_weight() * c)
            }
            RewardVariant::SparsePoint => {
                let p = sparse_point_reward(pred, gt);
                (p, 0.0, p)
            }
            RewardVariant::SparseIoU => {
                let c = sparse_iou_reward(pred, gt, self);
                (0.0, c, c)
            }
            RewardVariant::SparsePointPlusIoU => {
                let p = sparse_point_reward(pred, gt);
                let c = sparse_iou_reward(pred, gt, self);
                (p, c, p + c)
            }
            RewardVariant::InsideGaussian => {
                let p = inside_gaussian_reward(pred, gt, self);
                (p, 0.0, p)
            }
            RewardVariant::RandomUniform => {
                let r = random_reward(RandomKind::Uniform01, self.rng_seed, draw);
                (0.0, 0.0, r)
            }
            RewardVariant::RandomBinary => {
                let r = random_reward(RandomKind::Binary, self.rng_seed, draw);
                (0.0, 0.0, r)
            }
        };
        RewardBreakdown {
            total: core + format,
            point,
            coverage,
            format,
            variant: self.variant,
        }
    }

    /// Scores a raw textual prediction. Text that is not exactly four
    /// bracketed numbers earns nothing, including no format bonus.
    pub fn score_raw(&self, raw: &str, gt: &BBox, draw: u64) -> RewardBreakdown {
        match parse_box_text(raw).and_then(|c| BBox::from_array(c).ok()) {
            Some(pred) => self.score(&pred, gt, draw),
            None => RewardBreakdown {
                total: 0.0,
                point: 0.0,
                coverage: 0.0,
                format: 0.0,
                variant: self.variant,
            },
        }
    }
}

struct AxisSigmas {
    sx: f64,
    sy: f64,
    dsx: f64,
    dsy: f64,
}

/// Per-component view of one reward evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardBreakdown {
    pub total: f64,
    pub point: f64,
    pub coverage: f64,
    pub format: f64,
    pub variant: RewardVariant,
}

/// Gaussian point reward: `exp(-(dx²/σx² + dy²/σy²)/2)` with σ taken from the
/// ground-truth box. Maximum 1 when the centers coincide.
pub fn point_reward(pred: &BBox, gt: &BBox, cfg: &RewardConfig) -> f64 {
    let g = cfg.sigmas(gt);
    let (cp, cg) = (center(pred), center(gt));
    let qx = (cp.x - cg.x) / g.sx;
    let qy = (cp.y - cg.y) / g.sy;
    (-0.5 * (qx * qx + qy * qy)).exp()
}

/// Log of the Bhattacharyya coefficient on one axis, given the center offset
/// and both variances. Works on log-variances so extreme box sizes neither
/// overflow nor underflow.
fn ln_bhattacharyya_axis(d: f64, var_p: f64, var_g: f64) -> f64 {
    let var_mean = 0.5 * (var_p + var_g);
    -0.125 * d * d / var_mean - 0.5 * (var_mean.ln() - 0.5 * (var_p.ln() + var_g.ln()))
}

/// Gaussian coverage reward: the Bhattacharyya coefficient between the
/// predicted and ground-truth box Gaussians. Lies in (0, 1]; equals 1 iff the
/// two Gaussians are identical.
pub fn coverage_reward(pred: &BBox, gt: &BBox, cfg: &RewardConfig) -> f64 {
    let p = cfg.sigmas(pred);
    let g = cfg.sigmas(gt);
    let (cp, cg) = (center(pred), center(gt));
    let ln_bc = ln_bhattacharyya_axis(cp.x - cg.x, p.sx * p.sx, g.sx * g.sx)
        + ln_bhattacharyya_axis(cp.y - cg.y, p.sy * p.sy, g.sy * g.sy);
    ln_bc.exp().min(1.0)
}

/// Weighted point + coverage reward.
pub fn total_reward(pred: &BBox, gt: &BBox, cfg: &RewardConfig) -> RewardBreakdown {
    let mut dense = cfg.clone();
    if !dense.variant.is_dense_gaussian() {
        dense.variant = RewardVariant::GaussianCombined;
    }
    dense.score(pred, gt, 0)
}

/// 1 when the predicted center lies in the ground-truth box, else 0.
pub fn sparse_point_reward(pred: &BBox, gt: &BBox) -> f64 {
    if contains(gt, &center(pred)) {
        1.0
    } else {
        0.0
    }
}

/// 1 when IoU strictly exceeds the configured threshold, else 0.
pub fn sparse_iou_reward(pred: &BBox, gt: &BBox, cfg: &RewardConfig) -> f64 {
    if iou(pred, gt) > cfg.iou_threshold {
        1.0
    } else {
        0.0
    }
}

pub fn sparse_point_plus_iou_reward(pred: &BBox, gt: &BBox, cfg: &RewardConfig) -> f64 {
    sparse_point_reward(pred, gt) + sparse_iou_reward(pred, gt, cfg)
}

/// Gaussian point reward gated to zero outside the ground-truth box.
pub fn inside_gaussian_reward(pred: &BBox, gt: &BBox, cfg: &RewardConfig) -> f64 {
    if contains(gt, &center(pred)) {
        point_reward(pred, gt, cfg)
    } else {
        0.0
    }
}

/// Parses `[x1, y1, x2, y2]`: brackets required, exactly four finite numbers.
pub fn parse_box_text(raw: &str) -> Option<[f64; 4]> {
    let inner = raw.trim().strip_prefix('[')?.strip_suffix(']')?;
    let mut out = [0.0; 4];
    let mut n = 0;
    for part in inner.split(',') {
        if n == 4 {
            return None;
        }
        let v: f64 = part.trim().parse().ok()?;
        if !v.is_finite() {
            return None;
        }
        out[n] = v;
        n += 1;
    }
    (n == 4).then_some(out)
}

/// 1 when the raw output is exactly four bracketed numbers, else 0.
pub fn format_reward(raw: &str) -> f64 {
    if parse_box_text(raw).is_some() {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomKind {
    Uniform01,
    Binary,
}

/// Spurious reward independent of the prediction. Deterministic in
/// `(seed, draw)`.
pub fn random_reward(kind: RandomKind, seed: u64, draw: u64) -> f64 {
    let mut r = rng::stream(seed, &[rng::domain::REWARD, draw]);
    match kind {
        RandomKind::Uniform01 => r.random_range(0.0..=1.0),
        RandomKind::Binary => {
            if r.random_bool(0.5) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Analytic gradient of the dense reward total with respect to the predicted
/// box corners `(x1, y1, x2, y2)`.
///
/// Includes the dependence of the predicted Gaussian's spread on the
/// predicted size; on an axis clamped by the sigma floor that dependence is
/// zero. Returns `None` for variants that are not dense Gaussians.
pub fn reward_gradient(pred: &BBox, gt: &BBox, cfg: &RewardConfig) -> Option<[f64; 4]> {
    if !cfg.variant.is_dense_gaussian() {
        return None;
    }
    let sp = cfg.sigmas(pred);
    let sg = cfg.sigmas(gt);
    let (cp, cg) = (center(pred), center(gt));
    let point = point_reward(pred, gt, cfg);
    let cov = coverage_reward(pred, gt, cfg);
    let (wp, wc) = (cfg.point_weight(), cfg.coverage_weight());

    // Per axis: returns (d total / d center, d total / d sigma_pred).
    let axis = |d: f64, s_pred: f64, s_gt: f64| -> (f64, f64) {
        let vg = s_gt * s_gt;
        let vp = s_pred * s_pred;
        let vm = 0.5 * (vp + vg);
        let dpoint_dc = point * (-d / vg);
        let dcov_dc = cov * (-0.25 * d / vm);
        let dcov_dvp = cov * (d * d / (16.0 * vm * vm) - 0.25 / vm + 0.25 / vp);
        (wp * dpoint_dc + wc * dcov_dc, wc * dcov_dvp * 2.0 * s_pred)
    };
    let (gcx, gsx) = axis(cp.x - cg.x, sp.sx, sg.sx);
    let (gcy, gsy) = axis(cp.y - cg.y, sp.sy, sg.sy);

    // center = (x1 + x2)/2, sigma = f(x2 - x1)
    Some([
        0.5 * gcx - gsx * sp.dsx,
        0.5 * gcy - gsy * sp.dsy,
        0.5 * gcx + gsx * sp.dsx,
        0.5 * gcy + gsy * sp.dsy,
    ])
}
