//! Affine Gaussian box policy.
//!
//! Maps a task feature vector to a diagonal Gaussian over the action
//! `(u_cx, u_cy, u_logw, u_logh)`. Actions decode to on-screen boxes: the
//! center goes through a logistic squash onto the screen, the size through an
//! exponential. Log-densities and their parameter gradients are exact.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::PolicyError;
use crate::geometry::{BBox, Point2};
use crate::grpo::StochasticPolicy;

pub const ACTION_DIM: usize = 4;
pub const MIN_STD: f64 = 1e-4;
pub const MAX_STD: f64 = 10.0;
/// Smallest decoded box side, in pixels.
pub const MIN_SIDE: f64 = 1.0;
/// Size actions above this are saturated before exponentiation.
const MAX_LOG_SIZE: f64 = 5.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenSize {
    pub width: f64,
    pub height: f64,
}

impl ScreenSize {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }
}

/// Diagonal Gaussian over a vector space.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), std.len());
        Self { mean, std }
    }

    pub fn log_prob(&self, x: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.std)
            .zip(x)
            .map(|((m, s), x)| {
                let z = (x - m) / s;
                -0.5 * z * z - s.ln() - 0.5 * LN_2PI
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: [f64; ACTION_DIM],
    pub logp: f64,
    pub pred_box: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBoxPolicy {
    feature_dim: usize,
    /// Row-major `ACTION_DIM x feature_dim`.
    weights: Vec<f64>,
    bias: [f64; ACTION_DIM],
    log_std: [f64; ACTION_DIM],
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_std(log_std: f64) -> (f64, f64) {
    let s = log_std.exp();
    if s < MIN_STD {
        (MIN_STD, 0.0)
    } else if s > MAX_STD {
        (MAX_STD, 0.0)
    } else {
        // d std / d log_std
        (s, s)
    }
}

impl GaussianBoxPolicy {
    /// Zero map: every task gets the same centered, full-screen mean action.
    pub fn new(feature_dim: usize, init_log_std: f64) -> Self {
        Self {
            feature_dim,
            weights: vec![0.0; ACTION_DIM * feature_dim],
            bias: [0.0; ACTION_DIM],
            log_std: [init_log_std; ACTION_DIM],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_params(&self) -> usize {
        ACTION_DIM * self.feature_dim + 2 * ACTION_DIM
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64; ACTION_DIM] {
        &self.bias
    }

    pub fn log_std(&self) -> &[f64; ACTION_DIM] {
        &self.log_std
    }

    pub fn set_weight(&mut self, row: usize, col: usize, value: f64) {
        self.weights[row * self.feature_dim + col] = value;
    }

    pub fn set_bias(&mut self, bias: [f64; ACTION_DIM]) {
        self.bias = bias;
    }

    pub fn set_log_std(&mut self, log_std: [f64; ACTION_DIM]) {
        self.log_std = log_std;
    }

    fn check(&self, features: &[f64]) -> Result<(), PolicyError> {
        if features.len() != self.feature_dim {
            return Err(PolicyError::DimensionMismatch {
                expected: self.feature_dim,
                actual: features.len(),
            });
        }
        Ok(())
    }

    /// Mean and (clamped) standard deviation of the action distribution.
    pub fn forward(&self, features: &[f64]) -> Result<([f64; ACTION_DIM], [f64; ACTION_DIM]), PolicyError> {
        self.check(features)?;
        let mut mean = self.bias;
        for (j, m) in mean.iter_mut().enumerate() {
            let row = &self.weights[j * self.feature_dim..(j + 1) * self.feature_dim];
            *m += row.iter().zip(features).map(|(w, f)| w * f).sum::<f64>();
        }
        let std = self.log_std.map(|l| clamp_std(l).0);
        Ok((mean, std))
    }

    pub fn distribution(&self, features: &[f64]) -> Result<DiagGaussian, PolicyError> {
        let (mean, std) = self.forward(features)?;
        Ok(DiagGaussian::new(mean.to_vec(), std.to_vec()))
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        features: &[f64],
        screen: ScreenSize,
        rng: &mut R,
    ) -> Result<ActionSample, PolicyError> {
        let (mean, std) = self.forward(features)?;
        let mut action = [0.0; ACTION_DIM];
        for j in 0..ACTION_DIM {
            let z: f64 = rng.sample(StandardNormal);
            action[j] = mean[j] + std[j] * z;
        }
        let logp = self.log_prob(features, &action)?;
        Ok(ActionSample {
            action,
            logp,
            pred_box: decode(&action, screen),
        })
    }

    /// Box decoded from the mean action.
    pub fn greedy_box(&self, features: &[f64], screen: ScreenSize) -> Result<BBox, PolicyError> {
        let (mean, _) = self.forward(features)?;
        Ok(decode(&mean, screen))
    }

    pub fn log_prob(&self, features: &[f64], action: &[f64]) -> Result<f64, PolicyError> {
        if action.len() != ACTION_DIM {
            return Err(PolicyError::DimensionMismatch {
                expected: ACTION_DIM,
                actual: action.len(),
            });
        }
        Ok(self.distribution(features)?.log_prob(action))
    }

    fn weight_offset(&self) -> usize {
        0
    }

    fn bias_offset(&self) -> usize {
        ACTION_DIM * self.feature_dim
    }

    fn log_std_offset(&self) -> usize {
        self.bias_offset() + ACTION_DIM
    }

    /// Spreads per-dimension derivatives with respect to the mean into the
    /// weight and bias slots of a flat gradient.
    fn push_mean_grad(&self, grad: &mut [f64], features: &[f64], dmean: &[f64; ACTION_DIM]) {
        let (w0, b0) = (self.weight_offset(), self.bias_offset());
        for j in 0..ACTION_DIM {
            for (k, f) in features.iter().enumerate() {
                grad[w0 + j * self.feature_dim + k] = dmean[j] * f;
            }
            grad[b0 + j] = dmean[j];
        }
    }

    /// Serializes parameters as named arrays: one line per array holding the
    /// name, the shape and the row-major values. Floats are written in their
    /// shortest round-trip form, so reading back is bit-exact.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::from("# groundrl policy checkpoint v1\n");
        let mut push = |name: &str, shape: &[usize], values: &[f64]| {
            let shape: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            let _ = write!(out, "{name} {}", shape.join("x"));
            for v in values {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        };
        push("weights", &[ACTION_DIM, self.feature_dim], &self.weights);
        push("bias", &[ACTION_DIM], &self.bias);
        push("log_std", &[ACTION_DIM], &self.log_std);
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, PolicyError> {
        let mut weights = None;
        let mut bias = None;
        let mut log_std = None;
        let mut feature_dim = 0;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let err = |msg: String| PolicyError::Checkpoint { line: lineno, msg };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts.next().unwrap_or_default();
            let shape: Vec<usize> = parts
                .next()
                .ok_or_else(|| err("missing shape".into()))?
                .split('x')
                .map(|d| d.parse().map_err(|_| err(format!("bad shape dimension `{d}`"))))
                .collect::<Result<_, _>>()?;
            let values: Vec<f64> = parts
                .map(|v| v.parse().map_err(|_| err(format!("bad value `{v}`"))))
                .collect::<Result<_, _>>()?;
            let expected: usize = shape.iter().product();
            if values.len() != expected {
                return Err(err(format!("shape {shape:?} needs {expected} values, found {}", values.len())));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(err("non-finite parameter".into()));
            }
            let as_action = |v: Vec<f64>| -> Result<[f64; ACTION_DIM], PolicyError> {
                v.try_into()
                    .map_err(|_| err(format!("`{name}` must have {ACTION_DIM} entries")))
            };
            match name {
                "weights" => {
                    if shape.len() != 2 || shape[0] != ACTION_DIM {
                        return Err(err(format!("weights must be {ACTION_DIM}xF, got {shape:?}")));
                    }
                    feature_dim = shape[1];
                    weights = Some(values);
                }
                "bias" => bias = Some(as_action(values)?),
                "log_std" => log_std = Some(as_action(values)?),
                other => return Err(err(format!("unknown array `{other}`"))),
            }
        }
        let missing = |what: &str| PolicyError::Checkpoint {
            line: 0,
            msg: format!("missing `{what}`"),
        };
        Ok(Self {
            feature_dim,
            weights: weights.ok_or_else(|| missing("weights"))?,
            bias: bias.ok_or_else(|| missing("bias"))?,
            log_std: log_std.ok_or_else(|| missing("log_std"))?,
        })
    }
}

impl StochasticPolicy for GaussianBoxPolicy {
    fn parameters(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p.extend_from_slice(&self.log_std);
        p
    }

    fn set_parameters(&mut self, params: &[f64]) -> Result<(), PolicyError> {
        if params.len() != self.num_params() {
            return Err(PolicyError::DimensionMismatch {
                expected: self.num_params(),
                actual: params.len(),
            });
        }
        let (b0, s0) = (self.bias_offset(), self.log_std_offset());
        self.weights.copy_from_slice(&params[..b0]);
        self.bias.copy_from_slice(&params[b0..s0]);
        self.log_std.copy_from_slice(&params[s0..]);
        Ok(())
    }

    fn log_prob_with_grad(&self, features: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>), PolicyError> {
        let logp = self.log_prob(features, action)?;
        let (mean, std) = self.forward(features)?;
        let mut grad = vec![0.0; self.num_params()];
        let mut dmean = [0.0; ACTION_DIM];
        let s0 = self.log_std_offset();
        for j in 0..ACTION_DIM {
            let z = (action[j] - mean[j]) / std[j];
            dmean[j] = z / std[j];
            let dstd = clamp_std(self.log_std[j]).1;
            // d logp / d std = (z² - 1)/std
            grad[s0 + j] = (z * z - 1.0) / std[j] * dstd;
        }
        self.push_mean_grad(&mut grad, features, &dmean);
        Ok((logp, grad))
    }

    fn kl_with_grad(&self, reference: &Self, features: &[f64]) -> Result<(f64, Vec<f64>), PolicyError> {
        let (mp, sp) = self.forward(features)?;
        let (mq, sq) = reference.forward(features)?;
        let mut grad = vec![0.0; self.num_params()];
        let mut dmean = [0.0; ACTION_DIM];
        let mut kl = 0.0;
        let s0 = self.log_std_offset();
        for j in 0..ACTION_DIM {
            let d = mp[j] - mq[j];
            let vq = sq[j] * sq[j];
            kl += (sq[j] / sp[j]).ln() + (sp[j] * sp[j] + d * d) / (2.0 * vq) - 0.5;
            dmean[j] = d / vq;
            let dstd = clamp_std(self.log_std[j]).1;
            // d KL / d std_p = -1/std_p + std_p/var_q
            grad[s0 + j] = (-1.0 / sp[j] + sp[j] / vq) * dstd;
        }
        self.push_mean_grad(&mut grad, features, &dmean);
        Ok((kl.max(0.0), grad))
    }
}

/// Maps an action to a canonical on-screen box at least [`MIN_SIDE`] pixels
/// on each side.
pub fn decode(action: &[f64; ACTION_DIM], screen: ScreenSize) -> BBox {
    let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
    let cx = sigmoid(finite(action[0])) * screen.width;
    let cy = sigmoid(finite(action[1])) * screen.height;
    let w = (screen.width * finite(action[2]).min(MAX_LOG_SIZE).exp()).max(MIN_SIDE);
    let h = (screen.height * finite(action[3]).min(MAX_LOG_SIZE).exp()).max(MIN_SIDE);
    let (x1, x2) = clip_span(cx, w, screen.width);
    let (y1, y2) = clip_span(cy, h, screen.height);
    BBox::new(x1, y1, x2, y2).expect("decoded coordinates are finite")
}

fn clip_span(c: f64, len: f64, limit: f64) -> (f64, f64) {
    let mut lo = (c - len / 2.0).clamp(0.0, limit);
    let mut hi = (c + len / 2.0).clamp(0.0, limit);
    if hi - lo < MIN_SIDE {
        if lo + MIN_SIDE <= limit {
            hi = lo + MIN_SIDE;
        } else {
            lo = hi - MIN_SIDE;
        }
    }
    (lo, hi)
}

/// Action whose mean decodes to `target` (ignoring clipping).
pub fn encode(target: &BBox, screen: ScreenSize) -> [f64; ACTION_DIM] {
    let logit = |p: f64| {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        (p / (1.0 - p)).ln()
    };
    let c: Point2 = target.center();
    [
        logit(c.x / screen.width),
        logit(c.y / screen.height),
        (target.width().max(MIN_SIDE) / screen.width).ln(),
        (target.height().max(MIN_SIDE) / screen.height).ln(),
    ]
}
