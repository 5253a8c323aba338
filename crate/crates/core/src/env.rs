//! Synthetic grounding tasks, annotation files and evaluation metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ConfigError, DataError, PolicyError};
use crate::geometry::{center, contains, BBox};
use crate::policy::{GaussianBoxPolicy, ScreenSize};
use crate::rewards::parse_box_text;
use crate::rng;

/// Length of the task descriptor fed to the policy.
pub const FEATURE_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ElementKind {
    Text,
    Icon,
    Widget,
}

impl ElementKind {
    pub const ALL: [ElementKind; 3] = [ElementKind::Text, ElementKind::Icon, ElementKind::Widget];

    pub fn name(self) -> &'static str {
        match self {
            ElementKind::Text => "text",
            ElementKind::Icon => "icon",
            ElementKind::Widget => "widget",
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub task_id: usize,
    pub screen: ScreenSize,
    pub gt_box: BBox,
    pub features: Vec<f64>,
    pub element_kind: ElementKind,
    pub distractors: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_tasks: usize,
    pub screen: ScreenSize,
    /// Smallest element `(width, height)` in pixels.
    pub min_size: (f64, f64),
    /// Largest element `(width, height)` in pixels.
    pub max_size: (f64, f64),
    /// Proportions of text, icon and widget elements.
    pub kind_mix: [f64; 3],
    /// Inclusive range of distractor counts.
    pub distractors: (u32, u32),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_tasks: 1000,
            screen: ScreenSize::new(1920.0, 1080.0),
            min_size: (8.0, 8.0),
            max_size: (512.0, 512.0),
            kind_mix: [0.4, 0.35, 0.25],
            distractors: (0, 20),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Generator(m));
        let s = self.screen;
        if !(s.width >= 1.0 && s.height >= 1.0 && s.width.is_finite() && s.height.is_finite()) {
            return bad(format!("screen must be at least 1x1, got {}x{}", s.width, s.height));
        }
        let (lo, hi) = (self.min_size, self.max_size);
        if !(lo.0 > 0.0 && lo.1 > 0.0) {
            return bad(format!("element sizes must be positive, got {lo:?}"));
        }
        if !(lo.0 <= hi.0 && lo.1 <= hi.1) {
            return bad(format!("min size {lo:?} exceeds max size {hi:?}"));
        }
        if !(hi.0 <= s.width && hi.1 <= s.height) {
            return bad(format!("max size {hi:?} does not fit on a {}x{} screen", s.width, s.height));
        }
        if self.kind_mix.iter().any(|p| p.is_nan() || *p < 0.0) || (self.kind_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("kind proportions must be non-negative and sum to 1, got {:?}", self.kind_mix));
        }
        if self.distractors.0 > self.distractors.1 {
            return bad(format!("distractor range {:?} is empty", self.distractors));
        }
        Ok(())
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Normalized descriptor of a target element: logit of the relative center,
/// log of the relative size, a one-hot kind and the scaled distractor count.
pub fn task_features(gt: &BBox, screen: ScreenSize, kind: ElementKind, distractors: u32, max_distractors: u32) -> Vec<f64> {
    let c = center(gt);
    let mut f = vec![
        logit(c.x / screen.width),
        logit(c.y / screen.height),
        (gt.width().max(1.0) / screen.width).ln(),
        (gt.height().max(1.0) / screen.height).ln(),
        0.0,
        0.0,
        0.0,
        if max_distractors == 0 { 0.0 } else { distractors as f64 / max_distractors as f64 },
    ];
    f[4 + kind as usize] = 1.0;
    f
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)
}

/// Deterministic task list. Element sizes are log-uniform over the
/// configured range and boxes are placed uniformly among on-screen positions.
pub fn generate(cfg: &GeneratorConfig) -> Result<Vec<TaskInstance>, ConfigError> {
    cfg.validate()?;
    let s = cfg.screen;
    let total: f64 = cfg.kind_mix.iter().sum();
    Ok((0..cfg.n_tasks)
        .map(|i| {
            let mut r = rng::stream(cfg.seed, &[rng::domain::GENERATE, i as u64]);
            let u: f64 = r.random::<f64>() * total;
            let element_kind = if u < cfg.kind_mix[0] {
                ElementKind::Text
            } else if u < cfg.kind_mix[0] + cfg.kind_mix[1] {
                ElementKind::Icon
            } else {
                ElementKind::Widget
            };
            let w = log_uniform(&mut r, cfg.min_size.0, cfg.max_size.0);
            let h = log_uniform(&mut r, cfg.min_size.1, cfg.max_size.1);
            // positions on a 1/256 px grid so that x1 + w stays exact for
            // representable sizes
            let x1 = (r.random_range(0.0..=s.width - w) * 256.0).floor() / 256.0;
            let y1 = (r.random_range(0.0..=s.height - h) * 256.0).floor() / 256.0;
            let distractors = r.random_range(cfg.distractors.0..=cfg.distractors.1);
            // x1 + w may round past the edge by an ulp
            let gt_box = BBox::new(x1, y1, (x1 + w).min(s.width), (y1 + h).min(s.height)).expect("finite");
            TaskInstance {
                task_id: i,
                screen: s,
                features: task_features(&gt_box, s, element_kind, distractors, cfg.distractors.1),
                gt_box,
                element_kind,
                distractors,
            }
        })
        .collect())
}

/// A prediction as found in an annotation record.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Parsed { pred: BBox, raw: Option<String> },
    /// Present but not four finite numbers; kept so it counts as a miss.
    Malformed { raw: String },
    Absent,
}

impl Prediction {
    pub fn boxed(&self) -> Option<BBox> {
        match self {
            Prediction::Parsed { pred, .. } => Some(*pred),
            _ => None,
        }
    }

    pub fn raw(&self) -> Option<&str> {
        match self {
            Prediction::Parsed { raw, .. } => raw.as_deref(),
            Prediction::Malformed { raw } => Some(raw),
            Prediction::Absent => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub line: usize,
    pub gt: BBox,
    pub pred: Prediction,
    pub kind: Option<String>,
}

fn coords(v: &Value) -> Option<[f64; 4]> {
    let arr = v.as_array()?;
    if arr.len() != 4 {
        return None;
    }
    let mut out = [0.0; 4];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = x.as_f64().filter(|f| f.is_finite())?;
    }
    Some(out)
}

/// Reads line-delimited JSON records with keys `gt` (required, 4 numbers),
/// `pred` (optional, 4 numbers), `pred_raw` (optional string) and `kind`
/// (optional string). Blank lines are skipped.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, DataError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::FileNotFound(path.to_path_buf()),
        _ => DataError::Io(e),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |msg: String| DataError::MalformedRecord {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let v: Value = serde_json::from_str(&line).map_err(|e| malformed(format!("invalid JSON: {e}")))?;
        let gt = v
            .get("gt")
            .ok_or_else(|| malformed("missing `gt`".into()))
            .and_then(|g| coords(g).ok_or_else(|| malformed("`gt` must be 4 finite numbers".into())))?;
        let gt = BBox::from_array(gt).map_err(|e| malformed(e.to_string()))?;

        let raw = v.get("pred_raw").map(|r| match r.as_str() {
            Some(s) => s.to_string(),
            None => r.to_string(),
        });
        let pred = match (v.get("pred"), raw) {
            (Some(p), raw) => match coords(p).and_then(|c| BBox::from_array(c).ok()) {
                Some(pred) => Prediction::Parsed { pred, raw },
                None => Prediction::Malformed { raw: raw.unwrap_or_else(|| p.to_string()) },
            },
            (None, Some(raw)) => match parse_box_text(&raw).and_then(|c| BBox::from_array(c).ok()) {
                Some(pred) => Prediction::Parsed { pred, raw: Some(raw) },
                None => Prediction::Malformed { raw },
            },
            (None, None) => Prediction::Absent,
        };
        let kind = v.get("kind").and_then(|k| k.as_str()).map(str::to_string);
        out.push(AnnotationRecord {
            line: lineno,
            gt,
            pred,
            kind,
        });
    }
    Ok(out)
}

/// One prediction to be scored; `pred = None` is a malformed or missing
/// prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub pred: Option<BBox>,
    pub gt: BBox,
    pub kind: String,
}

impl EvalPair {
    pub fn new(pred: Option<BBox>, gt: BBox, kind: impl Into<String>) -> Self {
        Self {
            pred,
            gt,
            kind: kind.into(),
        }
    }
}

impl From<&AnnotationRecord> for EvalPair {
    fn from(r: &AnnotationRecord) -> Self {
        EvalPair::new(r.pred.boxed(), r.gt, r.kind.clone().unwrap_or_else(|| "all".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct KindTally {
    pub hits: usize,
    pub n: usize,
}

impl KindTally {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.hits as f64 / self.n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub hits: usize,
    pub accuracy: f64,
    /// Mean center distance over well-formed predictions; 0 if there are none.
    pub mean_center_distance: f64,
    pub malformed: usize,
    pub per_kind: BTreeMap<String, KindTally>,
}

/// Center-in-box accuracy and mean center distance. Malformed predictions
/// count as misses and are left out of the distance mean.
pub fn evaluate(pairs: &[EvalPair]) -> Result<EvalReport, DataError> {
    if pairs.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let mut hits = 0;
    let mut malformed = 0;
    let mut distances = Vec::with_capacity(pairs.len());
    let mut per_kind: BTreeMap<String, KindTally> = BTreeMap::new();
    for p in pairs {
        let tally = per_kind.entry(p.kind.clone()).or_default();
        tally.n += 1;
        match p.pred {
            Some(pred) => {
                let c = center(&pred);
                distances.push(c.distance(&center(&p.gt)));
                if contains(&p.gt, &c) {
                    hits += 1;
                    tally.hits += 1;
                }
            }
            None => malformed += 1,
        }
    }
    // summing in sorted order keeps the mean independent of input order
    distances.sort_by(f64::total_cmp);
    let mean_center_distance = if distances.is_empty() {
        0.0
    } else {
        distances.iter().sum::<f64>() / distances.len() as f64
    };
    Ok(EvalReport {
        n: pairs.len(),
        hits,
        accuracy: hits as f64 / pairs.len() as f64,
        mean_center_distance,
        malformed,
        per_kind,
    })
}

/// Greedy (mean-action) predictions of `policy` on `tasks`, evaluated.
pub fn evaluate_policy(policy: &GaussianBoxPolicy, tasks: &[TaskInstance]) -> Result<EvalReport, crate::Error> {
    let pairs = tasks
        .iter()
        .map(|t| {
            let pred = policy.greedy_box(&t.features, t.screen)?;
            Ok(EvalPair::new(Some(pred), t.gt_box, t.element_kind.name()))
        })
        .collect::<Result<Vec<_>, PolicyError>>()?;
    Ok(evaluate(&pairs)?)
}

/// Mean distance from sampled predicted centers to the target centers, over
/// `n_samples` draws per task. Draws come from the stream
/// `(seed, PROBE, tag, task, sample)`.
pub fn sampled_center_distance(
    policy: &GaussianBoxPolicy,
    tasks: &[TaskInstance],
    n_samples: usize,
    seed: u64,
    tag: u64,
) -> Result<f64, PolicyError> {
    let per_task = per_task_sampled_distance(policy, tasks, n_samples, seed, tag)?;
    Ok(per_task.iter().sum::<f64>() / per_task.len().max(1) as f64)
}

fn per_task_sampled_distance(
    policy: &GaussianBoxPolicy,
    tasks: &[TaskInstance],
    n_samples: usize,
    seed: u64,
    tag: u64,
) -> Result<Vec<f64>, PolicyError> {
    tasks
        .iter()
        .map(|t| {
            let target = center(&t.gt_box);
            let mut total = 0.0;
            for k in 0..n_samples {
                let mut r = rng::stream(seed, &[rng::domain::PROBE, tag, t.task_id as u64, k as u64]);
                let s = policy.sample(&t.features, t.screen, &mut r)?;
                total += center(&s.pred_box).distance(&target);
            }
            Ok(total / n_samples.max(1) as f64)
        })
        .collect()
}

/// Picks the `count` tasks with the largest sampled center distance under
/// `policy` (normally the untrained one). Ties go to the lower task id.
pub fn select_probes(
    policy: &GaussianBoxPolicy,
    candidates: &[TaskInstance],
    count: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<TaskInstance>, PolicyError> {
    let d = per_task_sampled_distance(policy, candidates, n_samples, seed, u64::MAX)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(candidates[a].task_id.cmp(&candidates[b].task_id)));
    Ok(order.into_iter().take(count).map(|i| candidates[i].clone()).collect())
}

/// Periodic record of the probe-set mean center distance.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTrace {
    pub every_k_steps: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub points: Vec<(usize, f64)>,
}

impl DistanceTrace {
    pub fn new(every_k_steps: usize, n_samples: usize, seed: u64) -> Self {
        Self {
            every_k_steps: every_k_steps.max(1),
            n_samples,
            seed,
            points: Vec::new(),
        }
    }

    pub fn due(&self, step: usize) -> bool {
        step.is_multiple_of(self.every_k_steps)
    }

    /// Records the probe distance at `step` if it falls on the schedule.
    pub fn observe(&mut self, step: usize, policy: &GaussianBoxPolicy, probes: &[TaskInstance]) -> Result<Option<f64>, PolicyError> {
        if !self.due(step) {
            return Ok(None);
        }
        let d = sampled_center_distance(policy, probes, self.n_samples, self.seed, step as u64)?;
        self.points.push((step, d));
        Ok(Some(d))
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}

/// Trailing moving average: entry `i` averages the last `min(window, i+1)`
/// values.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let s = &values[lo..=i];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

pub fn total_variation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

pub fn is_non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}
