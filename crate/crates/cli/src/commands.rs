use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use groundrl::env::{self, EvalPair, Prediction};
use groundrl::rewards;
use groundrl::train::{self, MetricsRow, TrainConfig, TrainOutcome};
use groundrl::{RewardConfig, RewardVariant};

use crate::args::{self, RewardCmd, ScoreCmd, SweepAxis, SweepCmd, TrainCmd};
use crate::output::{ensure_dir, sig9, Cell, KeyValues, TableWriter};

const SMOOTH_WINDOW: usize = 5;

fn version() -> String {
    format!("groundrl {}", env!("CARGO_PKG_VERSION"))
}

fn reward_manifest(kv: &mut KeyValues, cfg: &RewardConfig) {
    kv.push("reward.variant", cfg.variant)
        .push("reward.alpha", cfg.alpha)
        .push("reward.nu", cfg.nu)
        .push("reward.gamma", cfg.gamma)
        .push("reward.sigma_floor", cfg.sigma_floor)
        .push("reward.iou_threshold", cfg.iou_threshold)
        .push("reward.format_bonus", cfg.format_bonus_enabled)
        .push("reward.seed", cfg.rng_seed)
        .push(
            "reward.fixed_sigma",
            cfg.fixed_sigma.map_or_else(|| "none".to_string(), |s| s.to_string()),
        );
}

fn train_manifest(kv: &mut KeyValues, cfg: &TrainConfig) {
    let g = &cfg.generator;
    kv.push("generator.seed", g.seed)
        .push("generator.train_tasks", g.n_tasks)
        .push("generator.screen", format!("{}x{}", g.screen.width, g.screen.height))
        .push("generator.min_size", format!("{}x{}", g.min_size.0, g.min_size.1))
        .push("generator.max_size", format!("{}x{}", g.max_size.0, g.max_size.1))
        .push(
            "generator.kind_mix",
            format!("{}:{}:{}", g.kind_mix[0], g.kind_mix[1], g.kind_mix[2]),
        )
        .push("generator.distractors", format!("{}-{}", g.distractors.0, g.distractors.1));
    reward_manifest(kv, &cfg.reward);
    let o = &cfg.grpo;
    kv.push("grpo.group_size", o.group_size)
        .push("grpo.epsilon", o.clip_epsilon)
        .push("grpo.beta", o.kl_beta)
        .push("grpo.lr", o.learning_rate)
        .push("grpo.std_floor", o.std_floor)
        .push("grpo.steps", o.steps)
        .push("grpo.seed", o.seed)
        .push("train.batch_tasks", cfg.batch_tasks)
        .push("train.holdout_tasks", cfg.holdout_tasks)
        .push("train.probe_tasks", cfg.probe_tasks)
        .push("train.probe_samples", cfg.probe_samples)
        .push("train.eval_every", cfg.eval_every)
        .push("train.init_log_std", cfg.init_log_std);
}

pub fn reward(cmd: RewardCmd) -> Result<()> {
    let cfg = cmd.reward.to_config(0)?;
    let gt = args::parse_box(&cmd.gt).context("--gt")?;
    let (breakdown, pred) = match (&cmd.pred, &cmd.pred_raw) {
        (Some(p), _) => {
            let pred = args::parse_box(p).context("--pred")?;
            (cfg.score(&pred, &gt, cmd.draw), Some(pred))
        }
        (None, Some(raw)) => {
            let pred = rewards::parse_box_text(raw).and_then(|c| groundrl::BBox::from_array(c).ok());
            (cfg.score_raw(raw, &gt, cmd.draw), pred)
        }
        (None, None) => bail!("one of --pred or --pred-raw is required"),
    };
    let mut kv = KeyValues::new();
    kv.push("variant", breakdown.variant)
        .num("point", breakdown.point)
        .num("coverage", breakdown.coverage)
        .num("format", breakdown.format)
        .num("total", breakdown.total);
    if cmd.all {
        let z = |f: &dyn Fn(&groundrl::BBox) -> f64| pred.as_ref().map_or(0.0, f);
        kv.num("sparse_point", z(&|p| rewards::sparse_point_reward(p, &gt)))
            .num("sparse_iou", z(&|p| rewards::sparse_iou_reward(p, &gt, &cfg)))
            .num("sparse_point_plus_iou", z(&|p| rewards::sparse_point_plus_iou_reward(p, &gt, &cfg)))
            .num("inside_gaussian", z(&|p| rewards::inside_gaussian_reward(p, &gt, &cfg)))
            .num("iou", z(&|p| groundrl::geometry::iou(p, &gt)));
    }
    print!("{}", kv.render());
    Ok(())
}

pub fn score(cmd: ScoreCmd) -> Result<()> {
    let cfg = cmd.reward.to_config(0)?;
    let out = ensure_dir(&cmd.out_dir.unwrap_or_else(|| args::out_root().join("score")))?;
    let mut manifest = KeyValues::new();
    manifest
        .push("command", "score")
        .push("version", version())
        .push("annotations", cmd.annotations.display());
    reward_manifest(&mut manifest, &cfg);
    manifest
        .push("output.scores", out.join("scores.csv").display())
        .push("output.report", out.join("report.txt").display());
    manifest.write(&out.join("manifest.txt"))?;

    let records = env::load_annotations(&cmd.annotations).map_err(groundrl::Error::from)?;
    let mut table = TableWriter::create(
        &out.join("scores.csv"),
        &["line", "kind", "status", "hit", "center_distance", "point", "coverage", "format", "total"],
    )?;
    let mut pairs = Vec::with_capacity(records.len());
    for rec in &records {
        let pair = EvalPair::from(rec);
        let (status, breakdown) = match &rec.pred {
            Prediction::Parsed { pred, .. } => ("ok", cfg.score(pred, &rec.gt, rec.line as u64)),
            Prediction::Malformed { raw } => ("malformed", cfg.score_raw(raw, &rec.gt, rec.line as u64)),
            Prediction::Absent => ("absent", cfg.score_raw("", &rec.gt, rec.line as u64)),
        };
        let (hit, dist) = match pair.pred {
            Some(p) => (
                Cell::Int(groundrl::geometry::contains(&rec.gt, &p.center()) as i64),
                Cell::Num(p.center().distance(&rec.gt.center())),
            ),
            None => (Cell::Int(0), Cell::Text("nan".into())),
        };
        table.row(&[
            Cell::from(rec.line),
            Cell::Text(sanitize(&pair.kind)),
            Cell::from(status),
            hit,
            dist,
            Cell::Num(breakdown.point),
            Cell::Num(breakdown.coverage),
            Cell::Num(breakdown.format),
            Cell::Num(breakdown.total),
        ])?;
        pairs.push(pair);
    }
    drop(table);

    let report = env::evaluate(&pairs).map_err(groundrl::Error::from)?;
    let mean_total = {
        let mut totals: Vec<f64> = records
            .iter()
            .map(|r| match &r.pred {
                Prediction::Parsed { pred, .. } => cfg.score(pred, &r.gt, r.line as u64).total,
                _ => 0.0,
            })
            .collect();
        totals.sort_by(f64::total_cmp);
        totals.iter().sum::<f64>() / totals.len() as f64
    };
    let mut kv = KeyValues::new();
    kv.push("n", report.n)
        .push("hits", report.hits)
        .num("accuracy", report.accuracy)
        .num("mean_center_distance", report.mean_center_distance)
        .push("malformed", report.malformed)
        .num("mean_reward", mean_total);
    for (kind, tally) in &report.per_kind {
        kv.num(&format!("accuracy.{}", sanitize(kind)), tally.accuracy())
            .push(&format!("n.{}", sanitize(kind)), tally.n);
    }
    kv.write(&out.join("report.txt"))?;
    print!("{}", kv.render());
    Ok(())
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c == ',' || c == '=' || c.is_whitespace() { '_' } else { c })
        .collect()
}

/// Writes the manifest, then streams metrics while training, then the trace
/// and checkpoint.
fn run_training(cfg: &TrainConfig, out: &Path, command: &str) -> Result<TrainOutcome> {
    ensure_dir(out)?;
    let mut manifest = KeyValues::new();
    manifest.push("command", command).push("version", version());
    train_manifest(&mut manifest, cfg);
    manifest
        .push("output.metrics", out.join("metrics.csv").display())
        .push("output.trace", out.join("trace.csv").display())
        .push("output.checkpoint", out.join("checkpoint.txt").display());
    manifest.write(&out.join("manifest.txt"))?;

    let mut metrics = TableWriter::create(&out.join("metrics.csv"), &MetricsRow::HEADER)?;
    let mut write_err = None;
    let outcome = train::train_with(cfg, |row| {
        if write_err.is_some() {
            return;
        }
        let mut cells = vec![Cell::from(row.step)];
        cells.extend(row.values()[1..].iter().map(|v| Cell::Num(*v)));
        if let Err(e) = metrics.row(&cells) {
            write_err = Some(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }

    let values = outcome.trace.values();
    let smoothed = env::smooth(&values, SMOOTH_WINDOW);
    let mut trace = TableWriter::create(&out.join("trace.csv"), &["step", "probe_distance", "smoothed"])?;
    for (i, (step, d)) in outcome.trace.points.iter().enumerate() {
        trace.row(&[Cell::from(*step), Cell::Num(*d), Cell::Num(smoothed[i])])?;
    }
    std::fs::write(out.join("checkpoint.txt"), outcome.policy.to_checkpoint())
        .with_context(|| format!("writing checkpoint under {}", out.display()))?;
    Ok(outcome)
}

pub fn train(cmd: TrainCmd) -> Result<()> {
    let cfg = cmd.setup.to_config()?;
    let out = cmd.out_dir.unwrap_or_else(|| args::out_root().join("train"));
    let outcome = run_training(&cfg, &out, "train")?;
    let mut kv = KeyValues::new();
    kv.push("steps", cfg.grpo.steps)
        .num("baseline_accuracy", outcome.baseline_accuracy)
        .num("final_accuracy", outcome.final_accuracy)
        .num("final_probe_distance", outcome.final_probe_distance)
        .push("out_dir", out.display());
    print!("{}", kv.render());
    Ok(())
}

#[derive(Debug, Clone)]
struct GridPoint {
    label: String,
    apply: PointOverride,
}

#[derive(Debug, Clone, Copy)]
enum PointOverride {
    Alpha(f64),
    FixedSigma(f64),
    Weights(f64, f64),
    Variant(RewardVariant),
}

impl PointOverride {
    fn apply(self, cfg: &mut TrainConfig) {
        match self {
            PointOverride::Alpha(a) => {
                cfg.reward.alpha = a;
                cfg.reward.fixed_sigma = None;
            }
            PointOverride::FixedSigma(s) => cfg.reward.fixed_sigma = Some(s),
            PointOverride::Weights(nu, gamma) => {
                cfg.reward.nu = nu;
                cfg.reward.gamma = gamma;
            }
            PointOverride::Variant(v) => cfg.reward.variant = v,
        }
    }
}

fn default_grid(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Alpha => "0.25;0.5;1;2;3;fixed",
        SweepAxis::Weights => "1:1;0.8:0.2;0.2:0.8",
        SweepAxis::RewardVariant => "gaussian;sparse-point;sparse-iou;sparse-point+iou;inside-gaussian",
    }
}

fn parse_grid(axis: SweepAxis, grid: &str, fixed_sigma_px: f64) -> Result<Vec<GridPoint>> {
    let mut points = Vec::new();
    for token in grid.split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let apply = match axis {
            SweepAxis::Alpha if token == "fixed" => PointOverride::FixedSigma(fixed_sigma_px),
            SweepAxis::Alpha => PointOverride::Alpha(
                token.parse().with_context(|| format!("alpha grid point `{token}`"))?,
            ),
            SweepAxis::Weights => {
                let (nu, gamma) = token
                    .split_once(':')
                    .with_context(|| format!("weights grid point `{token}` must be NU:GAMMA"))?;
                PointOverride::Weights(nu.trim().parse()?, gamma.trim().parse()?)
            }
            SweepAxis::RewardVariant => PointOverride::Variant(token.parse()?),
        };
        let label = match apply {
            PointOverride::FixedSigma(s) => format!("fixed-sigma-{s}"),
            _ => sanitize(token),
        };
        points.push(GridPoint { label, apply });
    }
    if points.is_empty() {
        bail!("sweep grid is empty");
    }
    Ok(points)
}

struct RunResult {
    point: usize,
    outcome: Result<(f64, f64)>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn sweep(cmd: SweepCmd) -> Result<()> {
    if cmd.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let base = cmd.setup.to_config()?;
    let axis_name = match cmd.axis {
        SweepAxis::Alpha => "alpha",
        SweepAxis::Weights => "weights",
        SweepAxis::RewardVariant => "reward-variant",
    };
    let grid_text = cmd.grid.clone().unwrap_or_else(|| default_grid(cmd.axis).to_string());
    let points = parse_grid(cmd.axis, &grid_text, cmd.fixed_sigma_px)?;
    let out: PathBuf = cmd
        .out_dir
        .clone()
        .unwrap_or_else(|| args::out_root().join(format!("sweep-{axis_name}")));
    ensure_dir(&out)?;

    let base_seed = base.grpo.seed;
    let mut manifest = KeyValues::new();
    manifest
        .push("command", "sweep")
        .push("version", version())
        .push("sweep.axis", axis_name)
        .push("sweep.grid", &grid_text)
        .push("sweep.seeds", cmd.seeds)
        .push("sweep.first_seed", base_seed);
    train_manifest(&mut manifest, &base);
    manifest.push("output.summary", out.join("summary.csv").display());
    manifest.write(&out.join("manifest.txt"))?;

    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| (0..cmd.seeds).map(move |s| (p, base_seed + s)))
        .collect();
    let results: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let mut cfg = base.clone().with_seed(seed);
            points[p].apply.apply(&mut cfg);
            let dir = out.join(&points[p].label).join(format!("seed-{seed}"));
            let outcome = cfg
                .validate()
                .map_err(anyhow::Error::from)
                .and_then(|_| run_training(&cfg, &dir, "sweep"))
                .map(|o| (o.final_accuracy, o.final_probe_distance));
            RunResult { point: p, outcome }
        })
        .collect();

    let mut summary = TableWriter::create(
        &out.join("summary.csv"),
        &["point", "runs", "failures", "accuracy_mean", "accuracy_std", "probe_distance_mean"],
    )?;
    for (p, point) in points.iter().enumerate() {
        let mine: Vec<&RunResult> = results.iter().filter(|r| r.point == p).collect();
        let ok: Vec<(f64, f64)> = mine.iter().filter_map(|r| r.outcome.as_ref().ok().copied()).collect();
        for r in mine.iter().filter(|r| r.outcome.is_err()) {
            if let Err(e) = &r.outcome {
                eprintln!("sweep point {}: {e:#}", point.label);
            }
        }
        let acc: Vec<f64> = ok.iter().map(|o| o.0).collect();
        let dist: Vec<f64> = ok.iter().map(|o| o.1).collect();
        let (acc_mean, acc_std) = mean_std(&acc);
        let (dist_mean, _) = mean_std(&dist);
        summary.row(&[
            Cell::Text(point.label.clone()),
            Cell::from(mine.len()),
            Cell::from(mine.len() - ok.len()),
            Cell::Num(acc_mean),
            Cell::Num(acc_std),
            Cell::Num(dist_mean),
        ])?;
        println!(
            "{} accuracy={}±{} probe_distance={} failures={}",
            point.label,
            sig9(acc_mean),
            sig9(acc_std),
            sig9(dist_mean),
            mine.len() - ok.len()
        );
    }
    Ok(())
}
