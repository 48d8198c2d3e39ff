//! Ablation runner: one training + evaluation per toggled component,
//! one-at-a-time against a baseline or cumulative in contribution order.

use super::eval::{evaluate, EvalOptions};
use super::train::train;
use super::{Dataset, PipelineError};
use crate::config::{RunConfig, ScheduleKind};
use crate::optim::UpdateRule;
use std::path::Path;

pub const T_SCALE_SWEEP: [f64; 5] = [0.0, 0.05, 0.1, 0.25, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    SafetyThreshold,
    SharedWeights,
    Rgb,
    ColorJitter,
    RandomErase,
    OptimizerRule,
    ScheduleShape,
    TScaleSweep,
}

impl AblationAxis {
    pub const NAMES: [(&'static str, AblationAxis); 8] = [
        ("safety-threshold", AblationAxis::SafetyThreshold),
        ("shared-weights", AblationAxis::SharedWeights),
        ("rgb", AblationAxis::Rgb),
        ("color-jitter", AblationAxis::ColorJitter),
        ("random-erase", AblationAxis::RandomErase),
        ("optimizer", AblationAxis::OptimizerRule),
        ("schedule", AblationAxis::ScheduleShape),
        ("t-scale-sweep", AblationAxis::TScaleSweep),
    ];

    pub fn parse(s: &str) -> Result<AblationAxis, String> {
        Self::NAMES
            .iter()
            .find(|(name, _)| *name == s)
            .map(|(_, axis)| *axis)
            .ok_or_else(|| {
                let valid: Vec<&str> = Self::NAMES.iter().map(|(n, _)| *n).collect();
                format!("unknown axis '{s}'; valid axes: {}", valid.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    OneAtATime,
    Cumulative,
}

/// One table row: held-out FMR, ADD(S)-0.1d, pose errors, final loss, and
/// the ADD(S)-0.1d delta against the reference row.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationRow {
    pub label: String,
    pub fmr: f64,
    pub addsd_01d_percent: f64,
    pub mean_rre_rad: f64,
    pub mean_rte_cm: f64,
    pub final_loss: f64,
    pub delta_addsd: Option<f64>,
}

fn run_variant(
    label: &str,
    cfg: &RunConfig,
    dataset: &Dataset,
) -> Result<AblationRow, PipelineError> {
    let outcome = train(cfg, dataset, None)?;
    let (_, holdout) = dataset.split(cfg.holdout_every);
    let options = EvalOptions {
        detections: None,
        // tiny datasets may have no held-out pairs; score everything then
        indices: if holdout.is_empty() { None } else { Some(holdout) },
    };
    let eval = evaluate(cfg, &outcome.checkpoint, dataset, &options, None)?;
    let report = eval.report;
    let mean_rre = if report.instances.is_empty() {
        0.0
    } else {
        report.instances.iter().map(|i| i.rre_rad).sum::<f64>() / report.instances.len() as f64
    };
    let mean_rte = if report.instances.is_empty() {
        0.0
    } else {
        report.instances.iter().map(|i| i.rte_cm).sum::<f64>() / report.instances.len() as f64
    };
    Ok(AblationRow {
        label: label.to_string(),
        fmr: outcome.final_holdout_fmr.unwrap_or(report.fmr),
        addsd_01d_percent: report.overall_addsd_01d_percent,
        mean_rre_rad: mean_rre,
        mean_rte_cm: mean_rte,
        final_loss: outcome.final_mean_loss,
        delta_addsd: None,
    })
}

fn one_at_a_time_variants(base: &RunConfig, axis: AblationAxis) -> Vec<(String, RunConfig)> {
    let mut variants = Vec::new();
    match axis {
        AblationAxis::SafetyThreshold => {
            let mut cfg = base.clone();
            cfg.t_scale = 0.0;
            variants.push(("t_scale=0".to_string(), cfg));
        }
        AblationAxis::SharedWeights => {
            let mut cfg = base.clone();
            cfg.shared_weights = !base.shared_weights;
            let label = if cfg.shared_weights {
                "shared-weights"
            } else {
                "independent-weights"
            };
            variants.push((label.to_string(), cfg));
        }
        AblationAxis::Rgb => {
            let mut cfg = base.clone();
            cfg.use_rgb = !base.use_rgb;
            let label = if cfg.use_rgb { "rgb-on" } else { "rgb-off" };
            variants.push((label.to_string(), cfg));
        }
        AblationAxis::ColorJitter => {
            let mut cfg = base.clone();
            cfg.use_color_jitter = !base.use_color_jitter;
            let label = if cfg.use_color_jitter {
                "color-jitter-on"
            } else {
                "color-jitter-off"
            };
            variants.push((label.to_string(), cfg));
        }
        AblationAxis::RandomErase => {
            let mut cfg = base.clone();
            cfg.use_random_erase = !base.use_random_erase;
            let label = if cfg.use_random_erase {
                "random-erase-on"
            } else {
                "random-erase-off"
            };
            variants.push((label.to_string(), cfg));
        }
        AblationAxis::OptimizerRule => {
            for rule in [UpdateRule::Sgd, UpdateRule::Adam, UpdateRule::AdamW] {
                if rule != base.optimizer {
                    let mut cfg = base.clone();
                    cfg.optimizer = rule;
                    variants.push((format!("optimizer={rule:?}").to_lowercase(), cfg));
                }
            }
        }
        AblationAxis::ScheduleShape => {
            for kind in [ScheduleKind::Exponential, ScheduleKind::Cosine] {
                if kind != base.schedule {
                    let mut cfg = base.clone();
                    cfg.schedule = kind;
                    variants.push((format!("schedule={kind:?}").to_lowercase(), cfg));
                }
            }
        }
        AblationAxis::TScaleSweep => {
            for t in T_SCALE_SWEEP {
                let mut cfg = base.clone();
                cfg.t_scale = t;
                variants.push((format!("t_scale={t}"), cfg));
            }
        }
    }
    variants
}

/// Stripped-down starting point for the cumulative mode: no safety
/// threshold, shared weights, no RGB, no augmentations, SGD with the
/// exponential schedule. Each cumulative step re-enables one component.
fn cumulative_baseline(base: &RunConfig) -> RunConfig {
    let mut cfg = base.clone();
    cfg.t_scale = 0.0;
    cfg.shared_weights = true;
    cfg.use_rgb = false;
    cfg.use_color_jitter = false;
    cfg.use_random_erase = false;
    cfg.optimizer = UpdateRule::Sgd;
    cfg.schedule = ScheduleKind::Exponential;
    cfg
}

type CumulativeStep = (&'static str, AblationAxis, fn(&mut RunConfig, &RunConfig));

const CUMULATIVE_ORDER: [CumulativeStep; 8] = [
    ("+ safety threshold", AblationAxis::SafetyThreshold, |c, b| {
        c.t_scale = b.t_scale;
    }),
    ("+ independent weights", AblationAxis::SharedWeights, |c, _| {
        c.shared_weights = false;
    }),
    ("+ rgb", AblationAxis::Rgb, |c, _| c.use_rgb = true),
    ("+ color jitter", AblationAxis::ColorJitter, |c, _| {
        c.use_color_jitter = true;
    }),
    ("+ random erase", AblationAxis::RandomErase, |c, _| {
        c.use_random_erase = true;
    }),
    ("+ sgd->adam", AblationAxis::OptimizerRule, |c, _| {
        c.optimizer = UpdateRule::Adam;
    }),
    ("+ adam->adamw", AblationAxis::OptimizerRule, |c, _| {
        c.optimizer = UpdateRule::AdamW;
    }),
    ("+ exp->cosine", AblationAxis::ScheduleShape, |c, _| {
        c.schedule = ScheduleKind::Cosine;
    }),
];

/// Runs the ablation table. An empty axis list yields the baseline row
/// only. Rows carry the ADD(S)-0.1d delta against the previous row
/// (cumulative) or the baseline (one-at-a-time).
pub fn ablate(
    base: &RunConfig,
    axes: &[AblationAxis],
    mode: AblationMode,
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRow>, PipelineError> {
    let dataset = Dataset::synthetic(base)?;
    let mut rows = Vec::new();
    match mode {
        AblationMode::OneAtATime => {
            let mut baseline = run_variant("baseline", base, &dataset)?;
            baseline.delta_addsd = None;
            let baseline_addsd = baseline.addsd_01d_percent;
            rows.push(baseline);
            for axis in axes {
                for (label, cfg) in one_at_a_time_variants(base, *axis) {
                    let mut row = run_variant(&label, &cfg, &dataset)?;
                    row.delta_addsd = Some(row.addsd_01d_percent - baseline_addsd);
                    rows.push(row);
                }
            }
        }
        AblationMode::Cumulative => {
            let mut cfg = cumulative_baseline(base);
            let mut row = run_variant("baseline", &cfg, &dataset)?;
            row.delta_addsd = None;
            let mut prev = row.addsd_01d_percent;
            rows.push(row);
            for (label, axis, apply) in CUMULATIVE_ORDER {
                if !axes.contains(&axis) {
                    continue;
                }
                apply(&mut cfg, base);
                let mut row = run_variant(label, &cfg, &dataset)?;
                row.delta_addsd = Some(row.addsd_01d_percent - prev);
                prev = row.addsd_01d_percent;
                rows.push(row);
            }
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("ablation.json"),
            serde_json::to_string_pretty(&rows).expect("rows serialize"),
        )?;
        std::fs::write(dir.join("ablation.csv"), rows_to_csv(&rows))?;
        std::fs::write(dir.join("ablation.txt"), rows_to_text(&rows))?;
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("label,fmr,addsd_01d_percent,mean_rre_rad,mean_rte_cm,final_loss,delta_addsd\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.label,
            r.fmr,
            r.addsd_01d_percent,
            r.mean_rre_rad,
            r.mean_rte_cm,
            r.final_loss,
            r.delta_addsd.map(|d| d.to_string()).unwrap_or_default(),
        ));
    }
    out
}

pub fn rows_to_text(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "label                     FMR    ADD(S)-0.1d  RRE[rad]  RTE[cm]   loss      delta\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{:<24} {:>6.3}  {:>10.2}%  {:>8.4}  {:>7.3}  {:>8.4}  {}\n",
            r.label,
            r.fmr,
            r.addsd_01d_percent,
            r.mean_rre_rad,
            r.mean_rte_cm,
            r.final_loss,
            r.delta_addsd
                .map(|d| format!("{d:+.2}"))
                .unwrap_or_else(|| "--".to_string()),
        ));
    }
    out
}
