//! Training loop: per epoch augment -> quantize -> mine -> embed -> loss ->
//! optimizer step, with held-out FMR tracking and bitwise-reproducible
//! checkpoints.

use super::{embed_pair, Dataset, ModelBank, PipelineError, SamplePair};
use crate::augment::{color_jitter, random_erase, resample};
use crate::config::RunConfig;
use crate::embed::{embed_backward, EmbeddingModel, ModelData};
use crate::geometry::transform_cloud;
use crate::loss::compute_loss;
use crate::metrics::{fmr, FmrInstance};
use crate::mining::{build_negative_candidates_with_radii, mine_positives, MiningError};
use crate::seeding;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Object-side and scene-side models of one trained pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelPair {
    pub object: ModelData,
    pub scene: ModelData,
}

/// Versioned checkpoint container. `models` is keyed by scope: `"all"` for
/// the single-model-pair mode, `"obj:<id>"` in per-object mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub shared_weights: bool,
    pub feature_dim: usize,
    pub descriptor_r1_scale: f64,
    pub descriptor_r2_scale: f64,
    pub use_rgb: bool,
    pub git_revision: String,
    pub models: BTreeMap<String, ModelPair>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| PipelineError::CheckpointParse(e.to_string()))?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(PipelineError::CheckpointParse(format!(
                "unsupported checkpoint format {}",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    /// Model pair responsible for `object_id`.
    pub fn models_for(&self, object_id: u32) -> Result<ModelPair, PipelineError> {
        if let Some(pair) = self.models.get("all") {
            return Ok(pair.clone());
        }
        self.models
            .get(&format!("obj:{object_id}"))
            .cloned()
            .ok_or(PipelineError::MissingModel(object_id))
    }
}

/// One epoch of one training scope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub scope: String,
    pub epoch: usize,
    pub lr: f64,
    pub mean_l_p: f64,
    pub mean_l_no: f64,
    pub mean_l_ns: f64,
    pub mean_total: f64,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
    pub holdout_fmr: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochStats>,
    pub final_holdout_fmr: Option<f64>,
    pub final_mean_loss: f64,
}

pub(crate) fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

struct StepStats {
    l_p: f64,
    l_no: f64,
    l_ns: f64,
    total: f64,
}

/// One optimizer step on one sample; `None` when the sample yields no
/// positives (heavily erased scenes).
fn train_step(
    cfg: &RunConfig,
    bank: &mut ModelBank,
    pair: &SamplePair,
    lr: f64,
    step_seed: u64,
) -> Result<Option<StepStats>, PipelineError> {
    let mut object = resample(&pair.object, cfg.v_o.min(pair.object.len()), seeding::derive(step_seed, 1))?;
    let mut scene = resample(&pair.scene, cfg.v_s.min(pair.scene.len()), seeding::derive(step_seed, 2))?;
    if cfg.use_color_jitter && object.has_colors() {
        object = color_jitter(&object, &cfg.jitter, seeding::derive(step_seed, 3))?;
    }
    if cfg.use_random_erase {
        let transformed = transform_cloud(&object, &pair.gt);
        let outcome = random_erase(
            &scene,
            transformed.positions(),
            cfg.erase_rho_scale * pair.diameter,
            seeding::derive(step_seed, 4),
        )?;
        match outcome.cloud {
            Some(cloud) if cloud.len() >= 10 => scene = cloud,
            _ => return Ok(None),
        }
    }

    let embedded = embed_pair(bank, &object, &scene, pair.diameter, cfg)?;
    let positives = match mine_positives(
        &embedded.object_cloud,
        &embedded.scene_cloud,
        &pair.gt,
        cfg.tau_p_mm,
        Some(cfg.max_pairs),
        seeding::derive(step_seed, 5),
    ) {
        Ok(p) => p,
        Err(MiningError::NoCorrespondences { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let negatives = build_negative_candidates_with_radii(
        &embedded.object_cloud,
        &embedded.scene_cloud,
        &positives,
        cfg.t_scale,
        cfg.t_scale_scene(),
        pair.diameter,
        cfg.scene_sample_cap,
        seeding::derive(step_seed, 6),
    )?;
    let loss = compute_loss(
        &embedded.f_obj,
        &embedded.f_scn,
        &positives,
        &negatives,
        &cfg.loss_config(),
    )?;
    if !loss.total.is_finite() {
        return Err(PipelineError::Diverged {
            epoch: 0,
            sample: 0,
        });
    }
    let grads_object = embed_backward(bank.object_model(), &embedded.cache_obj, &loss.grad_object)?;
    let grads_scene = embed_backward(bank.scene_model(), &embedded.cache_scn, &loss.grad_scene)?;
    bank.step(&grads_object, &grads_scene, lr)?;
    Ok(Some(StepStats {
        l_p: loss.l_p,
        l_no: loss.l_no,
        l_ns: loss.l_ns,
        total: loss.total,
    }))
}

/// Held-out FMR with evaluation-time (deterministic, augmentation-free)
/// resampling.
pub(crate) fn holdout_fmr(
    cfg: &RunConfig,
    bank: &ModelBank,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Option<f64>, PipelineError> {
    if indices.is_empty() {
        return Ok(None);
    }
    struct Prepared {
        object: crate::geometry::PointCloud,
        scene: crate::geometry::PointCloud,
        f_obj: crate::features::FeatureSet,
        f_scn: crate::features::FeatureSet,
        gt: crate::geometry::RigidPose,
    }
    let mut prepared = Vec::with_capacity(indices.len());
    for &idx in indices {
        let pair = &dataset.pairs[idx];
        let seed = seeding::derive_labeled(cfg.seed, "eval-resample", idx as u64);
        let object = resample(&pair.object, cfg.v_o.min(pair.object.len()), seeding::derive(seed, 1))?;
        let scene = resample(&pair.scene, cfg.v_s.min(pair.scene.len()), seeding::derive(seed, 2))?;
        let embedded = embed_pair(bank, &object, &scene, pair.diameter, cfg)?;
        prepared.push(Prepared {
            object: embedded.object_cloud,
            scene: embedded.scene_cloud,
            f_obj: embedded.f_obj,
            f_scn: embedded.f_scn,
            gt: pair.gt,
        });
    }
    let instances: Vec<FmrInstance<'_>> = prepared
        .iter()
        .map(|p| FmrInstance {
            f_obj: &p.f_obj,
            f_scn: &p.f_scn,
            object: &p.object,
            scene: &p.scene,
            gt: &p.gt,
        })
        .collect();
    Ok(Some(fmr(
        &instances,
        cfg.fmr_tau1_voxels,
        cfg.fmr_tau2_ratio,
        cfg.q_mm,
    )?))
}

fn train_scope(
    cfg: &RunConfig,
    dataset: &Dataset,
    scope: &str,
    train_indices: &[usize],
    holdout_indices: &[usize],
    seed_offset: u64,
    out_dir: Option<&Path>,
) -> Result<(ModelBank, Vec<EpochStats>), PipelineError> {
    let mut bank = ModelBank::new(cfg, seed_offset);
    let schedule = cfg.schedule();
    let mut stats_rows = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch, cfg.epochs);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut used = 0usize;
        let mut skipped = 0usize;
        for (k, &idx) in train_indices.iter().enumerate() {
            let step_seed = seeding::derive_labeled(
                cfg.seed,
                "train-step",
                seed_offset
                    .wrapping_mul(1_000_003)
                    .wrapping_add((epoch * train_indices.len() + k) as u64),
            );
            match train_step(cfg, &mut bank, &dataset.pairs[idx], lr, step_seed) {
                Ok(Some(s)) => {
                    sums.0 += s.l_p;
                    sums.1 += s.l_no;
                    sums.2 += s.l_ns;
                    sums.3 += s.total;
                    used += 1;
                }
                Ok(None) => skipped += 1,
                Err(PipelineError::Diverged { .. }) => {
                    if let Some(dir) = out_dir {
                        let dump = serde_json::json!({
                            "scope": scope,
                            "epoch": epoch,
                            "sample": idx,
                            "note": "loss became non-finite",
                        });
                        let _ = std::fs::write(dir.join("divergence.json"), dump.to_string());
                    }
                    return Err(PipelineError::Diverged { epoch, sample: idx });
                }
                Err(e) => return Err(e),
            }
        }
        let denom = used.max(1) as f64;
        let fmr_value = holdout_fmr(cfg, &bank, dataset, holdout_indices)?;
        stats_rows.push(EpochStats {
            scope: scope.to_string(),
            epoch,
            lr,
            mean_l_p: sums.0 / denom,
            mean_l_no: sums.1 / denom,
            mean_l_ns: sums.2 / denom,
            mean_total: sums.3 / denom,
            pairs_used: used,
            pairs_skipped: skipped,
            holdout_fmr: fmr_value,
        });
    }
    Ok((bank, stats_rows))
}

/// Trains per the config on `dataset`, optionally writing the checkpoint,
/// a JSONL training log, and a reproducibility manifest into `out_dir`.
pub fn train(
    cfg: &RunConfig,
    dataset: &Dataset,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, PipelineError> {
    if dataset.pairs.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let (train_indices, holdout_indices) = dataset.split(cfg.holdout_every);

    let mut models: BTreeMap<String, ModelPair> = BTreeMap::new();
    let mut all_stats: Vec<EpochStats> = Vec::new();
    let mut banks: Vec<(String, ModelBank, Vec<usize>)> = Vec::new();

    if cfg.per_object_models {
        let mut ids: Vec<u32> = dataset.pairs.iter().map(|p| p.object_id).collect();
        ids.sort_unstable();
        ids.dedup();
        for oid in ids {
            let scope = format!("obj:{oid}");
            let tr: Vec<usize> = train_indices
                .iter()
                .copied()
                .filter(|&i| dataset.pairs[i].object_id == oid)
                .collect();
            let ho: Vec<usize> = holdout_indices
                .iter()
                .copied()
                .filter(|&i| dataset.pairs[i].object_id == oid)
                .collect();
            let (bank, stats) =
                train_scope(cfg, dataset, &scope, &tr, &ho, oid as u64, out_dir)?;
            all_stats.extend(stats);
            banks.push((scope, bank, ho));
        }
    } else {
        let (bank, stats) = train_scope(
            cfg,
            dataset,
            "all",
            &train_indices,
            &holdout_indices,
            0,
            out_dir,
        )?;
        all_stats.extend(stats);
        banks.push(("all".to_string(), bank, holdout_indices.clone()));
    }

    // final holdout FMR across scopes, weighted by holdout counts
    let mut fmr_sum = 0.0;
    let mut fmr_count = 0usize;
    for (_, bank, ho) in &banks {
        if let Some(value) = holdout_fmr(cfg, bank, dataset, ho)? {
            fmr_sum += value * ho.len() as f64;
            fmr_count += ho.len();
        }
    }
    let final_holdout_fmr = if fmr_count > 0 {
        Some(fmr_sum / fmr_count as f64)
    } else {
        None
    };

    for (scope, bank, _) in banks {
        let pair = ModelPair {
            object: bank.object_model().to_data(),
            scene: bank.scene_model().to_data(),
        };
        models.insert(scope, pair);
    }

    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        shared_weights: cfg.shared_weights,
        feature_dim: cfg.feature_dim,
        descriptor_r1_scale: cfg.descriptor_r1_scale,
        descriptor_r2_scale: cfg.descriptor_r2_scale,
        use_rgb: cfg.use_rgb,
        git_revision: git_revision(),
        models,
    };

    let final_mean_loss = all_stats
        .iter()
        .rev()
        .find(|s| s.pairs_used > 0)
        .map(|s| s.mean_total)
        .unwrap_or(f64::INFINITY);

    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join("checkpoint.json"))?;
        let mut log = String::new();
        for row in &all_stats {
            log.push_str(&serde_json::to_string(row).expect("stats serialize"));
            log.push('\n');
        }
        std::fs::write(dir.join("training_log.jsonl"), log)?;
        let manifest = serde_json::json!({
            "config_hash": cfg.hash(),
            "seed": cfg.seed,
            "git_revision": checkpoint.git_revision,
            "config_toml": cfg.to_toml(),
        });
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
    }

    Ok(TrainOutcome {
        checkpoint,
        epochs: all_stats,
        final_holdout_fmr,
        final_mean_loss,
    })
}

/// Rebuilds a model bank from a checkpoint scope for evaluation.
pub(crate) fn bank_from_checkpoint(
    cfg: &RunConfig,
    checkpoint: &Checkpoint,
    object_id: u32,
) -> Result<ModelBank, PipelineError> {
    let pair = checkpoint.models_for(object_id)?;
    let object = EmbeddingModel::from_data(pair.object)?;
    let scene = EmbeddingModel::from_data(pair.scene)?;
    if object.output_dim() != checkpoint.feature_dim {
        return Err(PipelineError::CheckpointMismatch(format!(
            "object model emits {} dims, checkpoint says {}",
            object.output_dim(),
            checkpoint.feature_dim
        )));
    }
    Ok(ModelBank::from_models(cfg, object, scene))
}
