//! Evaluation: embed, match, register, and score every dataset instance.

use super::train::{bank_from_checkpoint, Checkpoint};
use super::{embed_pair, Dataset, ModelBank, PipelineError};
use crate::augment::resample;
use crate::config::RunConfig;
use crate::data::{crop_by_detection, DataError, Detection};
use crate::geometry::PointCloud;
use crate::metrics::{
    add_error, adds_error, addsd_success, pose_errors, InstanceMetrics, MetricReport,
};
use crate::register::{match_features, ransac_register, RansacConfig, RegisterError};
use crate::seeding;
use std::collections::BTreeMap;
use std::path::Path;

/// Sentinel error (mm) recorded for instances whose registration failed.
pub const UNREGISTERED_ERROR_MM: f64 = 1e12;

#[derive(Debug, Default)]
pub struct EvalOptions {
    /// Detection priors keyed by (image_id, object_id).
    pub detections: Option<Vec<(u32, Detection)>>,
    /// Evaluate only these dataset indices (default: all).
    pub indices: Option<Vec<usize>>,
}

/// FMR as a function of tau1 (at the config tau2) and of tau2 (at the
/// config tau1), for external plotting.
#[derive(Debug, Clone)]
pub struct FmrCurves {
    pub tau1_grid: Vec<(f64, f64)>,
    pub tau2_grid: Vec<(f64, f64)>,
}

impl FmrCurves {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,threshold,fmr\n");
        for (t, v) in &self.tau1_grid {
            out.push_str(&format!("tau1_voxels,{t},{v}\n"));
        }
        for (t, v) in &self.tau2_grid {
            out.push_str(&format!("tau2_ratio,{t},{v}\n"));
        }
        out
    }
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: MetricReport,
    pub curves: FmrCurves,
}

struct InstanceResult {
    metrics: InstanceMetrics,
    /// Spatial residuals of all feature matches under ground truth (mm).
    match_residuals: Vec<f64>,
}

fn find_detection(
    detections: &[(u32, Detection)],
    image_id: u32,
    object_id: u32,
) -> Option<&Detection> {
    detections
        .iter()
        .filter(|(img, det)| *img == image_id && det.object_id == object_id)
        .map(|(_, det)| det)
        .max_by(|a, b| a.confidence.total_cmp(&b.confidence))
}

fn failed_instance(idx: usize, pair: &super::SamplePair) -> InstanceMetrics {
    InstanceMetrics {
        instance: idx,
        object_id: pair.object_id,
        symmetric: pair.symmetric,
        diameter_mm: pair.diameter,
        registered: false,
        add_mm: UNREGISTERED_ERROR_MM,
        adds_mm: UNREGISTERED_ERROR_MM,
        addsd_mm: UNREGISTERED_ERROR_MM,
        success_01d: false,
        rre_rad: std::f64::consts::PI,
        rte_cm: UNREGISTERED_ERROR_MM / 10.0,
        fmr_inlier_ratio: 0.0,
    }
}

fn evaluate_instance(
    cfg: &RunConfig,
    bank: &ModelBank,
    dataset: &Dataset,
    idx: usize,
    detections: Option<&[(u32, Detection)]>,
) -> Result<InstanceResult, PipelineError> {
    let pair = &dataset.pairs[idx];
    let mut scene: PointCloud = pair.scene.clone();
    if let (Some(dets), Some(pixels)) = (detections, pair.pixels.as_ref()) {
        if let Some(det) = find_detection(dets, pair.image_id, pair.object_id) {
            match crop_by_detection(&scene, pixels, det, cfg.detection_margin_px) {
                Ok(cropped) => scene = cropped,
                Err(DataError::EmptyCrop) => {
                    return Ok(InstanceResult {
                        metrics: failed_instance(idx, pair),
                        match_residuals: Vec::new(),
                    })
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    let seed = seeding::derive_labeled(cfg.seed, "eval-resample", idx as u64);
    let object = resample(
        &pair.object,
        cfg.v_o.min(pair.object.len()),
        seeding::derive(seed, 1),
    )?;
    let scene = resample(&scene, cfg.v_s.min(scene.len()), seeding::derive(seed, 2))?;
    if scene.len() < 10 {
        return Ok(InstanceResult {
            metrics: failed_instance(idx, pair),
            match_residuals: Vec::new(),
        });
    }
    let embedded = embed_pair(bank, &object, &scene, pair.diameter, cfg)?;

    let matches = match_features(&embedded.f_obj, &embedded.f_scn, cfg.match_mutual)?;
    let match_residuals: Vec<f64> = matches
        .pairs
        .iter()
        .map(|&(i, j)| {
            (pair.gt.apply(&embedded.object_cloud.position(i)) - embedded.scene_cloud.position(j))
                .norm()
        })
        .collect();
    let fmr_threshold = cfg.fmr_tau1_voxels * cfg.q_mm;
    let inliers = match_residuals
        .iter()
        .filter(|&&r| r < fmr_threshold)
        .count();
    let inlier_ratio = if matches.is_empty() {
        0.0
    } else {
        inliers as f64 / matches.len() as f64
    };

    let ransac_cfg = RansacConfig {
        max_iterations: cfg.ransac_max_iterations,
        inlier_threshold: cfg.ransac_inlier_voxels * cfg.q_mm,
        min_sample: 3,
        confidence: cfg.ransac_confidence,
        seed: seeding::derive_labeled(cfg.seed, "ransac", idx as u64),
    };
    let metrics = match ransac_register(
        &embedded.object_cloud,
        &embedded.scene_cloud,
        &matches,
        &ransac_cfg,
    ) {
        Ok((pose, _inlier_ids)) => {
            let add = add_error(&object, &pose, &pair.gt);
            let adds = adds_error(&object, &pose, &pair.gt);
            let addsd = if pair.symmetric { adds } else { add };
            let (rre, rte) = pose_errors(&pose, &pair.gt);
            InstanceMetrics {
                instance: idx,
                object_id: pair.object_id,
                symmetric: pair.symmetric,
                diameter_mm: pair.diameter,
                registered: true,
                add_mm: add,
                adds_mm: adds,
                addsd_mm: addsd,
                success_01d: addsd_success(addsd, pair.diameter)?,
                rre_rad: rre,
                rte_cm: rte,
                fmr_inlier_ratio: inlier_ratio,
            }
        }
        Err(RegisterError::RegistrationFailure { .. }) | Err(RegisterError::TooFewMatches(_)) => {
            let mut m = failed_instance(idx, pair);
            m.fmr_inlier_ratio = inlier_ratio;
            m
        }
        Err(e) => return Err(e.into()),
    };
    Ok(InstanceResult {
        metrics,
        match_residuals,
    })
}

fn fmr_from_residuals(residual_sets: &[Vec<f64>], threshold_mm: f64, tau2: f64) -> f64 {
    if residual_sets.is_empty() {
        return 0.0;
    }
    let passing = residual_sets
        .iter()
        .filter(|rs| {
            if rs.is_empty() {
                return false;
            }
            let inliers = rs.iter().filter(|&&r| r < threshold_mm).count();
            inliers as f64 / rs.len() as f64 > tau2
        })
        .count();
    passing as f64 / residual_sets.len() as f64
}

/// An externally produced pose estimate (BOP-style row-major rotation).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PredictedPose {
    pub image_id: u32,
    pub obj_id: u32,
    #[serde(rename = "cam_R_m2c")]
    pub cam_r_m2c: [f64; 9],
    pub cam_t_m2c: [f64; 3],
}

/// Re-scores existing pose predictions against the dataset's ground truth.
/// Instances without a prediction are recorded as failures; feature-based
/// fields (FMR, inlier ratios) are zero since no features are involved.
pub fn rescore(
    cfg: &RunConfig,
    dataset: &Dataset,
    predictions: &[PredictedPose],
) -> Result<MetricReport, PipelineError> {
    use crate::geometry::RigidPose;
    use nalgebra::{Matrix3, Vector3};
    let mut instances = Vec::with_capacity(dataset.pairs.len());
    for (idx, pair) in dataset.pairs.iter().enumerate() {
        let seed = seeding::derive_labeled(cfg.seed, "eval-resample", idx as u64);
        let object = resample(
            &pair.object,
            cfg.v_o.min(pair.object.len()),
            seeding::derive(seed, 1),
        )?;
        let pred = predictions
            .iter()
            .find(|p| p.image_id == pair.image_id && p.obj_id == pair.object_id);
        let metrics = match pred {
            None => failed_instance(idx, pair),
            Some(p) => {
                let m = &p.cam_r_m2c;
                let raw = Matrix3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]);
                let svd = raw.svd(true, true);
                let u = svd.u.expect("svd u");
                let v_t = svd.v_t.expect("svd v_t");
                let d = (u * v_t).determinant();
                let rot = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum())) * v_t;
                let t = Vector3::new(p.cam_t_m2c[0], p.cam_t_m2c[1], p.cam_t_m2c[2]);
                let pose = RigidPose::new(rot, t)?;
                let add = add_error(&object, &pose, &pair.gt);
                let adds = adds_error(&object, &pose, &pair.gt);
                let addsd = if pair.symmetric { adds } else { add };
                let (rre, rte) = pose_errors(&pose, &pair.gt);
                InstanceMetrics {
                    instance: idx,
                    object_id: pair.object_id,
                    symmetric: pair.symmetric,
                    diameter_mm: pair.diameter,
                    registered: true,
                    add_mm: add,
                    adds_mm: adds,
                    addsd_mm: addsd,
                    success_01d: addsd_success(addsd, pair.diameter)?,
                    rre_rad: rre,
                    rte_cm: rte,
                    fmr_inlier_ratio: 0.0,
                }
            }
        };
        instances.push(metrics);
    }
    Ok(MetricReport::from_instances(
        cfg.hash(),
        cfg.seed,
        instances,
        0.0,
        cfg.fmr_tau1_voxels,
        cfg.fmr_tau2_ratio,
    ))
}

/// Evaluates a checkpoint on a dataset. With detections present, a second
/// no-prior pass runs and the report carries the success-flip deltas.
pub fn evaluate(
    cfg: &RunConfig,
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    options: &EvalOptions,
    out_dir: Option<&Path>,
) -> Result<EvalOutcome, PipelineError> {
    let indices: Vec<usize> = options
        .indices
        .clone()
        .unwrap_or_else(|| (0..dataset.pairs.len()).collect());
    if indices.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }

    let mut banks: BTreeMap<String, ModelBank> = BTreeMap::new();
    let mut results: Vec<InstanceResult> = Vec::with_capacity(indices.len());
    for &idx in &indices {
        let pair = &dataset.pairs[idx];
        let key = if checkpoint.models.contains_key("all") {
            "all".to_string()
        } else {
            format!("obj:{}", pair.object_id)
        };
        if !banks.contains_key(&key) {
            banks.insert(
                key.clone(),
                bank_from_checkpoint(cfg, checkpoint, pair.object_id)?,
            );
        }
        let bank = banks.get(&key).expect("bank inserted above");
        results.push(evaluate_instance(
            cfg,
            bank,
            dataset,
            idx,
            options.detections.as_deref(),
        )?);
    }

    let residual_sets: Vec<Vec<f64>> = results
        .iter()
        .map(|r| r.match_residuals.clone())
        .collect();
    let fmr_value = fmr_from_residuals(
        &residual_sets,
        cfg.fmr_tau1_voxels * cfg.q_mm,
        cfg.fmr_tau2_ratio,
    );

    let tau1_grid: Vec<(f64, f64)> = (1..=30)
        .map(|k| {
            let tau1 = k as f64 / 3.0;
            (
                tau1,
                fmr_from_residuals(&residual_sets, tau1 * cfg.q_mm, cfg.fmr_tau2_ratio),
            )
        })
        .collect();
    let tau2_grid: Vec<(f64, f64)> = (0..=20)
        .map(|k| {
            let tau2 = 0.01 + 0.19 * k as f64 / 20.0;
            (
                tau2,
                fmr_from_residuals(&residual_sets, cfg.fmr_tau1_voxels * cfg.q_mm, tau2),
            )
        })
        .collect();
    let curves = FmrCurves {
        tau1_grid,
        tau2_grid,
    };

    let instances: Vec<InstanceMetrics> = results.into_iter().map(|r| r.metrics).collect();
    let mut report = MetricReport::from_instances(
        cfg.hash(),
        cfg.seed,
        instances,
        fmr_value,
        cfg.fmr_tau1_voxels,
        cfg.fmr_tau2_ratio,
    );

    if options.detections.is_some() {
        let no_prior_options = EvalOptions {
            detections: None,
            indices: Some(indices.clone()),
        };
        let no_prior = evaluate(cfg, checkpoint, dataset, &no_prior_options, None)?;
        let with_flags: Vec<bool> = report.instances.iter().map(|i| i.success_01d).collect();
        let without_flags: Vec<bool> = no_prior
            .report
            .instances
            .iter()
            .map(|i| i.success_01d)
            .collect();
        report.detector_deltas =
            Some(crate::metrics::detector_deltas(&with_flags, &without_flags)?);
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), report.to_json())?;
        std::fs::write(dir.join("report.txt"), report.to_text())?;
        std::fs::write(dir.join("report.csv"), report.to_csv())?;
        std::fs::write(dir.join("fmr_curves.csv"), curves.to_csv())?;
    }

    Ok(EvalOutcome { report, curves })
}
