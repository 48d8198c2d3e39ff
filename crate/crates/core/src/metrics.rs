//! Pose-evaluation metrics: ADD, ADD-S, diameter-relative success,
//! ADD-S AUC, RRE/RTE, feature matching recall, and detector deltas.

use crate::features::FeatureSet;
use crate::geometry::{transform_cloud, NeighborIndex, PointCloud, RigidPose};
use crate::register::match_features;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("AUC needs at least one error value")]
    EmptyErrors,
    #[error("AUC thresholds invalid: min {min}, max {max}, step {step}")]
    BadThresholds { min: f64, max: f64, step: f64 },
    #[error("flag lists differ in length: {with_prior} vs {without_prior}")]
    FlagLengthMismatch {
        with_prior: usize,
        without_prior: usize,
    },
    #[error("diameter must be positive, got {0}")]
    NonPositiveDiameter(f64),
    #[error("FMR needs at least one pair")]
    EmptyPairs,
}

/// Mean distance between the model under the predicted and ground-truth
/// poses, matched point-to-point.
pub fn add_error(model: &PointCloud, pred: &RigidPose, gt: &RigidPose) -> f64 {
    let mut acc = 0.0;
    for p in model.positions() {
        acc += (gt.apply(p) - pred.apply(p)).norm();
    }
    acc / model.len() as f64
}

/// Symmetry-tolerant variant: each ground-truth point matches its closest
/// predicted point. Accelerated by a spatial index but exactly equal to the
/// O(N²) definition.
pub fn adds_error(model: &PointCloud, pred: &RigidPose, gt: &RigidPose) -> f64 {
    let pred_cloud = transform_cloud(model, pred);
    let index = NeighborIndex::build(&pred_cloud);
    let mut acc = 0.0;
    for p in model.positions() {
        let (_, d) = index.nearest(&gt.apply(p));
        acc += d;
    }
    acc / model.len() as f64
}

/// Strict diameter-relative success: error < 0.1 * diameter.
pub fn addsd_success(error: f64, diameter: f64) -> Result<bool, MetricsError> {
    if diameter <= 0.0 {
        return Err(MetricsError::NonPositiveDiameter(diameter));
    }
    Ok(error < 0.1 * diameter)
}

/// Mean pass rate over absolute thresholds from `t_min` to `t_max` mm
/// (inclusive) in `step` mm increments, as a percentage.
pub fn add_s_auc(errors: &[f64], t_min: f64, t_max: f64, step: f64) -> Result<f64, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyErrors);
    }
    if !(step > 0.0 && t_min > 0.0 && t_max >= t_min) {
        return Err(MetricsError::BadThresholds {
            min: t_min,
            max: t_max,
            step,
        });
    }
    let n_thresholds = ((t_max - t_min) / step).round() as usize + 1;
    let mut acc = 0.0;
    for k in 0..n_thresholds {
        let t = t_min + k as f64 * step;
        let pass = errors.iter().filter(|&&e| e < t).count();
        acc += pass as f64 / errors.len() as f64;
    }
    Ok(100.0 * acc / n_thresholds as f64)
}

/// Relative rotation error (radians) and relative translation error (cm).
pub fn pose_errors(pred: &RigidPose, gt: &RigidPose) -> (f64, f64) {
    let rel = pred.rotation().transpose() * gt.rotation();
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let rre = cos.acos();
    let rte = (pred.translation() - gt.translation()).norm() / 10.0;
    (rre, rte)
}

/// One evaluation pair for feature matching recall.
pub struct FmrInstance<'a> {
    pub f_obj: &'a FeatureSet,
    pub f_scn: &'a FeatureSet,
    pub object: &'a PointCloud,
    pub scene: &'a PointCloud,
    pub gt: &'a RigidPose,
}

/// Fraction of pairs whose feature matches exceed an inlier-recall ratio.
///
/// A match is an inlier when the ground-truth spatial residual is below
/// `tau1_voxels * voxel_size_mm`; a pair passes when the inlier fraction
/// strictly exceeds `tau2_ratio`.
pub fn fmr(
    pairs: &[FmrInstance<'_>],
    tau1_voxels: f64,
    tau2_ratio: f64,
    voxel_size_mm: f64,
) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairs);
    }
    let threshold = tau1_voxels * voxel_size_mm;
    let mut passing = 0usize;
    for pair in pairs {
        let ratio = fmr_inlier_ratio(pair, threshold);
        if ratio > tau2_ratio {
            passing += 1;
        }
    }
    Ok(passing as f64 / pairs.len() as f64)
}

/// Inlier fraction of one pair's feature matches at an absolute mm
/// threshold.
pub fn fmr_inlier_ratio(pair: &FmrInstance<'_>, threshold_mm: f64) -> f64 {
    let matches = match match_features(pair.f_obj, pair.f_scn, false) {
        Ok(m) => m,
        Err(_) => return 0.0,
    };
    if matches.is_empty() {
        return 0.0;
    }
    let inliers = matches
        .pairs
        .iter()
        .filter(|&&(i, j)| {
            (pair.gt.apply(&pair.object.position(i)) - pair.scene.position(j)).norm()
                < threshold_mm
        })
        .count();
    inliers as f64 / matches.len() as f64
}

/// Success/failure flips caused by introducing the detection prior.
///
/// Returns (Δ success→failure, Δ failure→success) as percentages over the
/// instance count.
pub fn detector_deltas(
    with_prior: &[bool],
    without_prior: &[bool],
) -> Result<(f64, f64), MetricsError> {
    if with_prior.len() != without_prior.len() {
        return Err(MetricsError::FlagLengthMismatch {
            with_prior: with_prior.len(),
            without_prior: without_prior.len(),
        });
    }
    let n = with_prior.len() as f64;
    let s_to_f = without_prior
        .iter()
        .zip(with_prior)
        .filter(|&(&wo, &w)| wo && !w)
        .count() as f64;
    let f_to_s = without_prior
        .iter()
        .zip(with_prior)
        .filter(|&(&wo, &w)| !wo && w)
        .count() as f64;
    Ok((100.0 * s_to_f / n, 100.0 * f_to_s / n))
}

/// Per-instance evaluation row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub instance: usize,
    pub object_id: u32,
    pub symmetric: bool,
    pub diameter_mm: f64,
    pub registered: bool,
    pub add_mm: f64,
    pub adds_mm: f64,
    /// ADD for asymmetric objects, ADD-S for symmetric ones.
    pub addsd_mm: f64,
    pub success_01d: bool,
    pub rre_rad: f64,
    pub rte_cm: f64,
    pub fmr_inlier_ratio: f64,
}

/// Per-object aggregate scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectAggregate {
    pub object_id: u32,
    pub instances: usize,
    pub addsd_01d_percent: f64,
    pub adds_auc_percent: f64,
    pub mean_rre_rad: f64,
    pub mean_rte_cm: f64,
}

/// Full evaluation output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub config_hash: String,
    pub seed: u64,
    pub instances: Vec<InstanceMetrics>,
    pub per_object: Vec<ObjectAggregate>,
    pub overall_addsd_01d_percent: f64,
    pub overall_adds_auc_percent: f64,
    pub fmr: f64,
    pub fmr_tau1_voxels: f64,
    pub fmr_tau2_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detector_deltas: Option<(f64, f64)>,
}

impl MetricReport {
    /// Builds aggregates from per-instance rows. Unregistered instances
    /// count as failures and are excluded from error-based AUC means only
    /// if no error is available (they carry +inf errors instead).
    pub fn from_instances(
        config_hash: String,
        seed: u64,
        instances: Vec<InstanceMetrics>,
        fmr: f64,
        fmr_tau1_voxels: f64,
        fmr_tau2_ratio: f64,
    ) -> MetricReport {
        let mut object_ids: Vec<u32> = instances.iter().map(|i| i.object_id).collect();
        object_ids.sort_unstable();
        object_ids.dedup();
        let mut per_object = Vec::new();
        for oid in object_ids {
            let rows: Vec<&InstanceMetrics> =
                instances.iter().filter(|i| i.object_id == oid).collect();
            let n = rows.len();
            let succ = rows.iter().filter(|r| r.success_01d).count();
            let errors: Vec<f64> = rows.iter().map(|r| r.adds_mm).collect();
            let auc = add_s_auc(&errors, 1.0, 100.0, 1.0).unwrap_or(0.0);
            per_object.push(ObjectAggregate {
                object_id: oid,
                instances: n,
                addsd_01d_percent: 100.0 * succ as f64 / n as f64,
                adds_auc_percent: auc,
                mean_rre_rad: rows.iter().map(|r| r.rre_rad).sum::<f64>() / n as f64,
                mean_rte_cm: rows.iter().map(|r| r.rte_cm).sum::<f64>() / n as f64,
            });
        }
        let n_all = instances.len().max(1);
        let overall_addsd_01d_percent =
            100.0 * instances.iter().filter(|r| r.success_01d).count() as f64 / n_all as f64;
        let all_errors: Vec<f64> = instances.iter().map(|r| r.adds_mm).collect();
        let overall_adds_auc_percent = if all_errors.is_empty() {
            0.0
        } else {
            add_s_auc(&all_errors, 1.0, 100.0, 1.0).unwrap_or(0.0)
        };
        MetricReport {
            config_hash,
            seed,
            instances,
            per_object,
            overall_addsd_01d_percent,
            overall_adds_auc_percent,
            fmr,
            fmr_tau1_voxels,
            fmr_tau2_ratio,
            detector_deltas: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned-column text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("config-hash: {}\nseed: {}\n", self.config_hash, self.seed));
        out.push_str(&format!(
            "overall: ADD(S)-0.1d {:6.2}%  ADD-S AUC {:6.2}%  FMR {:.3} (tau1={} voxels, tau2={})\n",
            self.overall_addsd_01d_percent,
            self.overall_adds_auc_percent,
            self.fmr,
            self.fmr_tau1_voxels,
            self.fmr_tau2_ratio,
        ));
        if let Some((sf, fs)) = self.detector_deltas {
            out.push_str(&format!("detector deltas: S->F {sf:.2}%  F->S {fs:.2}%\n"));
        }
        out.push_str("object  n      ADD(S)-0.1d  ADD-S-AUC  RRE[rad]  RTE[cm]\n");
        for o in &self.per_object {
            out.push_str(&format!(
                "{:>6}  {:>5}  {:>10.2}%  {:>8.2}%  {:>8.4}  {:>7.3}\n",
                o.object_id,
                o.instances,
                o.addsd_01d_percent,
                o.adds_auc_percent,
                o.mean_rre_rad,
                o.mean_rte_cm,
            ));
        }
        out
    }

    /// CSV export of the per-instance rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "instance,object_id,symmetric,diameter_mm,registered,add_mm,adds_mm,addsd_mm,success_01d,rre_rad,rte_cm,fmr_inlier_ratio\n",
        );
        for r in &self.instances {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.instance,
                r.object_id,
                r.symmetric,
                r.diameter_mm,
                r.registered,
                r.add_mm,
                r.adds_mm,
                r.addsd_mm,
                r.success_01d,
                r.rre_rad,
                r.rte_cm,
                r.fmr_inlier_ratio,
            ));
        }
        out
    }
}
