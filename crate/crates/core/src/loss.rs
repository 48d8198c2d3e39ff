//! Three-term hardest contrastive loss with exact gradients.
//!
//! The positive term pulls matched features together down to a margin; the
//! two negative terms push each anchor away from the hardest (feature-space
//! nearest) candidate in its own cloud, where candidates come from the
//! safety-thresholded sets built by the mining module. Gradients treat the
//! per-anchor argmin as fixed, which is the standard hardest-mining
//! subgradient.

use crate::features::{row_distance, FeatureSet};
use crate::mining::{CorrespondenceSet, NegativeCandidates};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("positive correspondence set is empty")]
    EmptyPositives,
    #[error("non-finite {side} feature at row {row}, col {col}")]
    NonFiniteFeature {
        side: &'static str,
        row: usize,
        col: usize,
    },
    #[error("feature dims differ: object {obj} vs scene {scn}")]
    DimMismatch { obj: usize, scn: usize },
    #[error("{side} index {index} out of range {len}")]
    IndexOutOfRange {
        side: &'static str,
        index: usize,
        len: usize,
    },
    #[error("negative candidate lists ({negatives}) not aligned with positives ({positives})")]
    MisalignedCandidates { negatives: usize, positives: usize },
}

/// How the two negative terms are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NegativeNormalization {
    /// Divide by the number of anchors that actually had candidates.
    #[default]
    AnchorCount,
    /// Divide by the full positive count, empty candidate sets included.
    AllPairs,
}

/// Margins, weights, and mining hyperparameters in one bundle.
///
/// The ½ factors of the classic two-sided negative term are absorbed into
/// `lambda_no` / `lambda_ns`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    pub mu_p: f64,
    pub mu_n: f64,
    pub lambda_p: f64,
    pub lambda_no: f64,
    pub lambda_ns: f64,
    pub t_scale: f64,
    pub tau_p: f64,
    pub max_pairs: usize,
    pub scene_sample_cap: usize,
    pub negative_normalization: NegativeNormalization,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mu_p: 0.1,
            mu_n: 10.0,
            lambda_p: 1.0,
            lambda_no: 0.6,
            lambda_ns: 0.4,
            t_scale: 0.1,
            tau_p: 4.0,
            max_pairs: 1000,
            scene_sample_cap: 10_000,
            negative_normalization: NegativeNormalization::AnchorCount,
        }
    }
}

/// Loss terms, chosen hardest negatives, and gradients for both sides.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub l_p: f64,
    pub l_no: f64,
    pub l_ns: f64,
    pub total: f64,
    /// Per positive pair: the object-side hardest negative id, if any.
    pub hardest_object_ids: Vec<Option<u32>>,
    /// Per positive pair: the scene-side hardest negative id, if any.
    pub hardest_scene_ids: Vec<Option<u32>>,
    pub grad_object: FeatureSet,
    pub grad_scene: FeatureSet,
}

fn check_features(set: &FeatureSet, side: &'static str) -> Result<(), LossError> {
    if let Some((row, col)) = set.find_non_finite() {
        return Err(LossError::NonFiniteFeature { side, row, col });
    }
    Ok(())
}

/// Hardest candidate for one anchor: minimum feature distance, ties broken
/// by the lowest candidate id.
fn hardest(features: &FeatureSet, anchor: &[f64], candidates: &[u32]) -> Option<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for &k in candidates {
        let d = row_distance(anchor, features.row(k as usize));
        match best {
            None => best = Some((k, d)),
            Some((bk, bd)) => {
                if d < bd || (d == bd && k < bk) {
                    best = Some((k, d));
                }
            }
        }
    }
    best
}

/// Evaluates the loss and its gradient with respect to both feature sets.
pub fn compute_loss(
    f_obj: &FeatureSet,
    f_scn: &FeatureSet,
    positives: &CorrespondenceSet,
    negatives: &NegativeCandidates,
    cfg: &LossConfig,
) -> Result<LossBreakdown, LossError> {
    if positives.is_empty() {
        return Err(LossError::EmptyPositives);
    }
    if f_obj.cols() != f_scn.cols() {
        return Err(LossError::DimMismatch {
            obj: f_obj.cols(),
            scn: f_scn.cols(),
        });
    }
    check_features(f_obj, "object")?;
    check_features(f_scn, "scene")?;
    let n_pairs = positives.len();
    if negatives.object_candidates.len() != n_pairs || negatives.scene_candidates.len() != n_pairs {
        return Err(LossError::MisalignedCandidates {
            negatives: negatives.object_candidates.len(),
            positives: n_pairs,
        });
    }
    for &(i, j) in &positives.pairs {
        if i >= f_obj.rows() {
            return Err(LossError::IndexOutOfRange {
                side: "object",
                index: i,
                len: f_obj.rows(),
            });
        }
        if j >= f_scn.rows() {
            return Err(LossError::IndexOutOfRange {
                side: "scene",
                index: j,
                len: f_scn.rows(),
            });
        }
    }

    // Hardest-negative search is the hot loop; results land in per-pair
    // slots so parallelism cannot reorder anything.
    let hardest_object: Vec<Option<(u32, f64)>> = positives
        .pairs
        .par_iter()
        .zip(negatives.object_candidates.par_iter())
        .map(|(&(i, _), cands)| hardest(f_obj, f_obj.row(i), cands))
        .collect();
    let hardest_scene: Vec<Option<(u32, f64)>> = positives
        .pairs
        .par_iter()
        .zip(negatives.scene_candidates.par_iter())
        .map(|(&(_, j), cands)| hardest(f_scn, f_scn.row(j), cands))
        .collect();

    let n_anchors_object = hardest_object.iter().filter(|h| h.is_some()).count();
    let n_anchors_scene = hardest_scene.iter().filter(|h| h.is_some()).count();
    let norm_object = match cfg.negative_normalization {
        NegativeNormalization::AnchorCount => n_anchors_object,
        NegativeNormalization::AllPairs => n_pairs,
    };
    let norm_scene = match cfg.negative_normalization {
        NegativeNormalization::AnchorCount => n_anchors_scene,
        NegativeNormalization::AllPairs => n_pairs,
    };

    let dim = f_obj.cols();
    let mut grad_object = FeatureSet::zeros(f_obj.rows(), dim);
    let mut grad_scene = FeatureSet::zeros(f_scn.rows(), dim);
    let mut l_p = 0.0;
    let mut l_no = 0.0;
    let mut l_ns = 0.0;

    let inv_pairs = 1.0 / n_pairs as f64;
    for (p, &(i, j)) in positives.pairs.iter().enumerate() {
        let d = row_distance(f_obj.row(i), f_scn.row(j));
        // hinge subgradient at the kink is zero, hence strict >
        if d > cfg.mu_p {
            let margin = d - cfg.mu_p;
            l_p += margin * margin * inv_pairs;
            let scale = 2.0 * cfg.lambda_p * margin * inv_pairs / d;
            for c in 0..dim {
                let diff = f_obj.get(i, c) - f_scn.get(j, c);
                grad_object.row_mut(i)[c] += scale * diff;
                grad_scene.row_mut(j)[c] -= scale * diff;
            }
        }

        if let Some((k, m)) = hardest_object[p] {
            if m < cfg.mu_n {
                let margin = cfg.mu_n - m;
                let inv = 1.0 / norm_object as f64;
                l_no += margin * margin * inv;
                if m > 0.0 {
                    let scale = -2.0 * cfg.lambda_no * margin * inv / m;
                    let k = k as usize;
                    for c in 0..dim {
                        let diff = f_obj.get(i, c) - f_obj.get(k, c);
                        grad_object.row_mut(i)[c] += scale * diff;
                        grad_object.row_mut(k)[c] -= scale * diff;
                    }
                }
            }
        }

        if let Some((k, m)) = hardest_scene[p] {
            if m < cfg.mu_n {
                let margin = cfg.mu_n - m;
                let inv = 1.0 / norm_scene as f64;
                l_ns += margin * margin * inv;
                if m > 0.0 {
                    let scale = -2.0 * cfg.lambda_ns * margin * inv / m;
                    let k = k as usize;
                    for c in 0..dim {
                        let diff = f_scn.get(j, c) - f_scn.get(k, c);
                        grad_scene.row_mut(j)[c] += scale * diff;
                        grad_scene.row_mut(k)[c] -= scale * diff;
                    }
                }
            }
        }
    }

    let total = cfg.lambda_p * l_p + cfg.lambda_no * l_no + cfg.lambda_ns * l_ns;
    Ok(LossBreakdown {
        l_p,
        l_no,
        l_ns,
        total,
        hardest_object_ids: hardest_object.iter().map(|h| h.map(|(k, _)| k)).collect(),
        hardest_scene_ids: hardest_scene.iter().map(|h| h.map(|(k, _)| k)).collect(),
        grad_object,
        grad_scene,
    })
}
