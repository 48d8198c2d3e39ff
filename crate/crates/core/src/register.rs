//! Feature matching and robust rigid-pose estimation.

use crate::features::{row_distance, FeatureSet};
use crate::geometry::{kabsch_fit, PointCloud, RigidPose};
use crate::seeding;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegisterError {
    #[error("cannot match empty feature sets")]
    EmptyFeatures,
    #[error("feature dims differ: object {obj} vs scene {scn}")]
    DimMismatch { obj: usize, scn: usize },
    #[error("registration needs at least 3 matches, got {0}")]
    TooFewMatches(usize),
    #[error("registration failed: best hypothesis kept only {inliers} inliers")]
    RegistrationFailure { inliers: usize },
    #[error("match indices exceed cloud sizes")]
    MatchOutOfRange,
}

/// Nearest-feature matches, one per object point.
#[derive(Debug, Clone)]
pub struct MatchSet {
    pub pairs: Vec<(usize, usize)>,
    pub feature_distances: Vec<f64>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub inlier_threshold: f64,
    pub min_sample: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            inlier_threshold: 6.0,
            min_sample: 3,
            confidence: 0.999,
            seed: 0,
        }
    }
}

/// For each object feature, its nearest scene feature by Euclidean
/// distance; ties break by the lower scene id. With `mutual` set, only
/// reciprocal nearest pairs survive.
pub fn match_features(
    f_obj: &FeatureSet,
    f_scn: &FeatureSet,
    mutual: bool,
) -> Result<MatchSet, RegisterError> {
    if f_obj.rows() == 0 || f_scn.rows() == 0 {
        return Err(RegisterError::EmptyFeatures);
    }
    if f_obj.cols() != f_scn.cols() {
        return Err(RegisterError::DimMismatch {
            obj: f_obj.cols(),
            scn: f_scn.cols(),
        });
    }
    let nearest = |anchors: &FeatureSet, pool: &FeatureSet| -> Vec<(usize, f64)> {
        (0..anchors.rows())
            .into_par_iter()
            .map(|i| {
                let a = anchors.row(i);
                let mut best = (0usize, f64::INFINITY);
                for j in 0..pool.rows() {
                    let d = row_distance(a, pool.row(j));
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best
            })
            .collect()
    };
    let fwd = nearest(f_obj, f_scn);
    let (pairs, feature_distances) = if mutual {
        let back = nearest(f_scn, f_obj);
        let mut pairs = Vec::new();
        let mut dists = Vec::new();
        for (i, &(j, d)) in fwd.iter().enumerate() {
            if back[j].0 == i {
                pairs.push((i, j));
                dists.push(d);
            }
        }
        (pairs, dists)
    } else {
        (
            fwd.iter().enumerate().map(|(i, &(j, _))| (i, j)).collect(),
            fwd.iter().map(|&(_, d)| d).collect(),
        )
    };
    Ok(MatchSet {
        pairs,
        feature_distances,
    })
}

fn count_inliers(
    pose: &RigidPose,
    object: &PointCloud,
    scene: &PointCloud,
    matches: &MatchSet,
    threshold: f64,
) -> usize {
    matches
        .pairs
        .iter()
        .filter(|&&(i, j)| (pose.apply(&object.position(i)) - scene.position(j)).norm() < threshold)
        .count()
}

fn inlier_ids(
    pose: &RigidPose,
    object: &PointCloud,
    scene: &PointCloud,
    matches: &MatchSet,
    threshold: f64,
) -> Vec<usize> {
    matches
        .pairs
        .iter()
        .enumerate()
        .filter(|&(_, &(i, j))| {
            (pose.apply(&object.position(i)) - scene.position(j)).norm() < threshold
        })
        .map(|(idx, _)| idx)
        .collect()
}

/// RANSAC over minimal 3-match samples scored by inlier count, followed by
/// a Kabsch refit on the best inlier set.
///
/// Deterministic given the seed: iteration `k` draws from its own derived
/// stream and ties prefer the lower iteration index. Returns the refit pose
/// and the match indices that are inliers under it.
pub fn ransac_register(
    object: &PointCloud,
    scene: &PointCloud,
    matches: &MatchSet,
    cfg: &RansacConfig,
) -> Result<(RigidPose, Vec<usize>), RegisterError> {
    let n = matches.len();
    if n < cfg.min_sample.max(3) {
        return Err(RegisterError::TooFewMatches(n));
    }
    for &(i, j) in &matches.pairs {
        if i >= object.len() || j >= scene.len() {
            return Err(RegisterError::MatchOutOfRange);
        }
    }
    let sample_size = cfg.min_sample.max(3);

    const CHUNK: usize = 256;
    let mut best: Option<(usize, usize, RigidPose)> = None; // (count, iter, pose)
    let mut done = 0usize;
    while done < cfg.max_iterations {
        let upper = (done + CHUNK).min(cfg.max_iterations);
        let chunk: Vec<Option<(usize, usize, RigidPose)>> = (done..upper)
            .into_par_iter()
            .map(|iter| {
                let mut rng = seeding::rng_labeled(cfg.seed, "ransac", iter as u64);
                let picks = sample(&mut rng, n, sample_size);
                let src: Vec<_> = picks
                    .iter()
                    .map(|p| object.position(matches.pairs[p].0))
                    .collect();
                let dst: Vec<_> = picks
                    .iter()
                    .map(|p| scene.position(matches.pairs[p].1))
                    .collect();
                let pose = kabsch_fit(&src, &dst).ok()?;
                let count = count_inliers(&pose, object, scene, matches, cfg.inlier_threshold);
                Some((count, iter, pose))
            })
            .collect();
        for cand in chunk.into_iter().flatten() {
            let better = match &best {
                None => true,
                Some((bc, bi, _)) => cand.0 > *bc || (cand.0 == *bc && cand.1 < *bi),
            };
            if better {
                best = Some(cand);
            }
        }
        done = upper;
        if let Some((count, _, _)) = &best {
            let w = *count as f64 / n as f64;
            let p_sample = w.powi(sample_size as i32);
            if p_sample >= 1.0 {
                break;
            }
            if p_sample > 0.0 {
                let needed = (1.0 - cfg.confidence).ln() / (1.0 - p_sample).ln();
                if (done as f64) >= needed {
                    break;
                }
            }
        }
    }

    let (best_count, _, best_pose) = best.ok_or(RegisterError::RegistrationFailure { inliers: 0 })?;
    if best_count < 3 {
        return Err(RegisterError::RegistrationFailure {
            inliers: best_count,
        });
    }
    let ids = inlier_ids(&best_pose, object, scene, matches, cfg.inlier_threshold);
    let src: Vec<_> = ids
        .iter()
        .map(|&idx| object.position(matches.pairs[idx].0))
        .collect();
    let dst: Vec<_> = ids
        .iter()
        .map(|&idx| scene.position(matches.pairs[idx].1))
        .collect();
    let refined = kabsch_fit(&src, &dst).unwrap_or(best_pose);
    // report inliers under the pose actually returned
    let final_ids = inlier_ids(&refined, object, scene, matches, cfg.inlier_threshold);
    if final_ids.len() < 3 {
        return Err(RegisterError::RegistrationFailure {
            inliers: final_ids.len(),
        });
    }
    Ok((refined, final_ids))
}
