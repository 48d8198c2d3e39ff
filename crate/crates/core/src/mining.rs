//! Ground-truth correspondence mining and safety-thresholded negative
//! candidate sets.
//!
//! Positives pair each transformed object point with its nearest scene
//! point when that neighbour lies within `tau_p`. Negative candidates for
//! an anchor exclude everything inside a safety sphere of radius
//! `t_scale * D_O`, which keeps hardest-negative mining away from points
//! whose local structure necessarily matches the anchor's.

use crate::geometry::{transform_cloud, NeighborIndex, PointCloud, RigidPose};
use crate::seeding;
use rand::seq::index::sample;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("tau_p must be positive, got {0}")]
    NonPositiveTauP(f64),
    #[error("no correspondence closer than tau_p = {tau_p} mm (disjoint clouds or wrong pose?)")]
    NoCorrespondences { tau_p: f64 },
    #[error("t_scale must be non-negative, got {0}")]
    NegativeTScale(f64),
    #[error("object diameter must be positive, got {0}")]
    NonPositiveDiameter(f64),
}

/// Valid object→scene correspondences with their spatial distances (mm).
///
/// Object ids are unique: each object point maps to at most one positive.
#[derive(Debug, Clone)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(usize, usize)>,
    pub distances: Vec<f64>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Per-anchor negative candidate ids, aligned with the positives that
/// produced them.
///
/// `object_candidates[p]` holds the object-side candidates for the anchor
/// of positive pair `p`; `scene_candidates[p]` the scene-side ones. Every
/// candidate lies strictly farther than the side's safety radius from its
/// anchor.
#[derive(Debug, Clone)]
pub struct NegativeCandidates {
    pub object_candidates: Vec<Vec<u32>>,
    pub scene_candidates: Vec<Vec<u32>>,
    pub safety_radius: f64,
    pub scene_safety_radius: f64,
}

/// Mines positive correspondences between an object cloud and a scene
/// cloud under a ground-truth pose.
///
/// Each transformed object point takes its single nearest scene neighbour;
/// the pair is kept when the distance is strictly below `tau_p`. When more
/// than `max_pairs` survive, a seeded uniform subsample of exactly
/// `max_pairs` is retained (in ascending original order).
pub fn mine_positives(
    object: &PointCloud,
    scene: &PointCloud,
    gt: &RigidPose,
    tau_p: f64,
    max_pairs: Option<usize>,
    seed: u64,
) -> Result<CorrespondenceSet, MiningError> {
    if tau_p <= 0.0 {
        return Err(MiningError::NonPositiveTauP(tau_p));
    }
    let transformed = transform_cloud(object, gt);
    let index = NeighborIndex::build(scene);
    let mut pairs = Vec::new();
    let mut distances = Vec::new();
    for (i, p) in transformed.positions().iter().enumerate() {
        let (j, d) = index.nearest(p);
        if d < tau_p {
            pairs.push((i, j));
            distances.push(d);
        }
    }
    if pairs.is_empty() {
        return Err(MiningError::NoCorrespondences { tau_p });
    }
    if let Some(cap) = max_pairs {
        if pairs.len() > cap {
            let mut rng = seeding::rng_labeled(seed, "positive-cap", 0);
            let mut keep: Vec<usize> = sample(&mut rng, pairs.len(), cap).into_vec();
            keep.sort_unstable();
            pairs = keep.iter().map(|&k| pairs[k]).collect();
            distances = keep.iter().map(|&k| distances[k]).collect();
        }
    }
    Ok(CorrespondenceSet { pairs, distances })
}

/// Builds safety-thresholded negative candidate sets for every positive.
///
/// The safety radius is `t_scale * diameter` on both sides. The scene side
/// first takes a seeded sample of at most `scene_sample_cap` points and
/// filters that sample per anchor; the object side filters the full cloud.
/// Anchors whose candidate list comes out empty keep an empty list (the
/// loss skips them).
pub fn build_negative_candidates(
    object: &PointCloud,
    scene: &PointCloud,
    positives: &CorrespondenceSet,
    t_scale: f64,
    diameter: f64,
    scene_sample_cap: usize,
    seed: u64,
) -> Result<NegativeCandidates, MiningError> {
    build_negative_candidates_with_radii(
        object,
        scene,
        positives,
        t_scale,
        t_scale,
        diameter,
        scene_sample_cap,
        seed,
    )
}

/// As [`build_negative_candidates`] but with independent per-side scales.
///
/// Equal scales on both sides is the supported configuration; the split is
/// exposed for experimentation only.
#[allow(clippy::too_many_arguments)]
pub fn build_negative_candidates_with_radii(
    object: &PointCloud,
    scene: &PointCloud,
    positives: &CorrespondenceSet,
    t_scale_object: f64,
    t_scale_scene: f64,
    diameter: f64,
    scene_sample_cap: usize,
    seed: u64,
) -> Result<NegativeCandidates, MiningError> {
    if t_scale_object < 0.0 {
        return Err(MiningError::NegativeTScale(t_scale_object));
    }
    if t_scale_scene < 0.0 {
        return Err(MiningError::NegativeTScale(t_scale_scene));
    }
    if diameter <= 0.0 {
        return Err(MiningError::NonPositiveDiameter(diameter));
    }
    let radius_object = t_scale_object * diameter;
    let radius_scene = t_scale_scene * diameter;

    // Sample-then-filter: the cap replaces the full scene candidate set, so
    // the same sample is shared by every anchor.
    let scene_pool: Vec<u32> = if scene.len() > scene_sample_cap {
        let mut rng = seeding::rng_labeled(seed, "scene-negatives", 0);
        let mut ids: Vec<usize> = sample(&mut rng, scene.len(), scene_sample_cap).into_vec();
        ids.sort_unstable();
        ids.into_iter().map(|i| i as u32).collect()
    } else {
        (0..scene.len() as u32).collect()
    };

    let object_candidates: Vec<Vec<u32>> = positives
        .pairs
        .par_iter()
        .map(|&(i, _)| {
            let anchor = object.position(i);
            (0..object.len() as u32)
                .filter(|&k| (object.position(k as usize) - anchor).norm() > radius_object)
                .collect()
        })
        .collect();

    let scene_candidates: Vec<Vec<u32>> = positives
        .pairs
        .par_iter()
        .map(|&(_, j)| {
            let anchor = scene.position(j);
            scene_pool
                .iter()
                .copied()
                .filter(|&k| (scene.position(k as usize) - anchor).norm() > radius_scene)
                .collect()
        })
        .collect();

    Ok(NegativeCandidates {
        object_candidates,
        scene_candidates,
        safety_radius: radius_object,
        scene_safety_radius: radius_scene,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_rotation;
    use nalgebra::Vector3;
    use rand::Rng;

    fn rand_cloud(seed: u64, n: usize, scale: f64) -> PointCloud {
        let mut rng = seeding::rng(seed, 0);
        PointCloud::from_positions(
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-scale..scale),
                        rng.gen_range(-scale..scale),
                        rng.gen_range(-scale..scale),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_overlay_pairs_every_point() {
        let object = rand_cloud(1, 200, 50.0);
        let mut rng = seeding::rng(2, 0);
        let gt = RigidPose::new(random_rotation(&mut rng), Vector3::new(5.0, -3.0, 80.0)).unwrap();
        let scene = transform_cloud(&object, &gt);
        let set = mine_positives(&object, &scene, &gt, 4.0, None, 0).unwrap();
        assert_eq!(set.len(), object.len());
        assert!(set.distances.iter().all(|&d| d < 1e-9));
        // object ids are unique and pair i -> i
        for (k, &(i, j)) in set.pairs.iter().enumerate() {
            assert_eq!(i, k);
            assert_eq!(j, k);
        }
    }

    #[test]
    fn threshold_edge_excludes_distant_match() {
        let object =
            PointCloud::from_positions(vec![Vector3::zeros(), Vector3::new(100.0, 0.0, 0.0)])
                .unwrap();
        // scene holds one exact match and one point 5 mm away from the other
        let scene = PointCloud::from_positions(vec![
            Vector3::zeros(),
            Vector3::new(105.0, 0.0, 0.0),
        ])
        .unwrap();
        let set = mine_positives(&object, &scene, &RigidPose::identity(), 4.0, None, 0).unwrap();
        assert_eq!(set.pairs, vec![(0, 0)]);
    }

    #[test]
    fn disjoint_clouds_error() {
        let object = PointCloud::from_positions(vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)])
            .unwrap();
        let scene =
            PointCloud::from_positions(vec![Vector3::new(1000.0, 0.0, 0.0)]).unwrap();
        assert!(matches!(
            mine_positives(&object, &scene, &RigidPose::identity(), 4.0, None, 0),
            Err(MiningError::NoCorrespondences { .. })
        ));
    }

    #[test]
    fn matches_linear_scan_oracle() {
        let object = rand_cloud(3, 200, 30.0);
        let scene = rand_cloud(4, 300, 30.0);
        let gt = RigidPose::identity();
        let tau = 6.0;
        let got = mine_positives(&object, &scene, &gt, tau, None, 0).unwrap();

        let mut want = Vec::new();
        for (i, p) in object.positions().iter().enumerate() {
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, q) in scene.positions().iter().enumerate() {
                let d = (p - q).norm();
                if d < best.1 || (d == best.1 && j < best.0) {
                    best = (j, d);
                }
            }
            if best.1 < tau {
                want.push(((i, best.0), best.1));
            }
        }
        assert_eq!(got.pairs.len(), want.len());
        for (k, &((i, j), d)) in want.iter().enumerate() {
            assert_eq!(got.pairs[k], (i, j));
            assert_eq!(got.distances[k], d);
        }
    }

    #[test]
    fn cap_subsamples_exactly() {
        let object = rand_cloud(5, 500, 40.0);
        let gt = RigidPose::identity();
        let scene = object.clone();
        let set = mine_positives(&object, &scene, &gt, 1.0, Some(100), 9).unwrap();
        assert_eq!(set.len(), 100);
        // retained pairs stay sorted by object id and unique
        let mut prev = None;
        for &(i, _) in &set.pairs {
            if let Some(p) = prev {
                assert!(i > p);
            }
            prev = Some(i);
        }
        // same seed reproduces the subsample
        let again = mine_positives(&object, &scene, &gt, 1.0, Some(100), 9).unwrap();
        assert_eq!(set.pairs, again.pairs);
    }

    #[test]
    fn mining_invariant_under_common_isometry() {
        let object = rand_cloud(6, 150, 25.0);
        let mut rng = seeding::rng(7, 0);
        let gt = RigidPose::new(random_rotation(&mut rng), Vector3::new(10.0, 0.0, 50.0)).unwrap();
        let scene = {
            let mut base = transform_cloud(&object, &gt);
            // drop some points so not every anchor matches
            base = base.select(&(0..100).collect::<Vec<_>>());
            base
        };
        let set_a = mine_positives(&object, &scene, &gt, 4.0, None, 0).unwrap();

        let extra = RigidPose::new(random_rotation(&mut rng), Vector3::new(-4.0, 7.0, 2.0)).unwrap();
        let scene_b = transform_cloud(&scene, &extra);
        let gt_b = extra.compose(&gt);
        let set_b = mine_positives(&object, &scene_b, &gt_b, 4.0, None, 0).unwrap();
        assert_eq!(set_a.pairs, set_b.pairs);
    }

    #[test]
    fn t_scale_zero_keeps_all_non_anchor_points() {
        let object = rand_cloud(8, 50, 20.0);
        let scene = object.clone();
        let pos = mine_positives(&object, &scene, &RigidPose::identity(), 1.0, None, 0).unwrap();
        let negs =
            build_negative_candidates(&object, &scene, &pos, 0.0, 100.0, 10_000, 0).unwrap();
        for (p, &(i, _)) in pos.pairs.iter().enumerate() {
            assert_eq!(negs.object_candidates[p].len(), object.len() - 1);
            assert!(!negs.object_candidates[p].contains(&(i as u32)));
        }
    }

    #[test]
    fn threshold_arithmetic_two_points() {
        let object = PointCloud::from_positions(vec![
            Vector3::zeros(),
            Vector3::new(15.0, 0.0, 0.0),
        ])
        .unwrap();
        let scene = object.clone();
        let pos = mine_positives(&object, &scene, &RigidPose::identity(), 1.0, None, 0).unwrap();
        assert_eq!(pos.len(), 2);
        // tau_no = 0.1 * 100 = 10 < 15: each is a candidate of the other
        let loose = build_negative_candidates(&object, &scene, &pos, 0.1, 100.0, 100, 0).unwrap();
        assert_eq!(loose.object_candidates[0], vec![1]);
        assert_eq!(loose.object_candidates[1], vec![0]);
        // tau_no = 0.2 * 100 = 20 > 15: neither is
        let tight = build_negative_candidates(&object, &scene, &pos, 0.2, 100.0, 100, 0).unwrap();
        assert!(tight.object_candidates[0].is_empty());
        assert!(tight.object_candidates[1].is_empty());
    }

    #[test]
    fn candidates_match_bruteforce_radius_filter() {
        let object = rand_cloud(10, 250, 30.0);
        let scene = rand_cloud(11, 500, 30.0);
        let pos = mine_positives(&object, &scene, &RigidPose::identity(), 10.0, None, 0).unwrap();
        let t_scale = 0.12;
        let diameter = 80.0;
        let negs =
            build_negative_candidates(&object, &scene, &pos, t_scale, diameter, 10_000, 0)
                .unwrap();
        let radius = t_scale * diameter;
        for (p, &(i, j)) in pos.pairs.iter().enumerate() {
            let want_obj: Vec<u32> = (0..object.len() as u32)
                .filter(|&k| (object.position(k as usize) - object.position(i)).norm() > radius)
                .collect();
            assert_eq!(negs.object_candidates[p], want_obj);
            let want_scn: Vec<u32> = (0..scene.len() as u32)
                .filter(|&k| (scene.position(k as usize) - scene.position(j)).norm() > radius)
                .collect();
            assert_eq!(negs.scene_candidates[p], want_scn);
        }
    }

    #[test]
    fn candidate_counts_non_increasing_in_t_scale() {
        let object = rand_cloud(12, 120, 25.0);
        let scene = rand_cloud(13, 240, 25.0);
        let pos = mine_positives(&object, &scene, &RigidPose::identity(), 12.0, None, 0).unwrap();
        let mut prev: Option<Vec<usize>> = None;
        for t in [0.0, 0.05, 0.1, 0.25, 0.5] {
            let negs =
                build_negative_candidates(&object, &scene, &pos, t, 60.0, 10_000, 0).unwrap();
            let sizes: Vec<usize> = negs.object_candidates.iter().map(Vec::len).collect();
            if let Some(p) = &prev {
                for (a, b) in p.iter().zip(&sizes) {
                    assert!(b <= a);
                }
            }
            prev = Some(sizes);
        }
    }

    #[test]
    fn scene_cap_limits_pool() {
        let object = rand_cloud(14, 60, 20.0);
        let scene = rand_cloud(15, 400, 20.0);
        let pos = mine_positives(&object, &scene, &RigidPose::identity(), 15.0, None, 0).unwrap();
        let negs = build_negative_candidates(&object, &scene, &pos, 0.0, 50.0, 100, 7).unwrap();
        for c in &negs.scene_candidates {
            assert!(c.len() <= 100);
        }
        // deterministic given the seed
        let again = build_negative_candidates(&object, &scene, &pos, 0.0, 50.0, 100, 7).unwrap();
        assert_eq!(negs.scene_candidates, again.scene_candidates);
    }
}
