//! Training-time augmentations: per-epoch resampling, color jitter on the
//! object, and random erasing on the scene.
//!
//! Geometric scaling/rotation augmentations are deliberately absent: the
//! object set is closed, so specialising features per object beats pose
//! invariance here.

use crate::geometry::{NeighborIndex, PointCloud};
use crate::seeding;
use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("cannot resample {count} points from a cloud of {available}")]
    CountExceedsCloud { count: usize, available: usize },
    #[error("color jitter requires per-point colors")]
    MissingColors,
    #[error("erase radius must be non-negative, got {0}")]
    NegativeRadius(f64),
}

/// Multiplicative factor ranges for the color jitter; hue is in turns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterRanges {
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub saturation: (f64, f64),
    pub hue_turns: (f64, f64),
}

impl Default for JitterRanges {
    fn default() -> Self {
        Self {
            brightness: (0.8, 1.2),
            contrast: (0.8, 1.2),
            saturation: (0.8, 1.2),
            hue_turns: (-0.05, 0.05),
        }
    }
}

impl JitterRanges {
    /// Degenerate ranges pinned at the identity factors.
    pub fn identity() -> Self {
        Self {
            brightness: (1.0, 1.0),
            contrast: (1.0, 1.0),
            saturation: (1.0, 1.0),
            hue_turns: (0.0, 0.0),
        }
    }
}

/// Seeded uniform subsample without replacement of exactly `count` points.
pub fn resample(cloud: &PointCloud, count: usize, seed: u64) -> Result<PointCloud, AugmentError> {
    if count > cloud.len() {
        return Err(AugmentError::CountExceedsCloud {
            count,
            available: cloud.len(),
        });
    }
    let mut rng = seeding::rng_labeled(seed, "resample", 0);
    let ids: Vec<usize> = sample(&mut rng, cloud.len(), count).into_vec();
    Ok(cloud.select(&ids))
}

fn luma(c: &Vector3<f64>) -> f64 {
    0.299 * c.x + 0.587 * c.y + 0.114 * c.z
}

fn clamp01(c: Vector3<f64>) -> Vector3<f64> {
    Vector3::new(c.x.clamp(0.0, 1.0), c.y.clamp(0.0, 1.0), c.z.clamp(0.0, 1.0))
}

/// RGB in [0,1] to (hue in turns, saturation, value).
fn rgb_to_hsv(c: &Vector3<f64>) -> (f64, f64, f64) {
    let max = c.x.max(c.y).max(c.z);
    let min = c.x.min(c.y).min(c.z);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == c.x {
        (((c.y - c.z) / delta).rem_euclid(6.0)) / 6.0
    } else if max == c.y {
        ((c.z - c.x) / delta + 2.0) / 6.0
    } else {
        ((c.x - c.y) / delta + 4.0) / 6.0
    };
    (h, s, v)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Vector3<f64> {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i64 {
        0 => Vector3::new(v, t, p),
        1 => Vector3::new(q, v, p),
        2 => Vector3::new(p, v, t),
        3 => Vector3::new(p, q, v),
        4 => Vector3::new(t, p, v),
        _ => Vector3::new(v, p, q),
    }
}

/// One random factor per call (not per point) for brightness, contrast,
/// saturation, and hue, applied in that order; positions untouched.
///
/// Formulas: brightness multiplies; contrast blends with the cloud's mean
/// luma; saturation blends with per-point luma; hue rotates the HSV hue
/// angle. Results clamp to [0,1] after each stage.
pub fn color_jitter(
    cloud: &PointCloud,
    ranges: &JitterRanges,
    seed: u64,
) -> Result<PointCloud, AugmentError> {
    let colors = cloud.colors().ok_or(AugmentError::MissingColors)?;
    let mut rng = seeding::rng_labeled(seed, "jitter", 0);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..hi)
        }
    };
    let f_brightness = draw(&mut rng, ranges.brightness);
    let f_contrast = draw(&mut rng, ranges.contrast);
    let f_saturation = draw(&mut rng, ranges.saturation);
    let f_hue = draw(&mut rng, ranges.hue_turns);

    let mut out: Vec<Vector3<f64>> = colors.to_vec();
    if f_brightness != 1.0 {
        for c in &mut out {
            *c = clamp01(*c * f_brightness);
        }
    }
    if f_contrast != 1.0 {
        let mean = out.iter().map(luma).sum::<f64>() / out.len() as f64;
        for c in &mut out {
            let blended = Vector3::from_element(mean) + (*c - Vector3::from_element(mean)) * f_contrast;
            *c = clamp01(blended);
        }
    }
    if f_saturation != 1.0 {
        for c in &mut out {
            let l = luma(c);
            let blended = Vector3::from_element(l) + (*c - Vector3::from_element(l)) * f_saturation;
            *c = clamp01(blended);
        }
    }
    if f_hue != 0.0 {
        for c in &mut out {
            let (h, s, v) = rgb_to_hsv(c);
            *c = clamp01(hsv_to_rgb(h + f_hue, s, v));
        }
    }
    Ok(PointCloud::new(cloud.positions().to_vec(), Some(out)).expect("jitter preserves validity"))
}

/// Result of a random-erase pass.
#[derive(Debug, Clone)]
pub struct EraseOutcome {
    /// Scene minus the erased sphere; `None` when everything was removed.
    pub cloud: Option<PointCloud>,
    /// Ids of the surviving scene points.
    pub kept_ids: Vec<usize>,
    /// Chosen erase centre (a scene point id); `None` flags the no-op case
    /// of an empty correspondence region.
    pub center_id: Option<usize>,
    pub removed: usize,
}

/// Simulates an occlusion: picks a scene point from the object's
/// nearest-neighbour correspondence region and removes every scene point
/// within `rho` mm of it (inclusive sphere).
pub fn random_erase(
    scene: &PointCloud,
    object_transformed: &[Vector3<f64>],
    rho: f64,
    seed: u64,
) -> Result<EraseOutcome, AugmentError> {
    if rho < 0.0 {
        return Err(AugmentError::NegativeRadius(rho));
    }
    if object_transformed.is_empty() {
        return Ok(EraseOutcome {
            cloud: Some(scene.clone()),
            kept_ids: (0..scene.len()).collect(),
            center_id: None,
            removed: 0,
        });
    }
    let index = NeighborIndex::build(scene);
    let mut region: Vec<usize> = object_transformed
        .iter()
        .map(|p| index.nearest(p).0)
        .collect();
    region.sort_unstable();
    region.dedup();

    let mut rng = seeding::rng_labeled(seed, "erase", 0);
    let center_id = region[rng.gen_range(0..region.len())];
    let center = scene.position(center_id);

    let kept_ids: Vec<usize> = (0..scene.len())
        .filter(|&i| (scene.position(i) - center).norm() > rho)
        .collect();
    let removed = scene.len() - kept_ids.len();
    let cloud = if kept_ids.is_empty() {
        None
    } else {
        Some(scene.select(&kept_ids))
    };
    Ok(EraseOutcome {
        cloud,
        kept_ids,
        center_id: Some(center_id),
        removed,
    })
}
