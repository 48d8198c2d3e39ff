//! BOP-format scene ingestion and emission.
//!
//! A scene directory holds `scene_camera.json`, `scene_gt.json`, and
//! `depth/` + `rgb/` image folders keyed by zero-padded image ids. Camera
//! and pose matrices are row-major in the JSON (BOP convention).

use super::depth::{
    fill_depth_holes, lift_depth_image, read_depth_png, read_rgb_png, write_depth_png,
    write_rgb_png, DepthImage, RgbImage,
};
use super::{CameraIntrinsics, DataError};
use crate::geometry::{PointCloud, RigidPose};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct SceneCameraEntry {
    #[serde(rename = "cam_K")]
    cam_k: [f64; 9],
    depth_scale: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneGtEntry {
    obj_id: u32,
    #[serde(rename = "cam_R_m2c")]
    cam_r_m2c: [f64; 9],
    cam_t_m2c: [f64; 3],
}

/// A 2-D bounding-box prior with pixel bounds `[x_min, x_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub object_id: u32,
    pub confidence: f64,
}

impl Detection {
    pub fn new(
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        object_id: u32,
        confidence: f64,
    ) -> Result<Self, DataError> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(DataError::BadDetection(format!(
                "degenerate bbox ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(DataError::BadDetection(format!(
                "confidence {confidence} outside [0,1]"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
            object_id,
            confidence,
        })
    }
}

#[derive(Debug, Deserialize)]
struct DetectionRecord {
    image_id: u32,
    obj_id: u32,
    bbox: [f64; 4],
    score: f64,
}

/// A fully loaded BOP scene image.
#[derive(Debug, Clone)]
pub struct BopScene {
    pub cloud: PointCloud,
    /// Source pixel of each cloud point, aligned with `cloud`.
    pub pixels: Vec<(u32, u32)>,
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<(u32, RigidPose)>,
}

fn read_json_map<T: serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<BTreeMap<String, T>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::FileOpen {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| DataError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn row_major(m: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8])
}

fn orthonormal_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r;
    let mut dev: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    dev.max((r.determinant() - 1.0).abs())
}

/// Nearest proper rotation via SVD.
fn nearest_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum())) * v_t
}

/// Reads one image of a BOP scene: lifts the depth image to a colored
/// cloud (after hole filling) and parses intrinsics and per-object poses.
///
/// Rotations off orthonormal by more than 1e-3 are rejected; smaller drift
/// is repaired with the nearest rotation, which must then pass the strict
/// pose check.
pub fn read_bop_scene(
    scene_dir: &Path,
    image_id: u32,
    hole_fill_iterations: usize,
) -> Result<BopScene, DataError> {
    let cam_path = scene_dir.join("scene_camera.json");
    let cameras: BTreeMap<String, SceneCameraEntry> = read_json_map(&cam_path)?;
    let cam = cameras
        .get(&image_id.to_string())
        .ok_or(DataError::MissingImageId(image_id))?;
    let k = row_major(&cam.cam_k);
    let intrinsics = CameraIntrinsics::new(k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)], cam.depth_scale)?;

    let gt_path = scene_dir.join("scene_gt.json");
    let gts: BTreeMap<String, Vec<SceneGtEntry>> = read_json_map(&gt_path)?;
    let entries = gts
        .get(&image_id.to_string())
        .ok_or(DataError::MissingImageId(image_id))?;
    let mut poses = Vec::with_capacity(entries.len());
    for e in entries {
        let raw = row_major(&e.cam_r_m2c);
        let deviation = orthonormal_deviation(&raw);
        if deviation > 1e-3 {
            return Err(DataError::NonOrthonormalRotation {
                path: gt_path.clone(),
                image_id,
                deviation,
            });
        }
        let fixed = if deviation > crate::geometry::ROTATION_TOL {
            nearest_rotation(&raw)
        } else {
            raw
        };
        let t = Vector3::new(e.cam_t_m2c[0], e.cam_t_m2c[1], e.cam_t_m2c[2]);
        let pose = RigidPose::new(fixed, t)?;
        poses.push((e.obj_id, pose));
    }

    let depth = read_depth_png(&scene_dir.join(format!("depth/{image_id:06}.png")))?;
    let rgb = read_rgb_png(&scene_dir.join(format!("rgb/{image_id:06}.png")))?;
    let depth = if hole_fill_iterations > 0 {
        fill_depth_holes(&depth, hole_fill_iterations)
    } else {
        depth
    };
    let lifted = lift_depth_image(&depth, &rgb, &intrinsics)?;
    let cloud = lifted.cloud.ok_or_else(|| DataError::Json {
        path: scene_dir.to_path_buf(),
        message: format!("image {image_id} has no valid depth"),
    })?;
    Ok(BopScene {
        cloud,
        pixels: lifted.pixels,
        intrinsics,
        poses,
    })
}

/// Writes one image of a BOP-format scene (used by the synthetic dataset
/// emitter and test fixtures).
pub fn write_bop_scene(
    scene_dir: &Path,
    image_id: u32,
    intrinsics: &CameraIntrinsics,
    poses: &[(u32, RigidPose)],
    depth: &DepthImage,
    rgb: &RgbImage,
) -> Result<(), DataError> {
    std::fs::create_dir_all(scene_dir.join("depth"))?;
    std::fs::create_dir_all(scene_dir.join("rgb"))?;

    let cam_path = scene_dir.join("scene_camera.json");
    let mut cameras: BTreeMap<String, SceneCameraEntry> = if cam_path.exists() {
        read_json_map(&cam_path)?
    } else {
        BTreeMap::new()
    };
    cameras.insert(
        image_id.to_string(),
        SceneCameraEntry {
            cam_k: [
                intrinsics.fx,
                0.0,
                intrinsics.cx,
                0.0,
                intrinsics.fy,
                intrinsics.cy,
                0.0,
                0.0,
                1.0,
            ],
            depth_scale: intrinsics.depth_scale,
        },
    );
    std::fs::write(&cam_path, serde_json::to_string_pretty(&cameras).unwrap())?;

    let gt_path = scene_dir.join("scene_gt.json");
    let mut gts: BTreeMap<String, Vec<SceneGtEntry>> = if gt_path.exists() {
        read_json_map(&gt_path)?
    } else {
        BTreeMap::new()
    };
    let entries: Vec<SceneGtEntry> = poses
        .iter()
        .map(|(obj_id, pose)| {
            let r = pose.rotation();
            SceneGtEntry {
                obj_id: *obj_id,
                cam_r_m2c: [
                    r[(0, 0)],
                    r[(0, 1)],
                    r[(0, 2)],
                    r[(1, 0)],
                    r[(1, 1)],
                    r[(1, 2)],
                    r[(2, 0)],
                    r[(2, 1)],
                    r[(2, 2)],
                ],
                cam_t_m2c: [pose.translation().x, pose.translation().y, pose.translation().z],
            }
        })
        .collect();
    gts.insert(image_id.to_string(), entries);
    std::fs::write(&gt_path, serde_json::to_string_pretty(&gts).unwrap())?;

    write_depth_png(&scene_dir.join(format!("depth/{image_id:06}.png")), depth)?;
    write_rgb_png(&scene_dir.join(format!("rgb/{image_id:06}.png")), rgb)?;
    Ok(())
}

/// Loads a detections file: a JSON list of
/// `{image_id, obj_id, bbox [x, y, w, h], score}`.
pub fn read_detections(path: &Path) -> Result<Vec<(u32, Detection)>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::FileOpen {
        path: path.to_path_buf(),
        source: e,
    })?;
    let records: Vec<DetectionRecord> = serde_json::from_str(&text).map_err(|e| DataError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    records
        .into_iter()
        .map(|r| {
            let [x, y, w, h] = r.bbox;
            let det = Detection::new(x, y, x + w, y + h, r.obj_id, r.score)?;
            Ok((r.image_id, det))
        })
        .collect()
}

/// Keeps the scene points whose source pixel falls inside the detection
/// box expanded by `margin_px` on each side (half-open upper bounds).
pub fn crop_by_detection(
    scene: &PointCloud,
    pixel_map: &[(u32, u32)],
    det: &Detection,
    margin_px: f64,
) -> Result<PointCloud, DataError> {
    assert_eq!(
        pixel_map.len(),
        scene.len(),
        "pixel map must align with the scene cloud"
    );
    let x_lo = det.x_min - margin_px;
    let x_hi = det.x_max + margin_px;
    let y_lo = det.y_min - margin_px;
    let y_hi = det.y_max + margin_px;
    let keep: Vec<usize> = pixel_map
        .iter()
        .enumerate()
        .filter(|&(_, &(u, v))| {
            let (u, v) = (u as f64, v as f64);
            u >= x_lo && u < x_hi && v >= y_lo && v < y_hi
        })
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(DataError::EmptyCrop);
    }
    Ok(scene.select(&keep))
}
