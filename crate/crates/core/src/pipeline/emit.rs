//! Emits the synthetic dataset in BOP layout: PLY models plus rendered
//! depth/rgb scenes with camera and pose metadata.

use super::{Dataset, PipelineError};
use crate::config::RunConfig;
use crate::data::{
    build_shape_mesh, sample_mesh_surface, write_bop_scene, write_ply_model, CameraIntrinsics,
    DepthImage, RgbImage, ShapeKind, ShapeSpec,
};
use crate::geometry::{cloud_diameter, transform_cloud, RigidPose};
use crate::seeding;
use nalgebra::{Matrix3, Vector3};
use std::path::Path;

const IMAGE_WIDTH: usize = 640;
const IMAGE_HEIGHT: usize = 480;

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(572.0, 572.0, 320.0, 240.0, 0.1).expect("valid intrinsics")
}

/// World frame (support plane at z=0) to camera looking down from z=+700.
fn world_to_camera() -> RigidPose {
    let rotation = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
    RigidPose::new(rotation, Vector3::new(0.0, 0.0, 700.0)).expect("proper rotation")
}

/// Point-splat renderer: nearest depth wins per pixel; untouched pixels
/// stay at depth 0 (missing).
fn render(
    cloud: &crate::geometry::PointCloud,
    intr: &CameraIntrinsics,
) -> (DepthImage, RgbImage) {
    let mut depth = vec![0u16; IMAGE_WIDTH * IMAGE_HEIGHT];
    let mut rgb = vec![[0u8; 3]; IMAGE_WIDTH * IMAGE_HEIGHT];
    let colors = cloud.colors();
    for (i, p) in cloud.positions().iter().enumerate() {
        if p.z <= 0.0 {
            continue;
        }
        let u = (p.x * intr.fx / p.z + intr.cx).round();
        let v = (p.y * intr.fy / p.z + intr.cy).round();
        if u < 0.0 || v < 0.0 || u >= IMAGE_WIDTH as f64 || v >= IMAGE_HEIGHT as f64 {
            continue;
        }
        let idx = v as usize * IMAGE_WIDTH + u as usize;
        let stored = (p.z / intr.depth_scale).round().clamp(1.0, 65535.0) as u16;
        if depth[idx] == 0 || stored < depth[idx] {
            depth[idx] = stored;
            if let Some(c) = colors {
                rgb[idx] = [
                    (c[i].x * 255.0).round().clamp(0.0, 255.0) as u8,
                    (c[i].y * 255.0).round().clamp(0.0, 255.0) as u8,
                    (c[i].z * 255.0).round().clamp(0.0, 255.0) as u8,
                ];
            }
        }
    }
    (
        DepthImage::new(IMAGE_WIDTH, IMAGE_HEIGHT, depth),
        RgbImage::new(IMAGE_WIDTH, IMAGE_HEIGHT, rgb),
    )
}

/// Writes `models/obj_XXXXXX.ply`, `models/models_info.json`, and one scene
/// directory of rendered images matching `Dataset::synthetic(cfg)`.
pub fn emit_synthetic_dataset(cfg: &RunConfig, out_dir: &Path) -> Result<usize, PipelineError> {
    let models_dir = out_dir.join("models");
    std::fs::create_dir_all(&models_dir)?;
    let classes = ShapeKind::all();
    let mut info = serde_json::Map::new();
    for (class, kind) in classes.iter().enumerate() {
        let shape = ShapeSpec::new(
            *kind,
            cfg.synth_object_scale_mm,
            1000,
            seeding::derive_labeled(cfg.seed, "texture", class as u64),
        );
        let mesh = build_shape_mesh(&shape)?;
        let id = class as u32 + 1;
        write_ply_model(&models_dir.join(format!("obj_{id:06}.ply")), &mesh, true)?;
        let sampled = sample_mesh_surface(&mesh, 20_000, seeding::derive(cfg.seed, id as u64))?;
        let diameter = cloud_diameter(&sampled)?;
        info.insert(
            id.to_string(),
            serde_json::json!({ "diameter": diameter }),
        );
    }
    std::fs::write(
        models_dir.join("models_info.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(info)).expect("info serializes"),
    )?;

    let dataset = Dataset::synthetic(cfg)?;
    let scene_dir = out_dir.join("scenes/000000");
    let intr = camera();
    let to_cam = world_to_camera();
    for (i, pair) in dataset.pairs.iter().enumerate() {
        let scene_cam = transform_cloud(&pair.scene, &to_cam);
        let (depth, rgb) = render(&scene_cam, &intr);
        let gt_cam = to_cam.compose(&pair.gt);
        write_bop_scene(
            &scene_dir,
            i as u32,
            &intr,
            &[(pair.object_id, gt_cam)],
            &depth,
            &rgb,
        )?;
    }

    let manifest = serde_json::json!({
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "pairs": dataset.pairs.len(),
    });
    std::fs::write(
        out_dir.join("dataset_manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(dataset.pairs.len())
}
