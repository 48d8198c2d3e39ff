//! Data ingestion: PLY models, BOP-format scenes, depth lifting, detection
//! crops, and synthetic desk-scale scene generation.

mod bop;
mod depth;
mod mesh;
mod ply;
mod synth;

pub use bop::{
    crop_by_detection, read_bop_scene, read_detections, write_bop_scene, BopScene, Detection,
};
pub use depth::{
    fill_depth_holes, lift_depth_image, project_point, read_depth_png, read_rgb_png,
    write_depth_png, write_rgb_png, DepthImage, LiftedCloud, RgbImage,
};
pub use mesh::sample_mesh_surface;
pub use ply::{read_ply_model, write_ply_model};
pub use synth::{
    build_shape_mesh, generate_synthetic_pair, ClutterSpec, PoseSpec, ScenePair, ShapeKind,
    ShapeSpec,
};

use crate::geometry::GeometryError;
use nalgebra::Vector3;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    FileOpen {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed PLY header: {0}")]
    PlyHeader(String),
    #[error("PLY payload ends before the declared element count")]
    PlyTruncated,
    #[error("big-endian PLY is not supported")]
    PlyBigEndian,
    #[error("mesh has no triangles")]
    NoTriangles,
    #[error("triangle {triangle} references vertex {vertex} out of {count}")]
    TriangleIndexOutOfRange {
        triangle: usize,
        vertex: u32,
        count: usize,
    },
    #[error("mesh color count {colors} does not match vertex count {vertices}")]
    MeshColorMismatch { colors: usize, vertices: usize },
    #[error("mesh has zero total surface area")]
    ZeroSurfaceArea,
    #[error("invalid camera intrinsics: {0}")]
    BadIntrinsics(String),
    #[error("depth and rgb dimensions differ: {depth:?} vs {rgb:?}")]
    ImageSizeMismatch {
        depth: (usize, usize),
        rgb: (usize, usize),
    },
    #[error("cannot parse {path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("image id {0} not present in scene metadata")]
    MissingImageId(u32),
    #[error("rotation in {path} for image {image_id} deviates from orthonormal by {deviation}")]
    NonOrthonormalRotation {
        path: PathBuf,
        image_id: u32,
        deviation: f64,
    },
    #[error("invalid detection: {0}")]
    BadDetection(String),
    #[error("detection crop kept no points")]
    EmptyCrop,
    #[error("occlusion fraction must be in [0,1), got {0}")]
    BadOcclusionFraction(f64),
    #[error("png decode failed for {path}: {message}")]
    PngDecode { path: PathBuf, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Pinhole intrinsics plus the depth-image unit scale (mm per stored unit).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, depth_scale: f64) -> Result<Self, DataError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(DataError::BadIntrinsics(format!(
                "focal lengths must be positive: fx={fx}, fy={fy}"
            )));
        }
        if depth_scale <= 0.0 {
            return Err(DataError::BadIntrinsics(format!(
                "depth_scale must be positive: {depth_scale}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            depth_scale,
        })
    }
}

/// A triangle mesh with optional per-vertex colors in [0,1].
#[derive(Debug, Clone)]
pub struct TexturedMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<Vector3<f64>>>,
}

impl TexturedMesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[u32; 3]>,
        colors: Option<Vec<Vector3<f64>>>,
    ) -> Result<Self, DataError> {
        if triangles.is_empty() {
            return Err(DataError::NoTriangles);
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v as usize >= vertices.len() {
                    return Err(DataError::TriangleIndexOutOfRange {
                        triangle: t,
                        vertex: v,
                        count: vertices.len(),
                    });
                }
            }
        }
        if let Some(c) = &colors {
            if c.len() != vertices.len() {
                return Err(DataError::MeshColorMismatch {
                    colors: c.len(),
                    vertices: vertices.len(),
                });
            }
        }
        Ok(Self {
            vertices,
            triangles,
            colors,
        })
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        );
        0.5 * (b - a).cross(&(c - a)).norm()
    }
}
