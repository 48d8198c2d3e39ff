//! Depth-image handling: hole filling, back-projection to point clouds,
//! and 16-bit/8-bit PNG round-trips.

use super::{CameraIntrinsics, DataError};
use crate::geometry::PointCloud;
use nalgebra::Vector3;
use std::path::Path;

/// A 16-bit depth image in stored units; zero marks a missing measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn at(&self, u: usize, v: usize) -> u16 {
        self.data[v * self.width + u]
    }
}

/// An 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[u8; 3]>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn at(&self, u: usize, v: usize) -> [u8; 3] {
        self.data[v * self.width + u]
    }
}

/// A lifted depth image: `cloud` is `None` when every pixel had zero depth.
/// `pixels` records each point's source pixel, aligned with the cloud.
#[derive(Debug, Clone)]
pub struct LiftedCloud {
    pub cloud: Option<PointCloud>,
    pub pixels: Vec<(u32, u32)>,
}

/// Back-projects a depth image into a colored point cloud (mm).
///
/// Pixel (u,v) with stored depth d > 0 maps to z = d * depth_scale,
/// x = (u - cx) z / fx, y = (v - cy) z / fy. Zero-depth pixels are skipped.
pub fn lift_depth_image(
    depth: &DepthImage,
    rgb: &RgbImage,
    intr: &CameraIntrinsics,
) -> Result<LiftedCloud, DataError> {
    if depth.width != rgb.width || depth.height != rgb.height {
        return Err(DataError::ImageSizeMismatch {
            depth: (depth.width, depth.height),
            rgb: (rgb.width, rgb.height),
        });
    }
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut pixels = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.at(u, v);
            if d == 0 {
                continue;
            }
            let z = d as f64 * intr.depth_scale;
            let x = (u as f64 - intr.cx) * z / intr.fx;
            let y = (v as f64 - intr.cy) * z / intr.fy;
            positions.push(Vector3::new(x, y, z));
            let c = rgb.at(u, v);
            colors.push(Vector3::new(
                c[0] as f64 / 255.0,
                c[1] as f64 / 255.0,
                c[2] as f64 / 255.0,
            ));
            pixels.push((u as u32, v as u32));
        }
    }
    let cloud = if positions.is_empty() {
        None
    } else {
        Some(PointCloud::new(positions, Some(colors))?)
    };
    Ok(LiftedCloud { cloud, pixels })
}

/// Projects a camera-frame point back to pixel coordinates (test inverse of
/// the lift).
pub fn project_point(p: &Vector3<f64>, intr: &CameraIntrinsics) -> (f64, f64) {
    (
        p.x * intr.fx / p.z + intr.cx,
        p.y * intr.fy / p.z + intr.cy,
    )
}

/// Fills zero-depth pixels from the median of their nonzero 8-neighbours,
/// iterated `max_iterations` times (synchronous updates). Valid pixels are
/// never modified.
pub fn fill_depth_holes(depth: &DepthImage, max_iterations: usize) -> DepthImage {
    let (w, h) = (depth.width, depth.height);
    let mut current = depth.data.clone();
    for _ in 0..max_iterations {
        let mut next = current.clone();
        let mut changed = false;
        for v in 0..h {
            for u in 0..w {
                if current[v * w + u] != 0 {
                    continue;
                }
                let mut neighbors: Vec<u16> = Vec::with_capacity(8);
                for dv in -1i64..=1 {
                    for du in -1i64..=1 {
                        if du == 0 && dv == 0 {
                            continue;
                        }
                        let (nu, nv) = (u as i64 + du, v as i64 + dv);
                        if nu < 0 || nv < 0 || nu >= w as i64 || nv >= h as i64 {
                            continue;
                        }
                        let val = current[nv as usize * w + nu as usize];
                        if val != 0 {
                            neighbors.push(val);
                        }
                    }
                }
                if !neighbors.is_empty() {
                    neighbors.sort_unstable();
                    // lower median keeps the value on the stored-unit grid
                    next[v * w + u] = neighbors[(neighbors.len() - 1) / 2];
                    changed = true;
                }
            }
        }
        current = next;
        if !changed {
            break;
        }
    }
    DepthImage::new(w, h, current)
}

pub fn read_depth_png(path: &Path) -> Result<DepthImage, DataError> {
    let img = image::open(path).map_err(|e| DataError::PngDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = img.into_luma16();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok(DepthImage::new(
        w,
        h,
        gray.into_raw(),
    ))
}

pub fn write_depth_png(path: &Path, depth: &DepthImage) -> Result<(), DataError> {
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        depth.width as u32,
        depth.height as u32,
        depth.data.clone(),
    )
    .expect("buffer sized to dimensions");
    img.save(path).map_err(|e| DataError::PngDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage, DataError> {
    let img = image::open(path).map_err(|e| DataError::PngDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb
        .pixels()
        .map(|p| [p.0[0], p.0[1], p.0[2]])
        .collect();
    Ok(RgbImage::new(w, h, data))
}

pub fn write_rgb_png(path: &Path, rgb: &RgbImage) -> Result<(), DataError> {
    let mut raw = Vec::with_capacity(rgb.data.len() * 3);
    for p in &rgb.data {
        raw.extend_from_slice(p);
    }
    let img = image::ImageBuffer::<image::Rgb<u8>, Vec<u8>>::from_raw(
        rgb.width as u32,
        rgb.height as u32,
        raw,
    )
    .expect("buffer sized to dimensions");
    img.save(path).map_err(|e| DataError::PngDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
