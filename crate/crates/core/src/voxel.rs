//! Sparse voxel-grid quantization.
//!
//! Reduces a cloud to one representative point per occupied voxel. The grid
//! origin is anchored at the componentwise minimum of the input, which makes
//! quantization translation-covariant per cloud and reproducible.

use crate::geometry::PointCloud;
use crate::seeding;
use nalgebra::Vector3;
use rand::Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VoxelError {
    #[error("voxel size must be positive, got {0}")]
    NonPositiveVoxelSize(f64),
}

/// How a voxel's member points collapse into its representative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReductionMode {
    /// One uniformly chosen member per voxel (seeded).
    Random,
    /// Mean position and mean color over the voxel's members.
    Barycenter,
}

/// A quantized cloud: representatives plus their integer voxel keys.
#[derive(Debug, Clone)]
pub struct QuantizedCloud {
    pub representatives: PointCloud,
    pub voxel_keys: Vec<[i64; 3]>,
    pub voxel_size: f64,
    pub origin: Vector3<f64>,
}

impl QuantizedCloud {
    pub fn len(&self) -> usize {
        self.voxel_keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxel_keys.is_empty()
    }
}

fn voxel_key(p: &Vector3<f64>, origin: &Vector3<f64>, size: f64) -> [i64; 3] {
    [
        ((p.x - origin.x) / size).floor() as i64,
        ((p.y - origin.y) / size).floor() as i64,
        ((p.z - origin.z) / size).floor() as i64,
    ]
}

/// Quantizes `cloud` into a grid of `voxel_size` mm cells.
///
/// Output is sorted lexicographically by voxel key, so the result is
/// independent of input point order in barycenter mode up to floating-point
/// summation order of members (members are accumulated in input order).
pub fn quantize(
    cloud: &PointCloud,
    voxel_size: f64,
    mode: ReductionMode,
    seed: u64,
) -> Result<QuantizedCloud, VoxelError> {
    if voxel_size <= 0.0 {
        return Err(VoxelError::NonPositiveVoxelSize(voxel_size));
    }
    let mut origin = cloud.position(0);
    for p in cloud.positions() {
        origin.x = origin.x.min(p.x);
        origin.y = origin.y.min(p.y);
        origin.z = origin.z.min(p.z);
    }

    let mut groups: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.positions().iter().enumerate() {
        groups
            .entry(voxel_key(p, &origin, voxel_size))
            .or_default()
            .push(i);
    }

    let mut rng = seeding::rng_labeled(seed, "voxel", 0);
    let mut positions = Vec::with_capacity(groups.len());
    let mut colors = cloud.colors().map(|_| Vec::with_capacity(groups.len()));
    let mut voxel_keys = Vec::with_capacity(groups.len());
    for (key, members) in &groups {
        voxel_keys.push(*key);
        match mode {
            ReductionMode::Barycenter => {
                let inv = 1.0 / members.len() as f64;
                let mut pos = Vector3::zeros();
                for &m in members {
                    pos += cloud.position(m);
                }
                positions.push(pos * inv);
                if let (Some(out), Some(src)) = (colors.as_mut(), cloud.colors()) {
                    let mut col = Vector3::zeros();
                    for &m in members {
                        col += src[m];
                    }
                    out.push(col * inv);
                }
            }
            ReductionMode::Random => {
                let pick = members[rng.gen_range(0..members.len())];
                positions.push(cloud.position(pick));
                if let (Some(out), Some(src)) = (colors.as_mut(), cloud.colors()) {
                    out.push(src[pick]);
                }
            }
        }
    }

    let representatives =
        PointCloud::new(positions, colors).expect("quantization preserves validity");
    Ok(QuantizedCloud {
        representatives,
        voxel_keys,
        voxel_size,
        origin,
    })
}
