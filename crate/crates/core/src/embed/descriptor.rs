//! Raw per-point descriptors: color, normal, covariance eigen-features at
//! two neighbourhood radii, local height statistics, and neighbourhood mean
//! colors.
//!
//! The mean-color channels make descriptors position-sensitive near texture
//! edges; without them, points inside a uniform color patch on flat
//! geometry are indistinguishable to any per-point map.

use crate::features::FeatureSet;
use crate::geometry::{NeighborIndex, PointCloud};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

/// color (3) + normal (3) + eigen-features at r1 (3) and r2 (3) +
/// height (2) + mean color at r1 (3) and r2 (3)
pub const DESCRIPTOR_DIM: usize = 20;

const MIN_POINTS: usize = 10;
const MIN_NEIGHBORS: usize = 3;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("descriptors need at least {MIN_POINTS} points, got {0}")]
    TooFewPoints(usize),
    #[error("radii must satisfy 0 < r1 < r2, got ({0}, {1})")]
    BadRadii(f64, f64),
}

/// N×14 descriptor matrix plus a per-point geometric validity flag.
///
/// Points with fewer than 3 neighbours at either radius keep zeroed
/// geometric entries and are flagged invalid.
#[derive(Debug, Clone)]
pub struct Descriptors {
    pub values: FeatureSet,
    pub validity: Vec<bool>,
    pub radii: (f64, f64),
}

struct LocalShape {
    eigen: [f64; 3],
    normal: Vector3<f64>,
}

/// Covariance eigen-analysis of a neighbourhood; eigenvalues are sorted
/// descending and normalized to sum 1.
fn analyze(points: &[Vector3<f64>]) -> Option<LocalShape> {
    let n = points.len();
    if n < MIN_NEIGHBORS {
        return None;
    }
    let mean: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = cov.symmetric_eigen();
    let mut pairs: Vec<(f64, Vector3<f64>)> = (0..3)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let sum: f64 = pairs.iter().map(|p| p.0.max(0.0)).sum();
    if sum <= 1e-18 {
        return None;
    }
    let eigen = [
        pairs[0].0.max(0.0) / sum,
        pairs[1].0.max(0.0) / sum,
        pairs[2].0.max(0.0) / sum,
    ];
    // smallest-eigenvalue direction, oriented toward +z (then +y, +x)
    let mut normal = pairs[2].1;
    let flip = normal.z < 0.0
        || (normal.z == 0.0 && (normal.y < 0.0 || (normal.y == 0.0 && normal.x < 0.0)));
    if flip {
        normal = -normal;
    }
    Some(LocalShape { eigen, normal })
}

/// Computes the N×14 descriptor matrix of `cloud` at radii `(r1, r2)` mm.
pub fn compute_descriptors(
    cloud: &PointCloud,
    radii: (f64, f64),
) -> Result<Descriptors, DescriptorError> {
    let (r1, r2) = radii;
    if cloud.len() < MIN_POINTS {
        return Err(DescriptorError::TooFewPoints(cloud.len()));
    }
    if !(r1 > 0.0 && r1 < r2) {
        return Err(DescriptorError::BadRadii(r1, r2));
    }
    let index = NeighborIndex::build(cloud);
    let n = cloud.len();

    let mean_color = |ids: &[(usize, f64)]| -> Vector3<f64> {
        match cloud.colors() {
            Some(colors) if !ids.is_empty() => {
                let mut acc = Vector3::zeros();
                for &(id, _) in ids {
                    acc += colors[id];
                }
                acc / ids.len() as f64
            }
            _ => Vector3::zeros(),
        }
    };

    let rows: Vec<([f64; DESCRIPTOR_DIM], bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = cloud.position(i);
            let mut row = [0.0; DESCRIPTOR_DIM];
            if let Some(colors) = cloud.colors() {
                row[0] = colors[i].x;
                row[1] = colors[i].y;
                row[2] = colors[i].z;
            }
            let near_ids = index.radius_query(&p, r1);
            let wide_ids = index.radius_query(&p, r2);
            let near: Vec<Vector3<f64>> =
                near_ids.iter().map(|&(id, _)| cloud.position(id)).collect();
            let wide: Vec<Vector3<f64>> =
                wide_ids.iter().map(|&(id, _)| cloud.position(id)).collect();
            let shape1 = analyze(&near);
            let shape2 = analyze(&wide);
            let mut valid = true;
            match &shape1 {
                Some(s) => {
                    row[3] = s.normal.x;
                    row[4] = s.normal.y;
                    row[5] = s.normal.z;
                    row[6] = s.eigen[0];
                    row[7] = s.eigen[1];
                    row[8] = s.eigen[2];
                }
                None => valid = false,
            }
            match &shape2 {
                Some(s) => {
                    row[9] = s.eigen[0];
                    row[10] = s.eigen[1];
                    row[11] = s.eigen[2];
                    let mean_z = wide.iter().map(|q| q.z).sum::<f64>() / wide.len() as f64;
                    let var_z = wide.iter().map(|q| (q.z - mean_z).powi(2)).sum::<f64>()
                        / wide.len() as f64;
                    row[12] = (p.z - mean_z) / r2;
                    row[13] = var_z.sqrt() / r2;
                }
                None => valid = false,
            }
            let near_color = mean_color(&near_ids);
            let wide_color = mean_color(&wide_ids);
            row[14] = near_color.x;
            row[15] = near_color.y;
            row[16] = near_color.z;
            row[17] = wide_color.x;
            row[18] = wide_color.y;
            row[19] = wide_color.z;
            (row, valid)
        })
        .collect();

    let mut values = FeatureSet::zeros(n, DESCRIPTOR_DIM);
    let mut validity = Vec::with_capacity(n);
    for (i, (row, valid)) in rows.into_iter().enumerate() {
        values.row_mut(i).copy_from_slice(&row);
        validity.push(valid);
    }
    Ok(Descriptors {
        values,
        validity,
        radii,
    })
}
