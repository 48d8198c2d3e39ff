//! Rigid-body math and exact nearest-neighbour search.
//!
//! Everything downstream (mining, registration, metrics) builds on the
//! types here. Lengths are millimetres throughout the crate; conversions
//! happen only at reporting boundaries.

mod kdtree;

pub use kdtree::NeighborIndex;

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Entry-wise tolerance for rotation orthonormality and determinant checks.
pub const ROTATION_TOL: f64 = 1e-9;

/// Exact all-pairs diameter is used up to this size; larger clouds are
/// measured on a seeded subsample of this many points.
pub const DIAMETER_EXACT_LIMIT: usize = 5000;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point cloud must be non-empty")]
    EmptyCloud,
    #[error("colors length {colors} does not match positions length {positions}")]
    ColorLengthMismatch { colors: usize, positions: usize },
    #[error("non-finite coordinate at point {index}")]
    NonFiniteCoordinate { index: usize },
    #[error("color component out of [0,1] at point {index}")]
    ColorOutOfRange { index: usize },
    #[error("rotation matrix is not orthonormal within {ROTATION_TOL}")]
    NotARotation,
    #[error("rotation determinant is {det}, expected +1")]
    NotProperRotation { det: f64 },
    #[error("diameter needs at least 2 points, got {0}")]
    TooFewPointsForDiameter(usize),
    #[error("kabsch fit needs at least 3 point pairs, got {0}")]
    TooFewPointsForFit(usize),
    #[error("kabsch fit input lengths differ: {src} vs {dst}")]
    FitLengthMismatch { src: usize, dst: usize },
    #[error("degenerate kabsch fit: cross-covariance rank < 2 (points collinear or coincident)")]
    DegenerateFit,
    #[error("k = {k} exceeds index size {size}")]
    KTooLarge { k: usize, size: usize },
}

/// A point cloud in millimetres with optional per-point RGB in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vector3<f64>>,
    colors: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(
        positions: Vec<Vector3<f64>>,
        colors: Option<Vec<Vector3<f64>>>,
    ) -> Result<Self, GeometryError> {
        if positions.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        for (i, p) in positions.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(GeometryError::NonFiniteCoordinate { index: i });
            }
        }
        if let Some(cols) = &colors {
            if cols.len() != positions.len() {
                return Err(GeometryError::ColorLengthMismatch {
                    colors: cols.len(),
                    positions: positions.len(),
                });
            }
            for (i, c) in cols.iter().enumerate() {
                if !c.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
                    return Err(GeometryError::ColorOutOfRange { index: i });
                }
            }
        }
        Ok(Self { positions, colors })
    }

    /// Positions-only cloud.
    pub fn from_positions(positions: Vec<Vector3<f64>>) -> Result<Self, GeometryError> {
        Self::new(positions, None)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[Vector3<f64>]> {
        self.colors.as_deref()
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        self.positions[i]
    }

    pub fn has_colors(&self) -> bool {
        self.colors.is_some()
    }

    /// Keeps the points whose index is in `ids`, preserving `ids` order.
    pub fn select(&self, ids: &[usize]) -> PointCloud {
        let positions = ids.iter().map(|&i| self.positions[i]).collect();
        let colors = self
            .colors
            .as_ref()
            .map(|c| ids.iter().map(|&i| c[i]).collect());
        PointCloud { positions, colors }
    }
}

/// Rotation + translation placing an object in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        let id = Matrix3::<f64>::identity();
        for r in 0..3 {
            for c in 0..3 {
                if (gram[(r, c)] - id[(r, c)]).abs() > ROTATION_TOL {
                    return Err(GeometryError::NotARotation);
                }
            }
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::NotProperRotation { det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> RigidPose {
        let rot = self.rotation.transpose();
        RigidPose {
            rotation: rot,
            translation: -(rot * self.translation),
        }
    }

    /// `self` after `other`: (self ∘ other)(p) = self(other(p)).
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Applies a rigid pose to every position; colors pass through unchanged.
pub fn transform_cloud(cloud: &PointCloud, pose: &RigidPose) -> PointCloud {
    PointCloud {
        positions: cloud.positions.iter().map(|p| pose.apply(p)).collect(),
        colors: cloud.colors.clone(),
    }
}

/// Maximum pairwise distance between cloud points.
///
/// Exact up to [`DIAMETER_EXACT_LIMIT`] points; beyond that a fixed-seed
/// subsample of that many points keeps the O(N²) scan bounded while staying
/// reproducible.
pub fn cloud_diameter(cloud: &PointCloud) -> Result<f64, GeometryError> {
    let n = cloud.len();
    if n < 2 {
        return Err(GeometryError::TooFewPointsForDiameter(n));
    }
    let subsample;
    let pts: &[Vector3<f64>] = if n <= DIAMETER_EXACT_LIMIT {
        cloud.positions()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x00d1a3e7);
        let ids = sample(&mut rng, n, DIAMETER_EXACT_LIMIT);
        subsample = ids.iter().map(|i| cloud.positions[i]).collect::<Vec<_>>();
        &subsample
    };
    let mut max_sq = 0.0f64;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d = (pts[i] - pts[j]).norm_squared();
            if d > max_sq {
                max_sq = d;
            }
        }
    }
    Ok(max_sq.sqrt())
}

/// Closed-form least-squares rigid fit mapping `src` onto `dst`.
///
/// Reflections are repaired by flipping the smallest singular direction, so
/// the returned rotation always has determinant +1.
pub fn kabsch_fit(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<RigidPose, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::FitLengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(GeometryError::TooFewPointsForFit(src.len()));
    }
    let n = src.len() as f64;
    let c_src: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let c_dst: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;

    let mut cross = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst.iter()) {
        cross += (d - c_dst) * (s - c_src).transpose();
    }

    let svd = cross.svd(true, true);
    let sv = svd.singular_values;
    // Rank < 2 (collinear or coincident inputs) leaves the rotation
    // underdetermined.
    if sv[1] <= 1e-12 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(GeometryError::DegenerateFit);
    }
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let d = (u * v_t).determinant();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    let rotation = u * correction * v_t;
    let translation = c_dst - rotation * c_src;
    RigidPose::new(rotation, translation)
}

/// Relative rotation angle between two rotations, in radians.
pub fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    cos.acos()
}

/// Uniform random rotation from a normalized 4-vector quaternion draw.
pub fn random_rotation<R: rand::Rng>(rng: &mut R) -> Matrix3<f64> {
    use rand_distr::StandardNormal;
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if norm < 1e-6 {
            continue;
        }
        let (w, x, y, z) = (q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm);
        return Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        );
    }
}
