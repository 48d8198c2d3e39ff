//! Procedural desk-scale scenes with exact ground truth.
//!
//! Objects are simple textured solids (per-face color bands) so that
//! color-dependent features have something to learn; scenes add a planar
//! support, distractor solids, a contiguous spherical occlusion, and
//! optional Gaussian position noise.

use super::mesh::sample_mesh_surface;
use super::{DataError, TexturedMesh};
use crate::geometry::{
    cloud_diameter, random_rotation, transform_cloud, NeighborIndex, PointCloud, RigidPose,
};
use crate::seeding;
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Procedural object families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Box,
    Cylinder,
    LBracket,
    Composite,
}

impl ShapeKind {
    pub fn all() -> [ShapeKind; 4] {
        [
            ShapeKind::Box,
            ShapeKind::Cylinder,
            ShapeKind::LBracket,
            ShapeKind::Composite,
        ]
    }
}

/// Object geometry, texture seed, and sampling density.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Nominal largest dimension in mm.
    pub scale_mm: f64,
    /// Points sampled on the surface.
    pub points: usize,
    /// Color bands per face strip.
    pub bands: usize,
    /// Seeds the band palette.
    pub texture_seed: u64,
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind, scale_mm: f64, points: usize, texture_seed: u64) -> Self {
        Self {
            kind,
            scale_mm,
            points,
            bands: 3,
            texture_seed,
        }
    }
}

/// Ground-truth pose sampling box (rotation is uniform over SO(3)).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoseSpec {
    pub translation_min: [f64; 3],
    pub translation_max: [f64; 3],
}

impl Default for PoseSpec {
    fn default() -> Self {
        Self {
            translation_min: [-100.0, -100.0, 60.0],
            translation_max: [100.0, 100.0, 160.0],
        }
    }
}

/// Support plane and distractor layout.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClutterSpec {
    pub support_extent_mm: f64,
    pub support_points: usize,
    pub distractor_count: usize,
    pub distractor_points_each: usize,
}

impl Default for ClutterSpec {
    fn default() -> Self {
        Self {
            support_extent_mm: 420.0,
            support_points: 3500,
            distractor_count: 3,
            distractor_points_each: 700,
        }
    }
}

/// One training/evaluation sample with exact ground truth.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub object_cloud: PointCloud,
    pub scene_cloud: PointCloud,
    pub gt_pose: RigidPose,
    pub object_diameter: f64,
}

fn hue_to_rgb(h: f64, s: f64, v: f64) -> Vector3<f64> {
    let h6 = h.rem_euclid(1.0) * 6.0;
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

/// Deterministic palette: golden-ratio hue stepping from the texture seed.
fn band_color(texture_seed: u64, band_index: usize) -> Vector3<f64> {
    let base = (seeding::derive(texture_seed, 0) % 1_000_000) as f64 / 1_000_000.0;
    let hue = base + band_index as f64 * 0.618_033_988_749_895;
    hue_to_rgb(hue, 0.75, 0.95)
}

struct MeshBuilder {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[u32; 3]>,
    colors: Vec<Vector3<f64>>,
}

impl MeshBuilder {
    fn new() -> Self {
        Self {
            vertices: Vec::new(),
            triangles: Vec::new(),
            colors: Vec::new(),
        }
    }

    /// Adds a colored quad as two triangles with duplicated vertices so the
    /// face keeps a flat color.
    fn quad(
        &mut self,
        a: Vector3<f64>,
        b: Vector3<f64>,
        c: Vector3<f64>,
        d: Vector3<f64>,
        color: Vector3<f64>,
    ) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&[a, b, c, d]);
        self.colors.extend_from_slice(&[color; 4]);
        self.triangles.push([base, base + 1, base + 2]);
        self.triangles.push([base, base + 2, base + 3]);
    }

    fn triangle(&mut self, a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>, color: Vector3<f64>) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&[a, b, c]);
        self.colors.extend_from_slice(&[color; 3]);
        self.triangles.push([base, base + 1, base + 2]);
    }

    /// Axis-aligned box with each face split into a bands x bands checker
    /// of colors, so texture varies along both in-plane directions.
    fn banded_box(
        &mut self,
        center: Vector3<f64>,
        half: Vector3<f64>,
        bands: usize,
        texture_seed: u64,
        band_offset: usize,
    ) {
        let (cx, cy, cz) = (center.x, center.y, center.z);
        let (hx, hy, hz) = (half.x, half.y, half.z);
        for (face, (axis, sign)) in [
            (0usize, (0usize, 1.0f64)),
            (1, (0, -1.0)),
            (2, (1, 1.0)),
            (3, (1, -1.0)),
            (4, (2, 1.0)),
            (5, (2, -1.0)),
        ] {
            let (u_axis, v_axis) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let h = [hx, hy, hz];
            let c = [cx, cy, cz];
            let corner = |u: f64, v: f64| {
                let mut p = [0.0f64; 3];
                p[axis] = c[axis] + sign * h[axis];
                p[u_axis] = c[u_axis] + u * h[u_axis];
                p[v_axis] = c[v_axis] + v * h[v_axis];
                Vector3::new(p[0], p[1], p[2])
            };
            for band in 0..bands {
                let u0 = -1.0 + 2.0 * band as f64 / bands as f64;
                let u1 = -1.0 + 2.0 * (band + 1) as f64 / bands as f64;
                for cell in 0..bands {
                    let v0 = -1.0 + 2.0 * cell as f64 / bands as f64;
                    let v1 = -1.0 + 2.0 * (cell + 1) as f64 / bands as f64;
                    let color = band_color(
                        texture_seed,
                        band_offset + (face * bands + band) * bands + cell,
                    );
                    self.quad(
                        corner(u0, v0),
                        corner(u1, v0),
                        corner(u1, v1),
                        corner(u0, v1),
                        color,
                    );
                }
            }
        }
    }

    /// Upright cylinder with angular x height color cells on the side wall.
    fn banded_cylinder(
        &mut self,
        center: Vector3<f64>,
        radius: f64,
        half_height: f64,
        segments: usize,
        texture_seed: u64,
        band_offset: usize,
    ) {
        const HEIGHT_CELLS: usize = 3;
        let top = center.z + half_height;
        let bottom = center.z - half_height;
        for s in 0..segments {
            let a0 = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            let a1 = 2.0 * std::f64::consts::PI * (s + 1) as f64 / segments as f64;
            let ring = |angle: f64, z: f64| {
                Vector3::new(
                    center.x + radius * angle.cos(),
                    center.y + radius * angle.sin(),
                    z,
                )
            };
            for cell in 0..HEIGHT_CELLS {
                let z0 = bottom + (top - bottom) * cell as f64 / HEIGHT_CELLS as f64;
                let z1 = bottom + (top - bottom) * (cell + 1) as f64 / HEIGHT_CELLS as f64;
                let color =
                    band_color(texture_seed, band_offset + s * HEIGHT_CELLS + cell);
                self.quad(ring(a0, z0), ring(a1, z0), ring(a1, z1), ring(a0, z1), color);
            }
            // caps as fans
            let cap_top = band_color(texture_seed, band_offset + segments * HEIGHT_CELLS);
            let cap_bottom = band_color(texture_seed, band_offset + segments * HEIGHT_CELLS + 1);
            self.triangle(
                Vector3::new(center.x, center.y, top),
                ring(a0, top),
                ring(a1, top),
                cap_top,
            );
            self.triangle(
                Vector3::new(center.x, center.y, bottom),
                ring(a1, bottom),
                ring(a0, bottom),
                cap_bottom,
            );
        }
    }

    fn build(self) -> Result<TexturedMesh, DataError> {
        TexturedMesh::new(self.vertices, self.triangles, Some(self.colors))
    }
}

/// Builds the procedural textured mesh of a shape spec (object frame,
/// centred at the origin).
pub fn build_shape_mesh(shape: &ShapeSpec) -> Result<TexturedMesh, DataError> {
    let s = shape.scale_mm;
    let mut b = MeshBuilder::new();
    match shape.kind {
        ShapeKind::Box => {
            b.banded_box(
                Vector3::zeros(),
                Vector3::new(0.5 * s, 0.35 * s, 0.2 * s),
                shape.bands,
                shape.texture_seed,
                0,
            );
        }
        ShapeKind::Cylinder => {
            b.banded_cylinder(Vector3::zeros(), 0.3 * s, 0.5 * s, 12, shape.texture_seed, 0);
        }
        ShapeKind::LBracket => {
            b.banded_box(
                Vector3::new(0.0, 0.0, -0.3 * s),
                Vector3::new(0.5 * s, 0.25 * s, 0.1 * s),
                shape.bands,
                shape.texture_seed,
                0,
            );
            b.banded_box(
                Vector3::new(-0.4 * s, 0.0, 0.1 * s),
                Vector3::new(0.1 * s, 0.25 * s, 0.3 * s),
                shape.bands,
                shape.texture_seed,
                100,
            );
        }
        ShapeKind::Composite => {
            b.banded_box(
                Vector3::new(0.0, 0.0, -0.15 * s),
                Vector3::new(0.4 * s, 0.25 * s, 0.15 * s),
                shape.bands,
                shape.texture_seed,
                0,
            );
            b.banded_cylinder(
                Vector3::new(0.1 * s, 0.0, 0.25 * s),
                0.2 * s,
                0.25 * s,
                10,
                shape.texture_seed,
                200,
            );
        }
    }
    b.build()
}

fn support_and_distractors(
    clutter: &ClutterSpec,
    scale_hint: f64,
    seed: u64,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let mut rng = seeding::rng_labeled(seed, "clutter", 0);
    let half = clutter.support_extent_mm / 2.0;
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    for _ in 0..clutter.support_points {
        positions.push(Vector3::new(
            rng.gen_range(-half..half),
            rng.gen_range(-half..half),
            0.0,
        ));
        let shade = rng.gen_range(0.35..0.45);
        colors.push(Vector3::new(shade, shade * 0.9, shade * 0.7));
    }
    for d in 0..clutter.distractor_count {
        let spec = ShapeSpec {
            kind: match d % 3 {
                0 => ShapeKind::Box,
                1 => ShapeKind::Cylinder,
                _ => ShapeKind::LBracket,
            },
            scale_mm: scale_hint * rng.gen_range(0.5..0.9),
            points: clutter.distractor_points_each,
            bands: 2,
            texture_seed: seeding::derive(seed, 1000 + d as u64),
        };
        let mesh = build_shape_mesh(&spec).expect("distractor mesh");
        let cloud = sample_mesh_surface(&mesh, spec.points, seeding::derive(seed, 2000 + d as u64))
            .expect("distractor sampling");
        let offset = Vector3::new(
            rng.gen_range(-half * 0.8..half * 0.8),
            rng.gen_range(-half * 0.8..half * 0.8),
            rng.gen_range(0.2 * scale_hint..0.8 * scale_hint),
        );
        let rotation = random_rotation(&mut rng);
        for (p, c) in cloud
            .positions()
            .iter()
            .zip(cloud.colors().expect("distractors are colored"))
        {
            positions.push(rotation * p + offset);
            colors.push(*c);
        }
    }
    (positions, colors)
}

/// Generates one synthetic object/scene pair with exact ground truth.
///
/// The scene holds every non-occluded transformed object point verbatim
/// (before noise), plus the support plane and distractors. Occlusion
/// removes the `occlusion_fraction * N` nearest neighbours of a seeded
/// centre point, a contiguous spherical region.
pub fn generate_synthetic_pair(
    shape: &ShapeSpec,
    pose: &PoseSpec,
    clutter: &ClutterSpec,
    occlusion_fraction: f64,
    noise_sigma_mm: f64,
    seed: u64,
) -> Result<ScenePair, DataError> {
    if !(0.0..1.0).contains(&occlusion_fraction) {
        return Err(DataError::BadOcclusionFraction(occlusion_fraction));
    }
    let mesh = build_shape_mesh(shape)?;
    let object_cloud = sample_mesh_surface(&mesh, shape.points, seeding::derive(seed, 1))?;
    let object_diameter = cloud_diameter(&object_cloud)?;

    let mut rng = seeding::rng_labeled(seed, "pose", 0);
    let rotation = random_rotation(&mut rng);
    let translation = Vector3::new(
        rng.gen_range(pose.translation_min[0]..=pose.translation_max[0]),
        rng.gen_range(pose.translation_min[1]..=pose.translation_max[1]),
        rng.gen_range(pose.translation_min[2]..=pose.translation_max[2]),
    );
    let gt_pose = RigidPose::new(rotation, translation).expect("random rotation is proper");

    let transformed = transform_cloud(&object_cloud, &gt_pose);
    let n = transformed.len();
    let occluded = (occlusion_fraction * n as f64).round() as usize;
    let visible_ids: Vec<usize> = if occluded == 0 {
        (0..n).collect()
    } else {
        let mut occ_rng = seeding::rng_labeled(seed, "occlusion", 0);
        let center = occ_rng.gen_range(0..n);
        let index = NeighborIndex::build(&transformed);
        let removed: std::collections::HashSet<usize> = index
            .nn_query(&transformed.position(center), occluded)
            .expect("occluded <= n")
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        (0..n).filter(|i| !removed.contains(i)).collect()
    };
    let visible = transformed.select(&visible_ids);

    let (clutter_pos, clutter_col) =
        support_and_distractors(clutter, shape.scale_mm, seeding::derive(seed, 3));

    let mut positions: Vec<Vector3<f64>> = visible.positions().to_vec();
    let mut colors: Vec<Vector3<f64>> = visible
        .colors()
        .expect("object clouds are colored")
        .to_vec();
    positions.extend_from_slice(&clutter_pos);
    colors.extend_from_slice(&clutter_col);

    if noise_sigma_mm > 0.0 {
        let normal = Normal::new(0.0, noise_sigma_mm).expect("positive sigma");
        let mut noise_rng = seeding::rng_labeled(seed, "noise", 0);
        for p in &mut positions {
            *p += Vector3::new(
                normal.sample(&mut noise_rng),
                normal.sample(&mut noise_rng),
                normal.sample(&mut noise_rng),
            );
        }
    }

    let scene_cloud = PointCloud::new(positions, Some(colors))?;
    Ok(ScenePair {
        object_cloud,
        scene_cloud,
        gt_pose,
        object_diameter,
    })
}
