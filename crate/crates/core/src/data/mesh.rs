//! Area-weighted surface sampling of triangle meshes.

use super::{DataError, TexturedMesh};
use crate::geometry::PointCloud;
use crate::seeding;
use nalgebra::Vector3;
use rand::Rng;

/// Samples exactly `count` points on the mesh surface.
///
/// Triangles are chosen with probability proportional to their area; the
/// position within a triangle is barycentric-uniform and colors interpolate
/// barycentrically.
pub fn sample_mesh_surface(
    mesh: &TexturedMesh,
    count: usize,
    seed: u64,
) -> Result<PointCloud, DataError> {
    let areas: Vec<f64> = (0..mesh.triangles.len())
        .map(|t| mesh.triangle_area(t))
        .collect();
    let total: f64 = areas.iter().sum();
    if total <= 0.0 {
        return Err(DataError::ZeroSurfaceArea);
    }
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }

    let mut rng = seeding::rng_labeled(seed, "mesh-sample", 0);
    let mut positions = Vec::with_capacity(count);
    let mut colors = mesh.colors.as_ref().map(|_| Vec::with_capacity(count));
    for _ in 0..count {
        let target = rng.gen_range(0.0..total);
        let t = cumulative.partition_point(|&c| c <= target).min(areas.len() - 1);
        let [ia, ib, ic] = mesh.triangles[t];
        let (a, b, c) = (
            mesh.vertices[ia as usize],
            mesh.vertices[ib as usize],
            mesh.vertices[ic as usize],
        );
        let mut u: f64 = rng.gen();
        let mut v: f64 = rng.gen();
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        positions.push(a + (b - a) * u + (c - a) * v);
        if let (Some(out), Some(src)) = (colors.as_mut(), mesh.colors.as_ref()) {
            let (ca, cb, cc) = (src[ia as usize], src[ib as usize], src[ic as usize]);
            let color = ca * (1.0 - u - v) + cb * u + cc * v;
            out.push(Vector3::new(
                color.x.clamp(0.0, 1.0),
                color.y.clamp(0.0, 1.0),
                color.z.clamp(0.0, 1.0),
            ));
        }
    }
    Ok(PointCloud::new(positions, colors)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_triangle() -> TexturedMesh {
        TexturedMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(10.0, 0.0, 0.0),
                Vector3::new(0.0, 10.0, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn samples_stay_in_triangle_plane() {
        let mesh = single_triangle();
        let cloud = sample_mesh_surface(&mesh, 1000, 0).unwrap();
        assert_eq!(cloud.len(), 1000);
        for p in cloud.positions() {
            assert!(p.z.abs() < 1e-9);
            assert!(p.x >= -1e-12 && p.y >= -1e-12);
            assert!(p.x + p.y <= 10.0 + 1e-9);
        }
    }

    #[test]
    fn area_weighted_split_within_three_sigma() {
        // two triangles with areas 1 and 3
        let mesh = TexturedMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 2.0, 0.0),
                Vector3::new(10.0, 0.0, 0.0),
                Vector3::new(13.0, 0.0, 0.0),
                Vector3::new(10.0, 2.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
            None,
        )
        .unwrap();
        assert!((mesh.triangle_area(0) - 1.0).abs() < 1e-12);
        assert!((mesh.triangle_area(1) - 3.0).abs() < 1e-12);
        let n = 20_000;
        let cloud = sample_mesh_surface(&mesh, n, 1).unwrap();
        let in_first = cloud.positions().iter().filter(|p| p.x < 5.0).count();
        let p = 0.25;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (in_first as f64 - mean).abs() < 3.0 * sigma,
            "{in_first} outside 3 sigma of {mean}"
        );
    }

    #[test]
    fn seeded_determinism() {
        let mesh = single_triangle();
        let a = sample_mesh_surface(&mesh, 100, 7).unwrap();
        let b = sample_mesh_surface(&mesh, 100, 7).unwrap();
        assert_eq!(a.positions(), b.positions());
        let c = sample_mesh_surface(&mesh, 100, 8).unwrap();
        assert_ne!(a.positions(), c.positions());
    }

    #[test]
    fn colors_interpolate() {
        let mesh = TexturedMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(10.0, 0.0, 0.0),
                Vector3::new(0.0, 10.0, 0.0),
            ],
            vec![[0, 1, 2]],
            Some(vec![
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, 0.0, 1.0),
            ]),
        )
        .unwrap();
        let cloud = sample_mesh_surface(&mesh, 500, 3).unwrap();
        for (p, c) in cloud.positions().iter().zip(cloud.colors().unwrap()) {
            // barycentric coordinates recoverable from x,y on this triangle
            let u = p.x / 10.0;
            let v = p.y / 10.0;
            let expected = Vector3::new(1.0 - u - v, u, v);
            assert!((c - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn degenerate_mesh_rejected() {
        let mesh = TexturedMesh::new(
            vec![Vector3::zeros(), Vector3::zeros(), Vector3::zeros()],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        assert!(matches!(
            sample_mesh_surface(&mesh, 10, 0),
            Err(DataError::ZeroSurfaceArea)
        ));
    }
}
