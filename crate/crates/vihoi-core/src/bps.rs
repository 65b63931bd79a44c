//! Basis point set encoding: distances from a fixed bank of points to the
//! object surface, computed once on the canonical mesh.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::mesh::ObjectMesh;
use crate::sdf::point_triangle_distance;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BpsConfig {
    pub count: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for BpsConfig {
    fn default() -> Self {
        Self { count: 1024, radius: 1.0, seed: 7 }
    }
}

impl BpsConfig {
    /// Radius covering every mesh in the set with a 1.2x margin on the
    /// largest AABB half diagonal.
    pub fn fit_radius(meshes: &[&ObjectMesh]) -> f64 {
        let largest = meshes
            .iter()
            .map(|m| m.aabb_half_diagonal())
            .fold(0.0f64, f64::max);
        1.2 * largest.max(1e-6)
    }
}

#[derive(Debug, Clone)]
pub struct BpsEncoding {
    pub basis: Vec<Vec3>,
    pub distances: Vec<f64>,
}

/// Uniform points in the ball of the given radius, by rejection from the
/// enclosing cube. Deterministic per seed.
pub fn sample_basis_points(count: usize, radius: f64, seed: u64) -> Vec<Vec3> {
    assert!(count >= 1 && radius > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = [
            rng.gen_range(-radius..radius),
            rng.gen_range(-radius..radius),
            rng.gen_range(-radius..radius),
        ];
        if crate::math::norm(p) <= radius {
            out.push(p);
        }
    }
    out
}

/// Exact min distance from every basis point to the mesh surface.
pub fn bps_encode(mesh: &ObjectMesh, basis: &[Vec3]) -> Result<BpsEncoding> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let tris: Vec<[Vec3; 3]> = (0..mesh.faces.len()).map(|i| mesh.triangle(i)).collect();
    let distances = basis
        .iter()
        .map(|&p| {
            tris.iter()
                .map(|t| point_triangle_distance(p, t[0], t[1], t[2]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(BpsEncoding { basis: basis.to_vec(), distances })
}

/// Canonical-mesh encoding under the given config.
pub fn encode_object(mesh: &ObjectMesh, cfg: &BpsConfig) -> Result<BpsEncoding> {
    let basis = sample_basis_points(cfg.count, cfg.radius, cfg.seed);
    bps_encode(mesh, &basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_primitive, PrimitiveKind};

    #[test]
    fn single_point_lies_in_ball() {
        let pts = sample_basis_points(1, 0.7, 42);
        assert_eq!(pts.len(), 1);
        assert!(crate::math::norm(pts[0]) <= 0.7);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_basis_points(256, 1.3, 7);
        let b = sample_basis_points(256, 1.3, 7);
        assert_eq!(a, b);
        let c = sample_basis_points(256, 1.3, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_mean_is_near_origin() {
        let pts = sample_basis_points(100_000, 1.0, 7);
        let mut mean = [0.0; 3];
        for p in &pts {
            for k in 0..3 {
                mean[k] += p[k];
            }
        }
        for k in 0..3 {
            mean[k] /= pts.len() as f64;
            assert!(mean[k].abs() < 0.02, "mean[{k}] = {}", mean[k]);
        }
    }

    #[test]
    fn basis_point_on_vertex_has_zero_distance() {
        let m = make_primitive(PrimitiveKind::Box, &[1.0, 1.0, 1.0]).unwrap();
        let enc = bps_encode(&m, &[m.vertices[3]]).unwrap();
        assert_eq!(enc.distances[0], 0.0);
    }

    #[test]
    fn cube_distance_matches_analytic() {
        // unit cube centered at origin, probe at (2, 0, 0)
        let m = make_primitive(PrimitiveKind::Box, &[1.0, 1.0, 1.0])
            .unwrap()
            .translated([0.0, -0.5, 0.0]);
        let enc = bps_encode(&m, &[[2.0, 0.0, 0.0]]).unwrap();
        assert!((enc.distances[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn scaling_mesh_and_basis_scales_distances() {
        let m = make_primitive(PrimitiveKind::Cylinder, &[0.2, 0.5]).unwrap();
        let basis = sample_basis_points(64, 1.0, 7);
        let enc = bps_encode(&m, &basis).unwrap();
        let s = 2.5;
        let scaled_basis: Vec<_> = basis.iter().map(|p| crate::math::scale(*p, s)).collect();
        let enc2 = bps_encode(&m.scaled(s), &scaled_basis).unwrap();
        for (d1, d2) in enc.distances.iter().zip(&enc2.distances) {
            assert!((d2 - s * d1).abs() < 1e-9, "{d1} vs {d2}");
        }
    }

    #[test]
    fn encode_matches_brute_force_min_over_triangles() {
        let m = make_primitive(PrimitiveKind::Cylinder, &[0.15, 0.4]).unwrap();
        assert!(m.faces.len() <= 500);
        let basis = sample_basis_points(128, BpsConfig::fit_radius(&[&m]), 7);
        let enc = bps_encode(&m, &basis).unwrap();
        for (i, p) in basis.iter().enumerate() {
            let mut brute = f64::INFINITY;
            for f in 0..m.faces.len() {
                let [a, b, c] = m.triangle(f);
                brute = brute.min(point_triangle_distance(*p, a, b, c));
            }
            assert_eq!(enc.distances[i], brute);
            assert!(enc.distances[i].is_finite() && enc.distances[i] >= 0.0);
        }
    }

    #[test]
    fn empty_mesh_is_rejected() {
        let m = ObjectMesh::new(vec![[0.0; 3]], vec![], "empty").unwrap();
        assert!(matches!(bps_encode(&m, &[[1.0, 0.0, 0.0]]), Err(Error::EmptyMesh)));
    }
}
