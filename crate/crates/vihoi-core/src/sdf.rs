//! Exact point-to-mesh distance and winding-number based sign for watertight
//! meshes.

use crate::math::{dist, dot, norm, scale, sub, Vec3};
use crate::mesh::ObjectMesh;
use crate::Result;

/// Closest point on triangle abc to p, after Ericson's region walk.
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return crate::math::add(a, scale(ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return crate::math::add(a, scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return crate::math::add(b, scale(sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    crate::math::add(a, crate::math::add(scale(ab, v), scale(ac, w)))
}

pub fn point_triangle_distance(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    dist(p, closest_point_on_triangle(p, a, b, c))
}

/// Closest surface point over all faces, with its distance.
pub fn closest_surface_point(mesh: &ObjectMesh, p: Vec3) -> (Vec3, f64) {
    let mut best = ([0.0; 3], f64::INFINITY);
    for i in 0..mesh.faces.len() {
        let [a, b, c] = mesh.triangle(i);
        let q = closest_point_on_triangle(p, a, b, c);
        let d = dist(p, q);
        if d < best.1 {
            best = (q, d);
        }
    }
    best
}

pub fn unsigned_distance(mesh: &ObjectMesh, p: Vec3) -> f64 {
    closest_surface_point(mesh, p).1
}

/// Generalized winding number of the surface around p, 1 inside a single
/// outward-wound shell and 0 outside. Uses the van Oosterom-Strackee solid
/// angle per triangle.
pub fn winding_number(mesh: &ObjectMesh, p: Vec3) -> f64 {
    let mut total = 0.0;
    for i in 0..mesh.faces.len() {
        let [va, vb, vc] = mesh.triangle(i);
        let a = sub(va, p);
        let b = sub(vb, p);
        let c = sub(vc, p);
        let la = norm(a);
        let lb = norm(b);
        let lc = norm(c);
        let numer = dot(a, crate::math::cross(b, c));
        let denom = la * lb * lc + dot(a, b) * lc + dot(b, c) * la + dot(c, a) * lb;
        total += 2.0 * numer.atan2(denom);
    }
    total / (4.0 * std::f64::consts::PI)
}

/// Signed distance handle over an immutable watertight mesh.
pub struct Sdf<'a> {
    mesh: &'a ObjectMesh,
}

impl<'a> Sdf<'a> {
    pub fn new(mesh: &'a ObjectMesh) -> Result<Self> {
        mesh.require_watertight()?;
        Ok(Self { mesh })
    }

    pub fn contains(&self, p: Vec3) -> bool {
        winding_number(self.mesh, p) > 0.5
    }

    /// Negative inside, positive outside, magnitude is the exact distance to
    /// the closest triangle.
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        let d = unsigned_distance(self.mesh, p);
        if self.contains(p) {
            -d
        } else {
            d
        }
    }
}

/// One-off signed distance query; builds the handle each call.
pub fn signed_distance(mesh: &ObjectMesh, point: Vec3) -> Result<f64> {
    Ok(Sdf::new(mesh)?.signed_distance(point))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_primitive, make_uv_sphere, PrimitiveKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_center_is_one_inside() {
        let m = make_uv_sphere([0.0, 0.0, 0.0], 1.0, 24, 48);
        let d = signed_distance(&m, [0.0, 0.0, 0.0]).unwrap();
        assert!((d + 1.0).abs() < 0.02, "center sdf {d}");
    }

    #[test]
    fn sphere_outside_matches_analytic() {
        let m = make_uv_sphere([0.0, 0.0, 0.0], 1.0, 24, 48);
        let d = signed_distance(&m, [3.0, 0.0, 0.0]).unwrap();
        assert!((d - 2.0).abs() < 0.02, "outside sdf {d}");
    }

    #[test]
    fn surface_point_is_near_zero() {
        let m = make_uv_sphere([0.0, 0.0, 0.0], 1.0, 24, 48);
        // a vertex of the mesh is exactly on the surface
        let p = m.vertices[7];
        let d = signed_distance(&m, p).unwrap();
        assert!(d.abs() < 1e-9, "surface sdf {d}");
    }

    #[test]
    fn box_sign_agrees_with_analytic_containment() {
        let m = make_primitive(PrimitiveKind::Box, &[0.6, 0.4, 0.8]).unwrap();
        let sdf = Sdf::new(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut inside_seen = 0;
        for _ in 0..10_000 {
            let p: [f64; 3] = [
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.4..0.8),
                rng.gen_range(-0.8..0.8),
            ];
            let analytic =
                p[0].abs() < 0.3 && p[1] > 0.0 && p[1] < 0.4 && p[2].abs() < 0.4;
            if analytic {
                inside_seen += 1;
            }
            assert_eq!(sdf.signed_distance(p) < 0.0, analytic, "at {p:?}");
        }
        assert!(inside_seen > 500, "probe set too lopsided: {inside_seen}");
    }

    #[test]
    fn box_distance_matches_closed_form() {
        // unit cube centered at origin; probe along +x from the surface
        let m = make_primitive(PrimitiveKind::Box, &[1.0, 1.0, 1.0])
            .unwrap()
            .translated([0.0, -0.5, 0.0]);
        let d = signed_distance(&m, [2.0, 0.0, 0.0]).unwrap();
        assert!((d - 1.5).abs() < 1e-12, "box sdf {d}");
    }

    #[test]
    fn composite_shells_have_consistent_sign() {
        let m = make_primitive(PrimitiveKind::TableComposite, &[0.8, 0.5, 0.5]).unwrap();
        let sdf = Sdf::new(&m).unwrap();
        // inside the top slab
        assert!(sdf.signed_distance([0.0, 0.48, 0.0]) < 0.0);
        // in the open space under the table
        assert!(sdf.signed_distance([0.0, 0.2, 0.0]) > 0.0);
        // inside a leg (leg centers sit at +-0.344, +-0.215 for these dims)
        assert!(sdf.signed_distance([0.344, 0.2, 0.215]) < 0.0);
    }

    #[test]
    fn non_watertight_is_rejected() {
        let mut m = make_primitive(PrimitiveKind::Box, &[1.0, 1.0, 1.0]).unwrap();
        m.faces.pop();
        assert!(signed_distance(&m, [0.0, 0.5, 0.0]).is_err());
    }
}
