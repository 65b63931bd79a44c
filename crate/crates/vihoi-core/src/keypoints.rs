//! 24 surface keypoints per object: the 8 AABB corners plus 16 Poisson disk
//! samples on the mesh surface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::{add, dist, scale, sub, Vec3};
use crate::mesh::ObjectMesh;
use crate::{Error, Result};

pub const AABB_POINTS: usize = 8;
pub const POISSON_POINTS: usize = 16;

/// Dart throws per radius level before the radius is halved.
const ATTEMPTS_PER_LEVEL: usize = 4096;
/// The radius halves at most this many times.
const MAX_HALVINGS: usize = 4;

#[derive(Debug, Clone)]
pub struct KeypointSet {
    pub aabb_points: [Vec3; 8],
    pub poisson_points: Vec<Vec3>,
    /// Disk radius that the accepted sample set satisfies.
    pub final_radius: f64,
}

impl KeypointSet {
    /// All 24 points, AABB corners first.
    pub fn all(&self) -> Vec<Vec3> {
        let mut out = self.aabb_points.to_vec();
        out.extend_from_slice(&self.poisson_points);
        out
    }
}

/// The 8 AABB corners in a fixed bit-pattern order: bit 0 selects max x,
/// bit 1 max y, bit 2 max z.
pub fn aabb_corners(mesh: &ObjectMesh) -> [Vec3; 8] {
    let (lo, hi) = mesh.aabb();
    let mut out = [[0.0; 3]; 8];
    for (i, corner) in out.iter_mut().enumerate() {
        *corner = [
            if i & 1 == 0 { lo[0] } else { hi[0] },
            if i & 2 == 0 { lo[1] } else { hi[1] },
            if i & 4 == 0 { lo[2] } else { hi[2] },
        ];
    }
    out
}

/// Area-weighted uniform surface sample.
fn surface_sample(mesh: &ObjectMesh, cum_area: &[f64], rng: &mut ChaCha8Rng) -> Vec3 {
    let total = *cum_area.last().unwrap();
    let pick = rng.gen_range(0.0..total);
    let idx = cum_area.partition_point(|&a| a < pick).min(mesh.faces.len() - 1);
    let [a, b, c] = mesh.triangle(idx);
    // square-root trick for uniform barycentric coordinates
    let r1: f64 = rng.gen::<f64>().sqrt();
    let r2: f64 = rng.gen();
    let w0 = 1.0 - r1;
    let w1 = r1 * (1.0 - r2);
    let w2 = r1 * r2;
    add(add(scale(a, w0), scale(b, w1)), scale(c, w2))
}

/// 8 AABB corners plus 16 Poisson disk surface samples.
///
/// The mesh is canonicalized first and the rng seed is mixed with the
/// geometry hash, so vertex or face reordering cannot change the output.
/// Dart throwing starts at radius sqrt(area / (16 pi)) and the radius is
/// halved (up to 4 times, restarting the sample set) until 16 points fit.
pub fn sample_keypoints(mesh: &ObjectMesh, seed: u64) -> Result<KeypointSet> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let canon = mesh.canonicalized();
    let aabb_points = aabb_corners(&canon);

    let mut cum_area = Vec::with_capacity(canon.faces.len());
    let mut acc = 0.0;
    for i in 0..canon.faces.len() {
        let [a, b, c] = canon.triangle(i);
        acc += 0.5 * crate::math::norm(crate::math::cross(sub(b, a), sub(c, a)));
        cum_area.push(acc);
    }
    if acc <= 0.0 {
        return Err(Error::SamplingFailed("mesh has zero surface area".to_string()));
    }

    let seed = crate::derive_seed(seed, &[canon.geometry_hash()]);
    let mut radius = (acc / (POISSON_POINTS as f64 * std::f64::consts::PI)).sqrt();
    for _ in 0..=MAX_HALVINGS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kept: Vec<Vec3> = Vec::with_capacity(POISSON_POINTS);
        for _ in 0..ATTEMPTS_PER_LEVEL {
            let p = surface_sample(&canon, &cum_area, &mut rng);
            if kept.iter().all(|q| dist(p, *q) >= radius) {
                kept.push(p);
                if kept.len() == POISSON_POINTS {
                    return Ok(KeypointSet { aabb_points, poisson_points: kept, final_radius: radius });
                }
            }
        }
        radius *= 0.5;
    }
    Err(Error::SamplingFailed(format!(
        "could not place {POISSON_POINTS} samples after {MAX_HALVINGS} radius halvings"
    )))
}
