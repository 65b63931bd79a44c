//! Continuous 6d rotation parameterization: the first two columns of a
//! rotation matrix, completed to an orthonormal frame by Gram-Schmidt.

use crate::math::{cross, det, dot, norm, scale, sub, Mat3};
use crate::{Error, Result};

pub const DEGENERACY_EPS: f64 = 1e-8;

/// Gram-Schmidt completion of a 6d rotation block into a proper rotation.
pub fn rot6d_to_matrix(r: &[f64; 6]) -> Result<Mat3> {
    let a = [r[0], r[1], r[2]];
    let b = [r[3], r[4], r[5]];
    let na = norm(a);
    if na < DEGENERACY_EPS {
        return Err(Error::DegenerateRotation(format!("first vector norm {na:.3e}")));
    }
    if norm(b) < DEGENERACY_EPS {
        return Err(Error::DegenerateRotation(format!("second vector norm {:.3e}", norm(b))));
    }
    let c0 = scale(a, 1.0 / na);
    let b_orth = sub(b, scale(c0, dot(c0, b)));
    let nb = norm(b_orth);
    if nb < DEGENERACY_EPS {
        return Err(Error::DegenerateRotation("vectors are parallel".to_string()));
    }
    let c1 = scale(b_orth, 1.0 / nb);
    let c2 = cross(c0, c1);
    Ok([
        [c0[0], c1[0], c2[0]],
        [c0[1], c1[1], c2[1]],
        [c0[2], c1[2], c2[2]],
    ])
}

/// First two columns of `m`, the inverse of [`rot6d_to_matrix`] on its image.
pub fn matrix_to_rot6d(m: &Mat3) -> Result<[f64; 6]> {
    let mut max_dev: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let mut g = 0.0;
            for k in 0..3 {
                g += m[k][i] * m[k][j];
            }
            let want = if i == j { 1.0 } else { 0.0 };
            max_dev = max_dev.max((g - want).abs());
        }
    }
    if max_dev > 1e-5 {
        return Err(Error::NotARotation(format!("gram deviation {max_dev:.3e}")));
    }
    if det(m) < 0.0 {
        return Err(Error::NotARotation(format!("determinant {:.6}", det(m))));
    }
    Ok([m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]])
}

/// Whether a 6d block survives Gram-Schmidt completion.
pub fn rot6d_is_valid(r: &[f64; 6]) -> bool {
    rot6d_to_matrix(r).is_ok()
}

pub const ROT6D_IDENTITY: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Completes a 6d block, falling back to the identity when degenerate.
/// Sampling code uses this to sanitize raw model output.
pub fn rot6d_sanitize(r: &[f64; 6]) -> Mat3 {
    rot6d_to_matrix(r).unwrap_or(crate::math::MAT3_IDENTITY)
}
