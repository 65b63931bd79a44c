//! Core data model for HOI motion generation: motion sequences, skeleton
//! kinematics, object geometry, the procedural toy corpus, rendering, and the
//! on-disk container formats.

pub mod bps;
pub mod container;
pub mod dataset;
pub mod keypoints;
pub mod math;
pub mod mesh;
pub mod motion;
pub mod render;
pub mod rotation;
pub mod sdf;
pub mod skeleton;
pub mod t2i;

mod error;
pub use error::{Error, Result};

/// Hand to object surface distance below which a frame counts as contact, in meters.
/// Shared by label synthesis and the contact metrics so the two stay consistent.
pub const CONTACT_THRESHOLD_M: f64 = 0.05;

/// Penetration depth beyond which a hand counts as inside the mesh, in meters.
pub const PENETRATION_TOL_M: f64 = 0.005;

/// Foot height at which the sliding weight decays to zero, in meters.
pub const FOOT_HEIGHT_MAX_M: f64 = 0.05;

/// splitmix64 step, used for stable seed derivation across runs and platforms.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a stream of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &t in tags {
        s = splitmix64(s ^ t);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_stable() {
        // frozen values guard against accidental hash changes breaking corpora
        assert_eq!(splitmix64(0), 0xe220a8397b1dcdaf);
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
    }
}
