//! Fixed 22 joint kinematic tree with rest-pose bone offsets.

use crate::math::Vec3;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub const JOINT_COUNT: usize = 22;

pub const PELVIS: usize = 0;
pub const LEFT_ANKLE: usize = 7;
pub const RIGHT_ANKLE: usize = 8;
pub const LEFT_FOOT: usize = 10;
pub const RIGHT_FOOT: usize = 11;
pub const HEAD: usize = 15;
pub const LEFT_SHOULDER: usize = 16;
pub const RIGHT_SHOULDER: usize = 17;
pub const LEFT_ELBOW: usize = 18;
pub const RIGHT_ELBOW: usize = 19;
pub const LEFT_WRIST: usize = 20;
pub const RIGHT_WRIST: usize = 21;

const DEFAULT_SKELETON_JSON: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/skeleton22.json"));

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    pub parent: Vec<i32>,
    pub offset: Vec<Vec3>,
}

impl Skeleton {
    /// The tree shipped with the crate, meters, rest pose standing on y = 0.
    pub fn default_22() -> Self {
        let skel: Skeleton =
            serde_json::from_str(DEFAULT_SKELETON_JSON).expect("bundled skeleton parses");
        skel.validate().expect("bundled skeleton is valid");
        skel
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.parent.len();
        if self.joint_names.len() != n || self.offset.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "skeleton arrays disagree: {} names, {} parents, {} offsets",
                self.joint_names.len(),
                n,
                self.offset.len()
            )));
        }
        if n == 0 || self.parent[0] != -1 {
            return Err(Error::ShapeMismatch("joint 0 must be the root".to_string()));
        }
        for (i, &p) in self.parent.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= i {
                return Err(Error::ShapeMismatch(format!(
                    "parent of joint {i} is {p}, want an earlier joint"
                )));
            }
        }
        for off in &self.offset {
            if !off.iter().all(|v| v.is_finite()) {
                return Err(Error::ShapeMismatch("non-finite bone offset".to_string()));
            }
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.parent.len()
    }

    /// Uniformly scaled copy; subjects are synthesized as scale factors.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            joint_names: self.joint_names.clone(),
            parent: self.parent.clone(),
            offset: self.offset.iter().map(|o| crate::math::scale(*o, factor)).collect(),
        }
    }

    /// Joint positions of the rest pose with the pelvis at `root`.
    pub fn rest_positions(&self, root: Vec3) -> Vec<Vec3> {
        let n = self.joint_count();
        let mut rel = vec![[0.0; 3]; n];
        for i in 1..n {
            let p = self.parent[i] as usize;
            rel[i] = crate::math::add(rel[p], self.offset[i]);
        }
        rel.iter().map(|r| crate::math::add(*r, root)).collect()
    }

    /// Pelvis height that puts the lowest rest-pose joint on the floor.
    pub fn rest_root_height(&self) -> f64 {
        let lowest = self
            .rest_positions([0.0; 3])
            .iter()
            .map(|p| p[1])
            .fold(f64::INFINITY, f64::min);
        -lowest
    }
}
