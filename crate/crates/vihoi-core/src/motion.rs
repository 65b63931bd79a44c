//! Motion sequence data model, forward kinematics, and the flat
//! representations used by the generator (width 144) and the evaluator
//! (width 147).

use ndarray::{Array2, Array3};

use crate::math::{add, mat_mul, mat_vec, Mat3, Vec3};
use crate::rotation::{matrix_to_rot6d, rot6d_to_matrix, rot6d_is_valid};
use crate::skeleton::{Skeleton, JOINT_COUNT};
use crate::{Error, Result};

/// Width of the generator representation:
/// 3 root + 22 * 6 joint rotations + 3 object translation + 6 object rotation.
pub const MODEL_DIM: usize = 144;

/// Width of the evaluator representation: as above but with the object
/// rotation expanded to a full row-major 3x3 matrix.
pub const EVAL_DIM: usize = 147;

#[derive(Debug, Clone)]
pub struct MotionSequence {
    /// L x 3 pelvis translation, meters.
    pub root_transl: Array2<f64>,
    /// L x 22 x 6 joint rotations in 6d form.
    pub joint_rot6d: Array3<f64>,
    /// L x 3 object translation, meters.
    pub obj_transl: Array2<f64>,
    /// L x 6 object rotation in 6d form.
    pub obj_rot6d: Array2<f64>,
    /// L x 2 hand contact labels, left then right.
    pub contact: Array2<bool>,
    pub fps: f64,
    pub text: String,
}

impl MotionSequence {
    pub fn new(
        root_transl: Array2<f64>,
        joint_rot6d: Array3<f64>,
        obj_transl: Array2<f64>,
        obj_rot6d: Array2<f64>,
        contact: Array2<bool>,
        fps: f64,
        text: String,
    ) -> Result<Self> {
        let seq = Self { root_transl, joint_rot6d, obj_transl, obj_rot6d, contact, fps, text };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.root_transl.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.len();
        if l < 2 {
            return Err(Error::ShapeMismatch(format!("sequence length {l}, want at least 2")));
        }
        let shapes_ok = self.root_transl.shape() == [l, 3]
            && self.joint_rot6d.shape() == [l, JOINT_COUNT, 6]
            && self.obj_transl.shape() == [l, 3]
            && self.obj_rot6d.shape() == [l, 6]
            && self.contact.shape() == [l, 2];
        if !shapes_ok {
            return Err(Error::ShapeMismatch(format!(
                "inconsistent field shapes for length {l}"
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::ShapeMismatch(format!("fps {}", self.fps)));
        }
        for f in 0..l {
            for j in 0..JOINT_COUNT {
                let r = self.joint_block(f, j);
                if !rot6d_is_valid(&r) {
                    return Err(Error::DegenerateRotation(format!("frame {f} joint {j}")));
                }
            }
            if !rot6d_is_valid(&self.obj_block(f)) {
                return Err(Error::DegenerateRotation(format!("frame {f} object")));
            }
        }
        Ok(())
    }

    pub fn joint_block(&self, frame: usize, joint: usize) -> [f64; 6] {
        let mut r = [0.0; 6];
        for k in 0..6 {
            r[k] = self.joint_rot6d[[frame, joint, k]];
        }
        r
    }

    pub fn obj_block(&self, frame: usize) -> [f64; 6] {
        let mut r = [0.0; 6];
        for k in 0..6 {
            r[k] = self.obj_rot6d[[frame, k]];
        }
        r
    }

    pub fn obj_rotation(&self, frame: usize) -> Result<Mat3> {
        rot6d_to_matrix(&self.obj_block(frame))
    }

    pub fn obj_translation(&self, frame: usize) -> Vec3 {
        [
            self.obj_transl[[frame, 0]],
            self.obj_transl[[frame, 1]],
            self.obj_transl[[frame, 2]],
        ]
    }

    pub fn root(&self, frame: usize) -> Vec3 {
        [
            self.root_transl[[frame, 0]],
            self.root_transl[[frame, 1]],
            self.root_transl[[frame, 2]],
        ]
    }

    /// Flattens to the L x 144 generator layout:
    /// root(3) | joint 6d blocks(132) | object translation(3) | object 6d(6).
    pub fn to_model_matrix(&self) -> Array2<f64> {
        let l = self.len();
        let mut out = Array2::zeros((l, MODEL_DIM));
        for f in 0..l {
            for k in 0..3 {
                out[[f, k]] = self.root_transl[[f, k]];
            }
            for j in 0..JOINT_COUNT {
                for k in 0..6 {
                    out[[f, 3 + j * 6 + k]] = self.joint_rot6d[[f, j, k]];
                }
            }
            for k in 0..3 {
                out[[f, 135 + k]] = self.obj_transl[[f, k]];
            }
            for k in 0..6 {
                out[[f, 138 + k]] = self.obj_rot6d[[f, k]];
            }
        }
        out
    }

    /// Rebuilds a sequence from the generator layout. Rotation blocks must be
    /// non-degenerate; sampler output should go through
    /// [`sanitize_model_matrix`] first.
    pub fn from_model_matrix(
        m: &Array2<f64>,
        contact: Array2<bool>,
        fps: f64,
        text: String,
    ) -> Result<Self> {
        let l = m.nrows();
        if m.ncols() != MODEL_DIM {
            return Err(Error::ShapeMismatch(format!(
                "model matrix width {}, want {MODEL_DIM}",
                m.ncols()
            )));
        }
        let mut root = Array2::zeros((l, 3));
        let mut joints = Array3::zeros((l, JOINT_COUNT, 6));
        let mut obj_t = Array2::zeros((l, 3));
        let mut obj_r = Array2::zeros((l, 6));
        for f in 0..l {
            for k in 0..3 {
                root[[f, k]] = m[[f, k]];
                obj_t[[f, k]] = m[[f, 135 + k]];
            }
            for j in 0..JOINT_COUNT {
                for k in 0..6 {
                    joints[[f, j, k]] = m[[f, 3 + j * 6 + k]];
                }
            }
            for k in 0..6 {
                obj_r[[f, k]] = m[[f, 138 + k]];
            }
        }
        Self::new(root, joints, obj_t, obj_r, contact, fps, text)
    }

    /// Evaluator layout, L x 147: the 6d object block is replaced by the full
    /// rotation matrix flattened row-major.
    pub fn to_eval_representation(&self) -> Result<EvalVector> {
        let l = self.len();
        let mut out = Array2::zeros((l, EVAL_DIM));
        for f in 0..l {
            for k in 0..3 {
                out[[f, k]] = self.root_transl[[f, k]];
            }
            for j in 0..JOINT_COUNT {
                for k in 0..6 {
                    out[[f, 3 + j * 6 + k]] = self.joint_rot6d[[f, j, k]];
                }
            }
            for k in 0..3 {
                out[[f, 135 + k]] = self.obj_transl[[f, k]];
            }
            let m = self.obj_rotation(f)?;
            for i in 0..3 {
                for j in 0..3 {
                    out[[f, 138 + i * 3 + j]] = m[i][j];
                }
            }
        }
        EvalVector::new(out)
    }
}

/// Replaces degenerate rotation blocks in a raw generator matrix with the
/// identity so the result always parses into a sequence.
pub fn sanitize_model_matrix(m: &mut Array2<f64>) {
    let l = m.nrows();
    for f in 0..l {
        for j in 0..JOINT_COUNT {
            let base = 3 + j * 6;
            let mut r = [0.0; 6];
            for k in 0..6 {
                r[k] = m[[f, base + k]];
            }
            let fixed = matrix_to_rot6d(&crate::rotation::rot6d_sanitize(&r)).unwrap();
            for k in 0..6 {
                m[[f, base + k]] = fixed[k];
            }
        }
        let mut r = [0.0; 6];
        for k in 0..6 {
            r[k] = m[[f, 138 + k]];
        }
        let fixed = matrix_to_rot6d(&crate::rotation::rot6d_sanitize(&r)).unwrap();
        for k in 0..6 {
            m[[f, 138 + k]] = fixed[k];
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalVector {
    pub values: Array2<f64>,
}

impl EvalVector {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() != EVAL_DIM {
            return Err(Error::ShapeMismatch(format!(
                "eval width {}, want {EVAL_DIM}",
                values.ncols()
            )));
        }
        for f in 0..values.nrows() {
            for c in 0..3 {
                let col = [
                    values[[f, 138 + c]],
                    values[[f, 141 + c]],
                    values[[f, 144 + c]],
                ];
                let n = crate::math::norm(col);
                if (n - 1.0).abs() > 1e-5 {
                    return Err(Error::NotARotation(format!(
                        "eval frame {f} rotation column norm {n:.6}"
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    /// Recovers the object 6d block from the matrix columns.
    pub fn obj_rot6d(&self, frame: usize) -> [f64; 6] {
        let v = &self.values;
        [
            v[[frame, 138]],
            v[[frame, 141]],
            v[[frame, 144]],
            v[[frame, 139]],
            v[[frame, 142]],
            v[[frame, 145]],
        ]
    }
}

/// Global joint positions for every frame, L x 22 x 3.
///
/// Positions are accumulated with the root at the origin and the per-frame
/// root translation added last, so translating the root translates every
/// joint by exactly the same floating point value.
pub fn forward_kinematics(seq: &MotionSequence, skel: &Skeleton) -> Result<Array3<f64>> {
    let n = skel.joint_count();
    if n != JOINT_COUNT {
        return Err(Error::ShapeMismatch(format!("skeleton has {n} joints, want {JOINT_COUNT}")));
    }
    let l = seq.len();
    let mut out = Array3::zeros((l, n, 3));
    let mut global_rot = vec![crate::math::MAT3_IDENTITY; n];
    let mut rel = vec![[0.0f64; 3]; n];
    for f in 0..l {
        rel[0] = [0.0; 3];
        global_rot[0] = rot6d_to_matrix(&seq.joint_block(f, 0))?;
        for i in 1..n {
            let p = skel.parent[i] as usize;
            let local = rot6d_to_matrix(&seq.joint_block(f, i))?;
            rel[i] = add(rel[p], mat_vec(&global_rot[p], skel.offset[i]));
            global_rot[i] = mat_mul(&global_rot[p], &local);
        }
        let root = seq.root(f);
        for i in 0..n {
            let p = add(rel[i], root);
            for k in 0..3 {
                out[[f, i, k]] = p[k];
            }
        }
    }
    Ok(out)
}

/// Joint positions for one frame given explicit pose blocks, used by the
/// procedural generator while a sequence is still under construction.
pub fn fk_frame(root: Vec3, rot6d: &[[f64; 6]], skel: &Skeleton) -> Result<Vec<Vec3>> {
    let n = skel.joint_count();
    if rot6d.len() != n {
        return Err(Error::ShapeMismatch(format!("{} pose blocks for {n} joints", rot6d.len())));
    }
    let mut global_rot = vec![crate::math::MAT3_IDENTITY; n];
    let mut pos = vec![[0.0f64; 3]; n];
    global_rot[0] = rot6d_to_matrix(&rot6d[0])?;
    for i in 1..n {
        let p = skel.parent[i] as usize;
        let local = rot6d_to_matrix(&rot6d[i])?;
        pos[i] = add(pos[p], mat_vec(&global_rot[p], skel.offset[i]));
        global_rot[i] = mat_mul(&global_rot[p], &local);
    }
    Ok(pos.iter().map(|p| add(*p, root)).collect())
}

/// An all-identity rest pose standing at `root`.
pub fn rest_pose_sequence(l: usize, root: Vec3, fps: f64, text: &str) -> MotionSequence {
    let mut root_transl = Array2::zeros((l, 3));
    let mut joints = Array3::zeros((l, JOINT_COUNT, 6));
    let mut obj_r = Array2::zeros((l, 6));
    for f in 0..l {
        for k in 0..3 {
            root_transl[[f, k]] = root[k];
        }
        for j in 0..JOINT_COUNT {
            joints[[f, j, 0]] = 1.0;
            joints[[f, j, 4]] = 1.0;
        }
        obj_r[[f, 0]] = 1.0;
        obj_r[[f, 4]] = 1.0;
    }
    MotionSequence {
        root_transl,
        joint_rot6d: joints,
        obj_transl: Array2::zeros((l, 3)),
        obj_rot6d: obj_r,
        contact: Array2::from_elem((l, 2), false),
        fps,
        text: text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::axis_angle;
    use crate::skeleton;

    #[test]
    fn identity_pose_stacks_offsets() {
        let skel = Skeleton::default_22();
        let seq = rest_pose_sequence(2, [0.3, 0.9, -0.2], 30.0, "rest");
        let pos = forward_kinematics(&seq, &skel).unwrap();
        // root joint sits at the root translation
        assert_eq!(pos[[0, 0, 0]], 0.3);
        assert_eq!(pos[[0, 0, 1]], 0.9);
        // chain pelvis -> left hip: offset (0.09, -0.075, 0)
        assert!((pos[[0, 1, 0]] - 0.39).abs() < 1e-12);
        assert!((pos[[0, 1, 1]] - 0.825).abs() < 1e-12);
        let rest = skel.rest_positions([0.3, 0.9, -0.2]);
        for j in 0..JOINT_COUNT {
            for k in 0..3 {
                assert!((pos[[1, j, k]] - rest[j][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_bone_chain_right_angle() {
        // bend the left elbow 90 degrees about y so the forearm folds to -z
        let skel = Skeleton::default_22();
        let mut seq = rest_pose_sequence(2, [0.0, 0.0, 0.0], 30.0, "bend");
        let m = axis_angle([0.0, 1.0, 0.0], std::f64::consts::FRAC_PI_2);
        let r6 = matrix_to_rot6d(&m).unwrap();
        for f in 0..2 {
            for k in 0..6 {
                seq.joint_rot6d[[f, skeleton::LEFT_ELBOW, k]] = r6[k];
            }
        }
        let pos = forward_kinematics(&seq, &skel).unwrap();
        let elbow = [
            pos[[0, skeleton::LEFT_ELBOW, 0]],
            pos[[0, skeleton::LEFT_ELBOW, 1]],
            pos[[0, skeleton::LEFT_ELBOW, 2]],
        ];
        let wrist = [
            pos[[0, skeleton::LEFT_WRIST, 0]],
            pos[[0, skeleton::LEFT_WRIST, 1]],
            pos[[0, skeleton::LEFT_WRIST, 2]],
        ];
        // hand trig: Ry(90 deg) maps (0.25, 0, 0) to (0, 0, -0.25)
        assert!((wrist[0] - elbow[0]).abs() < 1e-12);
        assert!((wrist[1] - elbow[1]).abs() < 1e-12);
        assert!((wrist[2] - (elbow[2] - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn root_translation_is_exactly_equivariant() {
        let skel = Skeleton::default_22();
        let mut seq = rest_pose_sequence(3, [0.0, 0.0, 0.0], 30.0, "eq");
        // an arbitrary non-identity pose
        let m = axis_angle([0.3, 1.0, -0.2], 0.7);
        let r6 = matrix_to_rot6d(&m).unwrap();
        for f in 0..3 {
            for k in 0..6 {
                seq.joint_rot6d[[f, 3, k]] = r6[k];
                seq.joint_rot6d[[f, 16, k]] = r6[k];
            }
        }
        let base = forward_kinematics(&seq, &skel).unwrap();
        let v = [0.123456789, -0.5, 2.25];
        let mut moved = seq.clone();
        for f in 0..3 {
            for k in 0..3 {
                moved.root_transl[[f, k]] = v[k];
            }
        }
        let shifted = forward_kinematics(&moved, &skel).unwrap();
        for f in 0..3 {
            for j in 0..JOINT_COUNT {
                for k in 0..3 {
                    // bitwise equality: fk adds the root translation last
                    assert_eq!(shifted[[f, j, k]], base[[f, j, k]] + v[k]);
                }
            }
        }
    }

    #[test]
    fn model_matrix_round_trips() {
        let seq = rest_pose_sequence(4, [0.1, 0.9, 0.2], 30.0, "rt");
        let m = seq.to_model_matrix();
        assert_eq!(m.shape(), [4, MODEL_DIM]);
        let back =
            MotionSequence::from_model_matrix(&m, seq.contact.clone(), seq.fps, seq.text.clone())
                .unwrap();
        assert_eq!(back.to_model_matrix(), m);
    }

    #[test]
    fn eval_representation_layout() {
        let mut seq = rest_pose_sequence(2, [0.0, 0.9, 0.0], 30.0, "eval");
        let m = axis_angle([0.0, 0.0, 1.0], 0.4);
        let r6 = matrix_to_rot6d(&m).unwrap();
        for f in 0..2 {
            for k in 0..6 {
                seq.obj_rot6d[[f, k]] = r6[k];
            }
        }
        let ev = seq.to_eval_representation().unwrap();
        assert_eq!(ev.values.shape(), [2, EVAL_DIM]);
        // recover the 6d block from the matrix columns
        let rec = ev.obj_rot6d(0);
        for k in 0..6 {
            assert!((rec[k] - r6[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_representation_identity_rotation_block() {
        let seq = rest_pose_sequence(2, [0.0, 0.0, 0.0], 30.0, "id");
        let ev = seq.to_eval_representation().unwrap();
        let want = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for k in 0..9 {
            assert_eq!(ev.values[[0, 138 + k]], want[k]);
        }
    }

    #[test]
    fn sanitize_fixes_degenerate_blocks() {
        let seq = rest_pose_sequence(2, [0.0, 0.0, 0.0], 30.0, "fix");
        let mut m = seq.to_model_matrix();
        for k in 0..6 {
            m[[0, 3 + k]] = 0.0;
            m[[1, 138 + k]] = 0.0;
        }
        sanitize_model_matrix(&mut m);
        let back = MotionSequence::from_model_matrix(&m, seq.contact.clone(), 30.0, String::new());
        assert!(back.is_ok());
    }

    #[test]
    fn short_sequences_are_rejected() {
        let seq = rest_pose_sequence(2, [0.0; 3], 30.0, "ok");
        let bad = MotionSequence::new(
            seq.root_transl.slice(ndarray::s![0..1, ..]).to_owned(),
            seq.joint_rot6d.slice(ndarray::s![0..1, .., ..]).to_owned(),
            seq.obj_transl.slice(ndarray::s![0..1, ..]).to_owned(),
            seq.obj_rot6d.slice(ndarray::s![0..1, ..]).to_owned(),
            seq.contact.slice(ndarray::s![0..1, ..]).to_owned(),
            30.0,
            String::new(),
        );
        assert!(bad.is_err());
    }
}
