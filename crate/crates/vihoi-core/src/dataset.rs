//! Procedural toy corpus: parametric interaction tasks rendered into
//! text-annotated motion sequences whose contact labels are exact by
//! construction and verified geometrically.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{save_sequence_dir, SequenceMeta, SCHEMA_VERSION};
use crate::math::{add, dist, mat_mul, mat_vec, norm, normalize, scale, sub, transpose, Mat3, Vec3};
use crate::mesh::{make_primitive, ObjectMesh, PrimitiveKind};
use crate::motion::{fk_frame, MotionSequence};
use crate::rotation::{matrix_to_rot6d, ROT6D_IDENTITY};
use crate::sdf::closest_surface_point;
use crate::skeleton::{self, Skeleton, JOINT_COUNT};
use crate::{derive_seed, Error, Result, CONTACT_THRESHOLD_M};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Lift,
    Push,
    Pull,
    Kick,
    Rotate,
}

impl Verb {
    pub const ALL: [Verb; 5] = [Verb::Lift, Verb::Push, Verb::Pull, Verb::Kick, Verb::Rotate];

    pub fn as_str(&self) -> &'static str {
        match self {
            Verb::Lift => "lift",
            Verb::Push => "push",
            Verb::Pull => "pull",
            Verb::Kick => "kick",
            Verb::Rotate => "rotate",
        }
    }

    /// Which hands take part, left then right.
    pub fn hands(&self) -> [bool; 2] {
        match self {
            Verb::Lift | Verb::Push | Verb::Rotate => [true, true],
            Verb::Pull | Verb::Kick => [false, true],
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verb {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lift" => Ok(Verb::Lift),
            "push" => Ok(Verb::Push),
            "pull" => Ok(Verb::Pull),
            "kick" => Ok(Verb::Kick),
            "rotate" => Ok(Verb::Rotate),
            other => Err(Error::msg(format!("unknown verb {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyTask {
    pub verb: Verb,
    pub object_kind: PrimitiveKind,
    pub object_dims: Vec<f64>,
    /// Object start translation; canonical meshes rest on y = 0 before it.
    pub start_pos: Vec3,
    /// Verb-specific vertical extent: lift raises by this much, push starts
    /// this high and is guided to the floor.
    pub carry_height: f64,
    pub end_pos: Vec3,
    pub duration_frames: usize,
}

/// Half extent of the square workspace footprint, meters.
pub const WORKSPACE_HALF: f64 = 2.0;

impl ToyTask {
    pub fn validate(&self) -> Result<()> {
        if self.duration_frames < 30 {
            return Err(Error::InfeasibleTask(format!(
                "duration {} frames, want at least 30",
                self.duration_frames
            )));
        }
        for (name, p) in [("start", self.start_pos), ("end", self.end_pos)] {
            if p[0].abs() > WORKSPACE_HALF || p[2].abs() > WORKSPACE_HALF {
                return Err(Error::InfeasibleTask(format!("{name} waypoint {p:?} outside workspace")));
            }
        }
        if !(self.carry_height.is_finite() && self.carry_height >= 0.0) {
            return Err(Error::InfeasibleTask(format!("carry height {}", self.carry_height)));
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<ObjectMesh> {
        make_primitive(self.object_kind, &self.object_dims)
    }

    /// Annotation templated from verb, size adjective, and object noun.
    pub fn annotation(&self) -> String {
        let max_dim = self.object_dims.iter().cloned().fold(0.0f64, f64::max);
        let size = if max_dim < 0.28 { "small" } else { "large" };
        let noun = self.object_kind.noun();
        match self.verb {
            Verb::Lift => format!("A person lifts the {size} {noun} and holds it up high."),
            Verb::Push => format!("The man pushes the {size} {noun} down to the floor."),
            Verb::Pull => format!("Pull the {size} {noun} closer, then set it back."),
            Verb::Kick => format!("Kick the {size} {noun} away and watch it slide."),
            Verb::Rotate => format!("Rotate the {size} {noun} on the spot."),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    BySubject,
    ByObjectCategory,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Subject ids (as decimal strings) or object kind names.
    pub held_out: Vec<String>,
}

/// Skeleton scale factor for a subject, evenly spaced over [0.9, 1.1].
pub fn subject_scale(subject_id: u32) -> f64 {
    0.9 + 0.2 * f64::from(subject_id % 10) / 9.0
}

pub fn subject_skeleton(subject_id: u32) -> Skeleton {
    Skeleton::default_22().scaled(subject_scale(subject_id))
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Smooth bump that is 0 at both ends and 1 at u = 0.5.
fn bump(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    16.0 * u * u * (1.0 - u) * (1.0 - u)
}

/// Fraction of the clip spent before and after the contact run, per verb.
fn contact_window(verb: Verb, l: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let (f0, f1) = match verb {
        Verb::Kick => (rng.gen_range(0.42..0.46), rng.gen_range(0.58..0.64)),
        _ => (rng.gen_range(0.28..0.33), rng.gen_range(0.72..0.78)),
    };
    let c0 = (f0 * l as f64) as usize;
    let c1 = ((f1 * l as f64) as usize).min(l - 3);
    (c0.max(4), c1.max(c0.max(4) + 6))
}

/// Object pose over the clip: static before the contact run, verb trajectory
/// inside it, static after.
fn object_pose(task: &ToyTask, c0: usize, c1: usize, frame: usize) -> (Vec3, Mat3) {
    // the end pose is reached on the last contact frame, so every step of
    // object motion happens between two labeled frames
    let u = if frame < c0 {
        0.0
    } else if frame >= c1 - 1 {
        1.0
    } else {
        (frame - c0) as f64 / (c1 - 1 - c0) as f64
    };
    let s = smoothstep(u);
    match task.verb {
        Verb::Lift => {
            let y = task.start_pos[1] + task.carry_height * s;
            ([task.start_pos[0], y, task.start_pos[2]], crate::math::MAT3_IDENTITY)
        }
        Verb::Push => {
            let y0 = task.start_pos[1] + task.carry_height;
            let y = y0 - task.carry_height * s;
            ([task.start_pos[0], y, task.start_pos[2]], crate::math::MAT3_IDENTITY)
        }
        Verb::Pull => {
            // toward the person and back, zero net displacement
            let dz = -0.22 * bump(u);
            (add(task.start_pos, [0.0, 0.0, dz]), crate::math::MAT3_IDENTITY)
        }
        Verb::Kick => {
            let t = scale(sub(task.end_pos, task.start_pos), s);
            (add(task.start_pos, t), crate::math::MAT3_IDENTITY)
        }
        Verb::Rotate => {
            (task.start_pos, crate::math::yaw(std::f64::consts::PI * s))
        }
    }
}

/// Two-bone analytic IK: global rotations for the upper and lower joint of a
/// chain anchored at `p0` with rest-direction `rest_dir` bones of lengths
/// `l1`, `l2`, reaching for `target` and bending away from `pole`.
fn two_bone_ik(
    p0: Vec3,
    rest_dir: Vec3,
    l1: f64,
    l2: f64,
    target: Vec3,
    pole: Vec3,
) -> (Mat3, Mat3, Vec3) {
    let to_target = sub(target, p0);
    let d = norm(to_target)
        .clamp((l1 - l2).abs() + 1e-6, l1 + l2 - 1e-6);
    let dir = if norm(to_target) < 1e-9 { [0.0, -1.0, 0.0] } else { normalize(to_target) };
    // law of cosines for the bend at the anchor joint
    let cos_a = ((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d)).clamp(-1.0, 1.0);
    let alpha = cos_a.acos();
    let mut axis = crate::math::cross(dir, pole);
    if norm(axis) < 1e-9 {
        axis = crate::math::cross(dir, [1.0, 0.0, 0.0]);
        if norm(axis) < 1e-9 {
            axis = [0.0, 0.0, 1.0];
        }
    }
    let bend = crate::math::axis_angle(normalize(axis), alpha);
    let upper_dir = mat_vec(&bend, dir);
    let mid = add(p0, scale(upper_dir, l1));
    let reach = add(p0, scale(dir, d));
    let upper_global = crate::math::rotation_between(rest_dir, upper_dir);
    let lower_dir = normalize(sub(reach, mid));
    let lower_global = crate::math::rotation_between(rest_dir, lower_dir);
    (upper_global, lower_global, reach)
}

/// Writes the IK solution for hand `h` into `pose`, expressing the shoulder
/// rotation relative to the collar's global rotation; returns the distance
/// by which the target was missed (nonzero only when clamped to the reach).
fn solve_arm(
    pose: &mut FramePose,
    body: &BodyModel,
    h: usize,
    collar_g: &Mat3,
    sh: Vec3,
    target: Vec3,
) -> f64 {
    let (sh_j, el_j, rest_dir, side) = if h == 0 {
        (skeleton::LEFT_SHOULDER, skeleton::LEFT_ELBOW, [1.0, 0.0, 0.0], 1.0)
    } else {
        (skeleton::RIGHT_SHOULDER, skeleton::RIGHT_ELBOW, [-1.0, 0.0, 0.0], -1.0)
    };
    let (upper_g, lower_g, reach) = two_bone_ik(
        sh,
        rest_dir,
        body.arm_len.0,
        body.arm_len.1,
        target,
        [side * 0.3, -1.0, 0.1],
    );
    let shoulder_local = mat_mul(&transpose(collar_g), &upper_g);
    pose.rot6d[sh_j] = matrix_to_rot6d(&shoulder_local).unwrap();
    pose.rot6d[el_j] = matrix_to_rot6d(&mat_mul(&transpose(&upper_g), &lower_g)).unwrap();
    dist(reach, target)
}

/// Forward pitch candidates for bending toward low objects, radians.
const PITCH_LADDER: [f64; 5] = [0.0, 0.3, 0.6, 0.9, 1.2];

/// Local rotation blocks for one posed frame.
struct FramePose {
    rot6d: Vec<[f64; 6]>,
}

impl FramePose {
    fn rest(arm_hang: &Mat3, arm_hang_r: &Mat3) -> Self {
        let mut rot6d = vec![ROT6D_IDENTITY; JOINT_COUNT];
        rot6d[skeleton::LEFT_SHOULDER] = matrix_to_rot6d(arm_hang).unwrap();
        rot6d[skeleton::RIGHT_SHOULDER] = matrix_to_rot6d(arm_hang_r).unwrap();
        Self { rot6d }
    }
}

struct BodyModel {
    skel: Skeleton,
    scale: f64,
    arm_len: (f64, f64),
    leg_len: (f64, f64),
    /// Shoulder position relative to the root in the identity spine pose.
    shoulder_rel: [Vec3; 2],
    hip_rel: [Vec3; 2],
    arm_hang: [Mat3; 2],
    rest_wrist_rel: [Vec3; 2],
}

impl BodyModel {
    fn new(subject_id: u32) -> Self {
        let scale = subject_scale(subject_id);
        let skel = Skeleton::default_22().scaled(scale);
        let rest = skel.rest_positions([0.0; 3]);
        let l1 = dist(rest[skeleton::LEFT_SHOULDER], rest[skeleton::LEFT_ELBOW]);
        let l2 = dist(rest[skeleton::LEFT_ELBOW], rest[skeleton::LEFT_WRIST]);
        let g1 = dist(rest[1], rest[4]);
        let g2 = dist(rest[4], rest[skeleton::LEFT_ANKLE]);
        // arms hang 70 degrees down from the t-pose
        let hang = 70.0f64.to_radians();
        let arm_hang = [
            crate::math::axis_angle([0.0, 0.0, 1.0], -hang),
            crate::math::axis_angle([0.0, 0.0, 1.0], hang),
        ];
        let mut rest_wrist_rel = [[0.0; 3]; 2];
        for (h, (sh, el, wr)) in [
            (0, (skeleton::LEFT_SHOULDER, skeleton::LEFT_ELBOW, skeleton::LEFT_WRIST)),
            (1, (skeleton::RIGHT_SHOULDER, skeleton::RIGHT_ELBOW, skeleton::RIGHT_WRIST)),
        ] {
            let upper = mat_vec(&arm_hang[h], sub(rest[el], rest[sh]));
            let fore = mat_vec(&arm_hang[h], sub(rest[wr], rest[el]));
            rest_wrist_rel[h] = add(rest[sh], add(upper, fore));
        }
        Self {
            scale,
            arm_len: (l1, l2),
            leg_len: (g1, g2),
            shoulder_rel: [rest[skeleton::LEFT_SHOULDER], rest[skeleton::RIGHT_SHOULDER]],
            hip_rel: [rest[1], rest[2]],
            arm_hang: [arm_hang[0], arm_hang[1]],
            rest_wrist_rel,
            skel,
        }
    }

    /// Slightly conservative reach used by the support solve so the exact
    /// per-frame IK never lands on its clamp.
    fn reach(&self) -> f64 {
        0.93 * (self.arm_len.0 + self.arm_len.1)
    }

    /// Lowest workable pelvis height with folded legs.
    fn min_root_y(&self) -> f64 {
        // ankle height plus the folded chain plus the hip drop
        0.055 * self.scale + (self.leg_len.0 - self.leg_len.1).abs() + 0.075 * self.scale + 0.02
    }

    /// Shoulder world positions and collar global rotation for a torso
    /// pitched forward by `pitch`, a third per spine joint.
    fn torso(&self, root: Vec3, pitch: f64) -> ([Vec3; 2], Mat3) {
        let off = &self.skel.offset;
        let r1 = crate::math::axis_angle([1.0, 0.0, 0.0], pitch / 3.0);
        let r2 = crate::math::axis_angle([1.0, 0.0, 0.0], 2.0 * pitch / 3.0);
        let r3 = crate::math::axis_angle([1.0, 0.0, 0.0], pitch);
        let p3 = add(root, off[3]);
        let p6 = add(p3, mat_vec(&r1, off[6]));
        let p9 = add(p6, mat_vec(&r2, off[9]));
        let mut shoulders = [[0.0; 3]; 2];
        for (h, (collar_j, sh_j)) in [(0usize, (13usize, 16usize)), (1, (14, 17))] {
            let collar = add(p9, mat_vec(&r3, off[collar_j]));
            shoulders[h] = add(collar, mat_vec(&r3, off[sh_j]));
        }
        (shoulders, r3)
    }

    /// Wrist offset from the shoulder for a hanging arm, in the torso frame.
    fn hang_vec(&self, hand: usize) -> Vec3 {
        sub(self.rest_wrist_rel[hand], self.shoulder_rel[hand])
    }
}

/// Grasp target for one hand: the closest surface point of the posed mesh,
/// pushed `standoff` meters back toward the shoulder.
fn grasp_target(posed: &ObjectMesh, shoulder: Vec3, standoff: f64) -> Vec3 {
    let (cp, d) = closest_surface_point(posed, shoulder);
    if d < 1e-9 {
        return cp;
    }
    add(cp, scale(normalize(sub(shoulder, cp)), standoff))
}

/// Distance from the wrist to the surface that labeled contact frames are
/// built to, meters. Comfortably under the label threshold.
pub const GRASP_STANDOFF_M: f64 = 0.015;
/// Hover distance for the frames just outside the contact run, comfortably
/// over the label threshold.
pub const HOVER_STANDOFF_M: f64 = 0.08;

pub fn generate_sequence(task: &ToyTask, subject_id: u32, seed: u64) -> Result<MotionSequence> {
    task.validate()?;
    let mesh = task.mesh()?;
    let body = BodyModel::new(subject_id);
    let l = task.duration_frames;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7a5c]));
    let (c0, c1) = contact_window(task.verb, l, &mut rng);
    if c1 + 2 >= l {
        return Err(Error::InfeasibleTask(format!("contact window [{c0},{c1}) in {l} frames")));
    }
    let hands = task.verb.hands();

    // poses of the object for every frame
    let obj: Vec<(Vec3, Mat3)> = (0..l).map(|f| object_pose(task, c0, c1, f)).collect();

    // person stands on the -z side of the object, facing it
    let obj_half_z = {
        let (lo, hi) = mesh.aabb();
        (hi[2] - lo[2]) / 2.0
    };
    let standoff = 0.30 * body.scale + obj_half_z;
    let base_root_xz = [task.start_pos[0], task.start_pos[2] - standoff];
    let rest_root_y = body.skel.rest_root_height();

    // horizontal lean toward the object's displacement, capped
    let lean_cap = 0.25 * body.scale;
    let lean = |f: usize| -> Vec3 {
        let d = sub(obj[f].0, task.start_pos);
        [d[0].clamp(-lean_cap, lean_cap), 0.0, d[2].clamp(-lean_cap, lean_cap)]
    };

    // support solve: the smallest forward pitch plus a pelvis height that
    // keeps every contact-frame grasp within reach, preferring an upright
    // rest-height stance; iterated because the grasp point depends on the
    // shoulder position
    let mut support: Option<(f64, f64)> = None;
    'ladder: for pitch in PITCH_LADDER {
        let mut root_y = rest_root_y;
        for _ in 0..3 {
            let mut upper = rest_root_y;
            let mut lower = body.min_root_y();
            for f in c0..c1 {
                let posed = mesh.transformed(&obj[f].1, obj[f].0);
                let lean_f = lean(f);
                let root = [
                    base_root_xz[0] + lean_f[0],
                    root_y,
                    base_root_xz[1] + lean_f[2],
                ];
                let (shoulders, _) = body.torso(root, pitch);
                for (h, used) in hands.iter().enumerate() {
                    if !used {
                        continue;
                    }
                    let sh = shoulders[h];
                    let (cp, _) = closest_surface_point(&posed, sh);
                    let d_xz = ((sh[0] - cp[0]).powi(2) + (sh[2] - cp[2]).powi(2)).sqrt();
                    let w2 = body.reach().powi(2) - d_xz * d_xz;
                    if w2 <= 0.0 {
                        continue 'ladder;
                    }
                    let w = w2.sqrt();
                    let sh_rel_y = sh[1] - root_y;
                    upper = upper.min(cp[1] - sh_rel_y + w);
                    lower = lower.max(cp[1] - sh_rel_y - w);
                }
            }
            if lower > upper + 1e-9 {
                continue 'ladder;
            }
            root_y = upper.min(rest_root_y).max(lower).max(body.min_root_y());
        }
        support = Some((root_y, pitch));
        break;
    }
    let (root_y_contact, pitch_contact) = support.ok_or_else(|| {
        Error::InfeasibleTask("object out of reach at every pitch and pelvis height".to_string())
    })?;

    // support trajectory: crouch and pitch ramp in over the approach, hold,
    // and ramp out after release
    let crouch_in0 = c0.saturating_sub(c0.min(12)).min(c0.saturating_sub(1));
    let release_end = (c1 + 12).min(l - 1);
    let support_at = |f: usize| -> (Vec3, f64) {
        let blend = if f < crouch_in0 {
            0.0
        } else if f < c0 {
            smoothstep((f - crouch_in0) as f64 / (c0 - crouch_in0).max(1) as f64)
        } else if f < c1 {
            1.0
        } else {
            1.0 - smoothstep((f - c1) as f64 / (release_end - c1).max(1) as f64)
        };
        let y = rest_root_y + blend * (root_y_contact - rest_root_y);
        let lean_f = lean(f);
        ([base_root_xz[0] + lean_f[0], y, base_root_xz[1] + lean_f[2]], blend * pitch_contact)
    };

    // blend spans for the hand approach and withdrawal
    let blend_in0 = c0.saturating_sub(8).max(1);
    let blend_out1 = (c1 + 8).min(l);

    let pitch_block = |pitch: f64| {
        matrix_to_rot6d(&crate::math::axis_angle([1.0, 0.0, 0.0], pitch / 3.0)).unwrap()
    };

    let mut poses = Vec::with_capacity(l);
    for f in 0..l {
        let (root, pitch) = support_at(f);
        let posed = mesh.transformed(&obj[f].1, obj[f].0);
        let mut pose = FramePose::rest(&body.arm_hang[0], &body.arm_hang[1]);
        for spine_j in [3usize, 6, 9] {
            pose.rot6d[spine_j] = pitch_block(pitch);
        }

        // legs: pin the ankles to their rest-world positions
        for (side, (hip_j, knee_j, ankle_j)) in
            [(0usize, (1usize, 4usize, skeleton::LEFT_ANKLE)), (1, (2, 5, skeleton::RIGHT_ANKLE))]
        {
            let hip = add(root, body.hip_rel[side]);
            let ankle_target = [
                base_root_xz[0] + body.hip_rel[side][0],
                0.055 * body.scale,
                base_root_xz[1],
            ];
            let (upper_g, lower_g, _) = two_bone_ik(
                hip,
                [0.0, -1.0, 0.0],
                body.leg_len.0,
                body.leg_len.1,
                ankle_target,
                [0.0, 0.0, 1.0],
            );
            pose.rot6d[hip_j] = matrix_to_rot6d(&upper_g).unwrap();
            let knee_local = mat_mul(&transpose(&upper_g), &lower_g);
            pose.rot6d[knee_j] = matrix_to_rot6d(&knee_local).unwrap();
            // level the foot by cancelling the chain rotation at the ankle
            let ankle_local = transpose(&lower_g);
            pose.rot6d[ankle_j] = matrix_to_rot6d(&ankle_local).unwrap();
        }

        // arms: IK toward the phase target
        let (shoulders, collar_g) = body.torso(root, pitch);
        for h in 0..2 {
            let sh = shoulders[h];
            let rest_wrist = add(sh, mat_vec(&collar_g, body.hang_vec(h)));
            let target = if !hands[h] {
                rest_wrist
            } else if f >= c0 && f < c1 {
                grasp_target(&posed, sh, GRASP_STANDOFF_M)
            } else if f >= blend_in0 && f < c0 {
                let hover = grasp_target(&posed, sh, HOVER_STANDOFF_M);
                let u = smoothstep((f - blend_in0) as f64 / (c0 - blend_in0) as f64);
                add(scale(rest_wrist, 1.0 - u), scale(hover, u))
            } else if f >= c1 && f < blend_out1 {
                let hover = grasp_target(&posed, sh, HOVER_STANDOFF_M);
                let u = smoothstep((f - c1) as f64 / (blend_out1 - c1) as f64);
                add(scale(hover, 1.0 - u), scale(rest_wrist, u))
            } else {
                rest_wrist
            };
            let miss = solve_arm(&mut pose, &body, h, &collar_g, sh, target);
            if hands[h] && f >= c0 && f < c1 && miss > 1e-4 {
                return Err(Error::InfeasibleTask(format!(
                    "grasp target out of reach at frame {f} by {miss:.3} m"
                )));
            }
        }
        poses.push(pose);
    }

    // exactness repair: a blend frame whose wrist strays inside the label
    // threshold is re-aimed at a farther hover point
    let margin = CONTACT_THRESHOLD_M + 0.005;
    for _ in 0..3 {
        let mut fixed = 0;
        for f in 0..l {
            let (root, pitch) = support_at(f);
            let posed = mesh.transformed(&obj[f].1, obj[f].0);
            let world = fk_frame(root, &poses[f].rot6d, &body.skel)?;
            let (shoulders, collar_g) = body.torso(root, pitch);
            for (h, wrist_j) in [(0usize, skeleton::LEFT_WRIST), (1, skeleton::RIGHT_WRIST)] {
                let labeled = hands[h] && f >= c0 && f < c1;
                if labeled {
                    continue;
                }
                let d = crate::sdf::unsigned_distance(&posed, world[wrist_j]);
                if d <= margin {
                    let target = grasp_target(&posed, shoulders[h], margin + HOVER_STANDOFF_M);
                    solve_arm(&mut poses[f], &body, h, &collar_g, shoulders[h], target);
                    fixed += 1;
                }
            }
        }
        if fixed == 0 {
            break;
        }
    }

    let mut root_arr = Array2::zeros((l, 3));
    let mut joints = Array3::zeros((l, JOINT_COUNT, 6));
    let mut obj_t = Array2::zeros((l, 3));
    let mut obj_r = Array2::zeros((l, 6));
    let mut contact = Array2::from_elem((l, 2), false);
    for f in 0..l {
        let (root, _) = support_at(f);
        for k in 0..3 {
            root_arr[[f, k]] = root[k];
            obj_t[[f, k]] = obj[f].0[k];
        }
        let or6 = matrix_to_rot6d(&obj[f].1).unwrap();
        for k in 0..6 {
            obj_r[[f, k]] = or6[k];
        }
        for j in 0..JOINT_COUNT {
            for k in 0..6 {
                joints[[f, j, k]] = poses[f].rot6d[j][k];
            }
        }
        if f >= c0 && f < c1 {
            contact[[f, 0]] = hands[0];
            contact[[f, 1]] = hands[1];
        }
    }

    MotionSequence::new(
        root_arr,
        joints,
        obj_t,
        obj_r,
        contact,
        30.0,
        task.annotation(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_sequences: usize,
    pub n_subjects: u32,
    pub fps: f64,
    pub verbs: Vec<Verb>,
    pub kinds: Vec<PrimitiveKind>,
    pub min_frames: usize,
    pub max_frames: usize,
    /// When false the saved contact arrays are all false, exercising the
    /// label-free metric path.
    pub contact_labels: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_sequences: 64,
            n_subjects: 10,
            fps: 30.0,
            verbs: Verb::ALL.to_vec(),
            kinds: PrimitiveKind::ALL.to_vec(),
            min_frames: 48,
            max_frames: 72,
            contact_labels: true,
        }
    }
}

/// Deterministic task for corpus slot `i`: verbs and object kinds rotate
/// round-robin so small corpora stay balanced, the rest is drawn from the
/// item rng.
pub fn task_for_slot(cfg: &CorpusConfig, i: usize, rng: &mut ChaCha8Rng) -> ToyTask {
    let verb = cfg.verbs[i % cfg.verbs.len()];
    let kind = cfg.kinds[(i / cfg.verbs.len()) % cfg.kinds.len()];
    let object_dims = match kind {
        PrimitiveKind::Box => vec![
            rng.gen_range(0.18..0.32),
            rng.gen_range(0.18..0.30),
            rng.gen_range(0.18..0.30),
        ],
        PrimitiveKind::Cylinder => vec![rng.gen_range(0.07..0.13), rng.gen_range(0.25..0.40)],
        PrimitiveKind::LampComposite => vec![rng.gen_range(0.22..0.32), rng.gen_range(0.50..0.70)],
        PrimitiveKind::TableComposite => vec![
            rng.gen_range(0.55..0.75),
            rng.gen_range(0.42..0.52),
            rng.gen_range(0.40..0.50),
        ],
    };
    let start = [rng.gen_range(-0.25..0.25), 0.0, rng.gen_range(0.35..0.6)];
    let carry = rng.gen_range(0.30..0.42);
    let end = match verb {
        Verb::Kick => add(start, [0.0, 0.0, rng.gen_range(0.25..0.32)]),
        _ => start,
    };
    ToyTask {
        verb,
        object_kind: kind,
        object_dims,
        start_pos: start,
        carry_height: carry,
        end_pos: end,
        duration_frames: rng.gen_range(cfg.min_frames..=cfg.max_frames),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub dir: String,
    pub subject_id: u32,
    pub verb: String,
    pub object_kind: PrimitiveKind,
    pub object_dims: Vec<f64>,
    pub len: usize,
    pub fps: f64,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub schema_version: u32,
    pub seed: u64,
    pub n_subjects: u32,
    pub contact_labels: bool,
    pub items: Vec<CorpusItem>,
}

pub const INDEX_FILE: &str = "index.json";

/// Generates `cfg.n_sequences` sequences under `out_dir`, one directory per
/// sequence plus an index file written last.
pub fn build_corpus(out_dir: impl AsRef<Path>, cfg: &CorpusConfig, seed: u64) -> Result<CorpusIndex> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut items = Vec::with_capacity(cfg.n_sequences);
    for i in 0..cfg.n_sequences {
        let item_seed = derive_seed(seed, &[i as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
        let task = task_for_slot(cfg, i, &mut rng);
        let subject_id = (i as u32) % cfg.n_subjects;
        let mut seq = generate_sequence(&task, subject_id, item_seed)?;
        seq.fps = cfg.fps;
        if !cfg.contact_labels {
            seq.contact.fill(false);
        }
        let id = format!("seq_{i:04}");
        let meta = SequenceMeta {
            schema_version: SCHEMA_VERSION,
            fps: seq.fps,
            len: seq.len(),
            text: seq.text.clone(),
            object_kind: task.object_kind.as_str().to_string(),
            object_dims: task.object_dims.clone(),
            subject_id,
            verb: task.verb.as_str().to_string(),
            tags: if cfg.contact_labels { vec![] } else { vec!["no_labels".to_string()] },
        };
        save_sequence_dir(out_dir.join(&id), &seq, &meta)?;
        items.push(CorpusItem {
            id: id.clone(),
            dir: id,
            subject_id,
            verb: task.verb.as_str().to_string(),
            object_kind: task.object_kind,
            object_dims: task.object_dims,
            len: seq.len(),
            fps: seq.fps,
            text: seq.text,
        });
    }
    let index = CorpusIndex {
        schema_version: SCHEMA_VERSION,
        seed,
        n_subjects: cfg.n_subjects,
        contact_labels: cfg.contact_labels,
        items,
    };
    std::fs::write(out_dir.join(INDEX_FILE), serde_json::to_vec_pretty(&index)?)?;
    Ok(index)
}

pub fn load_corpus_index(dir: impl AsRef<Path>) -> Result<CorpusIndex> {
    let index: CorpusIndex =
        serde_json::from_slice(&std::fs::read(dir.as_ref().join(INDEX_FILE))?)?;
    if index.schema_version != SCHEMA_VERSION {
        return Err(Error::Container(format!("index schema {}", index.schema_version)));
    }
    Ok(index)
}

/// Disjoint, exhaustive train/test id lists under the split spec.
pub fn make_split(index: &CorpusIndex, spec: &SplitSpec) -> Result<(Vec<String>, Vec<String>)> {
    if spec.held_out.is_empty() {
        return Err(Error::EmptySplit("held_out list is empty".to_string()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for item in &index.items {
        let held = match spec.mode {
            SplitMode::BySubject => spec.held_out.iter().any(|s| s == &item.subject_id.to_string()),
            SplitMode::ByObjectCategory => {
                spec.held_out.iter().any(|s| s == item.object_kind.as_str())
            }
        };
        if held {
            test.push(item.id.clone());
        } else {
            train.push(item.id.clone());
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptySplit(format!(
            "split leaves {} train and {} test items",
            train.len(),
            test.len()
        )));
    }
    Ok((train, test))
}
