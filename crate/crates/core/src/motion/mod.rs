//! Dance motion representation and kinematics.
//!
//! A clip is a `[T, 147]` matrix: 3 root-translation columns, then 24 joint
//! rotations as 6-D vectors. Rotation slots are ordered lower body first so
//! the clip splits into the two tokenizer streams by a plain column slice:
//!
//! * lower stream, 63 columns: translation + the 10 leg/pelvis joints;
//! * upper stream, 84 columns: the remaining 14 joints.
//!
//! The training loss compares poses, velocities, and accelerations both in
//! parameter space and in joint-position space through the kinematic chain.

pub mod kernels;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

pub const JOINTS: usize = 24;
/// Joint indices driven by the lower-body stream, in slot order.
pub const LOWER_JOINTS: [usize; 10] = [0, 1, 2, 3, 4, 5, 7, 8, 10, 11];
/// Joint indices driven by the upper-body stream, in slot order.
pub const UPPER_JOINTS: [usize; 14] = [6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23];
/// Columns of the lower stream: 3 translation + 10 joints x 6.
pub const LOWER_DIMS: usize = 3 + 6 * LOWER_JOINTS.len();
/// Columns of the upper stream: 14 joints x 6.
pub const UPPER_DIMS: usize = 6 * UPPER_JOINTS.len();
/// Full pose width.
pub const POSE_DIMS: usize = LOWER_DIMS + UPPER_DIMS;

#[derive(Deserialize)]
struct SkeletonJoint {
    name: String,
    parent: i32,
    offset: [f64; 3],
}

#[derive(Deserialize)]
struct SkeletonDoc {
    joints: Vec<SkeletonJoint>,
}

/// Joint tree with bone offsets; loaded from the embedded description.
#[derive(Debug)]
pub struct Skeleton<S> {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    offsets: Vec<[S; 3]>,
    /// joint index -> rotation slot in the pose vector
    slot_of: Vec<usize>,
    /// rotation slot -> joint index
    joint_of: Vec<usize>,
}

impl<S: Scalar> Skeleton<S> {
    /// The 24-joint body used throughout: pelvis-rooted, y-up, meter scale.
    pub fn smpl24() -> Arc<Self> {
        let doc: SkeletonDoc = serde_json::from_str(include_str!("../data/skeleton_smpl24.json"))
            .expect("embedded skeleton is valid");
        let n = doc.joints.len();
        assert_eq!(n, JOINTS);
        let mut parents = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        let mut names = Vec::with_capacity(n);
        for (i, jt) in doc.joints.iter().enumerate() {
            let parent = if jt.parent < 0 {
                None
            } else {
                let p = jt.parent as usize;
                assert!(p < i, "parent must precede child");
                Some(p)
            };
            parents.push(parent);
            offsets.push([S::of(jt.offset[0]), S::of(jt.offset[1]), S::of(jt.offset[2])]);
            names.push(jt.name.clone());
        }
        assert!(parents[0].is_none(), "joint 0 is the root");

        let joint_of: Vec<usize> = LOWER_JOINTS.iter().chain(UPPER_JOINTS.iter()).copied().collect();
        let mut slot_of = vec![usize::MAX; n];
        for (slot, &jj) in joint_of.iter().enumerate() {
            slot_of[jj] = slot;
        }
        assert!(slot_of.iter().all(|&s| s != usize::MAX));

        Arc::new(Skeleton {
            names,
            parents,
            offsets,
            slot_of,
            joint_of,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    pub fn offset(&self, j: usize) -> &[S; 3] {
        &self.offsets[j]
    }

    pub fn name(&self, j: usize) -> &str {
        &self.names[j]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rotation slot in the pose vector for a joint index.
    pub fn slot_of(&self, j: usize) -> usize {
        self.slot_of[j]
    }

    /// Joint index for a rotation slot.
    pub fn joint_of(&self, slot: usize) -> usize {
        self.joint_of[slot]
    }
}

/// Split a full pose matrix into (lower, upper) stream matrices.
pub fn split_pose<S: Scalar>(pose: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
    let t = check_pose_shape(pose)?;
    let mut lower = Vec::with_capacity(t * LOWER_DIMS);
    let mut upper = Vec::with_capacity(t * UPPER_DIMS);
    for r in 0..t {
        let row = pose.row(r);
        lower.extend_from_slice(&row[..LOWER_DIMS]);
        upper.extend_from_slice(&row[LOWER_DIMS..]);
    }
    Ok((
        Tensor::from_vec(&[t, LOWER_DIMS], lower)?,
        Tensor::from_vec(&[t, UPPER_DIMS], upper)?,
    ))
}

/// Rebuild a full pose matrix from the two streams.
pub fn join_pose<S: Scalar>(lower: &Tensor<S>, upper: &Tensor<S>) -> Result<Tensor<S>> {
    let (tl, cl) = (lower.rows(), lower.cols());
    let (tu, cu) = (upper.rows(), upper.cols());
    if cl != LOWER_DIMS || cu != UPPER_DIMS || tl != tu {
        return Err(CoreError::Shape {
            op: "join_pose",
            detail: format!("lower [{tl},{cl}], upper [{tu},{cu}]"),
        });
    }
    let mut out = Vec::with_capacity(tl * POSE_DIMS);
    for r in 0..tl {
        out.extend_from_slice(lower.row(r));
        out.extend_from_slice(upper.row(r));
    }
    Tensor::from_vec(&[tl, POSE_DIMS], out)
}

fn check_pose_shape<S: Scalar>(pose: &Tensor<S>) -> Result<usize> {
    if pose.shape().len() != 2 || pose.cols() != POSE_DIMS {
        return Err(CoreError::Shape {
            op: "pose",
            detail: format!("expected [T, {POSE_DIMS}], got {:?}", pose.shape()),
        });
    }
    Ok(pose.rows())
}

/// Joint positions for a pose clip, off-tape. `[T, 147] -> [T, 72]`.
pub fn pose_to_positions<S: Scalar>(pose: &Tensor<S>, skel: &Skeleton<S>) -> Result<Tensor<S>> {
    let t = check_pose_shape(pose)?;
    let mut rot6 = Vec::with_capacity(t * JOINTS * 6);
    let mut tau = Vec::with_capacity(t * 3);
    for r in 0..t {
        let row = pose.row(r);
        tau.extend_from_slice(&row[..3]);
        rot6.extend_from_slice(&row[3..]);
    }
    let mats = kernels::rot6d_to_mats(&rot6, t, JOINTS)?;
    let pos = kernels::fk_positions(&mats, &tau, skel, t);
    Tensor::from_vec(&[t, 3 * JOINTS], pos)
}

/// Forward difference along time scaled by the frame rate, off-tape.
pub fn time_diff_tensor<S: Scalar>(x: &Tensor<S>, scale: S) -> Result<Tensor<S>> {
    let (t, c) = (x.rows(), x.cols());
    if t < 2 {
        return Err(CoreError::Shape {
            op: "time_diff",
            detail: format!("needs at least 2 rows, got {t}"),
        });
    }
    let xv = x.data();
    let mut out = Vec::with_capacity((t - 1) * c);
    for r in 0..t - 1 {
        for j in 0..c {
            out.push((xv[(r + 1) * c + j] - xv[r * c + j]) * scale);
        }
    }
    Tensor::from_vec(&[t - 1, c], out)
}

/// Precomputed reference-side targets for the dance loss: pose, velocity,
/// acceleration, and the same three through the kinematic chain.
pub struct DanceLossRefs<S> {
    pub pose: Tensor<S>,
    pub vel: Tensor<S>,
    pub acc: Tensor<S>,
    pub pos: Tensor<S>,
    pub pos_vel: Tensor<S>,
    pub pos_acc: Tensor<S>,
}

impl<S: Scalar> DanceLossRefs<S> {
    pub fn new(pose: &Tensor<S>, skel: &Skeleton<S>, fps: S) -> Result<Self> {
        let t = check_pose_shape(pose)?;
        if t < 3 {
            return Err(CoreError::Invalid(format!(
                "dance loss needs at least 3 frames for acceleration, got {t}"
            )));
        }
        let vel = time_diff_tensor(pose, fps)?;
        let acc = time_diff_tensor(&vel, fps)?;
        let pos = pose_to_positions(pose, skel)?;
        let pos_vel = time_diff_tensor(&pos, fps)?;
        let pos_acc = time_diff_tensor(&pos_vel, fps)?;
        Ok(DanceLossRefs {
            pose: pose.clone(),
            vel,
            acc,
            pos,
            pos_vel,
            pos_acc,
        })
    }
}

/// Record the six-term reconstruction loss on the tape: mean squared error on
/// pose, velocity, and acceleration, in parameter space and through the
/// kinematic chain, summed unweighted. `pred` must be `[T, 147]` with T >= 3.
pub fn dance_loss<S: Scalar>(
    tape: &mut Tape<S>,
    pred: ValueId,
    refs: &DanceLossRefs<S>,
    skel: &Arc<Skeleton<S>>,
    fps: S,
) -> Result<ValueId> {
    let r_pose = tape.constant(refs.pose.clone());
    let r_vel = tape.constant(refs.vel.clone());
    let r_acc = tape.constant(refs.acc.clone());
    let r_pos = tape.constant(refs.pos.clone());
    let r_pos_vel = tape.constant(refs.pos_vel.clone());
    let r_pos_acc = tape.constant(refs.pos_acc.clone());

    let l_rec = tape.mse(pred, r_pose)?;
    let vel = tape.time_diff(pred, fps)?;
    let l_vel = tape.mse(vel, r_vel)?;
    let acc = tape.time_diff(vel, fps)?;
    let l_acc = tape.mse(acc, r_acc)?;

    let tau = tape.slice_cols(pred, 0, 3)?;
    let rot = tape.slice_cols(pred, 3, POSE_DIMS)?;
    let mats = tape.rot6d_to_mats(rot)?;
    let pos = tape.forward_kinematics(mats, tau, skel.clone())?;
    let l_pos = tape.mse(pos, r_pos)?;
    let pvel = tape.time_diff(pos, fps)?;
    let l_pvel = tape.mse(pvel, r_pos_vel)?;
    let pacc = tape.time_diff(pvel, fps)?;
    let l_pacc = tape.mse(pacc, r_pos_acc)?;

    let mut total = tape.add(l_rec, l_vel)?;
    total = tape.add(total, l_acc)?;
    total = tape.add(total, l_pos)?;
    total = tape.add(total, l_pvel)?;
    tape.add(total, l_pacc)
}

#[derive(Serialize, Deserialize)]
struct MotionDoc {
    fps: u32,
    joints: usize,
    /// row-major `[T][147]`
    frames: Vec<Vec<f64>>,
}

/// Read a motion clip from JSON: `{fps, joints, frames: [[147 floats]..]}`.
pub fn load_motion_json<S: Scalar>(path: &Path) -> Result<(u32, Tensor<S>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let doc: MotionDoc =
        serde_json::from_str(&text).map_err(|e| CoreError::format(path, e.to_string()))?;
    if doc.joints != JOINTS {
        return Err(CoreError::format(
            path,
            format!("expected {JOINTS} joints, file says {}", doc.joints),
        ));
    }
    let t = doc.frames.len();
    let mut data = Vec::with_capacity(t * POSE_DIMS);
    for (i, row) in doc.frames.iter().enumerate() {
        if row.len() != POSE_DIMS {
            return Err(CoreError::format(
                path,
                format!("frame {i} has {} values, expected {POSE_DIMS}", row.len()),
            ));
        }
        data.extend(row.iter().map(|&v| S::of(v)));
    }
    Ok((doc.fps, Tensor::from_vec(&[t, POSE_DIMS], data)?))
}

pub fn save_motion_json<S: Scalar>(path: &Path, fps: u32, pose: &Tensor<S>) -> Result<()> {
    let t = check_pose_shape(pose)?;
    let frames: Vec<Vec<f64>> = (0..t)
        .map(|r| pose.row(r).iter().map(|v| v.as_f64()).collect())
        .collect();
    let doc = MotionDoc {
        fps,
        joints: JOINTS,
        frames,
    };
    let text = serde_json::to_string(&doc).map_err(|e| CoreError::format(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;

    type T64 = Tensor<f64>;

    fn identity_pose(t: usize) -> T64 {
        // identity rotation in 6-D is (1,0,0, 0,1,0)
        let mut data = Vec::with_capacity(t * POSE_DIMS);
        for _ in 0..t {
            data.extend_from_slice(&[0.0, 0.0, 0.0]);
            for _ in 0..JOINTS {
                data.extend_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
            }
        }
        T64::from_vec(&[t, POSE_DIMS], data).unwrap()
    }

    #[test]
    fn skeleton_loads_and_maps_slots() {
        let s = Skeleton::<f64>::smpl24();
        assert_eq!(s.joint_count(), 24);
        assert_eq!(s.parent(0), None);
        for j in 1..24 {
            assert!(s.parent(j).unwrap() < j);
        }
        for j in 0..24 {
            assert_eq!(s.joint_of(s.slot_of(j)), j);
        }
        // slot order starts with the lower-body joints
        for (slot, &jj) in LOWER_JOINTS.iter().enumerate() {
            assert_eq!(s.joint_of(slot), jj);
        }
        assert_eq!(s.joint_index("pelvis"), Some(0));
        assert_eq!(s.joint_index("right_hand"), Some(23));
    }

    #[test]
    fn identity_pose_reproduces_rest_offsets() {
        let s = Skeleton::<f64>::smpl24();
        let pose = identity_pose(1);
        let pos = pose_to_positions(&pose, &s).unwrap();
        // pelvis at origin
        assert_eq!(&pos.row(0)[0..3], &[0.0, 0.0, 0.0]);
        // left hip exactly its offset
        let lh = s.joint_index("left_hip").unwrap();
        let p = &pos.row(0)[3 * lh..3 * lh + 3];
        assert!((p[0] - 0.09).abs() < 1e-12 && (p[1] + 0.05).abs() < 1e-12);
        // head is the tallest joint on the rest pose
        let head = s.joint_index("head").unwrap();
        let head_y = pos.row(0)[3 * head + 1];
        for j in 0..JOINTS {
            assert!(pos.row(0)[3 * j + 1] <= head_y + 1e-12);
        }
        // total height base-of-foot to head is human-scale
        let min_y = (0..JOINTS).map(|j| pos.row(0)[3 * j + 1]).fold(f64::MAX, f64::min);
        let h = head_y - min_y;
        assert!(h > 1.2 && h < 2.0, "height {h}");
    }

    #[test]
    fn split_join_round_trips() {
        let s = Skeleton::<f64>::smpl24();
        let _ = &s;
        let mut pose = identity_pose(3);
        for (i, v) in pose.data_mut().iter_mut().enumerate() {
            *v += (i % 7) as f64 * 0.01;
        }
        let (lo, up) = split_pose(&pose).unwrap();
        assert_eq!(lo.shape(), &[3, LOWER_DIMS]);
        assert_eq!(up.shape(), &[3, UPPER_DIMS]);
        let back = join_pose(&lo, &up).unwrap();
        assert_eq!(back.data(), pose.data());
    }

    #[test]
    fn ninety_degree_root_swings_offsets() {
        // rotate root 90 degrees about z: a child offset (x, y, z) lands at (-y, x, z)
        let s = Skeleton::<f64>::smpl24();
        let mut pose = identity_pose(1);
        let m = kernels::rot_about_axis(2, std::f64::consts::FRAC_PI_2);
        let r6 = kernels::mat_to_rot6d(&m);
        pose.data_mut()[3..9].copy_from_slice(&r6);
        let pos = pose_to_positions(&pose, &s).unwrap();
        let lh = s.joint_index("left_hip").unwrap();
        let p = &pos.row(0)[3 * lh..3 * lh + 3];
        // offset was (0.09, -0.05, 0) -> (0.05, 0.09, 0)
        assert!((p[0] - 0.05).abs() < 1e-12, "{p:?}");
        assert!((p[1] - 0.09).abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn loss_of_identical_clips_is_zero() {
        let s = Skeleton::<f64>::smpl24();
        let pose = identity_pose(4);
        let refs = DanceLossRefs::new(&pose, &s, 30.0).unwrap();
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let p = tape.constant(pose.clone());
        let loss = dance_loss(&mut tape, p, &refs, &s, 30.0).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn motion_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.motion.json");
        let mut pose = identity_pose(5);
        for (i, v) in pose.data_mut().iter_mut().enumerate() {
            *v += ((i * 31 % 11) as f64) * 0.003;
        }
        save_motion_json(&path, 30, &pose).unwrap();
        let (fps, back) = load_motion_json::<f64>(&path).unwrap();
        assert_eq!(fps, 30);
        assert_eq!(back.shape(), pose.shape());
        for (a, b) in back.data().iter().zip(pose.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
