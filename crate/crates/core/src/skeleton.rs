//! Fixed 22-joint kinematic tree: forward kinematics, sagittal mirroring,
//! and BVH export.
//!
//! The joint set is the canonical SMPL body order (pelvis + 21 joints); the
//! offset table ships as a versioned data file embedded in the binary.
//! Coordinates are y-up, x toward the character's left, z forward.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::rotation::{rot6d_to_matrix, PoseVector, Rot6D, RotationMatrix, NUM_ROTATIONS};

/// 22 joints: pelvis (root) + 21 body joints, one rotation each.
pub const NUM_JOINTS: usize = NUM_ROTATIONS;

const OFFSET_TABLE: &str = include_str!("../data/skeleton_offsets_v1.tsv");

/// Immutable kinematic tree in topological order (parent index < child index).
#[derive(Debug, Clone)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    /// Parent joint index; the root is its own parent at index 0.
    pub parent: Vec<usize>,
    /// Joint offset from the parent, meters, in the parent frame.
    pub offsets: Vec<Vector3<f64>>,
    /// (left_index, right_index) per mirrored limb joint.
    pub left_right_pairs: Vec<(usize, usize)>,
}

/// World-frame joint positions, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPositions {
    pub positions: Vec<Vector3<f64>>,
}

impl Skeleton {
    /// Parses the tab-separated offset table (name, parent name, x, y, z).
    pub fn from_table(table: &str) -> Result<Self> {
        let mut joint_names: Vec<String> = Vec::new();
        let mut parent: Vec<usize> = Vec::new();
        let mut offsets: Vec<Vector3<f64>> = Vec::new();
        for (lineno, line) in table.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::ParseError(format!(
                    "skeleton table line {}: expected 5 tab-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let name = fields[0].to_string();
            let parent_idx = if fields[1] == "-" {
                if !joint_names.is_empty() {
                    return Err(Error::ParseError(format!(
                        "skeleton table line {}: root must be the first joint",
                        lineno + 1
                    )));
                }
                0
            } else {
                joint_names
                    .iter()
                    .position(|n| n == fields[1])
                    .ok_or_else(|| {
                        Error::ParseError(format!(
                            "skeleton table line {}: parent {:?} not defined before child",
                            lineno + 1,
                            fields[1]
                        ))
                    })?
            };
            let coord = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| {
                    Error::ParseError(format!(
                        "skeleton table line {}: bad offset value {s:?}",
                        lineno + 1
                    ))
                })
            };
            let off = Vector3::new(coord(fields[2])?, coord(fields[3])?, coord(fields[4])?);
            if !off.iter().all(|v| v.is_finite()) {
                return Err(Error::ParseError(format!(
                    "skeleton table line {}: non-finite offset",
                    lineno + 1
                )));
            }
            joint_names.push(name);
            parent.push(parent_idx);
            offsets.push(off);
        }
        if joint_names.len() != NUM_JOINTS {
            return Err(Error::ParseError(format!(
                "skeleton table defines {} joints, expected {NUM_JOINTS}",
                joint_names.len()
            )));
        }
        if offsets[0] != Vector3::zeros() {
            return Err(Error::ParseError("root offset must be the origin".into()));
        }
        let mut left_right_pairs = Vec::new();
        for (i, name) in joint_names.iter().enumerate() {
            if let Some(rest) = name.strip_prefix("left_") {
                let right = format!("right_{rest}");
                let j = joint_names
                    .iter()
                    .position(|n| *n == right)
                    .ok_or_else(|| {
                        Error::ParseError(format!("joint {name} has no partner {right}"))
                    })?;
                left_right_pairs.push((i, j));
            }
        }
        Ok(Self {
            joint_names,
            parent,
            offsets,
            left_right_pairs,
        })
    }

    pub fn children(&self, joint: usize) -> Vec<usize> {
        (0..NUM_JOINTS)
            .filter(|&j| j != 0 && self.parent[j] == joint)
            .collect()
    }

    /// Index of the mirror partner, or the joint itself if unpaired (spine chain).
    pub fn mirror_index(&self, joint: usize) -> usize {
        for &(l, r) in &self.left_right_pairs {
            if joint == l {
                return r;
            }
            if joint == r {
                return l;
            }
        }
        joint
    }

    /// Rest-pose stature: vertical extent of FK positions at identity pose.
    pub fn rest_height(&self) -> f64 {
        let fk = forward_kinematics(self, &PoseVector::rest()).expect("rest pose is valid");
        let ys: Vec<f64> = fk.positions.iter().map(|p| p.y).collect();
        let max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// The canonical 22-joint skeleton from the embedded offset table.
pub fn default_skeleton() -> Skeleton {
    Skeleton::from_table(OFFSET_TABLE).expect("embedded skeleton table is valid")
}

/// World positions of all joints.
///
/// Joint j's world transform composes the parent's with (offset_j, rotation_j);
/// the root takes its rotation from the pose's root orient and its position
/// from the pose translation.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &PoseVector) -> Result<JointPositions> {
    let mut world_rot: Vec<Matrix3<f64>> = Vec::with_capacity(NUM_JOINTS);
    let mut positions: Vec<Vector3<f64>> = Vec::with_capacity(NUM_JOINTS);
    for j in 0..NUM_JOINTS {
        let local = rot6d_to_matrix(&pose.rotation(j)?)?.into_matrix();
        if j == 0 {
            world_rot.push(local);
            positions.push(pose.translation());
        } else {
            let p = skeleton.parent[j];
            positions.push(positions[p] + world_rot[p] * skeleton.offsets[j]);
            world_rot.push(world_rot[p] * local);
        }
    }
    Ok(JointPositions { positions })
}

/// Sagittal reflection of a 6D rotation block: R -> S R S with S = diag(-1,1,1).
///
/// On the raw (pre-orthogonalization) columns this is a' = (ax, -ay, -az),
/// b' = (-bx, by, bz), which commutes with Gram–Schmidt.
fn mirror_rot6d(r: &Rot6D) -> Rot6D {
    Rot6D {
        a: Vector3::new(r.a.x, -r.a.y, -r.a.z),
        b: Vector3::new(-r.b.x, r.b.y, r.b.z),
    }
}

/// Reflects a pose across the sagittal plane: every rotation conjugated by
/// diag(-1,1,1), left/right joint blocks swapped, translation x negated.
pub fn mirror_pose(skeleton: &Skeleton, pose: &PoseVector) -> PoseVector {
    let mut out = pose.clone();
    for i in 0..NUM_ROTATIONS {
        let r = pose.rotation(i).expect("index in range");
        out.set_rotation(i, &mirror_rot6d(&r)).expect("index in range");
    }
    for &(l, r) in &skeleton.left_right_pairs {
        let mut lb = [0.0; 6];
        lb.copy_from_slice(&out.values[6 * l..6 * l + 6]);
        let mut rb = [0.0; 6];
        rb.copy_from_slice(&out.values[6 * r..6 * r + 6]);
        out.values[6 * l..6 * l + 6].copy_from_slice(&rb);
        out.values[6 * r..6 * r + 6].copy_from_slice(&lb);
    }
    let t = pose.translation();
    out.set_translation(&Vector3::new(-t.x, t.y, t.z));
    out
}

/// Swaps whole-word "left"/"right" (case-insensitive, case-preserving).
pub fn mirror_caption(caption: &str) -> String {
    let mut out = String::with_capacity(caption.len() + 8);
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        let lower = word.to_lowercase();
        let swapped = match lower.as_str() {
            "left" => Some("right"),
            "right" => Some("left"),
            _ => None,
        };
        match swapped {
            Some(s) => out.push_str(&match_case(word, s)),
            None => out.push_str(word),
        }
        word.clear();
    };
    for c in caption.chars() {
        if c.is_alphabetic() {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

fn match_case(original: &str, replacement: &str) -> String {
    let chars: Vec<char> = original.chars().collect();
    if chars.iter().all(|c| c.is_uppercase()) {
        replacement.to_uppercase()
    } else if chars.first().is_some_and(|c| c.is_uppercase()) {
        let mut s = String::new();
        let mut it = replacement.chars();
        if let Some(first) = it.next() {
            s.extend(first.to_uppercase());
        }
        s.extend(it);
        s
    } else {
        replacement.to_string()
    }
}

/// Mirrors every frame and the caption.
pub fn mirror_motion(skeleton: &Skeleton, motion: &MotionSequence) -> MotionSequence {
    MotionSequence {
        frames: motion
            .frames
            .iter()
            .map(|p| mirror_pose(skeleton, p))
            .collect(),
        fps: motion.fps,
        caption: motion.caption.as_deref().map(mirror_caption),
    }
}

/// Matrix for the BVH channel order Zrotation Yrotation Xrotation:
/// R = Rz(z) * Ry(y) * Rx(x), radians.
pub fn euler_zyx_to_matrix(z: f64, y: f64, x: f64) -> RotationMatrix {
    let (sz, cz) = z.sin_cos();
    let (sy, cy) = y.sin_cos();
    let (sx, cx) = x.sin_cos();
    let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    RotationMatrix::new(rz * ry * rx).expect("product of rotations")
}

/// Inverse of `euler_zyx_to_matrix`; at gimbal lock (|y| = 90°) the third
/// angle x is set to 0 and z absorbs the remaining rotation.
pub fn matrix_to_euler_zyx(m: &RotationMatrix) -> (f64, f64, f64) {
    let m = m.matrix();
    let sy = (-m[(2, 0)]).clamp(-1.0, 1.0);
    if sy.abs() > 1.0 - 1e-10 {
        let y = sy.asin();
        let z = (-m[(0, 1)]).atan2(m[(1, 1)]);
        (z, y, 0.0)
    } else {
        let y = sy.asin();
        let x = m[(2, 1)].atan2(m[(2, 2)]);
        let z = m[(1, 0)].atan2(m[(0, 0)]);
        (z, y, x)
    }
}

fn end_site_offset(name: &str) -> Vector3<f64> {
    match name {
        "head" => Vector3::new(0.0, 0.09, 0.0),
        "left_wrist" => Vector3::new(0.08, 0.0, 0.0),
        "right_wrist" => Vector3::new(-0.08, 0.0, 0.0),
        "left_foot" | "right_foot" => Vector3::new(0.0, 0.0, 0.06),
        _ => Vector3::new(0.0, 0.05, 0.0),
    }
}

fn write_bvh_joint(
    skeleton: &Skeleton,
    joint: usize,
    depth: usize,
    out: &mut String,
) {
    let indent = "  ".repeat(depth);
    let off = skeleton.offsets[joint] * 100.0;
    if joint == 0 {
        let _ = writeln!(out, "{indent}ROOT {}", skeleton.joint_names[joint]);
    } else {
        let _ = writeln!(out, "{indent}JOINT {}", skeleton.joint_names[joint]);
    }
    let _ = writeln!(out, "{indent}{{");
    let _ = writeln!(
        out,
        "{indent}  OFFSET {:.6} {:.6} {:.6}",
        off.x, off.y, off.z
    );
    if joint == 0 {
        let _ = writeln!(
            out,
            "{indent}  CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation"
        );
    } else {
        let _ = writeln!(out, "{indent}  CHANNELS 3 Zrotation Yrotation Xrotation");
    }
    let children = skeleton.children(joint);
    if children.is_empty() {
        let site = end_site_offset(&skeleton.joint_names[joint]) * 100.0;
        let _ = writeln!(out, "{indent}  End Site");
        let _ = writeln!(out, "{indent}  {{");
        let _ = writeln!(
            out,
            "{indent}    OFFSET {:.6} {:.6} {:.6}",
            site.x, site.y, site.z
        );
        let _ = writeln!(out, "{indent}  }}");
    } else {
        for c in children {
            write_bvh_joint(skeleton, c, depth + 1, out);
        }
    }
    let _ = writeln!(out, "{indent}}}");
}

/// Renders a motion as BVH text: offsets and positions in centimeters,
/// rotations as ZYX Euler degrees, LF line endings, 6 decimal places.
pub fn render_bvh(skeleton: &Skeleton, motion: &MotionSequence) -> Result<String> {
    let mut out = String::new();
    out.push_str("HIERARCHY\n");
    write_bvh_joint(skeleton, 0, 0, &mut out);
    out.push_str("MOTION\n");
    let _ = writeln!(out, "Frames: {}", motion.frames.len());
    let _ = writeln!(out, "Frame Time: {:.6}", 1.0 / motion.fps);
    let deg = 180.0 / std::f64::consts::PI;
    for pose in &motion.frames {
        let mut fields: Vec<String> = Vec::with_capacity(3 + 3 * NUM_JOINTS);
        let t = pose.translation() * 100.0;
        fields.push(format!("{:.6}", t.x));
        fields.push(format!("{:.6}", t.y));
        fields.push(format!("{:.6}", t.z));
        for j in 0..NUM_JOINTS {
            let m = rot6d_to_matrix(&pose.rotation(j)?)?;
            let (z, y, x) = matrix_to_euler_zyx(&m);
            fields.push(format!("{:.6}", z * deg));
            fields.push(format!("{:.6}", y * deg));
            fields.push(format!("{:.6}", x * deg));
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Writes `render_bvh` output to a file.
pub fn export_bvh(skeleton: &Skeleton, motion: &MotionSequence, path: &Path) -> Result<()> {
    let text = render_bvh(skeleton, motion)?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::rotation::{
        axis_angle_to_matrix, matrix_to_rot6d, random_rotation, NUM_ROTATIONS,
    };
    use std::f64::consts::PI;

    fn random_pose(seed: u64) -> PoseVector {
        let mut rng = stream(seed, "skeleton-test");
        let mut p = PoseVector::rest();
        for i in 0..NUM_ROTATIONS {
            p.set_rotation(i, &matrix_to_rot6d(&random_rotation(&mut rng)))
                .unwrap();
        }
        p.set_translation(&Vector3::new(0.3, 0.9, -0.2));
        p
    }

    #[test]
    fn default_skeleton_shape() {
        let s = default_skeleton();
        assert_eq!(s.joint_names.len(), 22);
        let knee = s.joint_names.iter().position(|n| n == "left_knee").unwrap();
        let hip = s.joint_names.iter().position(|n| n == "left_hip").unwrap();
        assert_eq!(s.parent[knee], hip);
        // One pair per left_* joint: hips, knees, ankles, feet, collars,
        // shoulders, elbows, wrists.
        assert_eq!(s.left_right_pairs.len(), 8);
        for j in 1..NUM_JOINTS {
            assert!(s.parent[j] < j);
        }
        for &(l, r) in &s.left_right_pairs {
            let lo = s.offsets[l];
            let ro = s.offsets[r];
            assert_eq!(Vector3::new(-lo.x, lo.y, lo.z), ro);
        }
        assert!(s.rest_height() > 1.2 && s.rest_height() < 2.0);
    }

    #[test]
    fn fk_identity_pose_accumulates_offsets() {
        let s = default_skeleton();
        let fk = forward_kinematics(&s, &PoseVector::rest()).unwrap();
        for j in 0..NUM_JOINTS {
            let mut expect = Vector3::zeros();
            let mut cur = j;
            while cur != 0 {
                expect += s.offsets[cur];
                cur = s.parent[cur];
            }
            assert!((fk.positions[j] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn fk_translation_is_rigid_shift() {
        let s = default_skeleton();
        let mut pose = random_pose(11);
        pose.set_translation(&Vector3::zeros());
        let base = forward_kinematics(&s, &pose).unwrap();
        pose.set_translation(&Vector3::new(1.0, 2.0, 3.0));
        let moved = forward_kinematics(&s, &pose).unwrap();
        for j in 0..NUM_JOINTS {
            let d = moved.positions[j] - base.positions[j];
            assert!((d - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn fk_root_yaw_rotates_all_joints() {
        let s = default_skeleton();
        let rest = forward_kinematics(&s, &PoseVector::rest()).unwrap();
        let yaw = axis_angle_to_matrix(&Vector3::new(0.0, PI / 2.0, 0.0));
        let mut pose = PoseVector::rest();
        pose.set_rotation(0, &matrix_to_rot6d(&yaw)).unwrap();
        let fk = forward_kinematics(&s, &pose).unwrap();
        for j in 0..NUM_JOINTS {
            let expect = yaw.apply(&rest.positions[j]);
            assert!((fk.positions[j] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn fk_is_equivariant_under_global_rotation() {
        let s = default_skeleton();
        let mut rng = stream(21, "equivariance");
        let mut pose = random_pose(22);
        pose.set_translation(&Vector3::zeros());
        let base = forward_kinematics(&s, &pose).unwrap();
        let g = random_rotation(&mut rng);
        let root = rot6d_to_matrix(&pose.rotation(0).unwrap()).unwrap();
        let mut rotated = pose.clone();
        rotated
            .set_rotation(0, &matrix_to_rot6d(&g.compose(&root)))
            .unwrap();
        let fk = forward_kinematics(&s, &rotated).unwrap();
        for j in 0..NUM_JOINTS {
            assert!((fk.positions[j] - g.apply(&base.positions[j])).norm() < 1e-9);
        }
    }

    #[test]
    fn mirror_is_involution_and_fixes_identity() {
        let s = default_skeleton();
        let pose = random_pose(31);
        let twice = mirror_pose(&s, &mirror_pose(&s, &pose));
        for (a, b) in pose.values.iter().zip(&twice.values) {
            assert_eq!(a, b);
        }
        let rest = PoseVector::rest();
        let m = mirror_pose(&s, &rest);
        for (a, b) in rest.values.iter().zip(&m.values) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mirror_preserves_bone_lengths_and_reflects_positions() {
        let s = default_skeleton();
        let pose = random_pose(32);
        let fk = forward_kinematics(&s, &pose).unwrap();
        let mfk = forward_kinematics(&s, &mirror_pose(&s, &pose)).unwrap();
        for j in 1..NUM_JOINTS {
            let len = (fk.positions[j] - fk.positions[s.parent[j]]).norm();
            let mj = s.mirror_index(j);
            let mlen = (mfk.positions[mj] - mfk.positions[s.parent[mj]]).norm();
            assert!((len - mlen).abs() < 1e-6);
        }
        // Full reflection: mirrored joint position = diag(-1,1,1) * original
        // position of the partner joint.
        for j in 0..NUM_JOINTS {
            let p = fk.positions[s.mirror_index(j)];
            let expect = Vector3::new(-p.x, p.y, p.z);
            assert!((mfk.positions[j] - expect).norm() < 1e-9);
        }
    }

    #[test]
    fn caption_mirroring_swaps_whole_words() {
        assert_eq!(
            mirror_caption("the person raises the left arm"),
            "the person raises the right arm"
        );
        assert_eq!(mirror_caption("Left arm, RIGHT leg"), "Right arm, LEFT leg");
        assert_eq!(mirror_caption("standing upright"), "standing upright");
        let c = "waves the right hand";
        assert_eq!(mirror_caption(&mirror_caption(c)), c);
    }

    #[test]
    fn euler_round_trip() {
        let mut rng = stream(41, "euler");
        for _ in 0..500 {
            let m = random_rotation(&mut rng);
            let (z, y, x) = matrix_to_euler_zyx(&m);
            let back = euler_zyx_to_matrix(z, y, x);
            assert!((m.matrix() - back.matrix()).norm() < 1e-4);
        }
    }

    #[test]
    fn euler_gimbal_lock_sets_third_angle_zero() {
        for &ysign in &[1.0, -1.0] {
            let m = euler_zyx_to_matrix(0.3, ysign * PI / 2.0, 0.7);
            let (z, y, x) = matrix_to_euler_zyx(&m);
            assert_eq!(x, 0.0);
            let back = euler_zyx_to_matrix(z, y, x);
            assert!((m.matrix() - back.matrix()).norm() < 1e-9);
        }
    }

    #[test]
    fn bvh_identity_motion_has_zero_rotations() {
        let s = default_skeleton();
        let motion = MotionSequence::new(vec![PoseVector::rest(); 3], 20.0, None).unwrap();
        let text = render_bvh(&s, &motion).unwrap();
        assert_eq!(text.matches("JOINT").count(), 21);
        assert_eq!(text.matches("ROOT").count(), 1);
        assert!(!text.contains('\r'));
        let motion_idx = text.find("MOTION").unwrap();
        for line in text[motion_idx..].lines().skip(3) {
            for field in line.split(' ') {
                let v: f64 = field.parse().unwrap();
                assert!(v.abs() < 1e-4);
            }
        }
    }

    #[test]
    fn bvh_frame_lines_have_full_channel_count() {
        let s = default_skeleton();
        let motion = MotionSequence::new(vec![random_pose(51), random_pose(52)], 20.0, None)
            .unwrap();
        let text = render_bvh(&s, &motion).unwrap();
        let motion_idx = text.find("MOTION").unwrap();
        let lines: Vec<&str> = text[motion_idx..].lines().skip(3).collect();
        assert_eq!(lines.len(), 2);
        for line in lines {
            assert_eq!(line.split(' ').count(), 3 + 3 * NUM_JOINTS);
        }
        assert!(text.contains("Frame Time: 0.050000"));
    }
}
