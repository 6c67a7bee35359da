//! Procedural text-motion corpus.
//!
//! Five parametric motion families (arm raises, waves, squats, turns, walks)
//! with left/right variants give eight caption classes. Every sample is
//! generated from its own seeded sub-stream, so corpora are bit-reproducible
//! and samples can be regenerated independently of batch order.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::rng::{indexed_stream, stream};
use crate::rotation::{
    axis_angle_to_matrix, matrix_to_rot6d, PoseVector, POSE_DIM,
};
use crate::skeleton::{default_skeleton, forward_kinematics};

// Joint indices in the canonical skeleton order.
const LEFT_HIP: usize = 1;
const RIGHT_HIP: usize = 2;
const SPINE1: usize = 3;
const LEFT_KNEE: usize = 4;
const RIGHT_KNEE: usize = 5;
const LEFT_ANKLE: usize = 7;
const RIGHT_ANKLE: usize = 8;
const LEFT_SHOULDER: usize = 16;
const RIGHT_SHOULDER: usize = 17;
const LEFT_ELBOW: usize = 18;
const RIGHT_ELBOW: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn word(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MotionFamily {
    RaiseArm(Side),
    Wave(Side),
    Squat,
    Turn(Side),
    WalkForward,
}

pub const ALL_FAMILIES: [MotionFamily; 8] = [
    MotionFamily::RaiseArm(Side::Left),
    MotionFamily::RaiseArm(Side::Right),
    MotionFamily::Wave(Side::Left),
    MotionFamily::Wave(Side::Right),
    MotionFamily::Squat,
    MotionFamily::Turn(Side::Left),
    MotionFamily::Turn(Side::Right),
    MotionFamily::WalkForward,
];

impl fmt::Display for MotionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MotionFamily::RaiseArm(Side::Left) => "raise_arm_left",
            MotionFamily::RaiseArm(Side::Right) => "raise_arm_right",
            MotionFamily::Wave(Side::Left) => "wave_left",
            MotionFamily::Wave(Side::Right) => "wave_right",
            MotionFamily::Squat => "squat",
            MotionFamily::Turn(Side::Left) => "turn_left",
            MotionFamily::Turn(Side::Right) => "turn_right",
            MotionFamily::WalkForward => "walk_forward",
        };
        f.write_str(s)
    }
}

impl FromStr for MotionFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_FAMILIES
            .iter()
            .copied()
            .find(|f| f.to_string() == s)
            .ok_or_else(|| Error::BadSpec(format!("unknown motion family {s}")))
    }
}

/// Caption templates per family; the `{side}` slot is filled with a whole
/// word so sagittal mirroring can swap it.
fn caption_templates(family: MotionFamily) -> Vec<String> {
    let (patterns, side): (&[&str], Option<Side>) = match family {
        MotionFamily::RaiseArm(s) => (
            &[
                "a person raises their {side} arm",
                "someone lifts the {side} arm overhead",
                "a figure slowly raises its {side} hand",
                "the {side} arm is raised up high",
            ],
            Some(s),
        ),
        MotionFamily::Wave(s) => (
            &[
                "a person waves with their {side} hand",
                "someone waves the {side} arm",
                "a figure waves hello using the {side} hand",
                "waving with the {side} arm raised",
            ],
            Some(s),
        ),
        MotionFamily::Squat => (
            &[
                "a person squats down and stands back up",
                "someone performs a deep squat",
                "a figure bends both knees into a squat",
                "squatting down then rising again",
            ],
            None,
        ),
        MotionFamily::Turn(s) => (
            &[
                "a person turns to the {side}",
                "someone rotates their body to the {side}",
                "a figure turns {side} in place",
                "turning around to the {side} side",
            ],
            Some(s),
        ),
        MotionFamily::WalkForward => (
            &[
                "a person walks forward",
                "someone walks straight ahead",
                "a figure strides forward at a steady pace",
                "walking ahead in a straight line",
            ],
            None,
        ),
    };
    patterns
        .iter()
        .map(|p| match side {
            Some(s) => p.replace("{side}", s.word()),
            None => p.to_string(),
        })
        .collect()
}

/// Caption class of a generated or mirrored caption, recovered from its
/// wording. Used by balance checks and the evaluation oracles.
pub fn caption_family(caption: &str) -> Option<MotionFamily> {
    for family in ALL_FAMILIES {
        if caption_templates(family).iter().any(|t| caption.contains(t.as_str())) {
            return Some(family);
        }
    }
    None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub counts: Vec<(MotionFamily, usize)>,
    /// Frames per clip.
    pub frames: usize,
    pub fps: f64,
}

impl DatasetSpec {
    /// Equal counts over all eight caption classes.
    pub fn balanced(seed: u64, per_family: usize, frames: usize, fps: f64) -> Self {
        Self {
            seed,
            counts: ALL_FAMILIES.iter().map(|&f| (f, per_family)).collect(),
            frames,
            fps,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::BadSpec(format!(
                "clips need at least 2 frames, got {}",
                self.frames
            )));
        }
        if !(self.fps > 0.0) {
            return Err(Error::BadSpec(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }
}

fn set_axis_angle(pose: &mut PoseVector, joint: usize, axis_angle: Vector3<f64>) {
    let m = axis_angle_to_matrix(&axis_angle);
    pose.set_rotation(joint, &matrix_to_rot6d(&m))
        .expect("joint index in range");
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Pelvis height drop (meters) that keeps the left ankle at its rest height
/// for the already-posed leg rotations.
fn pelvis_drop_for(pose: &PoseVector) -> f64 {
    let skeleton = default_skeleton();
    let rest = forward_kinematics(&skeleton, &PoseVector::rest()).expect("rest pose is valid");
    let posed = forward_kinematics(&skeleton, pose).expect("synthesized pose is valid");
    posed.positions[LEFT_ANKLE].y - rest.positions[LEFT_ANKLE].y
}

fn synth_frame_count_u(i: usize, n: usize) -> f64 {
    i as f64 / (n - 1) as f64
}

fn synth_motion(
    family: MotionFamily,
    rng: &mut ChaCha8Rng,
    frames: usize,
    fps: f64,
) -> Vec<PoseVector> {
    let n = frames;
    let mut out = Vec::with_capacity(n);
    match family {
        MotionFamily::RaiseArm(side) => {
            // Shoulder rotation ramps from rest to roughly 90 degrees.
            let peak = (std::f64::consts::FRAC_PI_2) * rng.random_range(0.85..1.15);
            let lean = rng.random_range(-0.05..0.05);
            let (joint, sign) = match side {
                Side::Left => (LEFT_SHOULDER, 1.0),
                Side::Right => (RIGHT_SHOULDER, -1.0),
            };
            for i in 0..n {
                let u = synth_frame_count_u(i, n);
                let mut p = PoseVector::rest();
                set_axis_angle(&mut p, joint, Vector3::new(0.0, 0.0, sign * peak * smoothstep(u)));
                set_axis_angle(&mut p, SPINE1, Vector3::new(lean, 0.0, 0.0));
                out.push(p);
            }
        }
        MotionFamily::Wave(side) => {
            let hold = std::f64::consts::FRAC_PI_2 * rng.random_range(1.0..1.2);
            let hz = rng.random_range(1.2..2.0);
            let amp = rng.random_range(0.5..0.8);
            let (shoulder, elbow, sign) = match side {
                Side::Left => (LEFT_SHOULDER, LEFT_ELBOW, 1.0),
                Side::Right => (RIGHT_SHOULDER, RIGHT_ELBOW, -1.0),
            };
            for i in 0..n {
                let u = synth_frame_count_u(i, n);
                let time = i as f64 / fps;
                let mut p = PoseVector::rest();
                let up = hold * smoothstep(u / 0.25);
                set_axis_angle(&mut p, shoulder, Vector3::new(0.0, 0.0, sign * up));
                let bend = amp * (1.0 + (2.0 * std::f64::consts::PI * hz * time).sin()) / 2.0;
                set_axis_angle(&mut p, elbow, Vector3::new(0.0, 0.0, sign * bend));
                out.push(p);
            }
        }
        MotionFamily::Squat => {
            // One full repetition; the pelvis drops so the feet stay put.
            let depth = rng.random_range(0.7..1.0);
            let lean = rng.random_range(0.1..0.25);
            for i in 0..n {
                let u = synth_frame_count_u(i, n);
                let alpha = depth * (1.0 - (2.0 * std::f64::consts::PI * u).cos()) / 2.0;
                let mut p = PoseVector::rest();
                for hip in [LEFT_HIP, RIGHT_HIP] {
                    set_axis_angle(&mut p, hip, Vector3::new(-alpha, 0.0, 0.0));
                }
                for knee in [LEFT_KNEE, RIGHT_KNEE] {
                    set_axis_angle(&mut p, knee, Vector3::new(2.0 * alpha, 0.0, 0.0));
                }
                for ankle in [LEFT_ANKLE, RIGHT_ANKLE] {
                    set_axis_angle(&mut p, ankle, Vector3::new(-alpha, 0.0, 0.0));
                }
                set_axis_angle(&mut p, SPINE1, Vector3::new(lean * alpha, 0.0, 0.0));
                let drop = pelvis_drop_for(&p);
                p.set_translation(&Vector3::new(0.0, -drop, 0.0));
                out.push(p);
            }
        }
        MotionFamily::Turn(side) => {
            let sweep = rng.random_range(std::f64::consts::FRAC_PI_2..std::f64::consts::PI);
            let sign = match side {
                Side::Left => 1.0,
                Side::Right => -1.0,
            };
            for i in 0..n {
                let u = synth_frame_count_u(i, n);
                let mut p = PoseVector::rest();
                set_axis_angle(&mut p, 0, Vector3::new(0.0, sign * sweep * smoothstep(u), 0.0));
                out.push(p);
            }
        }
        MotionFamily::WalkForward => {
            let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let speed = rng.random_range(0.8..1.2);
            let hz = rng.random_range(0.8..1.2);
            let swing = rng.random_range(0.35..0.5);
            let knee_lift = rng.random_range(0.3..0.5);
            let dir = Vector3::new(heading.sin(), 0.0, heading.cos());
            for i in 0..n {
                let time = i as f64 / fps;
                let phase = 2.0 * std::f64::consts::PI * hz * time;
                let mut p = PoseVector::rest();
                set_axis_angle(&mut p, 0, Vector3::new(0.0, heading, 0.0));
                set_axis_angle(&mut p, LEFT_HIP, Vector3::new(-swing * phase.sin(), 0.0, 0.0));
                set_axis_angle(&mut p, RIGHT_HIP, Vector3::new(swing * phase.sin(), 0.0, 0.0));
                let lk = knee_lift * (1.0 + (phase - std::f64::consts::FRAC_PI_2).sin()) / 2.0;
                let rk = knee_lift * (1.0 - (phase - std::f64::consts::FRAC_PI_2).sin()) / 2.0;
                set_axis_angle(&mut p, LEFT_KNEE, Vector3::new(lk, 0.0, 0.0));
                set_axis_angle(&mut p, RIGHT_KNEE, Vector3::new(rk, 0.0, 0.0));
                let arm = 0.3 * swing * phase.sin();
                set_axis_angle(&mut p, LEFT_SHOULDER, Vector3::new(arm, 0.0, 0.0));
                set_axis_angle(&mut p, RIGHT_SHOULDER, Vector3::new(-arm, 0.0, 0.0));
                p.set_translation(&(dir * (speed * time)));
                out.push(p);
            }
        }
    }
    out
}

/// Deterministic corpus: sample k of family f uses the sub-stream
/// (seed, "motion", global index), so the corpus is independent of
/// iteration details elsewhere.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<MotionSequence>> {
    spec.validate()?;
    let mut out = Vec::new();
    let mut index = 0u64;
    for &(family, count) in &spec.counts {
        for _ in 0..count {
            let mut rng = indexed_stream(spec.seed, "motion", index);
            let frames = synth_motion(family, &mut rng, spec.frames, spec.fps);
            let templates = caption_templates(family);
            let caption = templates[rng.random_range(0..templates.len())].clone();
            out.push(MotionSequence::new(frames, spec.fps, Some(caption))?);
            index += 1;
        }
    }
    Ok(out)
}

/// Appends a sagittal mirror of every motion; left/right caption classes
/// swap, symmetric classes double.
pub fn augment_mirrored(corpus: &[MotionSequence]) -> Vec<MotionSequence> {
    let skeleton = default_skeleton();
    let mut out = Vec::with_capacity(corpus.len() * 2);
    out.extend_from_slice(corpus);
    out.extend(corpus.iter().map(|m| crate::skeleton::mirror_motion(&skeleton, m)));
    out
}

/// Uniformly samples `per_motion` frames from each motion, zeroing the
/// translation block and rephrasing the caption as a still frame.
pub fn extract_static_pairs(
    corpus: &[MotionSequence],
    per_motion: usize,
    seed: u64,
) -> Vec<(Option<String>, PoseVector)> {
    let mut out = Vec::with_capacity(corpus.len() * per_motion);
    for (mi, motion) in corpus.iter().enumerate() {
        let mut rng = indexed_stream(seed, "static-pairs", mi as u64);
        let caption = motion
            .caption
            .as_ref()
            .map(|c| format!("a still frame of {c}"));
        for _ in 0..per_motion {
            let fi = rng.random_range(0..motion.frames.len());
            let mut pose = motion.frames[fi].clone();
            pose.set_translation(&Vector3::zeros());
            out.push((caption.clone(), pose));
        }
    }
    out
}

/// Nulls the caption on floor(fraction * n) motions, chosen by a seeded
/// shuffle. Fractions outside [0, 1] are clamped.
pub fn mark_unconditional(
    corpus: &[MotionSequence],
    fraction: f64,
    seed: u64,
) -> Vec<MotionSequence> {
    let n = corpus.len();
    let k = ((fraction.clamp(0.0, 1.0) * n as f64).floor() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, "unconditional"));
    let mut out = corpus.to_vec();
    for &i in order.iter().take(k) {
        out[i].caption = None;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    /// Per-channel standard deviation, floored at 1e-6.
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

pub fn compute_stats(corpus: &[MotionSequence]) -> Result<ChannelStats> {
    let total: usize = corpus.iter().map(|m| m.frames.len()).sum();
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut sum = vec![0.0; POSE_DIM];
    let mut sumsq = vec![0.0; POSE_DIM];
    for motion in corpus {
        for frame in &motion.frames {
            for (c, v) in frame.values.iter().enumerate() {
                sum[c] += v;
                sumsq[c] += v * v;
            }
        }
    }
    let nf = total as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let std: Vec<f64> = sumsq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| ((sq / nf - m * m).max(0.0)).sqrt().max(STD_FLOOR))
        .collect();
    Ok(ChannelStats { mean, std })
}

/// Channels-as-rows z-scoring of a [135, N] array.
pub fn standardize(x: &Array2<f64>, stats: &ChannelStats) -> Result<Array2<f64>> {
    if x.nrows() != POSE_DIM {
        return Err(Error::ShapeMismatch(format!(
            "standardize expects {POSE_DIM} channels, got {}",
            x.nrows()
        )));
    }
    let mut out = x.clone();
    for (c, mut row) in out.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|v| (v - stats.mean[c]) / stats.std[c]);
    }
    Ok(out)
}

pub fn destandardize(x: &Array2<f64>, stats: &ChannelStats) -> Result<Array2<f64>> {
    if x.nrows() != POSE_DIM {
        return Err(Error::ShapeMismatch(format!(
            "destandardize expects {POSE_DIM} channels, got {}",
            x.nrows()
        )));
    }
    let mut out = x.clone();
    for (c, mut row) in out.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|v| v * stats.std[c] + stats.mean[c]);
    }
    Ok(out)
}

/// Frames become columns of a [135, N] array.
pub fn motion_to_array(motion: &MotionSequence) -> Array2<f64> {
    let n = motion.frames.len();
    let mut out = Array2::zeros((POSE_DIM, n));
    for (j, frame) in motion.frames.iter().enumerate() {
        for (i, v) in frame.values.iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    out
}

pub fn array_to_motion(
    x: &Array2<f64>,
    fps: f64,
    caption: Option<String>,
) -> Result<MotionSequence> {
    if x.nrows() != POSE_DIM {
        return Err(Error::ShapeMismatch(format!(
            "motion array needs {POSE_DIM} channels, got {}",
            x.nrows()
        )));
    }
    let frames: Vec<PoseVector> = x
        .columns()
        .into_iter()
        .map(|col| PoseVector::from_slice(col.as_slice().unwrap_or(&col.to_vec())))
        .collect::<Result<_>>()?;
    MotionSequence::new(frames, fps, caption)
}

#[derive(Serialize, Deserialize)]
struct MotionFile {
    fps: f64,
    caption: Option<String>,
    frames: Vec<Vec<f64>>,
}

pub fn save_motion(motion: &MotionSequence, path: &Path) -> Result<()> {
    let file = MotionFile {
        fps: motion.fps,
        caption: motion.caption.clone(),
        frames: motion.frames.iter().map(|f| f.values.to_vec()).collect(),
    };
    let text = serde_json::to_string(&file)
        .map_err(|e| Error::ParseError(format!("motion serialization: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_motion(path: &Path) -> Result<MotionSequence> {
    let text = fs::read_to_string(path)?;
    let file: MotionFile = serde_json::from_str(&text)
        .map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))?;
    let mut frames = Vec::with_capacity(file.frames.len());
    for (i, frame) in file.frames.iter().enumerate() {
        if frame.len() != POSE_DIM {
            return Err(Error::ParseError(format!(
                "{}: frame {i} has {} values, expected {POSE_DIM}",
                path.display(),
                frame.len()
            )));
        }
        frames.push(PoseVector::from_slice(frame)?);
    }
    MotionSequence::new(frames, file.fps, file.caption)
        .map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))
}

/// Manifest lines are "relative_path<TAB>split".
pub fn write_manifest(entries: &[(String, String)], path: &Path) -> Result<()> {
    let mut text = String::new();
    for (rel, split) in entries {
        text.push_str(rel);
        text.push('\t');
        text.push_str(split);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (rel, split) = line.split_once('\t').ok_or_else(|| {
            Error::ParseError(format!(
                "{}: line {} has no tab separator",
                path.display(),
                i + 1
            ))
        })?;
        out.push((rel.to_string(), split.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::rot6d_to_matrix;
    use crate::skeleton::NUM_JOINTS;

    fn small_spec() -> DatasetSpec {
        DatasetSpec::balanced(7, 3, 24, 20.0)
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let a = generate_dataset(&small_spec()).unwrap();
        let b = generate_dataset(&small_spec()).unwrap();
        assert_eq!(a.len(), 24);
        assert_eq!(a, b, "same seed must reproduce the corpus bit-exactly");
        for motion in &a {
            assert_eq!(motion.frames.len(), 24);
            for frame in &motion.frames {
                for j in 0..NUM_JOINTS {
                    rot6d_to_matrix(&frame.rotation(j).unwrap())
                        .expect("every rotation block must be a valid 6D rotation");
                }
            }
        }
        let c = generate_dataset(&DatasetSpec::balanced(8, 3, 24, 20.0)).unwrap();
        assert_ne!(a, c, "different seeds should differ");
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut spec = small_spec();
        spec.frames = 1;
        assert!(matches!(generate_dataset(&spec), Err(Error::BadSpec(_))));
        let mut spec = small_spec();
        spec.fps = 0.0;
        assert!(matches!(generate_dataset(&spec), Err(Error::BadSpec(_))));
    }

    #[test]
    fn walk_translation_aligns_with_facing() {
        let spec = DatasetSpec {
            seed: 3,
            counts: vec![(MotionFamily::WalkForward, 12)],
            frames: 30,
            fps: 20.0,
        };
        let corpus = generate_dataset(&spec).unwrap();
        let skeleton = default_skeleton();
        for motion in &corpus {
            let last = motion.frames.last().unwrap();
            let t = last.translation();
            assert!(t.norm() > 0.5, "walk should cover ground, got {}", t.norm());
            // Facing: the root rotation applied to +z, flattened to the
            // ground plane.
            let root = rot6d_to_matrix(&last.rotation(0).unwrap()).unwrap();
            let facing = root.apply(&Vector3::new(0.0, 0.0, 1.0));
            let facing = Vector3::new(facing.x, 0.0, facing.z).normalize();
            let dir = Vector3::new(t.x, 0.0, t.z).normalize();
            let angle = facing.dot(&dir).clamp(-1.0, 1.0).acos();
            assert!(
                angle.to_degrees() < 10.0,
                "travel direction {:.1} degrees off facing",
                angle.to_degrees()
            );
            let _ = forward_kinematics(&skeleton, last).unwrap();
        }
    }

    #[test]
    fn raise_arm_ramps_to_roughly_ninety_degrees() {
        let spec = DatasetSpec {
            seed: 5,
            counts: vec![(MotionFamily::RaiseArm(Side::Left), 6)],
            frames: 24,
            fps: 20.0,
        };
        for motion in generate_dataset(&spec).unwrap() {
            let first = motion.frames.first().unwrap();
            let last = motion.frames.last().unwrap();
            let angle_of = |p: &PoseVector| {
                let m = rot6d_to_matrix(&p.rotation(LEFT_SHOULDER).unwrap()).unwrap();
                crate::rotation::matrix_to_axis_angle(&m).norm()
            };
            assert!(angle_of(first) < 1e-9, "clip starts at rest");
            let end = angle_of(last).to_degrees();
            assert!((70.0..110.0).contains(&end), "end angle {end} degrees");
        }
    }

    #[test]
    fn squat_lowers_and_recovers_with_feet_fixed() {
        let spec = DatasetSpec {
            seed: 6,
            counts: vec![(MotionFamily::Squat, 4)],
            frames: 25,
            fps: 20.0,
        };
        let skeleton = default_skeleton();
        let rest_ankle = forward_kinematics(&skeleton, &PoseVector::rest())
            .unwrap()
            .positions[LEFT_ANKLE]
            .y;
        for motion in generate_dataset(&spec).unwrap() {
            let mid = &motion.frames[12];
            assert!(mid.translation().y < -0.1, "pelvis should drop at mid-squat");
            assert!(motion.frames[0].translation().y.abs() < 1e-9);
            assert!(motion.frames[24].translation().y.abs() < 1e-2);
            for frame in &motion.frames {
                let fk = forward_kinematics(&skeleton, frame).unwrap();
                assert!(
                    (fk.positions[LEFT_ANKLE].y - rest_ankle).abs() < 1e-9,
                    "ankle height must stay pinned through the squat"
                );
            }
        }
    }

    #[test]
    fn captions_name_their_family_and_mirroring_swaps_sides() {
        let corpus = generate_dataset(&small_spec()).unwrap();
        for motion in &corpus {
            let caption = motion.caption.as_ref().unwrap();
            assert!(
                caption_family(caption).is_some(),
                "caption {caption:?} must map back to a family"
            );
        }
        let doubled = augment_mirrored(&corpus);
        assert_eq!(doubled.len(), 2 * corpus.len());
        let count_class = |motions: &[MotionSequence], family: MotionFamily| {
            motions
                .iter()
                .filter(|m| caption_family(m.caption.as_deref().unwrap()) == Some(family))
                .count()
        };
        for family in ALL_FAMILIES {
            let mirrored_family = match family {
                MotionFamily::RaiseArm(Side::Left) => MotionFamily::RaiseArm(Side::Right),
                MotionFamily::RaiseArm(Side::Right) => MotionFamily::RaiseArm(Side::Left),
                MotionFamily::Wave(Side::Left) => MotionFamily::Wave(Side::Right),
                MotionFamily::Wave(Side::Right) => MotionFamily::Wave(Side::Left),
                MotionFamily::Turn(Side::Left) => MotionFamily::Turn(Side::Right),
                MotionFamily::Turn(Side::Right) => MotionFamily::Turn(Side::Left),
                sym => sym,
            };
            assert_eq!(
                count_class(&doubled, family),
                count_class(&corpus, family) + count_class(&corpus, mirrored_family),
                "family balance after mirroring: {family}"
            );
        }
    }

    #[test]
    fn static_pairs_zero_translation_and_adapt_captions() {
        let corpus = generate_dataset(&small_spec()).unwrap();
        let pairs = extract_static_pairs(&corpus, 2, 11);
        assert_eq!(pairs.len(), 2 * corpus.len());
        for (caption, pose) in &pairs {
            assert_eq!(pose.translation(), Vector3::zeros());
            assert!(caption.as_ref().unwrap().starts_with("a still frame of "));
        }
        assert!(extract_static_pairs(&corpus, 0, 11).is_empty());
        let again = extract_static_pairs(&corpus, 2, 11);
        assert_eq!(pairs, again, "static extraction must be seed-deterministic");
    }

    #[test]
    fn unconditional_marking_is_exact_and_deterministic() {
        let spec = DatasetSpec::balanced(9, 13, 8, 20.0);
        let corpus = generate_dataset(&spec).unwrap();
        assert_eq!(corpus.len(), 104);
        let half = mark_unconditional(&corpus[..100], 0.5, 3);
        assert_eq!(half.iter().filter(|m| m.caption.is_none()).count(), 50);
        let again = mark_unconditional(&corpus[..100], 0.5, 3);
        assert_eq!(half, again);
        let none = mark_unconditional(&corpus, 0.0, 3);
        assert_eq!(none, corpus);
        let all = mark_unconditional(&corpus, 1.0, 3);
        assert!(all.iter().all(|m| m.caption.is_none()));
    }

    #[test]
    fn stats_standardize_round_trip() {
        let corpus = generate_dataset(&small_spec()).unwrap();
        let stats = compute_stats(&corpus).unwrap();
        assert!(stats.std.iter().all(|s| *s >= STD_FLOOR));
        // Re-standardized corpus should be near zero mean, unit std for
        // channels with real variance.
        let mut all = Vec::new();
        for m in &corpus {
            all.push(standardize(&motion_to_array(m), &stats).unwrap());
        }
        for c in 0..POSE_DIM {
            let vals: Vec<f64> = all.iter().flat_map(|a| a.row(c).to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
            if stats.std[c] > STD_FLOOR {
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                assert!((var.sqrt() - 1.0).abs() < 1e-6, "channel {c} std {}", var.sqrt());
            } else {
                assert!(vals.iter().all(|v| v.abs() < 1e-12), "constant channel {c}");
            }
        }
        let x = motion_to_array(&corpus[0]);
        let round = destandardize(&standardize(&x, &stats).unwrap(), &stats).unwrap();
        for (a, b) in x.iter().zip(round.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(matches!(compute_stats(&[]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn motion_file_round_trip_and_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_dataset(&small_spec()).unwrap();
        let path = dir.path().join("m0.json");
        save_motion(&corpus[0], &path).unwrap();
        let back = load_motion(&path).unwrap();
        assert_eq!(back, corpus[0]);

        let bad = dir.path().join("bad.json");
        fs::write(
            &bad,
            format!(
                "{{\"fps\": 20.0, \"caption\": null, \"frames\": [{}]}}",
                serde_json::to_string(&vec![0.0; 134]).unwrap()
            ),
        )
        .unwrap();
        match load_motion(&bad) {
            Err(Error::ParseError(msg)) => {
                assert!(msg.contains("frame 0"), "diagnostic should name the frame: {msg}")
            }
            other => panic!("expected ParseError, got {other:?}"),
        }

        let nofps = dir.path().join("nofps.json");
        fs::write(&nofps, "{\"caption\": null, \"frames\": []}").unwrap();
        match load_motion(&nofps) {
            Err(Error::ParseError(msg)) => assert!(msg.contains("fps"), "{msg}"),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        let entries = vec![
            ("motions/m0.json".to_string(), "train".to_string()),
            ("motions/m1.json".to_string(), "held_out".to_string()),
        ];
        write_manifest(&entries, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), entries);
        fs::write(&path, "no-tab-here\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::ParseError(_))));
    }

    #[test]
    fn family_names_round_trip() {
        for family in ALL_FAMILIES {
            let s = family.to_string();
            assert_eq!(s.parse::<MotionFamily>().unwrap(), family);
        }
        assert!("cartwheel".parse::<MotionFamily>().is_err());
    }
}
