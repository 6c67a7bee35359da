//! Motion sequences: ordered pose frames at a fixed frame rate.

use crate::error::{Error, Result};
use crate::rotation::{slerp_pose, PoseVector};

/// N pose frames at `fps` frames/second plus an optional caption.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frames: Vec<PoseVector>,
    pub fps: f64,
    pub caption: Option<String>,
}

impl MotionSequence {
    pub fn new(frames: Vec<PoseVector>, fps: f64, caption: Option<String>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::TooShort("motion needs at least 1 frame".into()));
        }
        if !(fps > 0.0) {
            return Err(Error::BadArgument(format!("fps {fps} must be positive")));
        }
        Ok(Self {
            frames,
            fps,
            caption,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Clip duration in seconds (N-1 inter-frame intervals).
    pub fn duration(&self) -> f64 {
        (self.frames.len().saturating_sub(1)) as f64 / self.fps
    }
}

/// Resamples to `target_frames` by geodesic interpolation between bracketing
/// frames, preserving the clip duration and both endpoints exactly.
pub fn resample_motion(motion: &MotionSequence, target_frames: usize) -> Result<MotionSequence> {
    let n = motion.frames.len();
    if n < 2 {
        return Err(Error::TooShort(format!(
            "resampling needs at least 2 source frames, got {n}"
        )));
    }
    if target_frames < 2 {
        return Err(Error::TooShort(format!(
            "resampling needs at least 2 target frames, got {target_frames}"
        )));
    }
    let mut frames = Vec::with_capacity(target_frames);
    let scale = (n - 1) as f64 / (target_frames - 1) as f64;
    for i in 0..target_frames {
        if i == target_frames - 1 {
            frames.push(motion.frames[n - 1].clone());
            continue;
        }
        let s = i as f64 * scale;
        let lo = (s.floor() as usize).min(n - 2);
        let u = s - lo as f64;
        frames.push(slerp_pose(&motion.frames[lo], &motion.frames[lo + 1], u)?);
    }
    // Duration is preserved, so the frame rate scales with the frame count.
    let fps = motion.fps * (target_frames - 1) as f64 / (n - 1) as f64;
    Ok(MotionSequence {
        frames,
        fps,
        caption: motion.caption.clone(),
    })
}

/// Pads (repeating the last frame) or crops to exactly `n` frames.
pub fn fit_length(motion: &MotionSequence, n: usize) -> Result<MotionSequence> {
    if n == 0 {
        return Err(Error::BadArgument("target length must be >= 1".into()));
    }
    let mut frames: Vec<PoseVector> = motion.frames.iter().take(n).cloned().collect();
    let last = motion.frames.last().expect("non-empty by invariant").clone();
    while frames.len() < n {
        frames.push(last.clone());
    }
    Ok(MotionSequence {
        frames,
        fps: motion.fps,
        caption: motion.caption.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::rotation::{matrix_to_rot6d, random_rotation, NUM_ROTATIONS};
    use nalgebra::Vector3;

    fn random_motion(seed: u64, n: usize) -> MotionSequence {
        let mut rng = stream(seed, "motion-test");
        let frames = (0..n)
            .map(|i| {
                let mut p = PoseVector::rest();
                for r in 0..NUM_ROTATIONS {
                    p.set_rotation(r, &matrix_to_rot6d(&random_rotation(&mut rng)))
                        .unwrap();
                }
                p.set_translation(&Vector3::new(i as f64 * 0.1, 0.9, 0.0));
                p
            })
            .collect();
        MotionSequence::new(frames, 20.0, Some("test".into())).unwrap()
    }

    #[test]
    fn same_count_resample_is_identity() {
        let m = random_motion(42, 8);
        let r = resample_motion(&m, 8).unwrap();
        for (a, b) in m.frames.iter().zip(&r.frames) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert_eq!(r.fps, m.fps);
    }

    #[test]
    fn two_to_three_midpoint_is_halfway_slerp() {
        let m = random_motion(7, 2);
        let r = resample_motion(&m, 3).unwrap();
        let mid = slerp_pose(&m.frames[0], &m.frames[1], 0.5).unwrap();
        for (x, y) in r.frames[1].values.iter().zip(&mid.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_preserves_endpoints_and_duration() {
        let m = random_motion(3, 40);
        let r = resample_motion(&m, 196).unwrap();
        assert_eq!(r.frames.len(), 196);
        assert_eq!(r.frames[0].values, m.frames[0].values);
        assert_eq!(r.frames[195].values, m.frames[39].values);
        assert!((r.duration() - m.duration()).abs() < 1e-9);
    }

    #[test]
    fn too_short_inputs_error() {
        let m = random_motion(1, 2);
        let one = MotionSequence {
            frames: vec![m.frames[0].clone()],
            fps: 20.0,
            caption: None,
        };
        assert!(matches!(resample_motion(&one, 5), Err(Error::TooShort(_))));
        assert!(matches!(resample_motion(&m, 1), Err(Error::TooShort(_))));
    }

    #[test]
    fn fit_length_pads_and_crops() {
        let m = random_motion(9, 5);
        let padded = fit_length(&m, 8).unwrap();
        assert_eq!(padded.frames.len(), 8);
        assert_eq!(padded.frames[7].values, m.frames[4].values);
        let cropped = fit_length(&m, 3).unwrap();
        assert_eq!(cropped.frames.len(), 3);
        assert_eq!(cropped.frames[2].values, m.frames[2].values);
    }
}
