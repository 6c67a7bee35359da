//! Rotation representations and the 135-dim pose vector.
//!
//! A pose is 22 rotations (root orientation + 21 body joints) in the 6D
//! continuous representation plus a 3D root translation, flattened as
//! `[root (6)] ++ [joints (21 * 6)] ++ [translation (3)]` = 135 scalars.
//! Conversions to and from rotation matrices, axis-angle, and quaternions
//! all live here; angles are radians everywhere.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Scalars per pose: 22 rotations in 6D form + 3 translation.
pub const POSE_DIM: usize = 135;
/// Rotations per pose: root orientation + 21 body joints.
pub const NUM_ROTATIONS: usize = 22;
/// Body joints excluding the root.
pub const NUM_BODY_JOINTS: usize = 21;
/// Orthonormality/determinant tolerance for a valid rotation matrix.
pub const ROTATION_TOL: f64 = 1e-6;

/// First two columns of a rotation matrix, before orthogonalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl Rot6D {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>) -> Self {
        Self { a, b }
    }

    /// Identity rotation: canonical basis columns.
    pub fn identity() -> Self {
        Self {
            a: Vector3::new(1.0, 0.0, 0.0),
            b: Vector3::new(0.0, 1.0, 0.0),
        }
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        if s.len() != 6 {
            return Err(Error::LayoutError(format!(
                "Rot6D needs 6 scalars, got {}",
                s.len()
            )));
        }
        Ok(Self {
            a: Vector3::new(s[0], s[1], s[2]),
            b: Vector3::new(s[3], s[4], s[5]),
        })
    }

    pub fn to_array(self) -> [f64; 6] {
        [
            self.a.x, self.a.y, self.a.z, self.b.x, self.b.y, self.b.z,
        ]
    }
}

/// A validated 3×3 rotation matrix: orthonormal with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Validates orthonormality (`mᵀm = I` within 1e-6) and `det = +1` within 1e-6.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let gram = m.transpose() * m;
        let ortho_err = (gram - Matrix3::identity()).norm();
        if !ortho_err.is_finite() || ortho_err > ROTATION_TOL {
            return Err(Error::DegenerateRotation(format!(
                "matrix is not orthonormal (|m'm - I| = {ortho_err:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::DegenerateRotation(format!(
                "matrix determinant {det:.6} is not +1"
            )));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix3<f64> {
        self.0
    }

    /// Composition `self * other` (apply `other` first).
    pub fn compose(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * other.0)
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

/// Orthogonalizes a 6D rotation into a matrix (Gram–Schmidt).
///
/// col1 = a/|a|, col2 = normalized rejection of b from col1, col3 = col1 × col2.
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<RotationMatrix> {
    let na = r.a.norm();
    if !na.is_finite() || na < 1e-8 {
        return Err(Error::DegenerateRotation(format!(
            "first 6D column has norm {na:.3e}"
        )));
    }
    let c1 = r.a / na;
    let rej = r.b - c1 * c1.dot(&r.b);
    let nr = rej.norm();
    if !nr.is_finite() || nr < 1e-8 {
        return Err(Error::DegenerateRotation(format!(
            "second 6D column is parallel to the first (rejection norm {nr:.3e})"
        )));
    }
    let c2 = rej / nr;
    let c3 = c1.cross(&c2);
    Ok(RotationMatrix(Matrix3::from_columns(&[c1, c2, c3])))
}

/// First two columns of the matrix.
pub fn matrix_to_rot6d(m: &RotationMatrix) -> Rot6D {
    Rot6D {
        a: m.0.column(0).into(),
        b: m.0.column(1).into(),
    }
}

/// Rodrigues formula. The zero vector maps to the identity.
pub fn axis_angle_to_matrix(axis_angle: &Vector3<f64>) -> RotationMatrix {
    let theta2 = axis_angle.norm_squared();
    let theta = theta2.sqrt();
    // Series coefficients for sin(t)/t and (1-cos(t))/t^2, stable for small t.
    let (a, b) = if theta < 1e-4 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let w = skew(axis_angle);
    RotationMatrix(Matrix3::identity() + w * a + w * w * b)
}

/// Inverse of Rodrigues; the returned vector has norm (angle) in [0, π].
///
/// The identity maps to the zero vector. Near 0 the skew part is used
/// directly; near π the axis is recovered from the symmetric part, where the
/// skew part vanishes.
pub fn matrix_to_axis_angle(m: &RotationMatrix) -> Vector3<f64> {
    let m = &m.0;
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let skew_part = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    if angle < 1e-7 {
        // R = I + [w]x + O(|w|^2), so the skew part is 2w to first order.
        return skew_part / 2.0;
    }
    if angle > std::f64::consts::PI - 1e-4 {
        // sin(angle) ~ 0: the symmetric part (R + R')/2 = aa'(1-cos) + I cos
        // yields the axis outer product without the vanishing skew term.
        let sym = (m + m.transpose()) / 2.0;
        let outer = (sym - Matrix3::identity() * cos) / (1.0 - cos);
        let k = (0..3)
            .max_by(|&i, &j| outer[(i, i)].partial_cmp(&outer[(j, j)]).unwrap())
            .unwrap();
        let ak = outer[(k, k)].max(0.0).sqrt();
        let mut axis = Vector3::new(outer[(0, k)] / ak, outer[(1, k)] / ak, outer[(2, k)] / ak);
        axis[k] = ak;
        axis.normalize_mut();
        // skew = 2 sin(angle) * axis; its largest component fixes the sign
        // when the angle is strictly below π (at π both signs are valid).
        if skew_part[k] < -1e-12 {
            axis = -axis;
        }
        return axis * angle;
    }
    skew_part / (2.0 * angle.sin()) * angle
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// One body configuration: 22 rotations in 6D form + root translation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseVector {
    pub values: [f64; POSE_DIM],
}

impl PoseVector {
    pub fn zeros() -> Self {
        Self {
            values: [0.0; POSE_DIM],
        }
    }

    /// All rotations identity, zero translation.
    pub fn rest() -> Self {
        pack_pose(
            &Rot6D::identity(),
            &[Rot6D::identity(); NUM_BODY_JOINTS],
            &Vector3::zeros(),
        )
        .expect("rest pose layout is fixed")
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        if s.len() != POSE_DIM {
            return Err(Error::LayoutError(format!(
                "pose vector needs {POSE_DIM} scalars, got {}",
                s.len()
            )));
        }
        let mut values = [0.0; POSE_DIM];
        values.copy_from_slice(s);
        Ok(Self { values })
    }

    /// 6D block of rotation `i` (0 = root, 1..=21 = body joints).
    pub fn rotation(&self, i: usize) -> Result<Rot6D> {
        if i >= NUM_ROTATIONS {
            return Err(Error::LayoutError(format!(
                "rotation index {i} out of range 0..{NUM_ROTATIONS}"
            )));
        }
        Rot6D::from_slice(&self.values[6 * i..6 * i + 6])
    }

    pub fn set_rotation(&mut self, i: usize, r: &Rot6D) -> Result<()> {
        if i >= NUM_ROTATIONS {
            return Err(Error::LayoutError(format!(
                "rotation index {i} out of range 0..{NUM_ROTATIONS}"
            )));
        }
        self.values[6 * i..6 * i + 6].copy_from_slice(&r.to_array());
        Ok(())
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.values[132], self.values[133], self.values[134])
    }

    pub fn set_translation(&mut self, t: &Vector3<f64>) {
        self.values[132] = t.x;
        self.values[133] = t.y;
        self.values[134] = t.z;
    }
}

/// Assembles a pose vector from root orientation, 21 joint rotations, and translation.
pub fn pack_pose(
    root: &Rot6D,
    joints: &[Rot6D],
    translation: &Vector3<f64>,
) -> Result<PoseVector> {
    if joints.len() != NUM_BODY_JOINTS {
        return Err(Error::LayoutError(format!(
            "expected {NUM_BODY_JOINTS} joint rotations, got {}",
            joints.len()
        )));
    }
    let mut pose = PoseVector::zeros();
    pose.values[0..6].copy_from_slice(&root.to_array());
    for (j, r) in joints.iter().enumerate() {
        pose.values[6 * (j + 1)..6 * (j + 2)].copy_from_slice(&r.to_array());
    }
    pose.set_translation(translation);
    Ok(pose)
}

/// Splits a pose vector back into (root, 21 joints, translation).
pub fn unpack_pose(p: &PoseVector) -> (Rot6D, Vec<Rot6D>, Vector3<f64>) {
    let root = Rot6D::from_slice(&p.values[0..6]).expect("fixed layout");
    let joints = (1..NUM_ROTATIONS)
        .map(|i| Rot6D::from_slice(&p.values[6 * i..6 * i + 6]).expect("fixed layout"))
        .collect();
    (root, joints, p.translation())
}

fn matrix_to_quat(m: &RotationMatrix) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m.0))
}

fn quat_to_matrix(q: &UnitQuaternion<f64>) -> RotationMatrix {
    RotationMatrix(q.to_rotation_matrix().into_inner())
}

/// Geodesic interpolation between two unit quaternions, shortest arc.
fn slerp_quat(q0: &UnitQuaternion<f64>, q1: &UnitQuaternion<f64>, u: f64) -> UnitQuaternion<f64> {
    let mut c1 = q1.coords;
    let mut dot = q0.coords.dot(&c1);
    if dot < 0.0 {
        c1 = -c1;
        dot = -dot;
    }
    if dot > 1.0 - 1e-12 {
        // Nearly identical: linear blend renormalized.
        let blend = q0.coords * (1.0 - u) + c1 * u;
        return Unit::new_normalize(Quaternion::from_vector(blend));
    }
    let theta = dot.clamp(-1.0, 1.0).acos();
    let sin = theta.sin();
    let w0 = ((1.0 - u) * theta).sin() / sin;
    let w1 = (u * theta).sin() / sin;
    Unit::new_normalize(Quaternion::from_vector(q0.coords * w0 + c1 * w1))
}

/// Interpolates two poses: rotations on the geodesic, translation linearly.
///
/// `u = 0` and `u = 1` return the endpoints bit-exactly.
pub fn slerp_pose(p0: &PoseVector, p1: &PoseVector, u: f64) -> Result<PoseVector> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::BadArgument(format!(
            "interpolation parameter {u} outside [0, 1]"
        )));
    }
    if u == 0.0 {
        return Ok(p0.clone());
    }
    if u == 1.0 {
        return Ok(p1.clone());
    }
    let mut out = PoseVector::zeros();
    for i in 0..NUM_ROTATIONS {
        let q0 = matrix_to_quat(&rot6d_to_matrix(&p0.rotation(i)?)?);
        let q1 = matrix_to_quat(&rot6d_to_matrix(&p1.rotation(i)?)?);
        let q = slerp_quat(&q0, &q1, u);
        out.set_rotation(i, &matrix_to_rot6d(&quat_to_matrix(&q)))?;
    }
    out.set_translation(&(p0.translation() * (1.0 - u) + p1.translation() * u));
    Ok(out)
}

/// Uniform random rotation (normalized 4D Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    let q = Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    quat_to_matrix(&Unit::new_normalize(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn frob(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).norm()
    }

    #[test]
    fn canonical_basis_is_identity() {
        let r = Rot6D::from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let m = rot6d_to_matrix(&r).unwrap();
        assert_eq!(*m.matrix(), Matrix3::identity());
    }

    #[test]
    fn gram_schmidt_is_scale_invariant() {
        let r = Rot6D::from_slice(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap();
        let m = rot6d_to_matrix(&r).unwrap();
        assert!(frob(m.matrix(), &Matrix3::identity()) < 1e-12);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let zero = Rot6D::from_slice(&[0.0; 6]).unwrap();
        assert!(matches!(
            rot6d_to_matrix(&zero),
            Err(Error::DegenerateRotation(_))
        ));
        let parallel = Rot6D::from_slice(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            rot6d_to_matrix(&parallel),
            Err(Error::DegenerateRotation(_))
        ));
    }

    #[test]
    fn identity_to_rot6d() {
        let r = matrix_to_rot6d(&RotationMatrix::identity());
        assert_eq!(r.to_array(), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn yaw_matrix_to_rot6d_reads_columns() {
        let m = axis_angle_to_matrix(&Vector3::new(0.0, PI / 2.0, 0.0));
        let r = matrix_to_rot6d(&m);
        assert_abs_diff_eq!(r.a.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.a.z, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.b.y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rot6d_round_trip_over_random_rotations() {
        let mut rng = stream(1001, "rot6d-roundtrip");
        for _ in 0..1000 {
            let m = random_rotation(&mut rng);
            let back = rot6d_to_matrix(&matrix_to_rot6d(&m)).unwrap();
            assert!(frob(m.matrix(), back.matrix()) < 1e-6);
        }
    }

    #[test]
    fn zero_axis_angle_is_identity() {
        let m = axis_angle_to_matrix(&Vector3::zeros());
        assert_eq!(*m.matrix(), Matrix3::identity());
        assert_eq!(matrix_to_axis_angle(&m), Vector3::zeros());
    }

    #[test]
    fn half_turn_about_x() {
        let m = axis_angle_to_matrix(&Vector3::new(PI, 0.0, 0.0));
        let expect = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        assert!(frob(m.matrix(), &expect) < 1e-12);
    }

    #[test]
    fn axis_angle_round_trip_including_near_pi() {
        let mut rng = stream(1002, "aa-roundtrip");
        for i in 0..1000 {
            // Sweep angles into both robustness regimes.
            let angle = match i % 4 {
                0 => rng.random_range(1e-9..1e-5),
                1 => rng.random_range(1e-5..3.0),
                2 => rng.random_range(3.0..PI - 1e-7),
                _ => PI - rng.random_range(1e-12..1e-5),
            };
            let mut axis = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            axis.normalize_mut();
            let aa = axis * angle;
            let m = axis_angle_to_matrix(&aa);
            let back = matrix_to_axis_angle(&m);
            assert!(
                (back - aa).norm() < 1e-6,
                "angle {angle}: |back - aa| = {:.3e}",
                (back - aa).norm()
            );
        }
    }

    #[test]
    fn recovered_angle_is_in_zero_pi() {
        let mut rng = stream(1003, "aa-range");
        for _ in 0..200 {
            let m = random_rotation(&mut rng);
            let aa = matrix_to_axis_angle(&m);
            let angle = aa.norm();
            assert!((0.0..=PI + 1e-12).contains(&angle));
            let back = axis_angle_to_matrix(&aa);
            assert!(frob(m.matrix(), back.matrix()) < 1e-6);
        }
    }

    #[test]
    fn pack_layout_matches_spec_pattern() {
        let pose = PoseVector::rest();
        for i in 0..NUM_ROTATIONS {
            assert_eq!(
                &pose.values[6 * i..6 * i + 6],
                &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
            );
        }
        assert_eq!(&pose.values[132..135], &[0.0, 0.0, 0.0]);
        assert_eq!(NUM_ROTATIONS * 6 + 3, POSE_DIM);
    }

    #[test]
    fn pack_unpack_are_mutual_inverses() {
        let mut rng = stream(1004, "pack");
        let root = matrix_to_rot6d(&random_rotation(&mut rng));
        let joints: Vec<Rot6D> = (0..NUM_BODY_JOINTS)
            .map(|_| matrix_to_rot6d(&random_rotation(&mut rng)))
            .collect();
        let t = Vector3::new(0.1, -0.4, 2.0);
        let pose = pack_pose(&root, &joints, &t).unwrap();
        let (root2, joints2, t2) = unpack_pose(&pose);
        assert_eq!(root.to_array(), root2.to_array());
        for (a, b) in joints.iter().zip(&joints2) {
            assert_eq!(a.to_array(), b.to_array());
        }
        assert_eq!(t, t2);
        let repacked = pack_pose(&root2, &joints2, &t2).unwrap();
        assert_eq!(pose.values, repacked.values);
    }

    #[test]
    fn pack_rejects_wrong_counts() {
        let err = pack_pose(&Rot6D::identity(), &[Rot6D::identity(); 20], &Vector3::zeros());
        assert!(matches!(err, Err(Error::LayoutError(_))));
    }

    #[test]
    fn slerp_endpoints_are_exact() {
        let mut rng = stream(1005, "slerp-ends");
        let mut p0 = PoseVector::rest();
        let mut p1 = PoseVector::rest();
        for i in 0..NUM_ROTATIONS {
            p0.set_rotation(i, &matrix_to_rot6d(&random_rotation(&mut rng)))
                .unwrap();
            p1.set_rotation(i, &matrix_to_rot6d(&random_rotation(&mut rng)))
                .unwrap();
        }
        p0.set_translation(&Vector3::new(1.0, 2.0, 3.0));
        p1.set_translation(&Vector3::new(-1.0, 0.5, 0.0));
        assert_eq!(slerp_pose(&p0, &p1, 0.0).unwrap().values, p0.values);
        assert_eq!(slerp_pose(&p0, &p1, 1.0).unwrap().values, p1.values);
    }

    #[test]
    fn slerp_halfway_between_identity_and_quarter_yaw() {
        let mut p0 = PoseVector::rest();
        let mut p1 = PoseVector::rest();
        let yaw90 = axis_angle_to_matrix(&Vector3::new(0.0, PI / 2.0, 0.0));
        p0.set_rotation(0, &Rot6D::identity()).unwrap();
        p1.set_rotation(0, &matrix_to_rot6d(&yaw90)).unwrap();
        let mid = slerp_pose(&p0, &p1, 0.5).unwrap();
        let got = rot6d_to_matrix(&mid.rotation(0).unwrap()).unwrap();
        let yaw45 = axis_angle_to_matrix(&Vector3::new(0.0, PI / 4.0, 0.0));
        assert!(frob(got.matrix(), yaw45.matrix()) < 1e-6);
    }

    proptest! {
        #[test]
        fn rot6d_output_is_always_valid(seed in 0u64..1000) {
            let mut rng = stream(seed, "prop-rot6d");
            let r = Rot6D {
                a: Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
                b: Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            };
            if let Ok(m) = rot6d_to_matrix(&r) {
                // Constructor re-validation: orthonormal, det +1.
                prop_assert!(RotationMatrix::new(*m.matrix()).is_ok());
            }
        }

        #[test]
        fn scale_invariance_property(seed in 0u64..200, lam in 0.1f64..10.0, mu in 0.1f64..10.0) {
            let mut rng = stream(seed, "prop-scale");
            let m = random_rotation(&mut rng);
            let r = matrix_to_rot6d(&m);
            let scaled = Rot6D { a: r.a * lam, b: r.b * mu };
            let m1 = rot6d_to_matrix(&r).unwrap();
            let m2 = rot6d_to_matrix(&scaled).unwrap();
            prop_assert!(frob(m1.matrix(), m2.matrix()) < 1e-6);
        }

        #[test]
        fn slerp_outputs_remain_valid_rotations(seed in 0u64..100, u in 0.0f64..1.0) {
            let mut rng = stream(seed, "prop-slerp");
            let mut p0 = PoseVector::rest();
            let mut p1 = PoseVector::rest();
            for i in 0..NUM_ROTATIONS {
                p0.set_rotation(i, &matrix_to_rot6d(&random_rotation(&mut rng))).unwrap();
                p1.set_rotation(i, &matrix_to_rot6d(&random_rotation(&mut rng))).unwrap();
            }
            let mid = slerp_pose(&p0, &p1, u).unwrap();
            for i in 0..NUM_ROTATIONS {
                let m = rot6d_to_matrix(&mid.rotation(i).unwrap()).unwrap();
                prop_assert!(RotationMatrix::new(*m.matrix()).is_ok());
            }
        }
    }
}
