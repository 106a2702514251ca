//! Rotation/pose algebra, camera projection and calibration containers.
//!
//! Conventions used throughout the crate:
//! - Quaternions are Hamilton, scalar-first; a rotation acts as `R(q) * v`.
//! - The world frame is z-up with gravity `(0, 0, -g)`.
//! - Image coordinates are normalized internally; pixels appear only at I/O.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    /// Point is on or behind the camera plane.
    #[error("non-positive depth {0} in camera projection")]
    NonPositiveDepth(f64),
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
}

/// Threshold below which the small-angle Taylor expansion of exp/log is used.
const SMALL_ANGLE: f64 = 1e-6;

/// Exponential map from a rotation vector to a unit quaternion.
///
/// Uses a second-order Taylor expansion near zero so the map is smooth and
/// exact for the zero rotation.
pub fn so3_exp(phi: Vector3<f64>) -> UnitQuaternion<f64> {
    let angle = phi.norm();
    let half = 0.5 * angle;
    let (w, k) = if angle < SMALL_ANGLE {
        // sin(x)/x ~ 1 - x^2/6, cos(x) ~ 1 - x^2/2 for the half angle
        (1.0 - 0.5 * half * half, 0.5 * (1.0 - half * half / 6.0))
    } else {
        (half.cos(), half.sin() / angle)
    };
    let q = Quaternion::new(w, k * phi.x, k * phi.y, k * phi.z);
    UnitQuaternion::new_normalize(q)
}

/// Logarithm map from a unit quaternion to a rotation vector, `||phi|| < pi`.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    // Hemisphere-normalize so the returned angle is the minimal one.
    let qn = if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    };
    let vec = Vector3::new(qn.i, qn.j, qn.k);
    let sin_half = vec.norm();
    if sin_half < SMALL_ANGLE {
        vec * 2.0
    } else {
        let half = sin_half.atan2(qn.w);
        vec * (2.0 * half / sin_half)
    }
}

/// Skew-symmetric (cross-product) matrix of a 3-vector.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3) at rotation vector `phi`.
pub fn so3_right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let angle = phi.norm();
    let px = skew(phi);
    if angle < SMALL_ANGLE {
        Matrix3::identity() - 0.5 * px + px * px / 6.0
    } else {
        let a2 = angle * angle;
        Matrix3::identity() - px * ((1.0 - angle.cos()) / a2)
            + px * px * ((angle - angle.sin()) / (a2 * angle))
    }
}

/// Hemisphere-normalize a quaternion so its scalar part is non-negative.
pub fn hemispherize(q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

/// Angular distance between two rotations in radians.
pub fn rotation_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    so3_log(&(a.inverse() * b)).norm()
}

/// Left quaternion product matrix: `L(q) * p` equals `q ⊗ p` (wxyz order).
pub fn quat_left(q: &UnitQuaternion<f64>) -> nalgebra::Matrix4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    nalgebra::Matrix4::new(
        w, -x, -y, -z, //
        x, w, -z, y, //
        y, z, w, -x, //
        z, -y, x, w,
    )
}

/// Right quaternion product matrix: `R(q) * p` equals `p ⊗ q` (wxyz order).
pub fn quat_right(q: &UnitQuaternion<f64>) -> nalgebra::Matrix4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    nalgebra::Matrix4::new(
        w, -x, -y, -z, //
        x, w, z, -y, //
        y, -z, w, x, //
        z, y, -x, w,
    )
}

/// Rigid transform: rotation followed by translation, `x' = R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::new(rotation, translation)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rot_inv = self.rotation.inverse();
        Pose::new(rot_inv, -(rot_inv * self.translation))
    }

    pub fn transform(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn to_pixels(&self, norm: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * norm.x + self.cx, self.fy * norm.y + self.cy)
    }

    pub fn to_normalized(&self, px: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }
}

/// Pinhole projection to normalized image coordinates `(x/z, y/z)`.
pub fn project(point_cam: &Vector3<f64>) -> Result<Vector2<f64>, GeomError> {
    if point_cam.z <= 1e-6 {
        return Err(GeomError::NonPositiveDepth(point_cam.z));
    }
    Ok(Vector2::new(
        point_cam.x / point_cam.z,
        point_cam.y / point_cam.z,
    ))
}

/// Back-project a normalized observation at a given depth.
pub fn backproject(obs: &Vector2<f64>, depth: f64) -> Vector3<f64> {
    Vector3::new(obs.x * depth, obs.y * depth, depth)
}

/// IMU white-noise levels, per-sample standard deviations.
#[derive(Debug, Clone, Copy)]
pub struct ImuNoise {
    pub sigma_acc: f64,
    pub sigma_gyro: f64,
    pub sigma_acc_bias_walk: f64,
    pub sigma_gyro_bias_walk: f64,
}

/// Wheel odometer noise levels, per-sample standard deviations.
#[derive(Debug, Clone, Copy)]
pub struct WheelNoise {
    pub sigma_velocity: f64,
    pub sigma_yaw_rate: f64,
}

/// Sensor rig description shared by the simulator and the estimator.
#[derive(Debug, Clone)]
pub struct Calibration {
    /// Camera pose in the body frame: `x_b = R x_c + p`.
    pub cam_to_body: Pose,
    /// Odometer frame pose in the body frame.
    pub wheel_to_body: Pose,
    pub intrinsics: Intrinsics,
    pub gravity_magnitude: f64,
    pub imu_noise: ImuNoise,
    pub wheel_noise: WheelNoise,
    /// Valid depth-sensor range in meters.
    pub depth_range: (f64, f64),
}

impl Calibration {
    pub fn validate(&self) -> Result<(), GeomError> {
        let n = &self.imu_noise;
        let w = &self.wheel_noise;
        for (name, v) in [
            ("sigma_acc", n.sigma_acc),
            ("sigma_gyro", n.sigma_gyro),
            ("sigma_acc_bias_walk", n.sigma_acc_bias_walk),
            ("sigma_gyro_bias_walk", n.sigma_gyro_bias_walk),
            ("sigma_velocity", w.sigma_velocity),
            ("sigma_yaw_rate", w.sigma_yaw_rate),
        ] {
            if v <= 0.0 {
                return Err(GeomError::InvalidCalibration(format!(
                    "noise density {name} must be positive, got {v}"
                )));
            }
        }
        if self.depth_range.0 >= self.depth_range.1 {
            return Err(GeomError::InvalidCalibration(format!(
                "depth range [{}, {}] is empty",
                self.depth_range.0, self.depth_range.1
            )));
        }
        if self.gravity_magnitude <= 0.0 {
            return Err(GeomError::InvalidCalibration(
                "gravity magnitude must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Gravity vector in the world frame.
    pub fn gravity_world(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.gravity_magnitude)
    }
}

/// Rigid 3D-3D alignment (Kabsch): rotation and translation mapping `src`
/// onto `dst` in the least-squares sense, no scale.
pub fn rigid_align_3d(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Pose> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let mu_s: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst.iter()) {
        cov += (d - mu_d) * (s - mu_s).transpose();
    }
    let svd = cov.svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let mut s = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * vt;
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = mu_d - r * mu_s;
    Some(Pose::new(rotation, translation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Rodrigues-formula rotation matrix, independent of the quaternion path.
    fn rodrigues(phi: &Vector3<f64>) -> Matrix3<f64> {
        let angle = phi.norm();
        if angle < 1e-14 {
            return Matrix3::identity();
        }
        let k = skew(&(phi / angle));
        Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
    }

    fn random_unit_quat(rng: &mut StdRng) -> UnitQuaternion<f64> {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        so3_exp(axis)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let q = so3_exp(Vector3::zeros());
        assert_eq!(q.w, 1.0);
        assert_eq!(so3_log(&q), Vector3::zeros());
    }

    #[test]
    fn exp_axis_aligned_closed_form() {
        let q = so3_exp(Vector3::new(0.0, 0.0, FRAC_PI_2));
        assert_relative_eq!(q.w, (PI / 4.0).cos(), epsilon = 1e-15);
        assert_relative_eq!(q.k, (PI / 4.0).sin(), epsilon = 1e-15);
        assert_relative_eq!(q.i, 0.0, epsilon = 1e-15);
        assert_relative_eq!(q.j, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn exp_matches_rodrigues_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let dir = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let phi = dir * 0.3;
            let from_quat = so3_exp(phi).to_rotation_matrix().into_inner();
            let from_rodrigues = rodrigues(&phi);
            assert_relative_eq!(from_quat, from_rodrigues, epsilon = 1e-12);
        }
    }

    #[test]
    fn small_angle_expansion_is_continuous() {
        // Values straddling the small-angle switch agree to high precision.
        for mag in [1e-8, 9e-7, 1.1e-6, 1e-5] {
            let phi = Vector3::new(mag, 0.0, 0.0);
            let q = so3_exp(phi);
            assert_relative_eq!(so3_log(&q), phi, epsilon = 1e-16);
        }
    }

    #[test]
    fn project_examples() {
        assert_eq!(
            project(&Vector3::new(0.0, 0.0, 1.0)).unwrap(),
            Vector2::new(0.0, 0.0)
        );
        assert_eq!(
            project(&Vector3::new(1.0, 2.0, 2.0)).unwrap(),
            Vector2::new(0.5, 1.0)
        );
        assert!(matches!(
            project(&Vector3::new(1.0, 1.0, 0.0)),
            Err(GeomError::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = StdRng::seed_from_u64(3);
        let p = Pose::new(
            random_unit_quat(&mut rng),
            Vector3::new(1.0, -2.0, 0.5),
        );
        let id = Pose::identity();
        let left = id.compose(&p);
        assert_relative_eq!(left.translation, p.translation, epsilon = 1e-15);
        assert_relative_eq!(
            rotation_distance(&left.rotation, &p.rotation),
            0.0,
            epsilon = 1e-15
        );

        let round = p.compose(&p.inverse());
        assert_relative_eq!(round.translation.norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(
            rotation_distance(&round.rotation, &UnitQuaternion::identity()),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn long_compose_chain_stays_normalized() {
        let mut rng = StdRng::seed_from_u64(11);
        let mut acc = Pose::identity();
        for _ in 0..100 {
            let step = Pose::new(
                random_unit_quat(&mut rng),
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
            );
            acc = acc.compose(&step);
        }
        assert_relative_eq!(acc.rotation.into_inner().norm(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rigid_align_recovers_transform() {
        let mut rng = StdRng::seed_from_u64(21);
        let truth = Pose::new(so3_exp(Vector3::new(0.2, -0.1, 0.7)), Vector3::new(1.0, 2.0, -3.0));
        let src: Vec<Vector3<f64>> = (0..10)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| truth.transform(p)).collect();
        let est = rigid_align_3d(&src, &dst).unwrap();
        assert_relative_eq!(est.translation, truth.translation, epsilon = 1e-9);
        assert!(rotation_distance(&est.rotation, &truth.rotation) < 1e-9);
    }

    #[test]
    fn calibration_rejects_bad_noise() {
        let mut calib = test_calibration();
        calib.imu_noise.sigma_acc = 0.0;
        assert!(calib.validate().is_err());
        calib = test_calibration();
        calib.depth_range = (5.0, 2.0);
        assert!(calib.validate().is_err());
    }

    pub(crate) fn test_calibration() -> Calibration {
        Calibration {
            cam_to_body: Pose::identity(),
            wheel_to_body: Pose::identity(),
            intrinsics: Intrinsics {
                fx: 460.0,
                fy: 460.0,
                cx: 320.0,
                cy: 240.0,
            },
            gravity_magnitude: 9.81,
            imu_noise: ImuNoise {
                sigma_acc: 0.05,
                sigma_gyro: 0.005,
                sigma_acc_bias_walk: 1e-4,
                sigma_gyro_bias_walk: 1e-5,
            },
            wheel_noise: WheelNoise {
                sigma_velocity: 0.02,
                sigma_yaw_rate: 0.005,
            },
            depth_range: (0.3, 8.0),
        }
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            scale in 1e-4f64..1.0,
        ) {
            let dir = Vector3::new(x, y, z);
            prop_assume!(dir.norm() > 1e-6);
            // Keep the angle inside (0, pi - 0.01).
            let phi = dir / dir.norm() * (scale * (PI - 0.02));
            let back = so3_log(&so3_exp(phi));
            prop_assert!((back - phi).norm() < 1e-10);
        }

        #[test]
        fn projection_is_scale_invariant(
            x in -2.0f64..2.0, y in -2.0f64..2.0, z in 0.1f64..10.0,
            lambda in 0.1f64..10.0,
        ) {
            let p = Vector3::new(x, y, z);
            let a = project(&p).unwrap();
            let b = project(&(p * lambda)).unwrap();
            prop_assert!((a - b).norm() < 1e-12);
        }
    }
}
