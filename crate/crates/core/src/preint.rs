//! IMU and wheel-odometer preintegration.
//!
//! High-rate samples between two image frames are summarized into relative
//! motion terms: `(alpha, beta, gamma)` for the IMU and `(delta_rot,
//! delta_pos)` for the wheel odometer, together with first-order bias
//! Jacobians (IMU) and propagated covariance. All integration uses the
//! midpoint rule on consecutive sample pairs.

use crate::geom::{
    skew, so3_exp, so3_right_jacobian, ImuNoise, WheelNoise,
};
use nalgebra::{
    Matrix3, SMatrix, UnitQuaternion, Vector3,
};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PreintError {
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("non-monotonic timestamps at index {0}")]
    NonMonotonicTime(usize),
}

/// Raw IMU measurement: specific force and angular rate in the body frame.
#[derive(Debug, Clone, Copy)]
pub struct ImuSample {
    pub t: f64,
    pub acc: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

/// Raw wheel-odometer measurement in the odometer frame. The chassis model
/// is planar: `velocity.z` must be zero.
#[derive(Debug, Clone, Copy)]
pub struct WheelSample {
    pub t: f64,
    pub velocity: Vector3<f64>,
    pub yaw_rate: f64,
}

impl WheelSample {
    pub fn new(t: f64, vx: f64, vy: f64, yaw_rate: f64) -> Self {
        Self {
            t,
            velocity: Vector3::new(vx, vy, 0.0),
            yaw_rate,
        }
    }

    pub fn angular_velocity(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.yaw_rate)
    }
}

/// IMU bias pair (accelerometer, gyroscope).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuBias {
    pub acc: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

impl ImuBias {
    pub fn zero() -> Self {
        Self {
            acc: Vector3::zeros(),
            gyro: Vector3::zeros(),
        }
    }
}

/// Error-state block order used for the IMU covariance and Jacobians:
/// `[d_alpha, d_theta, d_beta, d_bias_acc, d_bias_gyro]`.
pub const IMU_STATE_DIM: usize = 15;

/// Relative-motion summary of an IMU sample stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuPreintegration {
    pub dt: f64,
    /// Relative position term (meters), gravity not removed.
    pub alpha: Vector3<f64>,
    /// Relative velocity term (m/s), gravity not removed.
    pub beta: Vector3<f64>,
    /// Relative rotation term.
    pub gamma: UnitQuaternion<f64>,
    /// Bias linearization point used during integration.
    pub bias: ImuBias,
    pub j_alpha_ba: Matrix3<f64>,
    pub j_alpha_bg: Matrix3<f64>,
    pub j_beta_ba: Matrix3<f64>,
    pub j_beta_bg: Matrix3<f64>,
    /// Right-perturbation rotation Jacobian: `gamma(b+db) = gamma ⊗ Exp(J db)`.
    pub j_gamma_bg: Matrix3<f64>,
    pub covariance: SMatrix<f64, IMU_STATE_DIM, IMU_STATE_DIM>,
}

/// First-order bias-corrected copy of the preintegration terms.
#[derive(Debug, Clone, Copy)]
pub struct CorrectedImuTerms {
    pub alpha: Vector3<f64>,
    pub beta: Vector3<f64>,
    pub gamma: UnitQuaternion<f64>,
}

/// Midpoint preintegration of an IMU stream at a fixed bias linearization
/// point. Requires at least two strictly time-ordered samples.
pub fn imu_preintegrate(
    samples: &[ImuSample],
    bias: ImuBias,
    noise: &ImuNoise,
) -> Result<ImuPreintegration, PreintError> {
    if samples.len() < 2 {
        return Err(PreintError::InsufficientSamples(samples.len()));
    }
    for (i, pair) in samples.windows(2).enumerate() {
        if pair[1].t <= pair[0].t {
            return Err(PreintError::NonMonotonicTime(i + 1));
        }
    }

    let mut alpha = Vector3::zeros();
    let mut beta = Vector3::zeros();
    let mut gamma = UnitQuaternion::identity();
    let mut jac = SMatrix::<f64, IMU_STATE_DIM, IMU_STATE_DIM>::identity();
    let mut cov = SMatrix::<f64, IMU_STATE_DIM, IMU_STATE_DIM>::zeros();
    let mut total_dt = 0.0;

    for pair in samples.windows(2) {
        let (s0, s1) = (&pair[0], &pair[1]);
        let dt = s1.t - s0.t;
        let dt2 = dt * dt;

        let w_mid = 0.5 * (s0.gyro + s1.gyro) - bias.gyro;
        let step = w_mid * dt;
        let r_step = so3_exp(step);
        let jr = so3_right_jacobian(&step);

        let gamma0 = gamma;
        let gamma1 = gamma0 * r_step;
        let r0 = gamma0.to_rotation_matrix().into_inner();
        let r1 = gamma1.to_rotation_matrix().into_inner();

        let a0 = s0.acc - bias.acc;
        let a1 = s1.acc - bias.acc;
        let f0 = r0 * a0;
        let f1 = r1 * a1;
        let acc_mid = 0.5 * (f0 + f1);
        // Double integral of the rotated acceleration over the step: the
        // two-point rule (2 f0 + f1) dt^2 / 6 matches the Taylor expansion
        // through dt^3, unlike 0.5 * acc_mid * dt^2.
        let pos_inc = (2.0 * f0 + f1) * (dt2 / 6.0);

        // Error-state transition, blocks in [alpha, theta, beta, ba, bg] order.
        let ax0 = skew(&a0);
        let ax1 = skew(&a1);
        let rs_t = r_step.to_rotation_matrix().into_inner().transpose();

        let d_f0_d_theta = -r0 * ax0;
        let d_f1_d_theta = -r1 * ax1 * rs_t;
        let d_f1_d_bg = r1 * ax1 * jr * dt;

        let d_vel_d_theta = 0.5 * (d_f0_d_theta + d_f1_d_theta);
        let d_vel_d_ba = -0.5 * (r0 + r1);
        let d_vel_d_bg = 0.5 * d_f1_d_bg;
        let d_pos_d_theta = (2.0 * d_f0_d_theta + d_f1_d_theta) / 6.0;
        let d_pos_d_ba = -(2.0 * r0 + r1) / 6.0;
        let d_pos_d_bg = d_f1_d_bg / 6.0;

        let mut f = SMatrix::<f64, IMU_STATE_DIM, IMU_STATE_DIM>::identity();
        f.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(d_pos_d_theta * dt2));
        f.fixed_view_mut::<3, 3>(0, 6)
            .copy_from(&(Matrix3::identity() * dt));
        f.fixed_view_mut::<3, 3>(0, 9).copy_from(&(d_pos_d_ba * dt2));
        f.fixed_view_mut::<3, 3>(0, 12).copy_from(&(d_pos_d_bg * dt2));
        f.fixed_view_mut::<3, 3>(3, 3).copy_from(&rs_t);
        f.fixed_view_mut::<3, 3>(3, 12).copy_from(&(-jr * dt));
        f.fixed_view_mut::<3, 3>(6, 3).copy_from(&(d_vel_d_theta * dt));
        f.fixed_view_mut::<3, 3>(6, 9).copy_from(&(d_vel_d_ba * dt));
        f.fixed_view_mut::<3, 3>(6, 12).copy_from(&(d_vel_d_bg * dt));

        // Noise input order: [n_a0, n_w0, n_a1, n_w1, n_ba, n_bg].
        let mut v = SMatrix::<f64, IMU_STATE_DIM, 18>::zeros();
        let d_theta_d_nw = 0.5 * jr * dt;
        let d_f1_d_nw = -r1 * ax1 * d_theta_d_nw;
        v.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(r0 * (dt2 / 3.0)));
        v.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(d_f1_d_nw * (dt2 / 6.0)));
        v.fixed_view_mut::<3, 3>(0, 6)
            .copy_from(&(r1 * (dt2 / 6.0)));
        v.fixed_view_mut::<3, 3>(0, 9)
            .copy_from(&(d_f1_d_nw * (dt2 / 6.0)));
        v.fixed_view_mut::<3, 3>(3, 3).copy_from(&d_theta_d_nw);
        v.fixed_view_mut::<3, 3>(3, 9).copy_from(&d_theta_d_nw);
        v.fixed_view_mut::<3, 3>(6, 0).copy_from(&(0.5 * r0 * dt));
        v.fixed_view_mut::<3, 3>(6, 3).copy_from(&(d_f1_d_nw * (0.5 * dt)));
        v.fixed_view_mut::<3, 3>(6, 6).copy_from(&(0.5 * r1 * dt));
        v.fixed_view_mut::<3, 3>(6, 9).copy_from(&(d_f1_d_nw * (0.5 * dt)));
        v.fixed_view_mut::<3, 3>(9, 12)
            .copy_from(&Matrix3::identity());
        v.fixed_view_mut::<3, 3>(12, 15)
            .copy_from(&Matrix3::identity());

        let mut q = SMatrix::<f64, 18, 18>::zeros();
        let sa2 = noise.sigma_acc * noise.sigma_acc;
        let sw2 = noise.sigma_gyro * noise.sigma_gyro;
        for k in 0..3 {
            q[(k, k)] = sa2;
            q[(3 + k, 3 + k)] = sw2;
            q[(6 + k, 6 + k)] = sa2;
            q[(9 + k, 9 + k)] = sw2;
            q[(12 + k, 12 + k)] = noise.sigma_acc_bias_walk.powi(2) * dt;
            q[(15 + k, 15 + k)] = noise.sigma_gyro_bias_walk.powi(2) * dt;
        }

        alpha += beta * dt + pos_inc;
        beta += acc_mid * dt;
        gamma = gamma1;
        total_dt += dt;

        jac = f * jac;
        cov = f * cov * f.transpose() + v * q * v.transpose();
    }

    Ok(ImuPreintegration {
        dt: total_dt,
        alpha,
        beta,
        gamma,
        bias,
        j_alpha_ba: jac.fixed_view::<3, 3>(0, 9).into_owned(),
        j_alpha_bg: jac.fixed_view::<3, 3>(0, 12).into_owned(),
        j_beta_ba: jac.fixed_view::<3, 3>(6, 9).into_owned(),
        j_beta_bg: jac.fixed_view::<3, 3>(6, 12).into_owned(),
        j_gamma_bg: jac.fixed_view::<3, 3>(3, 12).into_owned(),
        covariance: cov,
    })
}

/// First-order correction of the preintegrated terms for a bias change
/// `delta = new_bias - linearization_bias`, without re-integration.
pub fn imu_bias_correct(p: &ImuPreintegration, delta_ba: Vector3<f64>, delta_bg: Vector3<f64>) -> CorrectedImuTerms {
    CorrectedImuTerms {
        alpha: p.alpha + p.j_alpha_ba * delta_ba + p.j_alpha_bg * delta_bg,
        beta: p.beta + p.j_beta_ba * delta_ba + p.j_beta_bg * delta_bg,
        gamma: p.gamma * so3_exp(p.j_gamma_bg * delta_bg),
    }
}

/// Relative-motion summary of a wheel-odometer sample stream, expressed in
/// the odometer frame at the first sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WheelPreintegration {
    pub dt: f64,
    pub delta_rot: UnitQuaternion<f64>,
    pub delta_pos: Vector3<f64>,
    /// Error-state covariance in `[d_theta, d_pos]` order.
    pub covariance: SMatrix<f64, 6, 6>,
}

impl WheelPreintegration {
    /// Squared norm of the preintegrated translation (the stationary-check
    /// statistic `W`).
    pub fn displacement_norm_sq(&self) -> f64 {
        self.delta_pos.norm_squared()
    }

    /// Plain norm of the preintegrated translation, used by the wheel
    /// anomaly detector.
    pub fn displacement_norm(&self) -> f64 {
        self.delta_pos.norm()
    }
}

/// Midpoint preintegration of a wheel-odometer stream. Velocities are
/// rotated into the starting odometer frame before averaging, so the result
/// is independent of where the chassis started.
pub fn wheel_preintegrate(
    samples: &[WheelSample],
    noise: &WheelNoise,
) -> Result<WheelPreintegration, PreintError> {
    if samples.len() < 2 {
        return Err(PreintError::InsufficientSamples(samples.len()));
    }
    for (i, pair) in samples.windows(2).enumerate() {
        if pair[1].t <= pair[0].t {
            return Err(PreintError::NonMonotonicTime(i + 1));
        }
    }

    let mut rot = UnitQuaternion::identity();
    let mut pos = Vector3::zeros();
    let mut cov = SMatrix::<f64, 6, 6>::zeros();
    let mut total_dt = 0.0;

    for pair in samples.windows(2) {
        let (s0, s1) = (&pair[0], &pair[1]);
        let dt = s1.t - s0.t;

        let w_mid = 0.5 * (s0.angular_velocity() + s1.angular_velocity());
        let step = w_mid * dt;
        let rot0 = rot;
        let rot1 = rot0 * so3_exp(step);
        let r0 = rot0.to_rotation_matrix().into_inner();
        let r1 = rot1.to_rotation_matrix().into_inner();

        let vel_mid = 0.5 * (r0 * s0.velocity + r1 * s1.velocity);

        // First-order error propagation, [d_theta, d_pos] order.
        let rs_t = so3_exp(step).to_rotation_matrix().into_inner().transpose();
        let jr = so3_right_jacobian(&step);
        let d_vel_d_theta = -0.5 * (r0 * skew(&s0.velocity) + r1 * skew(&s1.velocity) * rs_t);

        let mut f = SMatrix::<f64, 6, 6>::identity();
        f.fixed_view_mut::<3, 3>(0, 0).copy_from(&rs_t);
        f.fixed_view_mut::<3, 3>(3, 0).copy_from(&(d_vel_d_theta * dt));

        // Noise input: [n_w (3), n_v0 (3), n_v1 (3)].
        let mut v = SMatrix::<f64, 6, 9>::zeros();
        v.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * dt));
        v.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-0.5 * r1 * skew(&s1.velocity) * jr * dt * dt));
        v.fixed_view_mut::<3, 3>(3, 3).copy_from(&(0.5 * r0 * dt));
        v.fixed_view_mut::<3, 3>(3, 6).copy_from(&(0.5 * r1 * dt));

        let mut q = SMatrix::<f64, 9, 9>::zeros();
        let sw2 = noise.sigma_yaw_rate * noise.sigma_yaw_rate;
        let sv2 = noise.sigma_velocity * noise.sigma_velocity;
        for k in 0..3 {
            q[(k, k)] = sw2;
            q[(3 + k, 3 + k)] = sv2;
            q[(6 + k, 6 + k)] = sv2;
        }

        pos += vel_mid * dt;
        rot = rot1;
        total_dt += dt;
        cov = f * cov * f.transpose() + v * q * v.transpose();
    }

    Ok(WheelPreintegration {
        dt: total_dt,
        delta_rot: rot,
        delta_pos: pos,
        covariance: cov,
    })
}

/// `W` statistic: squared norm of the wheel preintegrated translation.
pub fn wheel_displacement_norm(p: &WheelPreintegration) -> f64 {
    p.displacement_norm_sq()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::so3_log;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn nominal_noise() -> ImuNoise {
        ImuNoise {
            sigma_acc: 0.05,
            sigma_gyro: 0.005,
            sigma_acc_bias_walk: 1e-4,
            sigma_gyro_bias_walk: 1e-5,
        }
    }

    fn nominal_wheel_noise() -> WheelNoise {
        WheelNoise {
            sigma_velocity: 0.02,
            sigma_yaw_rate: 0.005,
        }
    }

    fn static_samples(rate: f64, duration: f64, g: f64) -> Vec<ImuSample> {
        let n = (rate * duration) as usize;
        (0..=n)
            .map(|i| ImuSample {
                t: i as f64 / rate,
                acc: Vector3::new(0.0, 0.0, g),
                gyro: Vector3::zeros(),
            })
            .collect()
    }

    /// Smooth synthetic IMU signal used by the RK4 oracle test. Amplitudes
    /// are typical of gentle ground-vehicle motion; the midpoint scheme is
    /// second order, so its truncation error at 200 Hz stays below the
    /// comparison tolerance.
    fn spline_signal(t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let acc = Vector3::new(
            0.2 * (1.0 * t).sin(),
            0.15 * (0.9 * t + 0.4).cos(),
            9.81 + 0.1 * (1.1 * t).sin(),
        );
        let gyro = Vector3::new(
            0.04 * (0.5 * t).cos(),
            0.03 * (0.4 * t + 1.0).sin(),
            0.05 * (0.6 * t).cos(),
        );
        (acc, gyro)
    }

    /// RK4 integration of the continuous preintegration ODE
    /// `d_gamma = 0.5 gamma ⊗ w`, `d_beta = gamma * a`, `d_alpha = beta`,
    /// independent of the midpoint implementation.
    fn rk4_oracle(
        signal: &dyn Fn(f64) -> (Vector3<f64>, Vector3<f64>),
        t0: f64,
        t1: f64,
        steps: usize,
    ) -> (Vector3<f64>, Vector3<f64>, UnitQuaternion<f64>) {
        let h = (t1 - t0) / steps as f64;
        let mut q = nalgebra::Quaternion::new(1.0, 0.0, 0.0, 0.0);
        let mut beta = Vector3::zeros();
        let mut alpha = Vector3::zeros();

        let deriv = |q: &nalgebra::Quaternion<f64>, beta: &Vector3<f64>, t: f64| {
            let (a, w) = signal(t);
            let wq = nalgebra::Quaternion::new(0.0, w.x, w.y, w.z);
            let dq = q * wq * 0.5;
            let qr = UnitQuaternion::new_normalize(*q);
            let dbeta = qr * a;
            let dalpha = *beta;
            (dq, dbeta, dalpha)
        };

        for i in 0..steps {
            let t = t0 + i as f64 * h;
            let (k1q, k1b, k1a) = deriv(&q, &beta, t);
            let (k2q, k2b, k2a) = deriv(&(q + k1q * (h / 2.0)), &(beta + k1b * (h / 2.0)), t + h / 2.0);
            let (k3q, k3b, k3a) = deriv(&(q + k2q * (h / 2.0)), &(beta + k2b * (h / 2.0)), t + h / 2.0);
            let (k4q, k4b, k4a) = deriv(&(q + k3q * h), &(beta + k3b * h), t + h);
            q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
            beta += (k1b + k2b * 2.0 + k3b * 2.0 + k4b) * (h / 6.0);
            alpha += (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (h / 6.0);
            q.normalize_mut();
        }
        (alpha, beta, UnitQuaternion::new_normalize(q))
    }

    #[test]
    fn static_stream_closed_form() {
        let g = 9.81;
        let p = imu_preintegrate(&static_samples(200.0, 1.0, g), ImuBias::zero(), &nominal_noise())
            .unwrap();
        assert_relative_eq!(p.dt, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.gamma.w, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.beta, Vector3::new(0.0, 0.0, g), epsilon = 1e-9);
        assert_relative_eq!(p.alpha, Vector3::new(0.0, 0.0, 0.5 * g), epsilon = 1e-9);
    }

    #[test]
    fn constant_yaw_rate_closed_form() {
        let rate = 200.0;
        let samples: Vec<ImuSample> = (0..=200)
            .map(|i| ImuSample {
                t: i as f64 / rate,
                acc: Vector3::zeros(),
                gyro: Vector3::new(0.0, 0.0, 1.0),
            })
            .collect();
        let p = imu_preintegrate(&samples, ImuBias::zero(), &nominal_noise()).unwrap();
        let log = so3_log(&p.gamma);
        assert_relative_eq!(log, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-6);
    }

    #[test]
    fn matches_rk4_oracle_on_smooth_signal() {
        let rate = 200.0;
        let samples: Vec<ImuSample> = (0..=200)
            .map(|i| {
                let t = i as f64 / rate;
                let (acc, gyro) = spline_signal(t);
                ImuSample { t, acc, gyro }
            })
            .collect();
        let p = imu_preintegrate(&samples, ImuBias::zero(), &nominal_noise()).unwrap();
        let (alpha, beta, gamma) = rk4_oracle(&spline_signal, 0.0, 1.0, 4000);
        assert!((p.alpha - alpha).norm() < 1e-6, "alpha error {}", (p.alpha - alpha).norm());
        assert!((p.beta - beta).norm() < 1e-6, "beta error {}", (p.beta - beta).norm());
        assert!(
            crate::geom::rotation_distance(&p.gamma, &gamma) < 1e-7,
            "gamma error {}",
            crate::geom::rotation_distance(&p.gamma, &gamma)
        );
    }

    #[test]
    fn rejects_bad_streams() {
        let s = static_samples(100.0, 0.5, 9.81);
        assert_eq!(
            imu_preintegrate(&s[..1], ImuBias::zero(), &nominal_noise()),
            Err(PreintError::InsufficientSamples(1))
        );
        let mut bad = s.clone();
        bad[3].t = bad[2].t;
        assert!(matches!(
            imu_preintegrate(&bad, ImuBias::zero(), &nominal_noise()),
            Err(PreintError::NonMonotonicTime(3))
        ));
    }

    fn random_samples(rng: &mut StdRng, n: usize, rate: f64) -> Vec<ImuSample> {
        (0..n)
            .map(|i| ImuSample {
                t: i as f64 / rate,
                acc: Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    9.81 + rng.gen_range(-1.0..1.0),
                ),
                gyro: Vector3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ),
            })
            .collect()
    }

    #[test]
    fn bias_correct_zero_delta_is_identity() {
        let mut rng = StdRng::seed_from_u64(5);
        let samples = random_samples(&mut rng, 50, 100.0);
        let p = imu_preintegrate(&samples, ImuBias::zero(), &nominal_noise()).unwrap();
        let c = imu_bias_correct(&p, Vector3::zeros(), Vector3::zeros());
        assert_eq!(c.alpha, p.alpha);
        assert_eq!(c.beta, p.beta);
        assert_eq!(c.gamma, p.gamma);
    }

    #[test]
    fn bias_correct_matches_reintegration_for_small_delta() {
        let mut rng = StdRng::seed_from_u64(6);
        let samples = random_samples(&mut rng, 100, 200.0);
        let p = imu_preintegrate(&samples, ImuBias::zero(), &nominal_noise()).unwrap();
        let dbg = Vector3::new(1e-4, -0.5e-4, 0.7e-4);
        let dba = Vector3::new(-1e-4, 0.4e-4, 0.9e-4);
        let corrected = imu_bias_correct(&p, dba, dbg);
        let re = imu_preintegrate(
            &samples,
            ImuBias { acc: dba, gyro: dbg },
            &nominal_noise(),
        )
        .unwrap();
        assert!((corrected.alpha - re.alpha).norm() < 1e-6);
        assert!((corrected.beta - re.beta).norm() < 1e-6);
        assert!(crate::geom::rotation_distance(&corrected.gamma, &re.gamma) < 1e-6);
    }

    #[test]
    fn bias_correct_error_grows_quadratically() {
        let mut rng = StdRng::seed_from_u64(8);
        let samples = random_samples(&mut rng, 100, 200.0);
        let p = imu_preintegrate(&samples, ImuBias::zero(), &nominal_noise()).unwrap();
        let dir = Vector3::new(0.6, -0.4, 0.7).normalize();
        let mut errs = Vec::new();
        for scale in [0.025, 0.05, 0.1] {
            let dbg = dir * scale;
            let corrected = imu_bias_correct(&p, Vector3::zeros(), dbg);
            let re = imu_preintegrate(
                &samples,
                ImuBias {
                    acc: Vector3::zeros(),
                    gyro: dbg,
                },
                &nominal_noise(),
            )
            .unwrap();
            errs.push((corrected.alpha - re.alpha).norm() + (corrected.beta - re.beta).norm());
        }
        // Doubling the bias delta should roughly quadruple the first-order error.
        let r1 = errs[1] / errs[0];
        let r2 = errs[2] / errs[1];
        assert!(r1 > 3.0 && r1 < 5.0, "ratio {r1}");
        assert!(r2 > 3.0 && r2 < 5.0, "ratio {r2}");
    }

    #[test]
    fn bias_jacobians_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(9);
        let samples = random_samples(&mut rng, 60, 200.0);
        let p = imu_preintegrate(&samples, ImuBias::zero(), &nominal_noise()).unwrap();
        let h = 1e-6;
        for axis in 0..3 {
            let mut dba = Vector3::zeros();
            dba[axis] = h;
            let plus = imu_preintegrate(&samples, ImuBias { acc: dba, gyro: Vector3::zeros() }, &nominal_noise()).unwrap();
            let minus = imu_preintegrate(&samples, ImuBias { acc: -dba, gyro: Vector3::zeros() }, &nominal_noise()).unwrap();
            let fd_alpha = (plus.alpha - minus.alpha) / (2.0 * h);
            let fd_beta = (plus.beta - minus.beta) / (2.0 * h);
            assert!((fd_alpha - p.j_alpha_ba.column(axis)).norm() <= 1e-5 * fd_alpha.norm().max(1.0));
            assert!((fd_beta - p.j_beta_ba.column(axis)).norm() <= 1e-5 * fd_beta.norm().max(1.0));

            let mut dbg = Vector3::zeros();
            dbg[axis] = h;
            let plus = imu_preintegrate(&samples, ImuBias { acc: Vector3::zeros(), gyro: dbg }, &nominal_noise()).unwrap();
            let minus = imu_preintegrate(&samples, ImuBias { acc: Vector3::zeros(), gyro: -dbg }, &nominal_noise()).unwrap();
            let fd_alpha = (plus.alpha - minus.alpha) / (2.0 * h);
            let fd_beta = (plus.beta - minus.beta) / (2.0 * h);
            let fd_gamma = so3_log(&(p.gamma.inverse() * plus.gamma))
                - so3_log(&(p.gamma.inverse() * minus.gamma));
            let fd_gamma = fd_gamma / (2.0 * h);
            assert!((fd_alpha - p.j_alpha_bg.column(axis)).norm() <= 1e-5 * fd_alpha.norm().max(1.0));
            assert!((fd_beta - p.j_beta_bg.column(axis)).norm() <= 1e-5 * fd_beta.norm().max(1.0));
            assert!((fd_gamma - p.j_gamma_bg.column(axis)).norm() <= 1e-5 * fd_gamma.norm().max(1.0));
        }
    }

    #[test]
    fn preintegration_split_composes() {
        let mut rng = StdRng::seed_from_u64(10);
        let samples = random_samples(&mut rng, 101, 200.0);
        let noise = nominal_noise();
        let full = imu_preintegrate(&samples, ImuBias::zero(), &noise).unwrap();
        for split in [20, 50, 80] {
            let a = imu_preintegrate(&samples[..=split], ImuBias::zero(), &noise).unwrap();
            let b = imu_preintegrate(&samples[split..], ImuBias::zero(), &noise).unwrap();
            // Relative-term composition computed directly in the test.
            let r_a = a.gamma.to_rotation_matrix().into_inner();
            let alpha = a.alpha + a.beta * b.dt + r_a * b.alpha;
            let beta = a.beta + r_a * b.beta;
            let gamma = a.gamma * b.gamma;
            assert!((alpha - full.alpha).norm() < 1e-9);
            assert!((beta - full.beta).norm() < 1e-9);
            assert!(crate::geom::rotation_distance(&gamma, &full.gamma) < 1e-9);
        }
    }

    #[test]
    fn covariance_trace_monotone_and_psd() {
        let mut rng = StdRng::seed_from_u64(12);
        let samples = random_samples(&mut rng, 80, 200.0);
        let noise = nominal_noise();
        let mut last_trace = 0.0;
        for n in [10, 20, 40, 80] {
            let p = imu_preintegrate(&samples[..n], ImuBias::zero(), &noise).unwrap();
            let tr = p.covariance.trace();
            assert!(tr >= last_trace, "trace decreased: {tr} < {last_trace}");
            last_trace = tr;
            let sym = (p.covariance - p.covariance.transpose()).norm();
            assert!(sym < 1e-12);
            let eig = p.covariance.symmetric_eigenvalues();
            assert!(eig.iter().all(|&l| l > -1e-12), "negative eigenvalue {eig:?}");
        }
    }

    #[test]
    fn wheel_straight_line() {
        let samples: Vec<WheelSample> = (0..10)
            .map(|i| WheelSample::new(i as f64 / 9.0, 1.0, 0.0, 0.0))
            .collect();
        let p = wheel_preintegrate(&samples, &nominal_wheel_noise()).unwrap();
        assert_relative_eq!(p.delta_pos, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(p.delta_rot.w, 1.0, epsilon = 1e-12);
        assert_eq!(wheel_displacement_norm(&p), p.delta_pos.norm_squared());
    }

    #[test]
    fn wheel_arc_matches_unicycle_closed_form() {
        let (v, w, t_total, rate) = (1.0, 0.5, 2.0, 100.0);
        let n = (t_total * rate) as usize;
        let samples: Vec<WheelSample> = (0..=n)
            .map(|i| WheelSample::new(i as f64 / rate, v, 0.0, w))
            .collect();
        let p = wheel_preintegrate(&samples, &nominal_wheel_noise()).unwrap();
        let expected = Vector3::new(
            v / w * (w * t_total).sin(),
            v / w * (1.0 - (w * t_total).cos()),
            0.0,
        );
        assert!((p.delta_pos - expected).norm() < 1e-3, "err {}", (p.delta_pos - expected).norm());
        assert!((wheel_displacement_norm(&p) - expected.norm_squared()).abs() < 1e-3);
        let yaw = so3_log(&p.delta_rot);
        assert_relative_eq!(yaw.z, w * t_total, epsilon = 1e-9);
    }

    #[test]
    fn wheel_zero_velocity() {
        let samples: Vec<WheelSample> = (0..5)
            .map(|i| WheelSample::new(i as f64 * 0.1, 0.0, 0.0, 0.0))
            .collect();
        let p = wheel_preintegrate(&samples, &nominal_wheel_noise()).unwrap();
        assert_eq!(p.delta_pos, Vector3::zeros());
        assert_eq!(wheel_displacement_norm(&p), 0.0);
        assert!(p.delta_pos.z.abs() < 1e-15);
    }

    #[test]
    fn wheel_split_composes() {
        let samples: Vec<WheelSample> = (0..=60)
            .map(|i| {
                let t = i as f64 / 30.0;
                WheelSample::new(t, 0.8 + 0.2 * t.sin(), 0.05 * t.cos(), 0.4 * (0.7 * t).cos())
            })
            .collect();
        let noise = nominal_wheel_noise();
        let full = wheel_preintegrate(&samples, &noise).unwrap();
        for split in [15, 30, 45] {
            let a = wheel_preintegrate(&samples[..=split], &noise).unwrap();
            let b = wheel_preintegrate(&samples[split..], &noise).unwrap();
            let pos = a.delta_pos + a.delta_rot * b.delta_pos;
            let rot = a.delta_rot * b.delta_rot;
            assert!((pos - full.delta_pos).norm() < 1e-9);
            assert!(crate::geom::rotation_distance(&rot, &full.delta_rot) < 1e-9);
        }
    }

    #[test]
    fn wheel_rejects_bad_streams() {
        let one = [WheelSample::new(0.0, 1.0, 0.0, 0.0)];
        assert_eq!(
            wheel_preintegrate(&one, &nominal_wheel_noise()),
            Err(PreintError::InsufficientSamples(1))
        );
    }
}
