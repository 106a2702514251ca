//! Sensor-fault detection and neutralization.
//!
//! Wheel, visual and GNSS measurements pass through these guards before any
//! factor is built: wheel yaw-rate substitution and preintegration-based
//! wheel anomaly detection, forward/backward track filtering, a
//! wheel-assisted moving-consistency check, depth validation, satellite
//! filtering and low-speed gating.

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use crate::geom::{project, Pose};
use crate::preint::{ImuPreintegration, ImuSample, WheelPreintegration, WheelSample};

#[derive(Debug, Error, PartialEq)]
pub enum GuardError {
    #[error("wheel sample at {t} outside IMU bracket [{t_m}, {t_n}]")]
    OutOfBracket { t: f64, t_m: f64, t_n: f64 },
    #[error("preintegration spans differ by {0} s (max 5 ms)")]
    SpanMismatch(f64),
}

/// One raw GNSS channel observation at an epoch. Satellite state is given
/// directly in the local ENU frame.
#[derive(Debug, Clone, Copy)]
pub struct GnssObservation {
    pub t: f64,
    pub sat_id: u32,
    pub sat_pos: Vector3<f64>,
    pub sat_vel: Vector3<f64>,
    pub pseudorange: f64,
    pub pseudorange_sigma: f64,
    pub doppler_range_rate: f64,
    pub doppler_sigma: f64,
    /// Elevation angle above the horizon, radians.
    pub elevation: f64,
    /// Consecutive epochs this satellite has been tracked.
    pub track_count: u32,
}

/// Per-satellite acceptance criteria plus the low-speed gate threshold.
#[derive(Debug, Clone, Copy)]
pub struct GnssFilterCriteria {
    pub max_pr_sigma: f64,
    pub max_dop_sigma: f64,
    pub min_track_count: u32,
    pub min_elevation: f64,
    /// Receiver speed below which GNSS factors are suppressed (m/s). The
    /// 0.3 default is the noise level of the Doppler shift.
    pub v_ths: f64,
}

impl Default for GnssFilterCriteria {
    fn default() -> Self {
        Self {
            max_pr_sigma: 5.0,
            max_dop_sigma: 0.5,
            min_track_count: 5,
            min_elevation: 15f64.to_radians(),
            v_ths: 0.3,
        }
    }
}

/// Wheel anomaly threshold on the displacement-norm difference, meters.
#[derive(Debug, Clone, Copy)]
pub struct WheelAnomalyConfig {
    pub epsilon: f64,
}

impl Default for WheelAnomalyConfig {
    fn default() -> Self {
        Self { epsilon: 0.015 }
    }
}

/// Replace a wheel sample's yaw rate with the bias-corrected IMU angular
/// rate, linearly interpolated at the wheel timestamp and rotated into the
/// odometer frame. The linear velocity is left untouched.
pub fn substitute_gyro_yaw(
    ws: &WheelSample,
    imu_before: &ImuSample,
    imu_after: &ImuSample,
    gyro_bias: &Vector3<f64>,
    body_to_wheel: &UnitQuaternion<f64>,
) -> Result<WheelSample, GuardError> {
    let (t_m, t_n) = (imu_before.t, imu_after.t);
    if !(t_m <= ws.t && ws.t <= t_n) || t_m >= t_n {
        return Err(GuardError::OutOfBracket { t: ws.t, t_m, t_n });
    }
    let alpha = (ws.t - t_m) / (t_n - t_m);
    let gyro = imu_before.gyro + (imu_after.gyro - imu_before.gyro) * alpha - gyro_bias;
    let odo_rate = body_to_wheel * gyro;
    Ok(WheelSample {
        t: ws.t,
        velocity: ws.velocity,
        yaw_rate: odo_rate.z,
    })
}

/// State of the older frame used to map the IMU preintegration into a world
/// displacement: `dp = R_i * alpha + v_i * dt + 0.5 * g * dt^2`.
#[derive(Debug, Clone, Copy)]
pub struct FramePrior {
    pub rotation: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
    pub gravity: Vector3<f64>,
}

/// Compare the IMU-predicted displacement norm with the wheel-preintegrated
/// one over the same interval; a gap larger than `epsilon` flags a wheel
/// anomaly and the wheel observations must stay out of the optimization.
pub fn detect_wheel_anomaly(
    imu_pre: &ImuPreintegration,
    prior: &FramePrior,
    wheel_pre: &WheelPreintegration,
    epsilon: f64,
) -> Result<bool, GuardError> {
    let span_gap = (imu_pre.dt - wheel_pre.dt).abs();
    if span_gap > 5e-3 {
        return Err(GuardError::SpanMismatch(span_gap));
    }
    let dt = imu_pre.dt;
    let imu_disp = prior.rotation * imu_pre.alpha
        + prior.velocity * dt
        + 0.5 * prior.gravity * dt * dt;
    let gap = (imu_disp.norm() - wheel_pre.displacement_norm()).abs();
    Ok(gap > epsilon)
}

/// Forward/backward track check: keep features present in both directions
/// whose round-trip endpoint distance is under the threshold (normalized
/// coordinates). Inputs map feature id to the point in the older frame as
/// seen by the forward track and by the backward track.
pub fn flow_back_filter(
    forward: &[(u64, Vector2<f64>)],
    backward: &[(u64, Vector2<f64>)],
    dist_threshold: f64,
) -> Vec<u64> {
    let mut retained = Vec::new();
    for (id, fwd_pt) in forward {
        if let Some((_, bwd_pt)) = backward.iter().find(|(bid, _)| bid == id) {
            if (fwd_pt - bwd_pt).norm() < dist_threshold {
                retained.push(*id);
            }
        }
    }
    retained
}

/// One observation entering the moving-consistency check.
#[derive(Debug, Clone, Copy)]
pub struct MccObservation {
    /// Index into the pose slice for the observing frame.
    pub frame: usize,
    /// Normalized image observation in that frame.
    pub uv: Vector2<f64>,
    /// Feature depth in that camera frame, meters (from the depth sensor or
    /// triangulation).
    pub depth: f64,
}

/// Candidate feature for the moving-consistency check; `observations[0]` is
/// the first (hosting) observation.
#[derive(Debug, Clone)]
pub struct MccFeature {
    pub id: u64,
    pub observations: Vec<MccObservation>,
}

/// Wheel-assisted moving consistency check. `body_poses` hold the optimized
/// window poses with the newest frame replaced by the wheel-preintegration
/// prediction. The average reprojection residual of each feature against
/// its first observation is compared with the threshold; features above it
/// are flagged dynamic.
pub fn mcc_filter(
    features: &[MccFeature],
    body_poses: &[Pose],
    cam_to_body: &Pose,
    residual_threshold: f64,
) -> Vec<u64> {
    let mut dynamic = Vec::new();
    for f in features {
        if f.observations.len() < 2 {
            continue;
        }
        let host = &f.observations[0];
        let t_w_ci = body_poses[host.frame].compose(cam_to_body);
        let mut sum = 0.0;
        let mut count = 0;
        for obs in &f.observations[1..] {
            let t_w_cj = body_poses[obs.frame].compose(cam_to_body);
            let p_cj = Vector3::new(obs.uv.x * obs.depth, obs.uv.y * obs.depth, obs.depth);
            let p_ci = t_w_ci.inverse().compose(&t_w_cj).transform(&p_cj);
            if let Ok(proj) = project(&p_ci) {
                sum += (host.uv - proj).norm();
                count += 1;
            } else {
                // A reprojection behind the camera is itself inconsistent.
                sum += residual_threshold * 10.0;
                count += 1;
            }
        }
        if count > 0 && sum / count as f64 > residual_threshold {
            dynamic.push(f.id);
        }
    }
    dynamic
}

/// How a feature's depth enters the optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthStatus {
    /// Sensor depth agrees with triangulation; held constant.
    FixedFromSensor(f64),
    /// No usable sensor depth; the triangulated depth stays a free variable.
    FreeTriangulated(f64),
}

/// Validate a sensor depth against the triangulated one. The sensor value is
/// trusted (and frozen) only when present, inside the sensor range, and
/// within `agree_threshold` of the triangulation.
pub fn depth_validate(
    measured_depth: Option<f64>,
    triangulated_depth: f64,
    depth_range: (f64, f64),
    agree_threshold: f64,
) -> DepthStatus {
    if let Some(d) = measured_depth {
        if d >= depth_range.0
            && d <= depth_range.1
            && (d - triangulated_depth).abs() < agree_threshold
        {
            return DepthStatus::FixedFromSensor(d);
        }
    }
    DepthStatus::FreeTriangulated(triangulated_depth)
}

/// Keep the satellites of an epoch that pass all four per-satellite
/// criteria.
pub fn gnss_filter(
    epoch: &[GnssObservation],
    criteria: &GnssFilterCriteria,
) -> Vec<GnssObservation> {
    epoch
        .iter()
        .filter(|o| {
            o.pseudorange_sigma <= criteria.max_pr_sigma
                && o.doppler_sigma <= criteria.max_dop_sigma
                && o.track_count >= criteria.min_track_count
                && o.elevation >= criteria.min_elevation
        })
        .copied()
        .collect()
}

/// True when GNSS factors must be suppressed because the receiver moves
/// slower than `v_ths` (strict comparison).
pub fn low_speed_gate(receiver_speed: f64, v_ths: f64) -> bool {
    receiver_speed < v_ths
}
