//! Motion-state classification from IMU, wheel, and visual evidence.
//!
//! A GLRT statistic over an IMU window separates stationary, slow and
//! aggressive motion; a 2-of-3 vote over IMU/wheel/visual criteria decides
//! whether the vehicle is truly static. The vote drives both the choice of
//! initialization method and the zero-velocity update during estimation.

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::preint::ImuSample;

#[derive(Debug, Error, PartialEq)]
pub enum MotionError {
    #[error("empty IMU window")]
    EmptyWindow,
    #[error("window-average acceleration is zero; cannot normalize")]
    ZeroAverageAcceleration,
}

/// Thresholds for the motion classifier and the stationary vote.
#[derive(Debug, Clone, Copy)]
pub struct MotionThresholds {
    /// GLRT stationary bound (`G < beta` is stationary evidence).
    pub glrt_beta: f64,
    /// GLRT aggressive bound (`G > gamma` is aggressive).
    pub glrt_gamma: f64,
    /// Wheel displacement bound in m^2.
    pub wheel_eta: f64,
    /// Visual parallax bound in squared normalized coordinates.
    pub parallax_theta: f64,
}

impl Default for MotionThresholds {
    fn default() -> Self {
        // For noise-only streams the expected GLRT is about 5-6; beta = 15
        // separates static sensor noise from real motion.
        Self {
            glrt_beta: 15.0,
            glrt_gamma: 500.0,
            wheel_eta: 1e-4,
            parallax_theta: 4e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionClass {
    Stationary,
    SlowMotion,
    AggressiveMotion,
}

/// GLRT motion-excitation statistic over an IMU window:
/// `G = (1/m) sum_t [ ||a_t - g * a_bar/|a_bar|||^2 / sigma_a^2
///                    + ||w_t||^2 / sigma_w^2 ]`.
pub fn glrt(
    window: &[ImuSample],
    sigma_acc: f64,
    sigma_gyro: f64,
    gravity_magnitude: f64,
) -> Result<f64, MotionError> {
    if window.is_empty() {
        return Err(MotionError::EmptyWindow);
    }
    let m = window.len() as f64;
    let mean_acc: Vector3<f64> = window.iter().map(|s| s.acc).sum::<Vector3<f64>>() / m;
    let norm = mean_acc.norm();
    if norm < 1e-9 {
        return Err(MotionError::ZeroAverageAcceleration);
    }
    let gravity_dir = mean_acc / norm * gravity_magnitude;
    let inv_sa2 = 1.0 / (sigma_acc * sigma_acc);
    let inv_sw2 = 1.0 / (sigma_gyro * sigma_gyro);
    let sum: f64 = window
        .iter()
        .map(|s| inv_sa2 * (s.acc - gravity_dir).norm_squared() + inv_sw2 * s.gyro.norm_squared())
        .sum();
    Ok(sum / m)
}

/// Three-way motion classification from the GLRT value. Boundary values map
/// to slow motion.
pub fn classify(g: f64, thresholds: &MotionThresholds) -> MotionClass {
    if g < thresholds.glrt_beta {
        MotionClass::Stationary
    } else if g > thresholds.glrt_gamma {
        MotionClass::AggressiveMotion
    } else {
        MotionClass::SlowMotion
    }
}

/// Average visual parallax between window images and the latest image, in
/// squared normalized coordinates.
///
/// `per_image_matches[i]` holds, for window image `i`, the matched pairs
/// `(observation in image i, observation in latest image)`. The inner sum is
/// normalized by the match count of each image; images without matches
/// contribute zero.
pub fn visual_parallax(per_image_matches: &[Vec<(Vector2<f64>, Vector2<f64>)>]) -> f64 {
    if per_image_matches.is_empty() {
        return 0.0;
    }
    let m = per_image_matches.len() as f64;
    let total: f64 = per_image_matches
        .iter()
        .map(|matches| {
            if matches.is_empty() {
                0.0
            } else {
                matches
                    .iter()
                    .map(|(a, b)| (a - b).norm_squared())
                    .sum::<f64>()
                    / matches.len() as f64
            }
        })
        .sum();
    total / m
}

/// True when at least two of the stationary criteria
/// `{G < beta, W < eta, V < theta}` hold.
pub fn stationary_vote(g: f64, w: f64, v: f64, thresholds: &MotionThresholds) -> bool {
    let votes = (g < thresholds.glrt_beta) as u32
        + (w < thresholds.wheel_eta) as u32
        + (v < thresholds.parallax_theta) as u32;
    votes >= 2
}
