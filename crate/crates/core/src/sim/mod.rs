//! Deterministic scenario simulator.
//!
//! A [`Scenario`] describes a trajectory primitive, sensor rates and noise
//! levels, the landmark field and satellite constellation, and a schedule of
//! anomaly injections. [`truth::generate_truth`] produces the continuous
//! ground-truth motion, [`synth::synthesize`] samples clean sensor streams
//! from it, and [`inject::inject`] applies the scheduled corruptions. The
//! same `(scenario, seed)` pair always produces byte-identical output.

pub mod inject;
pub mod scenario_file;
pub mod synth;
pub mod truth;

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad scenario: {0}")]
    BadScenario(String),
}

/// Trajectory primitive with its parameters. All primitives are C1 in
/// position; headings are smooth except at nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryKind {
    Static,
    StraightLine {
        speed: f64,
    },
    Arc {
        speed: f64,
        yaw_rate: f64,
    },
    /// Sinusoidal heading around the initial yaw at constant forward speed.
    Zigzag {
        speed: f64,
        heading_amplitude: f64,
        period: f64,
    },
    /// Straight line with a smooth accelerate / cruise / brake / stop cycle.
    StopAndGo {
        speed: f64,
        ramp: f64,
        cruise: f64,
        stop: f64,
    },
    /// Straight climb at a constant incline angle.
    SlopeClimb {
        speed: f64,
        slope: f64,
    },
    /// Closed circle, `yaw_rate = speed / radius`.
    Loop {
        speed: f64,
        radius: f64,
    },
}

/// Sensor sampling rates in Hz.
#[derive(Debug, Clone, Copy)]
pub struct Rates {
    pub imu: f64,
    pub wheel: f64,
    pub camera: f64,
    pub gnss: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            imu: 200.0,
            wheel: 50.0,
            camera: 10.0,
            gnss: 1.0,
        }
    }
}

/// Per-sample noise standard deviations used during synthesis. Zero values
/// are allowed here (noise-free synthesis); the calibration written into the
/// dataset floors them so downstream whitening stays valid.
#[derive(Debug, Clone, Copy)]
pub struct NoiseLevels {
    pub acc: f64,
    pub gyro: f64,
    pub acc_bias_walk: f64,
    pub gyro_bias_walk: f64,
    pub wheel_velocity: f64,
    pub wheel_yaw_rate: f64,
    /// Feature observation noise in normalized image coordinates.
    pub feature: f64,
    pub depth: f64,
    pub pseudorange: f64,
    pub doppler: f64,
    pub clock_walk: f64,
}

impl NoiseLevels {
    pub fn nominal() -> Self {
        Self {
            acc: 0.05,
            gyro: 0.005,
            acc_bias_walk: 1e-4,
            gyro_bias_walk: 1e-5,
            wheel_velocity: 0.02,
            wheel_yaw_rate: 0.005,
            feature: 0.002,
            depth: 0.02,
            pseudorange: 1.0,
            doppler: 0.2,
            clock_walk: 0.01,
        }
    }

    pub fn zero() -> Self {
        Self {
            acc: 0.0,
            gyro: 0.0,
            acc_bias_walk: 0.0,
            gyro_bias_walk: 0.0,
            wheel_velocity: 0.0,
            wheel_yaw_rate: 0.0,
            feature: 0.0,
            depth: 0.0,
            pseudorange: 0.0,
            doppler: 0.0,
            clock_walk: 0.0,
        }
    }
}

/// Landmark field: `count` points drawn uniformly from a box around the
/// trajectory, expanded by `margin` horizontally and spanning
/// `[z_min, z_max]` vertically.
#[derive(Debug, Clone, Copy)]
pub struct LandmarkField {
    pub count: usize,
    pub margin: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for LandmarkField {
    fn default() -> Self {
        Self {
            count: 250,
            margin: 7.0,
            z_min: 0.0,
            z_max: 2.5,
        }
    }
}

/// Virtual constellation: satellites at fixed high-elevation directions in
/// the local ENU frame at a fixed nominal range, with small constant
/// velocities. This preserves pseudorange/Doppler geometry without orbital
/// mechanics.
#[derive(Debug, Clone, Copy)]
pub struct Constellation {
    pub count: usize,
    pub range: f64,
}

impl Default for Constellation {
    fn default() -> Self {
        Self {
            count: 0,
            range: 2e7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyType {
    /// Wheel reports extra forward motion.
    WheelSlip,
    /// Body moves while the wheels do not (wheel stream zeroed).
    CarpetPull,
    /// Wheels move while the body does not (wheel stream reports motion).
    Suspension,
    /// All feature observations dropped.
    FeatureDropout,
    /// Feature noise inflated 10x and half of the tracks dropped.
    FeatureNoiseBurst,
    /// A subset of landmarks is given a constant velocity.
    DynamicFeatures,
    /// All GNSS observations dropped.
    GnssOutage,
    /// GNSS sigmas and noise inflated.
    GnssDegrade,
    /// Label-only marker for intentionally slow segments.
    LowSpeedSegment,
}

impl AnomalyType {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnomalyType::WheelSlip => "wheel_slip",
            AnomalyType::CarpetPull => "carpet_pull",
            AnomalyType::Suspension => "suspension",
            AnomalyType::FeatureDropout => "feature_dropout",
            AnomalyType::FeatureNoiseBurst => "feature_noise_burst",
            AnomalyType::DynamicFeatures => "dynamic_features",
            AnomalyType::GnssOutage => "gnss_outage",
            AnomalyType::GnssDegrade => "gnss_degrade",
            AnomalyType::LowSpeedSegment => "low_speed_segment",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "wheel_slip" => AnomalyType::WheelSlip,
            "carpet_pull" => AnomalyType::CarpetPull,
            "suspension" => AnomalyType::Suspension,
            "feature_dropout" => AnomalyType::FeatureDropout,
            "feature_noise_burst" => AnomalyType::FeatureNoiseBurst,
            "dynamic_features" => AnomalyType::DynamicFeatures,
            "gnss_outage" => AnomalyType::GnssOutage,
            "gnss_degrade" => AnomalyType::GnssDegrade,
            "low_speed_segment" => AnomalyType::LowSpeedSegment,
            _ => return None,
        })
    }

    /// True for anomaly types that corrupt the wheel stream.
    pub fn is_wheel(&self) -> bool {
        matches!(
            self,
            AnomalyType::WheelSlip | AnomalyType::CarpetPull | AnomalyType::Suspension
        )
    }
}

/// One scheduled anomaly over the half-open interval `[t_start, t_end)`.
#[derive(Debug, Clone, Copy)]
pub struct AnomalyEvent {
    pub kind: AnomalyType,
    pub t_start: f64,
    pub t_end: f64,
    pub magnitude: f64,
    /// Fraction of the landmark field affected (DynamicFeatures only).
    pub fraction: f64,
}

impl AnomalyEvent {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_end
    }
}

/// Full simulator description; `(scenario, seed)` determines every output.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub trajectory: TrajectoryKind,
    pub duration: f64,
    pub rates: Rates,
    pub noise: NoiseLevels,
    pub landmarks: LandmarkField,
    pub constellation: Constellation,
    pub anomalies: Vec<AnomalyEvent>,
    pub seed: u64,
    pub initial_yaw: f64,
    pub initial_position: Vector3<f64>,
    pub initial_gyro_bias: Vector3<f64>,
    pub initial_acc_bias: Vector3<f64>,
}

impl Scenario {
    pub fn new(trajectory: TrajectoryKind, duration: f64) -> Self {
        Self {
            trajectory,
            duration,
            rates: Rates::default(),
            noise: NoiseLevels::nominal(),
            landmarks: LandmarkField::default(),
            constellation: Constellation::default(),
            anomalies: Vec::new(),
            seed: 0,
            initial_yaw: 0.0,
            initial_position: Vector3::zeros(),
            initial_gyro_bias: Vector3::new(0.006, -0.004, 0.008),
            initial_acc_bias: Vector3::new(0.02, -0.01, 0.03),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.duration <= 0.0 {
            return Err(SimError::BadScenario("duration must be positive".into()));
        }
        for (name, r) in [
            ("imu", self.rates.imu),
            ("wheel", self.rates.wheel),
            ("camera", self.rates.camera),
        ] {
            if r <= 0.0 {
                return Err(SimError::BadScenario(format!(
                    "{name} rate must be positive"
                )));
            }
        }
        if self.constellation.count > 0 && self.rates.gnss <= 0.0 {
            return Err(SimError::BadScenario("gnss rate must be positive".into()));
        }
        for a in &self.anomalies {
            if a.t_start < 0.0 || a.t_end > self.duration || a.t_start >= a.t_end {
                return Err(SimError::BadScenario(format!(
                    "anomaly interval [{}, {}) outside duration {}",
                    a.t_start, a.t_end, self.duration
                )));
            }
        }
        match self.trajectory {
            TrajectoryKind::Arc { yaw_rate, .. } if yaw_rate == 0.0 => Err(SimError::BadScenario(
                "arc yaw_rate must be nonzero; use straight_line".into(),
            )),
            TrajectoryKind::Loop { radius, .. } if radius <= 0.0 => {
                Err(SimError::BadScenario("loop radius must be positive".into()))
            }
            TrajectoryKind::Zigzag { period, .. } if period <= 0.0 => {
                Err(SimError::BadScenario("zigzag period must be positive".into()))
            }
            TrajectoryKind::StopAndGo { ramp, .. } if ramp <= 0.0 => {
                Err(SimError::BadScenario("stop_and_go ramp must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}
