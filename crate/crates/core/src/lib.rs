//! Multi-sensor state estimation for ground vehicles.
//!
//! The crate fuses RGB-D feature tracks, IMU, wheel-odometer and GNSS
//! raw measurements in a sliding-window MAP estimator, with an adaptive
//! three-way initializer and per-sensor anomaly guards. A deterministic
//! scenario simulator and trajectory-evaluation tools are included so the
//! whole pipeline can be exercised without hardware.

pub mod geom;
pub mod guard;
pub mod motion;
pub mod preint;
pub mod sim;

pub use geom::{Calibration, Pose};
pub use preint::{ImuSample, WheelSample};
