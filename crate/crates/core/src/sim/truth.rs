//! Continuous-time ground truth for each trajectory primitive.

use nalgebra::{UnitQuaternion, Vector3};

use super::{Scenario, SimError, TrajectoryKind};
use crate::geom::so3_exp;

/// Ground-truth kinematic state at a single instant.
#[derive(Debug, Clone, Copy)]
pub struct TruthState {
    pub position: Vector3<f64>,
    /// Body-to-world rotation.
    pub rotation: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// Angular velocity in the body frame.
    pub omega_body: Vector3<f64>,
}

/// Continuous ground truth over `[0, duration]`.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    kind: TrajectoryKind,
    duration: f64,
    yaw0: f64,
    p0: Vector3<f64>,
    /// Dense position table for primitives without a closed-form integral.
    table: Option<PositionTable>,
}

#[derive(Debug, Clone)]
struct PositionTable {
    dt: f64,
    positions: Vec<Vector3<f64>>,
    velocities: Vec<Vector3<f64>>,
}

impl PositionTable {
    /// Cubic Hermite interpolation; derivative-consistent with the stored
    /// velocities at the nodes.
    fn eval(&self, t: f64) -> Vector3<f64> {
        let idx = (t / self.dt).floor() as usize;
        let idx = idx.min(self.positions.len() - 2);
        let u = (t - idx as f64 * self.dt) / self.dt;
        let (p0, p1) = (self.positions[idx], self.positions[idx + 1]);
        let (m0, m1) = (self.velocities[idx] * self.dt, self.velocities[idx + 1] * self.dt);
        let u2 = u * u;
        let u3 = u2 * u;
        p0 * (2.0 * u3 - 3.0 * u2 + 1.0)
            + m0 * (u3 - 2.0 * u2 + u)
            + p1 * (-2.0 * u3 + 3.0 * u2)
            + m1 * (u3 - u2)
    }
}

fn yaw_quat(yaw: f64) -> UnitQuaternion<f64> {
    so3_exp(Vector3::new(0.0, 0.0, yaw))
}

impl GroundTruth {
    /// Heading angle at time `t` (planar primitives).
    fn heading(&self, t: f64) -> (f64, f64) {
        match self.kind {
            TrajectoryKind::Arc { yaw_rate, .. } => (self.yaw0 + yaw_rate * t, yaw_rate),
            TrajectoryKind::Loop { speed, radius } => {
                let w = speed / radius;
                (self.yaw0 + w * t, w)
            }
            TrajectoryKind::Zigzag {
                heading_amplitude,
                period,
                ..
            } => {
                let w = 2.0 * std::f64::consts::PI / period;
                (
                    self.yaw0 + heading_amplitude * (w * t).sin(),
                    heading_amplitude * w * (w * t).cos(),
                )
            }
            _ => (self.yaw0, 0.0),
        }
    }

    /// Speed profile for the stop-and-go cycle and its derivative.
    fn stop_and_go_speed(speed: f64, ramp: f64, cruise: f64, stop: f64, t: f64) -> (f64, f64, f64) {
        use std::f64::consts::PI;
        let cycle = 2.0 * ramp + cruise + stop;
        let n = (t / cycle).floor();
        let u = t - n * cycle;
        // Distance covered in one full cycle.
        let cycle_dist = speed * (ramp + cruise);
        let (s, sdot, dist_in_cycle) = if u < ramp {
            let phase = PI * u / ramp;
            let s = 0.5 * speed * (1.0 - phase.cos());
            let sdot = 0.5 * speed * PI / ramp * phase.sin();
            let d = 0.5 * speed * (u - ramp / PI * phase.sin());
            (s, sdot, d)
        } else if u < ramp + cruise {
            let d = 0.5 * speed * ramp + speed * (u - ramp);
            (speed, 0.0, d)
        } else if u < 2.0 * ramp + cruise {
            let v = u - ramp - cruise;
            let phase = PI * v / ramp;
            let s = 0.5 * speed * (1.0 + phase.cos());
            let sdot = -0.5 * speed * PI / ramp * phase.sin();
            let d = 0.5 * speed * ramp + speed * cruise + 0.5 * speed * (v + ramp / PI * phase.sin());
            (s, sdot, d)
        } else {
            (0.0, 0.0, speed * (ramp + cruise))
        };
        (s, sdot, n * cycle_dist + dist_in_cycle)
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Evaluate the full kinematic state at time `t in [0, duration]`.
    pub fn state(&self, t: f64) -> TruthState {
        match self.kind {
            TrajectoryKind::Static => TruthState {
                position: self.p0,
                rotation: yaw_quat(self.yaw0),
                velocity: Vector3::zeros(),
                acceleration: Vector3::zeros(),
                omega_body: Vector3::zeros(),
            },
            TrajectoryKind::StraightLine { speed } => {
                let dir = Vector3::new(self.yaw0.cos(), self.yaw0.sin(), 0.0);
                TruthState {
                    position: self.p0 + dir * speed * t,
                    rotation: yaw_quat(self.yaw0),
                    velocity: dir * speed,
                    acceleration: Vector3::zeros(),
                    omega_body: Vector3::zeros(),
                }
            }
            TrajectoryKind::Arc { .. } | TrajectoryKind::Loop { .. } => {
                let (speed, w) = match self.kind {
                    TrajectoryKind::Arc { speed, yaw_rate } => (speed, yaw_rate),
                    TrajectoryKind::Loop { speed, radius } => (speed, speed / radius),
                    _ => unreachable!(),
                };
                let psi = self.yaw0 + w * t;
                let position = self.p0
                    + Vector3::new(
                        speed / w * (psi.sin() - self.yaw0.sin()),
                        -speed / w * (psi.cos() - self.yaw0.cos()),
                        0.0,
                    );
                TruthState {
                    position,
                    rotation: yaw_quat(psi),
                    velocity: Vector3::new(speed * psi.cos(), speed * psi.sin(), 0.0),
                    acceleration: Vector3::new(
                        -speed * w * psi.sin(),
                        speed * w * psi.cos(),
                        0.0,
                    ),
                    omega_body: Vector3::new(0.0, 0.0, w),
                }
            }
            TrajectoryKind::Zigzag { speed, .. } => {
                let (psi, psidot) = self.heading(t);
                let table = self.table.as_ref().expect("zigzag has a position table");
                TruthState {
                    position: table.eval(t),
                    rotation: yaw_quat(psi),
                    velocity: Vector3::new(speed * psi.cos(), speed * psi.sin(), 0.0),
                    acceleration: Vector3::new(
                        -speed * psidot * psi.sin(),
                        speed * psidot * psi.cos(),
                        0.0,
                    ),
                    omega_body: Vector3::new(0.0, 0.0, psidot),
                }
            }
            TrajectoryKind::StopAndGo {
                speed,
                ramp,
                cruise,
                stop,
            } => {
                let dir = Vector3::new(self.yaw0.cos(), self.yaw0.sin(), 0.0);
                let (s, sdot, dist) = Self::stop_and_go_speed(speed, ramp, cruise, stop, t);
                TruthState {
                    position: self.p0 + dir * dist,
                    rotation: yaw_quat(self.yaw0),
                    velocity: dir * s,
                    acceleration: dir * sdot,
                    omega_body: Vector3::zeros(),
                }
            }
            TrajectoryKind::SlopeClimb { speed, slope } => {
                let dir = Vector3::new(
                    self.yaw0.cos() * slope.cos(),
                    self.yaw0.sin() * slope.cos(),
                    slope.sin(),
                );
                // Yaw first, then pitch the body nose-up by the slope angle.
                let rotation = yaw_quat(self.yaw0) * so3_exp(Vector3::new(0.0, -slope, 0.0));
                TruthState {
                    position: self.p0 + dir * speed * t,
                    rotation,
                    velocity: dir * speed,
                    acceleration: Vector3::zeros(),
                    omega_body: Vector3::zeros(),
                }
            }
        }
    }

    /// Axis-aligned bounds of the trajectory, sampled densely.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        let n = ((self.duration * 10.0) as usize).max(2);
        for i in 0..=n {
            let p = self.state(self.duration * i as f64 / n as f64).position;
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        (lo, hi)
    }
}

/// Build the continuous ground truth for a scenario.
pub fn generate_truth(scenario: &Scenario) -> Result<GroundTruth, SimError> {
    scenario.validate()?;
    let mut truth = GroundTruth {
        kind: scenario.trajectory,
        duration: scenario.duration,
        yaw0: scenario.initial_yaw,
        p0: scenario.initial_position,
        table: None,
    };
    if let TrajectoryKind::Zigzag { .. } = scenario.trajectory {
        // Integrate the closed-form velocity on a fine grid (RK4); cubic
        // Hermite interpolation keeps position and velocity consistent.
        let dt = 5e-4;
        let steps = (scenario.duration / dt).ceil() as usize;
        let mut positions = Vec::with_capacity(steps + 2);
        let mut velocities = Vec::with_capacity(steps + 2);
        let vel = |t: f64| {
            let (psi, _) = truth.heading(t);
            let TrajectoryKind::Zigzag { speed, .. } = scenario.trajectory else {
                unreachable!()
            };
            Vector3::new(speed * psi.cos(), speed * psi.sin(), 0.0)
        };
        let mut p = scenario.initial_position;
        for i in 0..=steps + 1 {
            let t = i as f64 * dt;
            positions.push(p);
            velocities.push(vel(t));
            let k1 = vel(t);
            let k2 = vel(t + dt / 2.0);
            let k4 = vel(t + dt);
            p += (k1 + 4.0 * k2 + k4) * (dt / 6.0);
        }
        truth.table = Some(PositionTable {
            dt,
            positions,
            velocities,
        });
    }
    Ok(truth)
}
