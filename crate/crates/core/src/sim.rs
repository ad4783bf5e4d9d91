//! Planar kinematics of the mower's rear axle.
//!
//! The world frame has `x` lateral to the dock centerline and `y` along the
//! approach axis, increasing toward the dock. A heading of zero faces the
//! dock; the vehicle follows the unicycle model
//!
//! ```text
//! dx/dt = v sin(theta),  dy/dt = v cos(theta),  dtheta/dt = omega
//! ```
//!
//! integrated with fixed-step fourth-order Runge-Kutta.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{DockError, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Rear-axle pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Unit vector the vehicle is facing.
    pub fn forward(&self) -> (f64, f64) {
        (self.theta.sin(), self.theta.cos())
    }

    /// The pose reflected about the dock centerline.
    pub fn mirrored(&self) -> Pose {
        Pose::new(-self.x, self.y, -self.theta)
    }
}

/// Commanded linear velocity (m/s) and heading rate (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub v: f64,
    pub omega: f64,
}

impl ControlAction {
    pub fn new(v: f64, omega: f64) -> Self {
        ControlAction { v, omega }
    }

    pub fn is_within(&self, cfg: &SimConfig) -> bool {
        const SLACK: f64 = 1e-12;
        self.v >= -SLACK && self.v <= cfg.v_max + SLACK && self.omega.abs() <= cfg.omega_max + SLACK
    }

    pub fn check(&self, cfg: &SimConfig) -> Result<()> {
        if !(self.v.is_finite() && self.omega.is_finite()) {
            return Err(DockError::InvalidInput(format!("non-finite control action {self:?}")));
        }
        if !self.is_within(cfg) {
            return Err(DockError::InvalidInput(format!(
                "control action {self:?} outside v in [0, {}], |omega| <= {}",
                cfg.v_max, cfg.omega_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Control period in seconds.
    pub dt: f64,
    pub v_max: f64,
    pub omega_max: f64,
    /// The episode stops once the rear axle reaches this `y`.
    pub y_goal: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.2,
            v_max: 0.4,
            omega_max: 30f64.to_radians(),
            y_goal: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt.is_finite()
            && self.dt > 0.0
            && self.y_goal.is_finite()
            && self.y_goal > 0.0
            && self.v_max.is_finite()
            && self.v_max > 0.0
            && self.omega_max.is_finite()
            && self.omega_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(DockError::Config(format!("invalid sim config {self:?}")))
        }
    }
}

fn derivative(theta: f64, action: ControlAction) -> [f64; 3] {
    [action.v * theta.sin(), action.v * theta.cos(), action.omega]
}

fn rk4(pose: Pose, action: ControlAction, h: f64) -> Pose {
    // Heading is carried unwrapped inside the step and wrapped once at the end.
    let k1 = derivative(pose.theta, action);
    let k2 = derivative(pose.theta + 0.5 * h * k1[2], action);
    let k3 = derivative(pose.theta + 0.5 * h * k2[2], action);
    let k4 = derivative(pose.theta + h * k3[2], action);
    let incr = |i: usize| h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    Pose {
        x: pose.x + incr(0),
        y: pose.y + incr(1),
        theta: normalize_angle(pose.theta + incr(2)),
    }
}

/// Advances `pose` by one control period with a single RK4 step.
pub fn step(pose: Pose, action: ControlAction, dt: f64) -> Result<Pose> {
    step_substeps(pose, action, dt, 1)
}

/// Advances `pose` by `dt`, split into `substeps` equal RK4 steps.
pub fn step_substeps(pose: Pose, action: ControlAction, dt: f64, substeps: usize) -> Result<Pose> {
    if !pose.is_finite() || !action.v.is_finite() || !action.omega.is_finite() {
        return Err(DockError::InvalidInput(format!(
            "non-finite step input: pose {pose:?}, action {action:?}"
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DockError::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if substeps == 0 {
        return Err(DockError::InvalidInput("substeps must be >= 1".into()));
    }
    let h = dt / substeps as f64;
    let mut p = pose;
    for _ in 0..substeps {
        p = rk4(p, action, h);
    }
    Ok(p)
}

/// Whether the stop line has been reached.
pub fn is_done(pose: &Pose, cfg: &SimConfig) -> bool {
    pose.y >= cfg.y_goal
}
