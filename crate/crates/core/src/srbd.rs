//! Simplified dynamic models: single rigid body robot dynamics with point
//! contacts, and point-mass payloads held rigidly by the arm end effectors.
//!
//! These are plain residual evaluators. The transcription builds its own
//! constraint rows, so the functions here double as an independent check on
//! solved plans.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Number of feet end effectors.
pub const NUM_FEET: usize = 4;
/// Number of arm end effectors.
pub const NUM_ARMS: usize = 2;

/// Standard gravity used everywhere in the planner [m/s²].
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

/// CoM position, velocity and acceleration at a single instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl ComState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.acceleration.iter().all(|v| v.is_finite())
    }
}

/// Positions and forces at all six end effectors: feet first (indices 0..4),
/// then the two arms (indices 4..6).
///
/// Arm forces are the external forces acting on the robot at the grasp point,
/// so a payload held at rest pushes down with its own weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndEffectorSet {
    pub feet_positions: [Vector3<f64>; NUM_FEET],
    pub arm_positions: [Vector3<f64>; NUM_ARMS],
    pub forces: [Vector3<f64>; NUM_FEET + NUM_ARMS],
    pub contact_flags: [bool; NUM_FEET + NUM_ARMS],
}

impl EndEffectorSet {
    pub fn position(&self, i: usize) -> Vector3<f64> {
        if i < NUM_FEET {
            self.feet_positions[i]
        } else {
            self.arm_positions[i - NUM_FEET]
        }
    }

    /// True when every end effector out of contact carries exactly zero force.
    pub fn is_consistent(&self) -> bool {
        self.forces
            .iter()
            .zip(self.contact_flags.iter())
            .all(|(f, &c)| c || *f == Vector3::zeros())
    }
}

/// Robot-level constants of the simplified model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotConstants {
    /// Total robot mass [kg].
    pub mass: f64,
    pub gravity: Vector3<f64>,
    /// CoM reference height above the mean of the feet (vertical only) [m].
    pub com_ref_offset: Vector3<f64>,
    /// Nominal arm end-effector positions relative to the CoM [m].
    pub nominal_arm_offsets: [Vector3<f64>; NUM_ARMS],
}

impl RobotConstants {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(format!("robot mass must be positive, got {}", self.mass));
        }
        if self.gravity.x != 0.0 || self.gravity.y != 0.0 || !(self.gravity.z < 0.0) {
            return Err("gravity must point straight down".into());
        }
        if self.com_ref_offset.x != 0.0 || self.com_ref_offset.y != 0.0 {
            return Err("com_ref_offset must have only a vertical component".into());
        }
        Ok(())
    }
}

/// A payload of known mass rigidly grasped by one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayloadSpec {
    /// Payload mass [kg].
    pub mass: f64,
    /// End-effector index of the grasping arm, 5 (left) or 6 (right).
    pub grasp_arm_index: usize,
}

impl PayloadSpec {
    /// Zero-based arm slot (0 = left, 1 = right).
    pub fn arm_slot(&self) -> usize {
        self.grasp_arm_index - 5
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass >= 0.0 && self.mass.is_finite()) {
            return Err(format!("payload mass must be non-negative, got {}", self.mass));
        }
        if self.grasp_arm_index != 5 && self.grasp_arm_index != 6 {
            return Err(format!(
                "grasp_arm_index must be 5 or 6, got {}",
                self.grasp_arm_index
            ));
        }
        Ok(())
    }
}

/// Linear and angular residual of the single rigid body model with zero rate
/// of angular momentum: `[m r̈ − m g − Σ f_i ; −Σ (p_i − r) × f_i]`.
///
/// Only end effectors flagged in contact contribute.
pub fn srbd_residual(
    state: &ComState,
    ees: &EndEffectorSet,
    consts: &RobotConstants,
) -> (Vector3<f64>, Vector3<f64>) {
    let mut linear = consts.mass * state.acceleration - consts.mass * consts.gravity;
    let mut angular = Vector3::zeros();
    for i in 0..NUM_FEET + NUM_ARMS {
        if !ees.contact_flags[i] {
            continue;
        }
        let f = ees.forces[i];
        linear -= f;
        angular -= (ees.position(i) - state.position).cross(&f);
    }
    (linear, angular)
}

/// Newton residual of a point-mass payload, `m_pay p̈ − m_pay g + f_i`, where
/// `f_i` is the force the payload exerts on the robot at the grasp point.
pub fn payload_residual(
    arm_accel: &Vector3<f64>,
    arm_force: &Vector3<f64>,
    payload: &PayloadSpec,
) -> Vector3<f64> {
    payload.mass * arm_accel - payload.mass * GRAVITY + arm_force
}
