//! Constraint re-checks computed from knot values alone, independent of the
//! transcription. Used for reports and for re-verifying exported plans.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::srbd::{payload_residual, srbd_residual, EndEffectorSet, PayloadSpec, RobotConstants, NUM_ARMS, NUM_FEET};
use crate::transcription::{KnotValues, PlannerMode, PlannerWeights};

/// Parameters a knot table is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckConstants {
    pub mode: PlannerMode,
    pub dt: f64,
    pub robot: RobotConstants,
    pub arm_masses: [f64; NUM_ARMS],
    pub weights: PlannerWeights,
    pub contact_normal: Vector3<f64>,
    pub tangents: [Vector3<f64>; 2],
    /// Center of the final CoM region.
    pub final_com_center: Option<Vector3<f64>>,
}

/// Residuals (largest absolute value, want 0) and margins (smallest slack,
/// want ≥ 0). Arm entries are absent for locomotion-only tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub dynamics_residual: f64,
    pub payload_residual: Option<f64>,
    /// Constant-jerk integration mismatch between consecutive knots.
    pub continuity_residual: f64,
    pub normal_force_margin: f64,
    pub min_normal_force: f64,
    pub friction_margin: f64,
    /// Largest force on a foot that cannot carry one.
    pub unloaded_force: f64,
    pub workspace_margin: Option<f64>,
    pub separation_margin: Option<f64>,
    pub force_box_margin: Option<f64>,
    /// Largest arm acceleration per axis over both segment ends.
    pub max_arm_acceleration: Option<[f64; 3]>,
    pub final_com_margin: Option<f64>,
}

impl Margins {
    /// Human-readable list of everything outside `tol`.
    pub fn violations(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let mut residual = |name: &str, v: Option<f64>| {
            if let Some(v) = v {
                if !(v <= tol) {
                    out.push(format!("{name} residual {v:.3e}"));
                }
            }
        };
        residual("dynamics", Some(self.dynamics_residual));
        residual("payload", self.payload_residual);
        residual("continuity", Some(self.continuity_residual));
        residual("unloaded force", Some(self.unloaded_force));
        let mut margin = |name: &str, v: Option<f64>| {
            if let Some(v) = v {
                if !(v >= -tol) {
                    out.push(format!("{name} margin {v:.3e}"));
                }
            }
        };
        margin("normal force", Some(self.normal_force_margin));
        margin("friction", Some(self.friction_margin));
        margin("workspace", self.workspace_margin);
        margin("separation", self.separation_margin);
        margin("force box", self.force_box_margin);
        margin("final CoM", self.final_com_margin);
        out
    }
}

fn amax(v: &Vector3<f64>) -> f64 {
    v.amax()
}

/// Acceleration of a cubic Hermite segment at its start and end.
pub fn hermite_end_accelerations(
    p0: &Vector3<f64>,
    v0: &Vector3<f64>,
    p1: &Vector3<f64>,
    v1: &Vector3<f64>,
    h: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let dp = p1 - p0;
    let a0 = (6.0 * dp - h * (4.0 * v0 + 2.0 * v1)) / (h * h);
    let a1 = (-6.0 * dp + h * (2.0 * v0 + 4.0 * v1)) / (h * h);
    (a0, a1)
}

pub fn check_knots(knots: &[KnotValues], c: &CheckConstants) -> Margins {
    let w = &c.weights;
    let n = c.contact_normal;
    let mut m = Margins {
        dynamics_residual: 0.0,
        payload_residual: None,
        continuity_residual: 0.0,
        normal_force_margin: f64::INFINITY,
        min_normal_force: f64::INFINITY,
        friction_margin: f64::INFINITY,
        unloaded_force: 0.0,
        workspace_margin: None,
        separation_margin: None,
        force_box_margin: None,
        max_arm_acceleration: None,
        final_com_margin: None,
    };
    let aware = c.mode == PlannerMode::PayloadAware;
    for k in knots {
        let arms = k.arms.filter(|_| aware);
        let mut forces = [Vector3::zeros(); NUM_FEET + NUM_ARMS];
        let mut flags = [false; NUM_FEET + NUM_ARMS];
        for f in 0..NUM_FEET {
            forces[f] = k.feet_forces[f];
            flags[f] = k.loaded[f];
        }
        let mut arm_positions = [Vector3::zeros(); NUM_ARMS];
        if let Some(a) = &arms {
            for i in 0..NUM_ARMS {
                forces[NUM_FEET + i] = a[i].force;
                flags[NUM_FEET + i] = true;
                arm_positions[i] = a[i].position;
            }
        }
        let ees = EndEffectorSet { feet_positions: k.feet_positions, arm_positions, forces, contact_flags: flags };
        let (lin, ang) = srbd_residual(&k.com, &ees, &c.robot);
        m.dynamics_residual = m.dynamics_residual.max(amax(&lin)).max(amax(&ang));

        for f in 0..NUM_FEET {
            let force = k.feet_forces[f];
            if !k.loaded[f] {
                m.unloaded_force = m.unloaded_force.max(amax(&force));
                continue;
            }
            let fn_ = n.dot(&force);
            m.min_normal_force = m.min_normal_force.min(fn_);
            m.normal_force_margin = m.normal_force_margin.min(fn_ - w.f_z_min);
            for t in &c.tangents {
                m.friction_margin = m.friction_margin.min(w.mu * fn_ - t.dot(&force).abs());
            }
        }

        if let Some(a) = &arms {
            let mut ws = f64::INFINITY;
            let mut fb = f64::INFINITY;
            for i in 0..NUM_ARMS {
                let d = a[i].position - k.com.position - c.robot.nominal_arm_offsets[i];
                let rest = c.arm_masses[i] * c.robot.gravity;
                let df = a[i].force - rest;
                for ax in 0..3 {
                    ws = ws.min(0.5 * w.b_ee[ax] - d[ax].abs());
                    fb = fb.min(if c.arm_masses[i] > 0.0 { 0.5 * w.b_f[ax] - df[ax].abs() } else { -a[i].force[ax].abs() });
                }
            }
            let sep = a[0].position.y - a[1].position.y - w.b_s;
            m.workspace_margin = Some(m.workspace_margin.map_or(ws, |v: f64| v.min(ws)));
            m.force_box_margin = Some(m.force_box_margin.map_or(fb, |v: f64| v.min(fb)));
            m.separation_margin = Some(m.separation_margin.map_or(sep, |v: f64| v.min(sep)));
        }
    }

    let h = c.dt;
    for pair in knots.windows(2) {
        let (k0, k1) = (&pair[0], &pair[1]);
        let j = k0.jerk.unwrap_or_else(Vector3::zeros);
        let s0 = &k0.com;
        let r = s0.position + h * s0.velocity + h * h / 2.0 * s0.acceleration + h * h * h / 6.0 * j;
        let v = s0.velocity + h * s0.acceleration + h * h / 2.0 * j;
        let a = s0.acceleration + h * j;
        let mis = amax(&(r - k1.com.position)).max(amax(&(v - k1.com.velocity))).max(amax(&(a - k1.com.acceleration)));
        m.continuity_residual = m.continuity_residual.max(mis);

        if let (true, Some(a0), Some(a1)) = (aware, k0.arms, k1.arms) {
            let mut res: f64 = m.payload_residual.unwrap_or(0.0);
            let mut acc = m.max_arm_acceleration.unwrap_or([0.0; 3]);
            for i in 0..NUM_ARMS {
                let (acc0, acc1) =
                    hermite_end_accelerations(&a0[i].position, &a0[i].velocity, &a1[i].position, &a1[i].velocity, h);
                let spec = PayloadSpec { mass: c.arm_masses[i], grasp_arm_index: 5 + i };
                if c.arm_masses[i] > 0.0 {
                    res = res.max(amax(&payload_residual(&acc0, &a0[i].force, &spec)));
                    res = res.max(amax(&payload_residual(&acc1, &a1[i].force, &spec)));
                }
                for ax in 0..3 {
                    acc[ax] = acc[ax].max(acc0[ax].abs()).max(acc1[ax].abs());
                }
            }
            m.payload_residual = Some(res);
            m.max_arm_acceleration = Some(acc);
        }
    }

    if let (Some(center), Some(last)) = (c.final_com_center, knots.last()) {
        let d = last.com.position - center;
        let margin = (0..3).map(|ax| w.final_com_box[ax] - d[ax].abs()).fold(f64::INFINITY, f64::min);
        m.final_com_margin = Some(margin);
    }
    m
}
