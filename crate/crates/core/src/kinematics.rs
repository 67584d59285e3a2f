//! Chain kinematics of a quadruped with two arms, leg manipulability and a
//! prioritized inverse-kinematics tracker.
//!
//! Velocity coordinates are `[v_base (world), w_base (world), joint rates]`.
//! Joints are ordered limb by limb as listed in the robot file: the four legs
//! (FL, FR, RL, RR) then the two arms (left, right).

use std::path::Path;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::gait::Leg;
use crate::srbd::{NUM_ARMS, NUM_FEET};
use crate::transcription::{PlannerMode, TrajectoryPlan};

pub const BASE_DOF: usize = 6;
pub const LEG_DOF: usize = 3;
pub const ARM_DOF: usize = 6;
pub const NUM_JOINTS: usize = NUM_FEET * LEG_DOF + NUM_ARMS * ARM_DOF;
pub const NUM_DOF: usize = BASE_DOF + NUM_JOINTS;

const DEFAULT_ROBOT: &str = include_str!("../robots/default.toml");

#[derive(Debug, thiserror::Error)]
pub enum KinematicsError {
    #[error("cannot read robot file: {0}")]
    Io(#[from] std::io::Error),
    #[error("robot file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid robot description: {0}")]
    Invalid(String),
    #[error("joint {name} = {value} outside [{lower}, {upper}]")]
    JointLimit { name: String, value: f64, lower: f64, upper: f64 },
    #[error("configuration has {0} joint values, expected {NUM_JOINTS}")]
    Dimension(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Joint {
    pub name: String,
    pub axis: Vector3<f64>,
    /// Translation from the parent joint frame to this joint, in the parent frame.
    pub offset: Vector3<f64>,
    pub lower: f64,
    pub upper: f64,
    pub max_velocity: f64,
    pub nominal: f64,
    /// Mass of the link moved by this joint.
    pub mass: f64,
    /// Link CoM in this joint's frame.
    pub com: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimbKind {
    Leg,
    Arm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limb {
    pub name: String,
    pub kind: LimbKind,
    /// Limb root in the base frame.
    pub mount: Vector3<f64>,
    /// End effector in the last joint's frame.
    pub tip: Vector3<f64>,
    pub joints: Vec<Joint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseLink {
    pub mass: f64,
    pub com: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotFile {
    base: BaseLink,
    limbs: Vec<Limb>,
}

/// Immutable robot description. Legs occupy limbs 0..4, arms 4..6.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicModel {
    pub base: BaseLink,
    limbs: Vec<Limb>,
    starts: Vec<usize>,
}

/// Floating-base configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion<f64>,
    pub joints: Vec<f64>,
}

impl Configuration {
    /// Base position, base roll/pitch/yaw, then joints.
    pub fn to_vector(&self) -> Vec<f64> {
        let (r, p, y) = self.base_orientation.euler_angles();
        let mut v = Vec::with_capacity(NUM_DOF);
        v.extend(self.base_position.iter());
        v.extend([r, p, y]);
        v.extend(self.joints.iter());
        v
    }

    /// Applies a velocity-coordinate displacement.
    pub fn integrate(&mut self, dq: &DVector<f64>) {
        self.base_position += Vector3::new(dq[0], dq[1], dq[2]);
        let w = Vector3::new(dq[3], dq[4], dq[5]);
        self.base_orientation = UnitQuaternion::from_scaled_axis(w) * self.base_orientation;
        for (j, q) in self.joints.iter_mut().enumerate() {
            *q += dq[BASE_DOF + j];
        }
    }
}

/// World positions of the task frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frames {
    pub feet: [Vector3<f64>; NUM_FEET],
    pub arms: [Vector3<f64>; NUM_ARMS],
    /// Mass-weighted mean of the link CoMs.
    pub com: Vector3<f64>,
}

struct LimbPose {
    origins: Vec<Vector3<f64>>,
    axes: Vec<Vector3<f64>>,
    link_coms: Vec<Vector3<f64>>,
    tip: Vector3<f64>,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl KinematicModel {
    pub fn from_toml_str(text: &str) -> Result<Self, KinematicsError> {
        let file: RobotFile = toml::from_str(text)?;
        Self::new(file.base, file.limbs)
    }

    pub fn load(path: &Path) -> Result<Self, KinematicsError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// The shipped robot.
    pub fn default_robot() -> Self {
        Self::from_toml_str(DEFAULT_ROBOT).expect("shipped robot description is valid")
    }

    pub fn new(base: BaseLink, mut limbs: Vec<Limb>) -> Result<Self, KinematicsError> {
        let bad = |m: String| Err(KinematicsError::Invalid(m));
        if !(base.mass > 0.0 && base.mass.is_finite()) || !base.com.iter().all(|c| c.is_finite()) {
            return bad("base mass must be positive and finite".into());
        }
        if limbs.len() != NUM_FEET + NUM_ARMS {
            return bad(format!("expected {} limbs, found {}", NUM_FEET + NUM_ARMS, limbs.len()));
        }
        for (i, limb) in limbs.iter_mut().enumerate() {
            let (kind, dof) = if i < NUM_FEET { (LimbKind::Leg, LEG_DOF) } else { (LimbKind::Arm, ARM_DOF) };
            if limb.kind != kind {
                return bad(format!("limb {} ({}) must be a {:?}; legs come first", i, limb.name, kind));
            }
            if i < NUM_FEET && limb.name != Leg::ALL[i].name() {
                return bad(format!("leg {} must be named {}", i, Leg::ALL[i].name()));
            }
            if limb.joints.len() != dof {
                return bad(format!("limb {} has {} joints, expected {}", limb.name, limb.joints.len(), dof));
            }
            let vecs_ok = limb.mount.iter().chain(limb.tip.iter()).all(|c| c.is_finite());
            if !vecs_ok {
                return bad(format!("limb {} has non-finite geometry", limb.name));
            }
            for j in limb.joints.iter_mut() {
                let n = j.axis.norm();
                if !(n > 1e-9 && n.is_finite()) {
                    return bad(format!("joint {} has a zero axis", j.name));
                }
                j.axis /= n;
                let finite = [j.lower, j.upper, j.max_velocity, j.nominal, j.mass].iter().all(|v| v.is_finite())
                    && j.offset.iter().chain(j.com.iter()).all(|c| c.is_finite());
                if !finite {
                    return bad(format!("joint {} has non-finite values", j.name));
                }
                if j.lower >= j.upper {
                    return bad(format!("joint {} has lower >= upper", j.name));
                }
                if j.nominal < j.lower || j.nominal > j.upper {
                    return bad(format!("joint {} nominal {} outside its limits", j.name, j.nominal));
                }
                if j.max_velocity <= 0.0 || j.mass < 0.0 {
                    return bad(format!("joint {} needs max_velocity > 0 and mass >= 0", j.name));
                }
            }
        }
        let mut starts = Vec::with_capacity(limbs.len());
        let mut n = 0;
        for l in &limbs {
            starts.push(n);
            n += l.joints.len();
        }
        Ok(Self { base, limbs, starts })
    }

    pub fn limbs(&self) -> &[Limb] {
        &self.limbs
    }

    pub fn joints(&self) -> impl Iterator<Item = &Joint> {
        self.limbs.iter().flat_map(|l| l.joints.iter())
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.joints().map(|j| j.name.clone()).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.base.mass + self.joints().map(|j| j.mass).sum::<f64>()
    }

    pub fn nominal_joints(&self) -> Vec<f64> {
        self.joints().map(|j| j.nominal).collect()
    }

    pub fn nominal_configuration(&self, base_position: Vector3<f64>) -> Configuration {
        Configuration { base_position, base_orientation: UnitQuaternion::identity(), joints: self.nominal_joints() }
    }

    fn limb_index_of_arm(arm: usize) -> usize {
        NUM_FEET + arm
    }

    fn check(&self, q: &Configuration) -> Result<(), KinematicsError> {
        if q.joints.len() != NUM_JOINTS {
            return Err(KinematicsError::Dimension(q.joints.len()));
        }
        for (j, &v) in self.joints().zip(q.joints.iter()) {
            if !(v >= j.lower && v <= j.upper) {
                return Err(KinematicsError::JointLimit { name: j.name.clone(), value: v, lower: j.lower, upper: j.upper });
            }
        }
        Ok(())
    }

    fn limb_pose(&self, limb: usize, q: &Configuration) -> LimbPose {
        let l = &self.limbs[limb];
        let rb = q.base_orientation.to_rotation_matrix();
        let mut p = q.base_position + rb * l.mount;
        let mut r = rb;
        let n = l.joints.len();
        let mut pose = LimbPose {
            origins: Vec::with_capacity(n),
            axes: Vec::with_capacity(n),
            link_coms: Vec::with_capacity(n),
            tip: Vector3::zeros(),
        };
        for (k, j) in l.joints.iter().enumerate() {
            p += r * j.offset;
            pose.origins.push(p);
            pose.axes.push(r * j.axis);
            r *= Rotation3::from_axis_angle(&Unit::new_unchecked(j.axis), q.joints[self.starts[limb] + k]);
            pose.link_coms.push(p + r * j.com);
        }
        pose.tip = p + r * l.tip;
        pose
    }

    fn frames_with(&self, q: &Configuration, payloads: [f64; NUM_ARMS]) -> (Frames, Vec<LimbPose>) {
        let poses: Vec<LimbPose> = (0..self.limbs.len()).map(|i| self.limb_pose(i, q)).collect();
        let rb = q.base_orientation.to_rotation_matrix();
        let mut acc = self.base.mass * (q.base_position + rb * self.base.com);
        let mut mass = self.base.mass;
        for (limb, pose) in self.limbs.iter().zip(&poses) {
            for (j, c) in limb.joints.iter().zip(&pose.link_coms) {
                acc += j.mass * c;
                mass += j.mass;
            }
        }
        for a in 0..NUM_ARMS {
            acc += payloads[a] * poses[Self::limb_index_of_arm(a)].tip;
            mass += payloads[a];
        }
        let frames = Frames {
            feet: std::array::from_fn(|f| poses[f].tip),
            arms: std::array::from_fn(|a| poses[Self::limb_index_of_arm(a)].tip),
            com: acc / mass,
        };
        (frames, poses)
    }

    /// Frame positions without the limit check.
    pub fn frames(&self, q: &Configuration) -> Frames {
        self.frames_with(q, [0.0; NUM_ARMS]).0
    }

    /// Total CoM with point masses held at the arm tips.
    pub fn com_with_payloads(&self, q: &Configuration, payloads: [f64; NUM_ARMS]) -> Vector3<f64> {
        self.frames_with(q, payloads).0.com
    }

    /// Jacobian (3 x NUM_DOF) of a point rigidly attached after joint `upto`
    /// of `limb`.
    fn point_jacobian(&self, q: &Configuration, limb: usize, pose: &LimbPose, point: &Vector3<f64>, upto: usize) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(3, NUM_DOF);
        self.add_point_jacobian(&mut j, 1.0, q, limb, pose, point, upto);
        j
    }

    #[allow(clippy::too_many_arguments)]
    fn add_point_jacobian(
        &self,
        j: &mut DMatrix<f64>,
        scale: f64,
        q: &Configuration,
        limb: usize,
        pose: &LimbPose,
        point: &Vector3<f64>,
        upto: usize,
    ) {
        let rel = point - q.base_position;
        let s = skew(&rel);
        for r in 0..3 {
            j[(r, r)] += scale;
            for c in 0..3 {
                j[(r, 3 + c)] -= scale * s[(r, c)];
            }
        }
        for k in 0..=upto {
            let col = pose.axes[k].cross(&(point - pose.origins[k]));
            let idx = BASE_DOF + self.starts[limb] + k;
            for r in 0..3 {
                j[(r, idx)] += scale * col[r];
            }
        }
    }

    pub fn foot_jacobian(&self, q: &Configuration, leg: usize) -> DMatrix<f64> {
        let pose = self.limb_pose(leg, q);
        self.point_jacobian(q, leg, &pose, &pose.tip, LEG_DOF - 1)
    }

    pub fn arm_jacobian(&self, q: &Configuration, arm: usize) -> DMatrix<f64> {
        let limb = Self::limb_index_of_arm(arm);
        let pose = self.limb_pose(limb, q);
        self.point_jacobian(q, limb, &pose, &pose.tip, ARM_DOF - 1)
    }

    /// Jacobian of [`Self::com_with_payloads`].
    pub fn com_jacobian(&self, q: &Configuration, payloads: [f64; NUM_ARMS]) -> DMatrix<f64> {
        let (_, poses) = self.frames_with(q, payloads);
        let total = self.total_mass() + payloads.iter().sum::<f64>();
        let mut j = DMatrix::zeros(3, NUM_DOF);
        let base_com = q.base_position + q.base_orientation * self.base.com;
        let s = skew(&(base_com - q.base_position));
        for r in 0..3 {
            j[(r, r)] += self.base.mass / total;
            for c in 0..3 {
                j[(r, 3 + c)] -= self.base.mass / total * s[(r, c)];
            }
        }
        for (li, (limb, pose)) in self.limbs.iter().zip(&poses).enumerate() {
            for (k, joint) in limb.joints.iter().enumerate() {
                self.add_point_jacobian(&mut j, joint.mass / total, q, li, pose, &pose.link_coms[k], k);
            }
        }
        for a in 0..NUM_ARMS {
            if payloads[a] != 0.0 {
                let li = Self::limb_index_of_arm(a);
                self.add_point_jacobian(&mut j, payloads[a] / total, q, li, &poses[li], &poses[li].tip, ARM_DOF - 1);
            }
        }
        j
    }

    /// Arm tip in the base frame.
    pub fn arm_in_base(&self, q: &Configuration, arm: usize) -> Vector3<f64> {
        let tip = self.limb_pose(Self::limb_index_of_arm(arm), q).tip;
        q.base_orientation.inverse() * (tip - q.base_position)
    }

    /// Jacobian of [`Self::arm_in_base`]; the base columns vanish.
    fn arm_in_base_jacobian(&self, q: &Configuration, arm: usize) -> DMatrix<f64> {
        let mut j = self.arm_jacobian(q, arm);
        let rt = q.base_orientation.inverse().to_rotation_matrix();
        j.columns_mut(0, BASE_DOF).fill(0.0);
        for c in BASE_DOF..NUM_DOF {
            let v = rt * Vector3::new(j[(0, c)], j[(1, c)], j[(2, c)]);
            for r in 0..3 {
                j[(r, c)] = v[r];
            }
        }
        j
    }

    /// Linear Jacobian of a foot with respect to its leg joints, expressed in
    /// the base frame.
    pub fn leg_jacobian_base(&self, q: &Configuration, leg: usize) -> Matrix3<f64> {
        let j = self.foot_jacobian(q, leg);
        let rt = q.base_orientation.inverse().to_rotation_matrix();
        let start = BASE_DOF + self.starts[leg];
        let mut m = Matrix3::zeros();
        for k in 0..LEG_DOF {
            let v = rt * Vector3::new(j[(0, start + k)], j[(1, start + k)], j[(2, start + k)]);
            m.set_column(k, &v);
        }
        m
    }
}

/// Frame positions at `q`; joints outside their limits are an error.
pub fn forward_kinematics(model: &KinematicModel, q: &Configuration) -> Result<Frames, KinematicsError> {
    model.check(q)?;
    Ok(model.frames(q))
}

/// `sqrt(det(J Jᵀ))` of the base-relative foot Jacobian, evaluated as
/// `|det J|` since J is square.
pub fn leg_manipulability(model: &KinematicModel, q: &Configuration, leg: Leg) -> f64 {
    model.leg_jacobian_base(q, leg.index()).determinant().abs()
}

/// One task of the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    FootPosition(usize),
    ComPosition,
    ArmPosition(usize),
    Posture,
}

/// Ordered priority levels with joint position and velocity limits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskStack {
    levels: Vec<Vec<Task>>,
}

impl Default for TaskStack {
    fn default() -> Self {
        let mut first: Vec<Task> = (0..NUM_FEET).map(Task::FootPosition).collect();
        first.push(Task::ComPosition);
        Self { levels: vec![first, (0..NUM_ARMS).map(Task::ArmPosition).collect(), vec![Task::Posture]] }
    }
}

impl TaskStack {
    pub fn levels(&self) -> &[Vec<Task>] {
        &self.levels
    }

    /// Priority level (0-based) of a task.
    pub fn level_of(&self, task: Task) -> Option<usize> {
        self.levels.iter().position(|l| l.contains(&task))
    }
}

/// Where an arm end effector should be.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArmTarget {
    World(Vector3<f64>),
    /// Fixed offset in the base frame.
    BaseRelative(Vector3<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkTargets {
    pub feet: [Vector3<f64>; NUM_FEET],
    pub com: Vector3<f64>,
    pub arms: [ArmTarget; NUM_ARMS],
    /// Point masses at the arm tips counted in the CoM task.
    pub com_payloads: [f64; NUM_ARMS],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkOptions {
    /// Output sample period [s]; runs take it from the export rate.
    #[serde(skip)]
    pub dt: f64,
    pub damping: f64,
    pub max_iterations: usize,
    /// Stop when the largest step component falls below this.
    pub step_tolerance: f64,
    /// Largest step component per iteration [m or rad].
    pub max_step: f64,
    /// Level-1 error above which a sample counts as diverged [m].
    pub divergence_threshold: f64,
    /// Consecutive diverged samples before a divergence is reported.
    pub divergence_samples: usize,
    /// Joint range kept clear of the lower levels at each limit [rad].
    pub limit_margin: f64,
    /// Share of the per-sample joint travel reserved for level 1.
    pub velocity_reserve: f64,
    /// Extra displacement added to every arm target, for probing the priorities.
    #[serde(skip)]
    pub arm_target_offset: [f64; 3],
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            dt: 0.01,
            damping: 1e-3,
            max_iterations: 60,
            step_tolerance: 1e-10,
            max_step: 0.2,
            divergence_threshold: 1e-3,
            divergence_samples: 5,
            limit_margin: 0.2,
            velocity_reserve: 0.5,
            arm_target_offset: [0.0; 3],
        }
    }
}

/// Task errors after one IK solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskErrors {
    pub feet: [f64; NUM_FEET],
    pub com: f64,
    pub arms: [f64; NUM_ARMS],
    pub posture: f64,
}

impl TaskErrors {
    pub fn level1(&self) -> f64 {
        self.feet.iter().fold(self.com, |m, &e| m.max(e))
    }

    pub fn level2(&self) -> f64 {
        self.arms.iter().fold(0.0, |m: f64, &e| m.max(e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSample {
    pub time: f64,
    pub q: Configuration,
    pub errors: TaskErrors,
    pub manipulability: [f64; NUM_FEET],
    pub swing: [bool; NUM_FEET],
    pub iterations: usize,
    /// Joints held at a position or velocity bound.
    pub saturated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub first_time: f64,
    pub samples: usize,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    pub samples: Vec<IkSample>,
    pub divergence: Option<DivergenceReport>,
}

impl JointTrajectory {
    /// Smallest manipulability of each leg while it swings (the overall
    /// minimum for a leg that never swings).
    pub fn min_swing_manipulability(&self) -> [f64; NUM_FEET] {
        std::array::from_fn(|f| {
            let swing = self.samples.iter().filter(|s| s.swing[f]).map(|s| s.manipulability[f]).fold(f64::INFINITY, f64::min);
            if swing.is_finite() {
                swing
            } else {
                self.min_manipulability()[f]
            }
        })
    }

    pub fn min_manipulability(&self) -> [f64; NUM_FEET] {
        std::array::from_fn(|f| self.samples.iter().map(|s| s.manipulability[f]).fold(f64::INFINITY, f64::min))
    }

    pub fn max_level1_error(&self) -> f64 {
        self.samples.iter().map(|s| s.errors.level1()).fold(0.0, f64::max)
    }
}

struct Level {
    j: DMatrix<f64>,
    e: DVector<f64>,
}

/// Damped pseudo-inverse of `a` and the projector onto its row space.
fn damped_inverse_and_row_projector(a: &DMatrix<f64>, damping: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let smax = svd.singular_values.iter().fold(0.0_f64, |x, &s| x.max(s));
    let tol = 1e-10 * smax.max(1.0);
    let mut dls = DMatrix::zeros(n, m);
    let mut row = DMatrix::zeros(n, n);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let v = vt.row(k).transpose();
        dls += &v * u.column(k).transpose() * (s / (s * s + damping * damping));
        if s > tol {
            row += &v * v.transpose();
        }
    }
    (dls, row)
}

/// Prioritized damped least squares with nullspace projection. `fixed`
/// pins coordinates to given displacements and removes them from every level.
fn prioritized_step(levels: &[Level], fixed: &[Option<f64>], damping: f64) -> DVector<f64> {
    let n = NUM_DOF;
    let pinned = DVector::from_iterator(n, fixed.iter().map(|f| f.unwrap_or(0.0)));
    let mut proj = DMatrix::identity(n, n);
    for (i, f) in fixed.iter().enumerate() {
        if f.is_some() {
            proj[(i, i)] = 0.0;
        }
    }
    let mut dq = DVector::zeros(n);
    for level in levels {
        let mut j = level.j.clone();
        for (i, f) in fixed.iter().enumerate() {
            if f.is_some() {
                j.column_mut(i).fill(0.0);
            }
        }
        let jbar = &j * &proj;
        let (dls, row) = damped_inverse_and_row_projector(&jbar, damping);
        let rhs = &level.e - &level.j * &pinned - &j * &dq;
        // Re-projecting removes the round-off that near-zero singular
        // directions of `jbar` would otherwise leak into higher levels.
        dq += &proj * (dls * rhs);
        proj -= row;
    }
    dq + pinned
}

/// Per-coordinate step bounds; `None` for the base.
type Bounds = Vec<Option<(f64, f64)>>;

fn bounded_step(levels: &[Level], bounds: &Bounds, damping: f64) -> (DVector<f64>, usize) {
    let mut fixed: Vec<Option<f64>> = vec![None; NUM_DOF];
    loop {
        let dq = prioritized_step(levels, &fixed, damping);
        let mut changed = false;
        for i in BASE_DOF..NUM_DOF {
            if fixed[i].is_some() {
                continue;
            }
            if let Some((lo, hi)) = bounds[i] {
                if dq[i] < lo {
                    fixed[i] = Some(lo);
                    changed = true;
                } else if dq[i] > hi {
                    fixed[i] = Some(hi);
                    changed = true;
                }
            }
        }
        if !changed {
            return (dq, fixed.iter().filter(|f| f.is_some()).count());
        }
    }
}

struct Tracker<'a> {
    model: &'a KinematicModel,
    opts: &'a IkOptions,
    nominal: Vec<f64>,
}

impl Tracker<'_> {
    fn level1(&self, q: &Configuration, t: &IkTargets) -> Level {
        let mut j = DMatrix::zeros(3 * NUM_FEET + 3, NUM_DOF);
        let mut e = DVector::zeros(3 * NUM_FEET + 3);
        let (frames, _) = self.model.frames_with(q, t.com_payloads);
        for f in 0..NUM_FEET {
            j.rows_mut(3 * f, 3).copy_from(&self.model.foot_jacobian(q, f));
            e.rows_mut(3 * f, 3).copy_from(&(t.feet[f] - frames.feet[f]));
        }
        let r = 3 * NUM_FEET;
        j.rows_mut(r, 3).copy_from(&self.model.com_jacobian(q, t.com_payloads));
        e.rows_mut(r, 3).copy_from(&(t.com - frames.com));
        Level { j, e }
    }

    fn level2(&self, q: &Configuration, t: &IkTargets) -> Level {
        let mut j = DMatrix::zeros(3 * NUM_ARMS, NUM_DOF);
        let mut e = DVector::zeros(3 * NUM_ARMS);
        for a in 0..NUM_ARMS {
            let (ja, ea) = match t.arms[a] {
                ArmTarget::World(p) => (self.model.arm_jacobian(q, a), p - self.model.frames(q).arms[a]),
                ArmTarget::BaseRelative(p) => (self.model.arm_in_base_jacobian(q, a), p - self.model.arm_in_base(q, a)),
            };
            j.rows_mut(3 * a, 3).copy_from(&ja);
            e.rows_mut(3 * a, 3).copy_from(&ea);
        }
        Level { j, e }
    }

    /// Joints toward nominal, base orientation toward level.
    fn level3(&self, q: &Configuration) -> Level {
        let n = 3 + NUM_JOINTS;
        let mut j = DMatrix::zeros(n, NUM_DOF);
        let mut e = DVector::zeros(n);
        let tilt = -q.base_orientation.scaled_axis();
        for r in 0..3 {
            j[(r, 3 + r)] = 1.0;
            e[r] = tilt[r];
        }
        for k in 0..NUM_JOINTS {
            j[(3 + k, BASE_DOF + k)] = 1.0;
            e[3 + k] = self.nominal[k] - q.joints[k];
        }
        Level { j, e }
    }

    fn errors(&self, q: &Configuration, t: &IkTargets) -> TaskErrors {
        let frames = self.model.frames(q);
        let com = self.model.com_with_payloads(q, t.com_payloads);
        let posture = self.level3(q).e.norm();
        TaskErrors {
            feet: std::array::from_fn(|f| (t.feet[f] - frames.feet[f]).norm()),
            com: (t.com - com).norm(),
            arms: std::array::from_fn(|a| match t.arms[a] {
                ArmTarget::World(p) => (p - frames.arms[a]).norm(),
                ArmTarget::BaseRelative(p) => (p - self.model.arm_in_base(q, a)).norm(),
            }),
            posture,
        }
    }

    /// Absolute joint interval allowed at this sample.
    fn joint_window(&self, prev: Option<&Configuration>) -> Vec<(f64, f64)> {
        self.model
            .joints()
            .enumerate()
            .map(|(k, j)| match prev {
                Some(p) => {
                    let reach = j.max_velocity * self.opts.dt;
                    (j.lower.max(p.joints[k] - reach), j.upper.min(p.joints[k] + reach))
                }
                None => (j.lower, j.upper),
            })
            .collect()
    }

    /// Window of the full stack: away from the limits by the margin and with
    /// part of the joint travel held back, so that the arms and posture cannot
    /// use up range the feet and CoM need later. A joint already inside the
    /// margin may stay where it is.
    fn lower_level_window(&self, start: &Configuration, prev: Option<&Configuration>) -> Vec<(f64, f64)> {
        let m = self.opts.limit_margin;
        let share = 1.0 - self.opts.velocity_reserve;
        self.model
            .joints()
            .enumerate()
            .map(|(k, j)| {
                let q = start.joints[k];
                let mid = 0.5 * (j.lower + j.upper);
                let (mut lo, mut hi) = ((j.lower + m).min(mid).min(q), (j.upper - m).max(mid).max(q));
                if let Some(p) = prev {
                    let reach = share * j.max_velocity * self.opts.dt;
                    lo = lo.max(p.joints[k] - reach).min(q);
                    hi = hi.min(p.joints[k] + reach).max(q);
                }
                (lo, hi)
            })
            .collect()
    }

    fn bounds(q: &Configuration, window: &[(f64, f64)]) -> Bounds {
        (0..NUM_DOF)
            .map(|i| {
                if i < BASE_DOF {
                    None
                } else {
                    let k = i - BASE_DOF;
                    Some((window[k].0 - q.joints[k], window[k].1 - q.joints[k]))
                }
            })
            .collect()
    }

    /// Iterates the stack inside `window`. With `lower` set, the full stack is
    /// solved inside that tighter window instead, and an iteration falls back
    /// to level 1 alone whenever the tighter window would cost the feet and
    /// CoM accuracy. Lower levels then move the base only in ways the legs can
    /// follow without using up their reserve.
    fn iterate(&self, q: &mut Configuration, t: &IkTargets, window: &[(f64, f64)], lower: Option<&[(f64, f64)]>) -> (usize, usize) {
        let mut saturated = 0;
        for it in 0..self.opts.max_iterations {
            let l1 = self.level1(q, t);
            let (mut dq, mut sat) = bounded_step(std::slice::from_ref(&l1), &Self::bounds(q, window), self.opts.damping);
            let mut clamp = window;
            if let Some(reduced) = lower {
                let levels = [self.level1(q, t), self.level2(q, t), self.level3(q)];
                let (full, full_sat) = bounded_step(&levels, &Self::bounds(q, reduced), self.opts.damping);
                let r1 = (&l1.j * &dq - &l1.e).norm();
                let rf = (&l1.j * &full - &l1.e).norm();
                if rf <= r1 + 1e-3 * l1.e.norm() + 1e-12 {
                    dq = full;
                    sat = full_sat;
                    clamp = reduced;
                }
            }
            saturated = sat;
            let big = dq.amax();
            if big > self.opts.max_step {
                dq *= self.opts.max_step / big;
            }
            q.integrate(&dq);
            for (k, v) in q.joints.iter_mut().enumerate() {
                *v = v.clamp(clamp[k].0, clamp[k].1);
            }
            if big < self.opts.step_tolerance {
                return (it + 1, saturated);
            }
        }
        (self.opts.max_iterations, saturated)
    }

    /// Full stack, then level 1 alone so that lower levels cannot leave
    /// second-order residue in the feet and CoM.
    fn solve(&self, q: &mut Configuration, t: &IkTargets, prev: Option<&Configuration>) -> (usize, usize) {
        let window = self.joint_window(prev);
        let reduced: Vec<(f64, f64)> = self
            .lower_level_window(q, prev)
            .iter()
            .zip(&window)
            .map(|(r, w)| (r.0.max(w.0), r.1.min(w.1)))
            .collect();
        let (a, sat) = self.iterate(q, t, &window, Some(&reduced));
        let (b, _) = self.iterate(q, t, &window, None);
        (a + b, sat)
    }
}

/// Targets of the plan at absolute time `time`. `held` is the payload mass
/// in each hand.
pub fn plan_targets(model: &KinematicModel, plan: &TrajectoryPlan, held: [f64; NUM_ARMS], time: f64) -> IkTargets {
    let s = plan.sample(time);
    let nominal = model.nominal_configuration(Vector3::zeros());
    let (arms, com_payloads) = match (plan.mode, s.arm_positions) {
        (PlannerMode::PayloadAware, Some(p)) => (std::array::from_fn(|a| ArmTarget::World(p[a])), [0.0; NUM_ARMS]),
        _ => (std::array::from_fn(|a| ArmTarget::BaseRelative(model.arm_in_base(&nominal, a))), held),
    };
    IkTargets { feet: s.feet_positions, com: s.com.position, arms, com_payloads }
}

/// Tracks a plan at `opts.dt` and logs task errors and leg manipulability.
///
/// Payload-aware plans drive the arms to the planned end-effector positions
/// and the robot CoM to the planned CoM. Locomotion-only plans hold the arms
/// at their nominal base-relative pose and track the total CoM including the
/// payloads.
pub fn ik_track(model: &KinematicModel, plan: &TrajectoryPlan, held: [f64; NUM_ARMS], opts: &IkOptions) -> JointTrajectory {
    assert!(opts.dt > 0.0, "IK sample period must be positive");
    let tracker = Tracker { model, opts, nominal: model.nominal_joints() };
    let steps = (plan.duration() / opts.dt - 1e-9).ceil().max(0.0) as usize;
    let offset = Vector3::from(opts.arm_target_offset);

    let first = plan_targets(model, plan, held, plan.start_time);
    let mut q = model.nominal_configuration(Vector3::zeros());
    let c0 = model.com_with_payloads(&q, first.com_payloads);
    q.base_position = first.com - c0;

    let mut samples: Vec<IkSample> = Vec::with_capacity(steps + 1);
    let mut divergence: Option<DivergenceReport> = None;
    let mut run = 0usize;
    for k in 0..=steps {
        let time = (plan.start_time + k as f64 * opts.dt).min(plan.end_time());
        let mut targets = plan_targets(model, plan, held, time);
        for a in targets.arms.iter_mut() {
            match a {
                ArmTarget::World(p) | ArmTarget::BaseRelative(p) => *p += offset,
            }
        }
        let prev = samples.last().map(|s| &s.q);
        let (iterations, saturated) = tracker.solve(&mut q, &targets, prev);
        let errors = tracker.errors(&q, &targets);
        if errors.level1() > opts.divergence_threshold {
            run += 1;
            if run >= opts.divergence_samples {
                let d = divergence.get_or_insert(DivergenceReport {
                    first_time: time - (run - 1) as f64 * opts.dt,
                    samples: 0,
                    max_error: 0.0,
                });
                if run == opts.divergence_samples {
                    warn!("IK level-1 error {:.3e} m persists from t = {:.2} s", errors.level1(), d.first_time);
                    d.samples += run - 1;
                }
                d.samples += 1;
                d.max_error = d.max_error.max(errors.level1());
            }
        } else {
            run = 0;
        }
        debug!("ik t={:.2} iters={} level1={:.2e} level2={:.2e}", time, iterations, errors.level1(), errors.level2());
        samples.push(IkSample {
            time,
            manipulability: std::array::from_fn(|f| leg_manipulability(model, &q, Leg::ALL[f])),
            swing: std::array::from_fn(|f| plan.feet.is_swinging(f, time)),
            q: q.clone(),
            errors,
            iterations,
            saturated,
        });
    }
    if let Some(d) = &mut divergence {
        d.max_error = samples.iter().map(|s| s.errors.level1()).fold(d.max_error, f64::max);
    }
    JointTrajectory { samples, divergence }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> KinematicModel {
        KinematicModel::default_robot()
    }

    fn rotated(q: &Configuration, rpy: (f64, f64, f64), shift: Vector3<f64>) -> Configuration {
        let mut out = q.clone();
        out.base_orientation = UnitQuaternion::from_euler_angles(rpy.0, rpy.1, rpy.2) * q.base_orientation;
        out.base_position += shift;
        out
    }

    fn random_config(m: &KinematicModel, seed: u64) -> Configuration {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64)
        };
        let joints = m.joints().map(|j| j.lower + (0.1 + 0.8 * next()) * (j.upper - j.lower)).collect();
        Configuration {
            base_position: Vector3::new(next() - 0.5, next() - 0.5, 0.5 + next()),
            base_orientation: UnitQuaternion::from_euler_angles(0.3 * next(), -0.2 * next(), 2.0 * next()),
            joints,
        }
    }

    #[test]
    fn default_robot_loads_with_expected_shape() {
        let m = model();
        assert_eq!(m.joints().count(), NUM_JOINTS);
        assert!((m.total_mass() - 113.0).abs() < 1e-9);
        let q = m.nominal_configuration(Vector3::zeros());
        let f = forward_kinematics(&m, &q).unwrap();
        // Nominal stance: feet under the hips, CoM over the feet centroid.
        let hips = [(0.35, 0.3), (0.35, -0.3), (-0.35, 0.3), (-0.35, -0.3)];
        for (p, h) in f.feet.iter().zip(hips) {
            assert!((p.x - h.0).abs() < 1e-12 && (p.y - h.1).abs() < 1e-12);
            assert!((p.z - f.feet[0].z).abs() < 1e-12);
        }
        let mean: Vector3<f64> = f.feet.iter().sum::<Vector3<f64>>() / 4.0;
        assert!((f.com.x - mean.x).abs() < 1e-9 && (f.com.y - mean.y).abs() < 1e-9);
        assert!((f.arms[0].y + f.arms[1].y).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_descriptions() {
        let text = DEFAULT_ROBOT.replacen("upper = 0.7", "upper = -0.8", 1);
        assert!(matches!(KinematicModel::from_toml_str(&text), Err(KinematicsError::Invalid(_))));
        let text = DEFAULT_ROBOT.replacen("mass = 50.6", "mass = 50.6\ncolour = 1", 1);
        assert!(matches!(KinematicModel::from_toml_str(&text), Err(KinematicsError::Parse(_))));
        let text = DEFAULT_ROBOT.replacen("name = \"FL\"", "name = \"XX\"", 1);
        assert!(KinematicModel::from_toml_str(&text).is_err());
    }

    #[test]
    fn out_of_limit_configuration_is_an_error() {
        let m = model();
        let mut q = m.nominal_configuration(Vector3::zeros());
        q.joints[2] = -0.1;
        assert!(matches!(forward_kinematics(&m, &q), Err(KinematicsError::JointLimit { .. })));
        q.joints.pop();
        assert!(matches!(forward_kinematics(&m, &q), Err(KinematicsError::Dimension(23))));
    }

    #[test]
    fn base_translation_moves_every_frame() {
        let m = model();
        let q = random_config(&m, 3);
        let d = Vector3::new(0.3, -1.2, 0.25);
        let a = m.frames(&q);
        let b = m.frames(&rotated(&q, (0.0, 0.0, 0.0), d));
        for i in 0..NUM_FEET {
            assert!((b.feet[i] - a.feet[i] - d).norm() < 1e-12);
        }
        for i in 0..NUM_ARMS {
            assert!((b.arms[i] - a.arms[i] - d).norm() < 1e-12);
        }
        assert!((b.com - a.com - d).norm() < 1e-12);
    }

    #[test]
    fn knee_rotation_matches_planar_two_link_oracle() {
        let m = model();
        let (l1, l2) = (0.4, 0.4);
        for &(hip, knee) in &[(-0.6, 1.2), (0.3, 0.4), (-1.5, 2.2), (0.0, 0.0)] {
            let mut q = m.nominal_configuration(Vector3::zeros());
            q.joints[1] = hip;
            q.joints[2] = knee;
            let foot = m.frames(&q).feet[0];
            // Sagittal plane, angles about +y measured from straight down.
            let x = -l1 * hip.sin() - l2 * (hip + knee).sin();
            let z = -l1 * hip.cos() - l2 * (hip + knee).cos();
            assert!((foot - Vector3::new(0.35 + x, 0.3, z)).norm() < 1e-12);
        }
    }

    fn fd_point_jacobian(q: &Configuration, f: impl Fn(&Configuration) -> Vector3<f64>) -> DMatrix<f64> {
        let h = 1e-6;
        let mut j = DMatrix::zeros(3, NUM_DOF);
        for c in 0..NUM_DOF {
            let mut d = DVector::zeros(NUM_DOF);
            d[c] = h;
            let mut plus = q.clone();
            plus.integrate(&d);
            let mut minus = q.clone();
            minus.integrate(&(-d));
            let col = (f(&plus) - f(&minus)) / (2.0 * h);
            for r in 0..3 {
                j[(r, c)] = col[r];
            }
        }
        j
    }

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>) {
        let scale = b.amax().max(1.0);
        assert!((a - b).amax() / scale < 1e-5, "analytic\n{a}\nfinite difference\n{b}");
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let m = model();
        let payloads = [10.0, 7.5];
        for seed in 0..10 {
            let q = random_config(&m, seed);
            for f in 0..NUM_FEET {
                assert_close(&m.foot_jacobian(&q, f), &fd_point_jacobian(&q, |c| m.frames(c).feet[f]));
            }
            for a in 0..NUM_ARMS {
                assert_close(&m.arm_jacobian(&q, a), &fd_point_jacobian(&q, |c| m.frames(c).arms[a]));
                assert_close(&m.arm_in_base_jacobian(&q, a), &fd_point_jacobian(&q, |c| m.arm_in_base(c, a)));
            }
            assert_close(&m.com_jacobian(&q, [0.0; 2]), &fd_point_jacobian(&q, |c| m.frames(c).com));
            assert_close(&m.com_jacobian(&q, payloads), &fd_point_jacobian(&q, |c| m.com_with_payloads(c, payloads)));
        }
    }

    #[test]
    fn manipulability_matches_finite_difference_jacobian() {
        let m = model();
        for seed in 0..10 {
            let q = random_config(&m, seed);
            for leg in Leg::ALL {
                let f = leg.index();
                let h = 1e-6;
                let mut j = Matrix3::zeros();
                for k in 0..LEG_DOF {
                    let local = |s: f64| {
                        let mut c = q.clone();
                        c.joints[f * LEG_DOF + k] += s;
                        c.base_orientation.inverse() * (m.frames(&c).feet[f] - c.base_position)
                    };
                    j.set_column(k, &((local(h) - local(-h)) / (2.0 * h)));
                }
                let fd = (j * j.transpose()).determinant().sqrt();
                let w = leg_manipulability(&m, &q, leg);
                assert!((w - fd).abs() <= 1e-5 * fd.max(1e-12), "{w} vs {fd}");
            }
        }
    }

    #[test]
    fn manipulability_is_base_invariant_and_vanishes_when_straight() {
        let m = model();
        let q = random_config(&m, 11);
        let moved = rotated(&q, (0.4, -0.3, 1.1), Vector3::new(2.0, -1.0, 0.5));
        for leg in Leg::ALL {
            let a = leg_manipulability(&m, &q, leg);
            let b = leg_manipulability(&m, &moved, leg);
            assert!(a > 0.0 && (a - b).abs() < 1e-12 * a.max(1.0));
        }
        let mut straight = m.nominal_configuration(Vector3::zeros());
        assert!(leg_manipulability(&m, &straight, Leg::FL) > 1e-2);
        straight.joints[2] = 0.0;
        assert!(leg_manipulability(&m, &straight, Leg::FL) < 1e-12);
    }

    #[test]
    fn stack_follows_the_priority_table() {
        let s = TaskStack::default();
        assert_eq!(s.levels().len(), 3);
        for f in 0..NUM_FEET {
            assert_eq!(s.level_of(Task::FootPosition(f)), Some(0));
        }
        assert_eq!(s.level_of(Task::ComPosition), Some(0));
        assert_eq!(s.level_of(Task::ArmPosition(1)), Some(1));
        assert_eq!(s.level_of(Task::Posture), Some(2));
    }

    fn standing_targets(m: &KinematicModel) -> (Configuration, IkTargets) {
        let q = m.nominal_configuration(Vector3::new(0.0, 0.0, 0.66));
        let f = m.frames(&q);
        let t = IkTargets {
            feet: f.feet,
            com: f.com + Vector3::new(0.03, -0.02, -0.04),
            arms: [ArmTarget::World(f.arms[0] + Vector3::new(0.05, 0.0, 0.05)), ArmTarget::World(f.arms[1])],
            com_payloads: [0.0; 2],
        };
        (q, t)
    }

    #[test]
    fn tracker_converges_on_reachable_targets() {
        let m = model();
        let opts = IkOptions::default();
        let tr = Tracker { model: &m, opts: &opts, nominal: m.nominal_joints() };
        let (mut q, t) = standing_targets(&m);
        tr.solve(&mut q, &t, None);
        let e = tr.errors(&q, &t);
        assert!(e.level1() < 1e-10 && e.level2() < 1e-8, "{e:?}");
        assert!(forward_kinematics(&m, &q).is_ok());
    }

    #[test]
    fn unreachable_arm_target_leaves_level_one_alone() {
        let m = model();
        let opts = IkOptions::default();
        let tr = Tracker { model: &m, opts: &opts, nominal: m.nominal_joints() };
        let (q0, t) = standing_targets(&m);
        let mut far = t;
        far.arms = [ArmTarget::World(Vector3::new(3.0, 2.0, 2.0)), ArmTarget::World(Vector3::new(3.0, -2.0, 0.0))];
        let (mut a, mut b) = (q0.clone(), q0);
        tr.solve(&mut a, &t, None);
        tr.solve(&mut b, &far, None);
        let (ea, eb) = (tr.errors(&a, &t), tr.errors(&b, &far));
        assert!(eb.level2() > 1.0);
        assert!((ea.level1() - eb.level1()).abs() < 1e-9, "{ea:?} {eb:?}");
        assert!(forward_kinematics(&m, &b).is_ok());
    }

    #[test]
    fn velocity_window_limits_each_sample() {
        let m = model();
        let opts = IkOptions::default();
        let tr = Tracker { model: &m, opts: &opts, nominal: m.nominal_joints() };
        let (q0, t) = standing_targets(&m);
        let mut far = t;
        far.arms[0] = ArmTarget::World(Vector3::new(0.2, 0.9, 1.2));
        let mut q = q0.clone();
        tr.solve(&mut q, &far, Some(&q0));
        for (k, j) in m.joints().enumerate() {
            assert!((q.joints[k] - q0.joints[k]).abs() <= j.max_velocity * opts.dt + 1e-12);
        }
    }

    #[test]
    fn prioritized_step_keeps_lower_levels_in_the_nullspace() {
        let m = model();
        let opts = IkOptions::default();
        let tr = Tracker { model: &m, opts: &opts, nominal: m.nominal_joints() };
        let q = random_config(&m, 5);
        let (_, t) = standing_targets(&m);
        let l1 = tr.level1(&q, &t);
        let only = prioritized_step(&[Level { j: l1.j.clone(), e: l1.e.clone() }], &[None; NUM_DOF], 1e-3);
        let all = prioritized_step(&[l1, tr.level2(&q, &t), tr.level3(&q)], &[None; NUM_DOF], 1e-3);
        let j1 = tr.level1(&q, &t).j;
        let leak = (&j1 * (&all - &only)).amax();
        assert!(leak < 1e-12 * all.amax().max(1.0), "{leak}");
    }
}
