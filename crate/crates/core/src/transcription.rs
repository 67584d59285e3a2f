//! Direct transcription of the planning problem into a sparse NLP.
//!
//! Knots sit on a uniform grid. Each knot carries the CoM state, the jerk of
//! the following segment, the forces of the feet that are loaded there and,
//! in payload-aware mode, arm end-effector positions, velocities and forces.
//! Variables are stored knot by knot so that every constraint couples at
//! most two neighbouring knots.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::{ContactSchedule, FeetPlan};
use crate::program::{Affine, ConstraintBlock, CostFamily, CostTerm, Family, Program, ProgramError, Row};
use crate::splines::{hermite_accel_weights, ComSpline, HermiteSpline, PwlForceProfile};
use crate::srbd::{ComState, PayloadSpec, RobotConstants, NUM_ARMS, NUM_FEET};

#[derive(Debug, Error, PartialEq)]
pub enum TranscriptionError {
    #[error("horizon must span at least one segment with positive dt (got {knots} knots, dt {dt})")]
    ZeroHorizon { knots: usize, dt: f64 },
    #[error("feet plan covers [0, {available}] but the horizon ends at {needed}")]
    FeetCoverage { needed: f64, available: f64 },
    #[error("knot {knot} has no loaded foot")]
    NoSupport { knot: usize },
    #[error("invalid planner input: {0}")]
    Invalid(String),
    #[error("incompatible layouts: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    #[default]
    PayloadAware,
    LocomotionOnly,
}

/// Cost weights and constraint parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerWeights {
    pub w_jerk: f64,
    pub w_ftan: f64,
    pub w_com_ref: f64,
    pub w_arm_accel: f64,
    pub w_arm_final: f64,
    /// Minimum normal force of a loaded foot [N].
    pub f_z_min: f64,
    pub mu: f64,
    /// Arm workspace box dimensions [m].
    pub b_ee: Vector3<f64>,
    /// Arm force box dimensions [N].
    pub b_f: Vector3<f64>,
    /// Minimum lateral distance between the arm end effectors [m].
    pub b_s: f64,
    /// Half-widths of the final CoM region [m].
    pub final_com_box: Vector3<f64>,
}

impl Default for PlannerWeights {
    fn default() -> Self {
        Self {
            w_jerk: 1.0,
            w_ftan: 1e-3,
            w_com_ref: 100.0,
            w_arm_accel: 10.0,
            w_arm_final: 1e4,
            f_z_min: 100.0,
            mu: 0.5,
            b_ee: Vector3::new(0.4, 0.6, 0.3),
            b_f: Vector3::new(16.0, 16.0, 6.0),
            b_s: 0.25,
            final_com_box: Vector3::new(0.05, 0.05, 0.05),
        }
    }
}

impl PlannerWeights {
    pub fn validate(&self) -> Result<(), String> {
        let scalars = [
            ("w_jerk", self.w_jerk),
            ("w_ftan", self.w_ftan),
            ("w_com_ref", self.w_com_ref),
            ("w_arm_accel", self.w_arm_accel),
            ("w_arm_final", self.w_arm_final),
            ("f_z_min", self.f_z_min),
            ("b_s", self.b_s),
        ];
        for (name, v) in scalars {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [("b_ee", self.b_ee), ("b_f", self.b_f), ("final_com_box", self.final_com_box)] {
            if v.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
                return Err(format!("{name} must be non-negative, got {v:?}"));
            }
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(format!("mu must be positive, got {}", self.mu));
        }
        Ok(())
    }
}

/// Arm end-effector position and velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

/// State pinned at the first knot. Forces are pinned only when continuing a
/// previous plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryState {
    pub com: ComState,
    pub arms: [ArmState; NUM_ARMS],
    pub feet_forces: Option<[Vector3<f64>; NUM_FEET]>,
    pub arm_forces: Option<[Vector3<f64>; NUM_ARMS]>,
}

/// Uniform knot grid of one optimization window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub start_time: f64,
    pub num_knots: usize,
    pub dt: f64,
}

impl Horizon {
    /// Grid over `[0, total_time]`; `total_time` is rounded to whole knots.
    pub fn offline(total_time: f64, dt: f64) -> Self {
        let segments = (total_time / dt).round().max(0.0) as usize;
        Self { start_time: 0.0, num_knots: segments + 1, dt }
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start_time + k as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.num_knots.saturating_sub(1))
    }

    pub fn num_segments(&self) -> usize {
        self.num_knots.saturating_sub(1)
    }
}

/// Everything the transcription needs besides the feet plan.
#[derive(Debug, Clone)]
pub struct NlpSetup {
    /// Constants of the body being planned. In locomotion-only mode these
    /// already include the payload masses.
    pub robot: RobotConstants,
    pub payloads: Vec<PayloadSpec>,
    pub weights: PlannerWeights,
    pub mode: PlannerMode,
    pub horizon: Horizon,
    pub initial: BoundaryState,
}

/// Variable offsets of one arm at one knot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ArmVars {
    pub position: usize,
    pub velocity: usize,
    pub force: usize,
}

/// Variable offsets of one knot. Each group is three consecutive entries
/// (`com` is nine: position, velocity, acceleration).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KnotLayout {
    pub com: usize,
    pub jerk: Option<usize>,
    pub feet: [Option<usize>; NUM_FEET],
    pub arms: Option<[ArmVars; NUM_ARMS]>,
}

impl KnotLayout {
    pub fn r(&self, axis: usize) -> usize {
        self.com + axis
    }
    pub fn v(&self, axis: usize) -> usize {
        self.com + 3 + axis
    }
    pub fn a(&self, axis: usize) -> usize {
        self.com + 6 + axis
    }

    /// First and one-past-last variable of this knot.
    pub fn span(&self) -> (usize, usize) {
        let mut end = self.com + 9;
        if let Some(j) = self.jerk {
            end = end.max(j + 3);
        }
        for f in self.feet.iter().flatten() {
            end = end.max(f + 3);
        }
        if let Some(arms) = &self.arms {
            for a in arms {
                end = end.max(a.force + 3);
            }
        }
        (self.com, end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableLayout {
    pub knots: Vec<KnotLayout>,
    pub num_vars: usize,
    pub mode: PlannerMode,
}

impl VariableLayout {
    pub fn new(mode: PlannerMode, loaded: &[[bool; NUM_FEET]]) -> Self {
        let n = loaded.len();
        let mut next = 0;
        let mut take = |size: usize| {
            let at = next;
            next += size;
            at
        };
        let mut knots = Vec::with_capacity(n);
        for (k, feet) in loaded.iter().enumerate() {
            let com = take(9);
            let jerk = (k + 1 < n).then(|| take(3));
            let feet = std::array::from_fn(|f| feet[f].then(|| take(3)));
            let arms = (mode == PlannerMode::PayloadAware).then(|| {
                std::array::from_fn(|_| ArmVars { position: take(3), velocity: take(3), force: take(3) })
            });
            knots.push(KnotLayout { com, jerk, feet, arms });
        }
        Self { knots, num_vars: next, mode }
    }

    pub fn num_knots(&self) -> usize {
        self.knots.len()
    }

    pub fn num_arm_vars(&self) -> usize {
        self.knots.iter().filter(|k| k.arms.is_some()).count() * NUM_ARMS * 9
    }

    pub fn num_force_vars(&self) -> usize {
        self.knots.iter().map(|k| k.feet.iter().flatten().count() * 3).sum()
    }
}

/// Fixed parameters the problem was built from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NlpParams {
    pub mode: PlannerMode,
    pub robot: RobotConstants,
    /// Payload mass held by each arm [kg].
    pub arm_masses: [f64; NUM_ARMS],
    pub weights: PlannerWeights,
    pub horizon: Horizon,
    pub feet_positions: Vec<[Vector3<f64>; NUM_FEET]>,
    pub contact_normal: Vector3<f64>,
    pub tangents: [Vector3<f64>; 2],
    /// Whether the window ends at the end of the motion.
    pub terminal: bool,
    /// Center of the final CoM region, when imposed.
    pub final_com_center: Option<Vector3<f64>>,
}

/// A transcribed problem: the smooth program plus its layout and parameters.
#[derive(Debug, Clone)]
pub struct NlpProblem {
    pub program: Program,
    pub layout: VariableLayout,
    pub params: NlpParams,
}

fn v3(x: &[f64], at: usize) -> Vector3<f64> {
    Vector3::new(x[at], x[at + 1], x[at + 2])
}

/// Builds the NLP for one window.
pub fn build_nlp(setup: &NlpSetup, feet: &FeetPlan, schedule: &ContactSchedule) -> Result<NlpProblem, TranscriptionError> {
    let hz = setup.horizon;
    if hz.num_knots < 2 || !(hz.dt > 0.0 && hz.dt.is_finite()) {
        return Err(TranscriptionError::ZeroHorizon { knots: hz.num_knots, dt: hz.dt });
    }
    if hz.start_time < -1e-9 || hz.end_time() > feet.total_time + 1e-9 {
        return Err(TranscriptionError::FeetCoverage { needed: hz.end_time(), available: feet.total_time });
    }
    setup.robot.validate().map_err(TranscriptionError::Invalid)?;
    setup.weights.validate().map_err(TranscriptionError::Invalid)?;
    let mut arm_masses = [0.0; NUM_ARMS];
    for p in &setup.payloads {
        p.validate().map_err(TranscriptionError::Invalid)?;
        if setup.mode == PlannerMode::PayloadAware {
            arm_masses[p.arm_slot()] += p.mass;
        }
    }

    let n = hz.num_knots;
    let dt = hz.dt;
    let loaded: Vec<[bool; NUM_FEET]> = (0..n)
        .map(|k| std::array::from_fn(|f| schedule.carries_force(f, hz.time(k), dt)))
        .collect();
    if let Some(k) = loaded.iter().position(|l| !l.iter().any(|&b| b)) {
        return Err(TranscriptionError::NoSupport { knot: k });
    }
    let layout = VariableLayout::new(setup.mode, &loaded);
    let feet_positions: Vec<[Vector3<f64>; NUM_FEET]> = (0..n).map(|k| feet.positions(hz.time(k))).collect();
    let terminal = hz.end_time() >= feet.total_time - 1e-9;
    let final_com_center = terminal.then(|| {
        let fp = feet.final_positions();
        fp.iter().sum::<Vector3<f64>>() / NUM_FEET as f64 + setup.robot.com_ref_offset
    });
    let params = NlpParams {
        mode: setup.mode,
        robot: setup.robot,
        arm_masses,
        weights: setup.weights,
        horizon: hz,
        feet_positions,
        contact_normal: feet.contact_normal,
        tangents: feet.tangents,
        terminal,
        final_com_center,
    };

    let mut b = Builder { layout: &layout, params: &params, program: Program::new(layout.num_vars) };
    b.dynamics();
    b.continuity();
    b.payload_dynamics();
    b.initial(&setup.initial);
    if terminal {
        b.terminal();
    }
    b.contact();
    b.arm_boxes();
    b.costs();
    let program = b.program;
    Ok(NlpProblem { program, layout, params })
}

struct Builder<'a> {
    layout: &'a VariableLayout,
    params: &'a NlpParams,
    program: Program,
}

impl Builder<'_> {
    fn arms(&self, k: usize) -> Option<[ArmVars; NUM_ARMS]> {
        self.layout.knots[k].arms
    }

    /// Linear momentum and zero angular momentum rate at every knot.
    fn dynamics(&mut self) {
        let m = self.params.robot.mass;
        let g = self.params.robot.gravity;
        let mut lin = ConstraintBlock::new(Family::SrbdLinear);
        let mut ang = ConstraintBlock::new(Family::SrbdAngular);
        for (k, kl) in self.layout.knots.iter().enumerate() {
            // m a − Σ f = m g
            for ax in 0..3 {
                let mut aff = Affine::var(kl.a(ax), m);
                aff.constant = -m * g[ax];
                for f in kl.feet.iter().flatten() {
                    aff.add(f + ax, -1.0);
                }
                if let Some(arms) = &kl.arms {
                    for a in arms {
                        aff.add(a.force + ax, -1.0);
                    }
                }
                lin.push_eq(Row::linear(aff), k);
            }
            // −Σ (p − r) × f = r × Σf − Σ p × f
            let mut rows: [Row; 3] = Default::default();
            let cross = |row: &mut [Row; 3], a_var: Option<usize>, a_val: Vector3<f64>, f: usize, sign: f64| {
                // (a × f)_i = a_j f_k − a_k f_j for cyclic (i, j, k)
                for i in 0..3 {
                    let (j, l) = ((i + 1) % 3, (i + 2) % 3);
                    match a_var {
                        Some(av) => {
                            row[i].bilinear.push((av + j, f + l, sign));
                            row[i].bilinear.push((av + l, f + j, -sign));
                        }
                        None => {
                            row[i].affine.add(f + l, sign * a_val[j]);
                            row[i].affine.add(f + j, -sign * a_val[l]);
                        }
                    }
                }
            };
            for (foot, f) in kl.feet.iter().enumerate() {
                if let Some(f) = *f {
                    cross(&mut rows, Some(kl.com), Vector3::zeros(), f, 1.0);
                    cross(&mut rows, None, self.params.feet_positions[k][foot], f, -1.0);
                }
            }
            if let Some(arms) = &kl.arms {
                for a in arms {
                    cross(&mut rows, Some(kl.com), Vector3::zeros(), a.force, 1.0);
                    cross(&mut rows, Some(a.position), Vector3::zeros(), a.force, -1.0);
                }
            }
            for row in rows {
                ang.push_eq(row, k);
            }
        }
        self.program.equalities.push(lin);
        self.program.equalities.push(ang);
    }

    /// Constant-jerk integration between neighbouring knots.
    fn continuity(&mut self) {
        let dt = self.params.horizon.dt;
        let mut blk = ConstraintBlock::new(Family::ComContinuity);
        for k in 0..self.layout.num_knots() - 1 {
            let a = &self.layout.knots[k];
            let b = &self.layout.knots[k + 1];
            let j = a.jerk.expect("every segment has a jerk");
            for ax in 0..3 {
                let mut r = Affine::var(b.r(ax), -1.0);
                r.add(a.r(ax), 1.0)
                    .add(a.v(ax), dt)
                    .add(a.a(ax), dt * dt / 2.0)
                    .add(j + ax, dt * dt * dt / 6.0);
                blk.push_eq(Row::linear(r), k);
                let mut v = Affine::var(b.v(ax), -1.0);
                v.add(a.v(ax), 1.0).add(a.a(ax), dt).add(j + ax, dt * dt / 2.0);
                blk.push_eq(Row::linear(v), k);
                let mut acc = Affine::var(b.a(ax), -1.0);
                acc.add(a.a(ax), 1.0).add(j + ax, dt);
                blk.push_eq(Row::linear(acc), k);
            }
        }
        self.program.equalities.push(blk);
    }

    /// Arm acceleration at one end of segment `k` as an affine expression.
    fn arm_accel(&self, k: usize, arm: usize, ax: usize, at_end: bool) -> Affine {
        let (w0, w1) = hermite_accel_weights(self.params.horizon.dt);
        let w = if at_end { w1 } else { w0 };
        let a = self.arms(k).expect("arm variables")[arm];
        let b = self.arms(k + 1).expect("arm variables")[arm];
        let mut e = Affine::var(a.position + ax, w[0]);
        e.add(a.velocity + ax, w[1]).add(b.position + ax, w[2]).add(b.velocity + ax, w[3]);
        e
    }

    /// Point-mass payload dynamics at both ends of every arm segment. Force
    /// and acceleration are both linear on a segment, so this enforces the
    /// dynamics along the whole segment.
    fn payload_dynamics(&mut self) {
        if self.layout.mode != PlannerMode::PayloadAware {
            return;
        }
        let g = self.params.robot.gravity;
        let mut blk = ConstraintBlock::new(Family::PayloadDynamics);
        for arm in 0..NUM_ARMS {
            let m = self.params.arm_masses[arm];
            if m == 0.0 {
                // nothing held: the arm exerts no force
                for k in 0..self.layout.num_knots() {
                    let f = self.arms(k).unwrap()[arm].force;
                    for ax in 0..3 {
                        blk.push_eq(Row::linear(Affine::var(f + ax, 1.0)), k);
                    }
                }
                continue;
            }
            for k in 0..self.layout.num_knots() - 1 {
                for (end, knot) in [(false, k), (true, k + 1)] {
                    let f = self.arms(knot).unwrap()[arm].force;
                    for ax in 0..3 {
                        let acc = self.arm_accel(k, arm, ax, end);
                        let mut e = Affine {
                            terms: acc.terms.iter().map(|&(i, c)| (i, m * c)).collect(),
                            constant: -m * g[ax],
                        };
                        e.add(f + ax, 1.0);
                        blk.push_eq(Row::linear(e), knot);
                    }
                }
            }
        }
        self.program.equalities.push(blk);
    }

    fn initial(&mut self, init: &BoundaryState) {
        let mut blk = ConstraintBlock::new(Family::InitialCondition);
        let k0 = self.layout.knots[0];
        let pin = |blk: &mut ConstraintBlock, at: usize, v: Vector3<f64>| {
            for ax in 0..3 {
                blk.push_eq(Row::linear(Affine { terms: vec![(at + ax, 1.0)], constant: -v[ax] }), 0);
            }
        };
        pin(&mut blk, k0.com, init.com.position);
        pin(&mut blk, k0.com + 3, init.com.velocity);
        pin(&mut blk, k0.com + 6, init.com.acceleration);
        if let Some(forces) = &init.feet_forces {
            for (f, var) in k0.feet.iter().enumerate() {
                if let Some(var) = var {
                    pin(&mut blk, *var, forces[f]);
                }
            }
        }
        if let Some(arms) = &k0.arms {
            for (i, a) in arms.iter().enumerate() {
                pin(&mut blk, a.position, init.arms[i].position);
                pin(&mut blk, a.velocity, init.arms[i].velocity);
                if let Some(forces) = &init.arm_forces {
                    pin(&mut blk, a.force, forces[i]);
                }
            }
        }
        self.program.equalities.push(blk);
    }

    /// The motion ends at rest inside the final CoM region.
    fn terminal(&mut self) {
        let last = self.layout.num_knots() - 1;
        let kl = self.layout.knots[last];
        let mut eq = ConstraintBlock::new(Family::FinalCondition);
        for ax in 0..3 {
            eq.push_eq(Row::linear(Affine::var(kl.v(ax), 1.0)), last);
            eq.push_eq(Row::linear(Affine::var(kl.a(ax), 1.0)), last);
        }
        if let Some(arms) = &kl.arms {
            for a in arms {
                for ax in 0..3 {
                    eq.push_eq(Row::linear(Affine::var(a.velocity + ax, 1.0)), last);
                }
            }
        }
        self.program.equalities.push(eq);
        let center = self.params.final_com_center.expect("terminal window");
        let half = self.params.weights.final_com_box;
        let mut region = ConstraintBlock::new(Family::FinalComRegion);
        for ax in 0..3 {
            region.push(Row::linear(Affine::var(kl.r(ax), 1.0)), center[ax] - half[ax], center[ax] + half[ax], last);
        }
        self.program.inequalities.push(region);
    }

    /// Unilateral and friction-pyramid rows of every loaded foot.
    fn contact(&mut self) {
        let w = &self.params.weights;
        let nrm = self.params.contact_normal;
        let tangents = self.params.tangents;
        let mut stab = ConstraintBlock::new(Family::Stability);
        let mut fric = ConstraintBlock::new(Family::Friction);
        let dot = |f: usize, d: Vector3<f64>, scale: f64, e: &mut Affine| {
            for ax in 0..3 {
                if d[ax] != 0.0 {
                    e.add(f + ax, scale * d[ax]);
                }
            }
        };
        for (k, kl) in self.layout.knots.iter().enumerate() {
            for f in kl.feet.iter().flatten() {
                let mut e = Affine::default();
                dot(*f, nrm, 1.0, &mut e);
                stab.push(Row::linear(e), w.f_z_min, f64::INFINITY, k);
                for t in tangents {
                    for sign in [1.0, -1.0] {
                        let mut e = Affine::default();
                        dot(*f, t, sign, &mut e);
                        dot(*f, nrm, -w.mu, &mut e);
                        fric.push(Row::linear(e), f64::NEG_INFINITY, 0.0, k);
                    }
                }
            }
        }
        self.program.inequalities.push(stab);
        self.program.inequalities.push(fric);
    }

    /// Workspace boxes, lateral separation and force boxes of the arms.
    fn arm_boxes(&mut self) {
        if self.layout.mode != PlannerMode::PayloadAware {
            return;
        }
        let w = &self.params.weights;
        let g = self.params.robot.gravity;
        let mut ws = ConstraintBlock::new(Family::ArmWorkspace);
        let mut sep = ConstraintBlock::new(Family::ArmSeparation);
        let mut fb = ConstraintBlock::new(Family::ArmForceBox);
        for (k, kl) in self.layout.knots.iter().enumerate() {
            let arms = kl.arms.unwrap();
            for (i, a) in arms.iter().enumerate() {
                let nominal = self.params.robot.nominal_arm_offsets[i];
                let m = self.params.arm_masses[i];
                for ax in 0..3 {
                    let mut e = Affine::var(a.position + ax, 1.0);
                    e.add(kl.r(ax), -1.0);
                    e.constant = -nominal[ax];
                    ws.push(Row::linear(e), -0.5 * w.b_ee[ax], 0.5 * w.b_ee[ax], k);
                    let center = m * g[ax];
                    fb.push(Row::linear(Affine::var(a.force + ax, 1.0)), center - 0.5 * w.b_f[ax], center + 0.5 * w.b_f[ax], k);
                }
            }
            // left arm stays on the +y side of the right arm
            let mut e = Affine::var(arms[0].position + 1, 1.0);
            e.add(arms[1].position + 1, -1.0);
            sep.push(Row::linear(e), w.b_s, f64::INFINITY, k);
        }
        self.program.inequalities.push(ws);
        self.program.inequalities.push(sep);
        self.program.inequalities.push(fb);
    }

    fn costs(&mut self) {
        let w = self.params.weights;
        let dt = self.params.horizon.dt;
        let c_ref = self.params.robot.com_ref_offset;
        let n = self.layout.num_knots();

        let mut jerk = Vec::new();
        let mut ftan = Vec::new();
        let mut com = Vec::new();
        for (k, kl) in self.layout.knots.iter().enumerate() {
            if let Some(j) = kl.jerk {
                for ax in 0..3 {
                    jerk.push(Affine::var(j + ax, dt.sqrt()));
                }
            }
            for f in kl.feet.iter().flatten() {
                for t in self.params.tangents {
                    let mut e = Affine::default();
                    for ax in 0..3 {
                        if t[ax] != 0.0 {
                            e.add(f + ax, t[ax]);
                        }
                    }
                    ftan.push(e);
                }
            }
            let target = self.params.feet_positions[k].iter().sum::<Vector3<f64>>() / NUM_FEET as f64 + c_ref;
            for ax in 0..3 {
                com.push(Affine { terms: vec![(kl.r(ax), 1.0)], constant: -target[ax] });
            }
        }
        self.program.costs.push(CostTerm { family: CostFamily::ComJerk, weight: w.w_jerk, residuals: jerk });
        self.program.costs.push(CostTerm { family: CostFamily::TangentialForce, weight: w.w_ftan, residuals: ftan });
        self.program.costs.push(CostTerm { family: CostFamily::ComReference, weight: w.w_com_ref, residuals: com });

        if self.layout.mode != PlannerMode::PayloadAware {
            return;
        }
        // ∫ (a0 + (a1 − a0) s/Δ)² ds = Δ/3 [(a0 + a1/2)² + ¾ a1²]
        let mut acc = Vec::new();
        let c0 = (dt / 3.0).sqrt();
        let c1 = c0 * 0.75f64.sqrt();
        for k in 0..n - 1 {
            for arm in 0..NUM_ARMS {
                for ax in 0..3 {
                    let a0 = self.arm_accel(k, arm, ax, false);
                    let a1 = self.arm_accel(k, arm, ax, true);
                    let mut first = Affine::default();
                    for &(i, c) in &a0.terms {
                        first.add(i, c0 * c);
                    }
                    for &(i, c) in &a1.terms {
                        first.add(i, 0.5 * c0 * c);
                    }
                    acc.push(first);
                    acc.push(Affine { terms: a1.terms.iter().map(|&(i, c)| (i, c1 * c)).collect(), constant: 0.0 });
                }
            }
        }
        self.program.costs.push(CostTerm { family: CostFamily::ArmAcceleration, weight: w.w_arm_accel, residuals: acc });

        let last = self.layout.knots[n - 1];
        let mut fin = Vec::new();
        for (i, a) in last.arms.unwrap().iter().enumerate() {
            let nominal = self.params.robot.nominal_arm_offsets[i];
            for ax in 0..3 {
                let mut e = Affine::var(a.position + ax, 1.0);
                e.add(last.r(ax), -1.0);
                e.constant = -nominal[ax];
                fin.push(e);
            }
        }
        self.program.costs.push(CostTerm { family: CostFamily::ArmFinalPose, weight: w.w_arm_final, residuals: fin });
    }
}

impl NlpProblem {
    pub fn num_vars(&self) -> usize {
        self.layout.num_vars
    }

    pub fn eval_constraints(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ProgramError> {
        self.program.eval_constraints(x)
    }

    pub fn eval_cost_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>), ProgramError> {
        self.program.eval_cost_and_gradient(x)
    }

    /// A point in static equilibrium: CoM at the reference above the feet,
    /// arms at their nominal offsets holding their payloads, and the least-norm
    /// vertical feet forces that balance weight and moments.
    pub fn equilibrium_guess(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.layout.num_vars];
        let p = &self.params;
        let g = p.robot.gravity;
        for (k, kl) in self.layout.knots.iter().enumerate() {
            let r = p.feet_positions[k].iter().sum::<Vector3<f64>>() / NUM_FEET as f64 + p.robot.com_ref_offset;
            x[kl.com..kl.com + 3].copy_from_slice(r.as_slice());
            // required vertical support and moment about r from the feet
            let mut support = -p.robot.mass * g.z;
            let mut moment = Vector3::zeros();
            if let Some(arms) = &kl.arms {
                for (i, a) in arms.iter().enumerate() {
                    let pos = r + p.robot.nominal_arm_offsets[i];
                    x[a.position..a.position + 3].copy_from_slice(pos.as_slice());
                    let f = p.arm_masses[i] * g;
                    x[a.force..a.force + 3].copy_from_slice(f.as_slice());
                    support -= f.z;
                    moment -= (pos - r).cross(&f);
                }
            }
            let loaded: Vec<(usize, usize)> =
                kl.feet.iter().enumerate().filter_map(|(f, v)| v.map(|v| (f, v))).collect();
            let mut a = DMatrix::zeros(3, loaded.len());
            for (c, &(f, _)) in loaded.iter().enumerate() {
                let d = p.feet_positions[k][f] - r;
                a[(0, c)] = 1.0;
                a[(1, c)] = d.y;
                a[(2, c)] = -d.x;
            }
            let b = DVector::from_vec(vec![support, moment.x, moment.y]);
            let fz = a.pseudo_inverse(1e-12).map(|pinv| pinv * b).unwrap_or_else(|_| {
                DVector::from_element(loaded.len(), support / loaded.len() as f64)
            });
            for (c, &(_, v)) in loaded.iter().enumerate() {
                x[v + 2] = fz[c];
            }
        }
        x
    }

    /// Knot values read back from a solution vector.
    pub fn knot_values(&self, x: &[f64]) -> Vec<KnotValues> {
        self.layout
            .knots
            .iter()
            .enumerate()
            .map(|(k, kl)| KnotValues {
                time: self.params.horizon.time(k),
                com: ComState { position: v3(x, kl.com), velocity: v3(x, kl.com + 3), acceleration: v3(x, kl.com + 6) },
                jerk: kl.jerk.map(|j| v3(x, j)),
                feet_forces: std::array::from_fn(|f| kl.feet[f].map_or(Vector3::zeros(), |i| v3(x, i))),
                loaded: std::array::from_fn(|f| kl.feet[f].is_some()),
                feet_positions: self.params.feet_positions[k],
                arms: kl.arms.map(|arms| {
                    std::array::from_fn(|i| ArmKnot {
                        position: v3(x, arms[i].position),
                        velocity: v3(x, arms[i].velocity),
                        force: v3(x, arms[i].force),
                    })
                }),
            })
            .collect()
    }

    /// Interpolates a solution into continuous-time trajectories.
    pub fn extract_plan(&self, x: &[f64], feet: &FeetPlan) -> TrajectoryPlan {
        TrajectoryPlan::from_knots(self.params.mode, self.params.horizon.dt, &self.knot_values(x), self.params.arm_masses, feet)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmKnot {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub force: Vector3<f64>,
}

/// All decision variables of one knot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnotValues {
    pub time: f64,
    pub com: ComState,
    pub jerk: Option<Vector3<f64>>,
    pub feet_forces: [Vector3<f64>; NUM_FEET],
    pub loaded: [bool; NUM_FEET],
    pub feet_positions: [Vector3<f64>; NUM_FEET],
    pub arms: Option<[ArmKnot; NUM_ARMS]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmTrajectory {
    pub spline: HermiteSpline,
    pub force: PwlForceProfile,
}

/// Continuous-time result of a solve, evaluable on
/// `[start_time, start_time + duration]` in absolute time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub mode: PlannerMode,
    pub start_time: f64,
    pub dt: f64,
    pub com: ComSpline,
    pub feet_forces: [PwlForceProfile; NUM_FEET],
    pub arms: Option<[ArmTrajectory; NUM_ARMS]>,
    pub arm_masses: [f64; NUM_ARMS],
    pub feet: FeetPlan,
}

/// One instant of a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanSample {
    pub time: f64,
    pub com: ComState,
    pub feet_positions: [Vector3<f64>; NUM_FEET],
    pub feet_forces: [Vector3<f64>; NUM_FEET],
    pub arm_positions: Option<[Vector3<f64>; NUM_ARMS]>,
    pub arm_velocities: Option<[Vector3<f64>; NUM_ARMS]>,
    pub arm_accelerations: Option<[Vector3<f64>; NUM_ARMS]>,
    pub arm_forces: Option<[Vector3<f64>; NUM_ARMS]>,
}

impl TrajectoryPlan {
    /// Plan through uniformly spaced knots starting at `knots[0].time`.
    pub fn from_knots(
        mode: PlannerMode,
        dt: f64,
        knots: &[KnotValues],
        arm_masses: [f64; NUM_ARMS],
        feet: &FeetPlan,
    ) -> TrajectoryPlan {
        let com = ComSpline {
            positions: knots.iter().map(|k| k.com.position).collect(),
            velocities: knots.iter().map(|k| k.com.velocity).collect(),
            accelerations: knots.iter().map(|k| k.com.acceleration).collect(),
            // the final knot has no jerk; its segment is never evaluated
            jerks: knots.iter().map(|k| k.jerk.unwrap_or_else(Vector3::zeros)).collect(),
            dt,
        };
        let feet_forces = std::array::from_fn(|f| PwlForceProfile {
            knot_values: knots.iter().map(|k| k.feet_forces[f]).collect(),
            dt,
        });
        let arms = knots[0].arms.map(|_| {
            std::array::from_fn(|i| ArmTrajectory {
                spline: HermiteSpline {
                    positions: knots.iter().map(|k| k.arms.expect("uniform mode")[i].position).collect(),
                    velocities: knots.iter().map(|k| k.arms.expect("uniform mode")[i].velocity).collect(),
                    dt,
                },
                force: PwlForceProfile {
                    knot_values: knots.iter().map(|k| k.arms.expect("uniform mode")[i].force).collect(),
                    dt,
                },
            })
        });
        TrajectoryPlan { mode, start_time: knots[0].time, dt, com, feet_forces, arms, arm_masses, feet: feet.clone() }
    }

    pub fn duration(&self) -> f64 {
        self.com.duration()
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration()
    }

    pub fn num_knots(&self) -> usize {
        self.com.positions.len()
    }

    /// Samples the plan at absolute time `t` (clamped to the plan span).
    pub fn sample(&self, t: f64) -> PlanSample {
        let local = (t - self.start_time).clamp(0.0, self.duration());
        let c = self.com.eval(local).expect("clamped time");
        let feet_forces = std::array::from_fn(|f| self.feet_forces[f].eval(local).expect("clamped time"));
        let (mut ap, mut av, mut aa, mut af) = (None, None, None, None);
        if let Some(arms) = &self.arms {
            let s: [_; NUM_ARMS] = std::array::from_fn(|i| arms[i].spline.eval(local).expect("clamped time"));
            ap = Some(std::array::from_fn(|i| s[i].position));
            av = Some(std::array::from_fn(|i| s[i].velocity));
            aa = Some(std::array::from_fn(|i| s[i].acceleration));
            af = Some(std::array::from_fn(|i| arms[i].force.eval(local).expect("clamped time")));
        }
        PlanSample {
            time: t,
            com: ComState { position: c.position, velocity: c.velocity, acceleration: c.acceleration },
            feet_positions: self.feet.positions(self.start_time + local),
            feet_forces,
            arm_positions: ap,
            arm_velocities: av,
            arm_accelerations: aa,
            arm_forces: af,
        }
    }

    /// Position of the combined CoM of robot and held payloads.
    pub fn total_com(&self, t: f64, robot_mass: f64) -> Vector3<f64> {
        let s = self.sample(t);
        match s.arm_positions {
            Some(arms) => {
                let held: f64 = self.arm_masses.iter().sum();
                let mut acc = robot_mass * s.com.position;
                for i in 0..NUM_ARMS {
                    acc += self.arm_masses[i] * arms[i];
                }
                acc / (robot_mass + held)
            }
            None => s.com.position,
        }
    }
}

/// Initial guess for a shifted window: knots shared with the previous window
/// are copied, the others take the latest previous knot that has the same
/// variable group.
pub fn warm_start_shift(
    prev_x: &[f64],
    prev: &VariableLayout,
    next: &VariableLayout,
    shift_knots: usize,
) -> Result<Vec<f64>, TranscriptionError> {
    if prev.mode != next.mode {
        return Err(TranscriptionError::Layout("planner modes differ".into()));
    }
    if prev_x.len() != prev.num_vars {
        return Err(TranscriptionError::Layout(format!(
            "previous solution has {} entries, layout expects {}",
            prev_x.len(),
            prev.num_vars
        )));
    }
    if prev.knots.is_empty() {
        return Err(TranscriptionError::Layout("previous layout is empty".into()));
    }
    let last = prev.knots.len() - 1;
    let mut x = vec![0.0; next.num_vars];
    let copy = |x: &mut [f64], dst: usize, src: usize, len: usize| {
        x[dst..dst + len].copy_from_slice(&prev_x[src..src + len]);
    };
    // latest previous knot ≤ `from` for which `pick` yields a group
    let source = |from: usize, pick: &dyn Fn(&KnotLayout) -> Option<usize>| -> Option<usize> {
        (0..=from.min(last)).rev().find_map(|k| pick(&prev.knots[k]))
    };
    for (k, kl) in next.knots.iter().enumerate() {
        let from = k + shift_knots;
        let here = from.min(last);
        if let Some(src) = source(here, &|p| Some(p.com)) {
            copy(&mut x, kl.com, src, 9);
        }
        if let Some(j) = kl.jerk {
            if let Some(src) = source(here, &|p| p.jerk) {
                copy(&mut x, j, src, 3);
            }
        }
        for f in 0..NUM_FEET {
            if let Some(dst) = kl.feet[f] {
                if let Some(src) = source(here, &|p| p.feet[f]) {
                    copy(&mut x, dst, src, 3);
                }
            }
        }
        if let Some(arms) = &kl.arms {
            for (i, a) in arms.iter().enumerate() {
                if let Some(src) = source(here, &|p| p.arms.map(|pa| pa[i].position)) {
                    copy(&mut x, a.position, src, 9);
                }
            }
        }
    }
    Ok(x)
}
