//! Run orchestration: gait, transcription, solve, plan extraction, IK
//! tracking and export.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;

use crate::export::{self, ExportError};
use crate::gait::{build_schedule, plan_feet, ContactSchedule, FeetPlan};
use crate::kinematics::{ik_track, DivergenceReport, IkOptions, JointTrajectory, KinematicModel};
use crate::scenario::{Derived, Scenario, ScenarioError};
use crate::solver::{solve, SolveStats, SolveStatus};
use crate::srbd::NUM_FEET;
use crate::transcription::{
    build_nlp, warm_start_shift, BoundaryState, Horizon, KnotValues, NlpProblem, NlpSetup, PlannerMode, TrajectoryPlan,
    TranscriptionError,
};
use crate::verify::{check_knots, CheckConstants, Margins};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("gait: {0}")]
    Gait(String),
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error(transparent)]
    Export(#[from] ExportError),
}

/// Scenario with its robot model and feet plan.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub warnings: Vec<String>,
    pub model: KinematicModel,
    pub derived: Derived,
    pub feet: FeetPlan,
    pub schedule: ContactSchedule,
}

impl Prepared {
    pub fn new(scenario: &Scenario) -> Result<Self, PipelineError> {
        let warnings = scenario.validate()?;
        let model = scenario.load_robot()?;
        let derived = Derived::new(&model, scenario);
        let schedule = build_schedule(&scenario.gait).map_err(|e| PipelineError::Gait(e.to_string()))?;
        let feet = plan_feet(&scenario.gait, &derived.initial_stance).map_err(|e| PipelineError::Gait(e.to_string()))?;
        Ok(Self { scenario: scenario.clone(), warnings, model, derived, feet, schedule })
    }

    pub fn dt(&self) -> f64 {
        self.scenario.horizon.dt
    }

    /// Knots over the whole motion.
    pub fn total_knots(&self) -> usize {
        Horizon::offline(self.scenario.gait.total_time, self.dt()).num_knots
    }

    pub fn build(&self, horizon: Horizon, initial: BoundaryState) -> Result<NlpProblem, TranscriptionError> {
        let setup = NlpSetup {
            robot: self.derived.robot,
            payloads: self.scenario.payload_specs(),
            weights: self.scenario.weights,
            mode: self.scenario.mode,
            horizon,
            initial,
        };
        build_nlp(&setup, &self.feet, &self.schedule)
    }

    /// Constants for re-checking a plan over the whole motion.
    pub fn check_constants(&self) -> CheckConstants {
        let fp = self.feet.final_positions();
        let center = fp.iter().sum::<nalgebra::Vector3<f64>>() / NUM_FEET as f64 + self.derived.robot.com_ref_offset;
        CheckConstants {
            mode: self.scenario.mode,
            dt: self.dt(),
            robot: self.derived.robot,
            arm_masses: match self.scenario.mode {
                PlannerMode::PayloadAware => self.scenario.held_masses(),
                PlannerMode::LocomotionOnly => [0.0; 2],
            },
            weights: self.scenario.weights,
            contact_normal: self.feet.contact_normal,
            tangents: self.feet.tangents,
            final_com_center: Some(center),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowRecord {
    pub index: usize,
    pub start_time: f64,
    pub num_knots: usize,
    pub num_vars: usize,
    pub num_rows: usize,
    pub warm_started: bool,
    pub stats: SolveStats,
    /// Same window solved again from a zero guess, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cold_stats: Option<SolveStats>,
}

/// Knots of a finished (or halted) run.
#[derive(Debug, Clone)]
pub struct Solution {
    pub knots: Vec<KnotValues>,
    pub windows: Vec<WindowRecord>,
    /// Every window solved and the knots span the whole motion.
    pub complete: bool,
}

impl Solution {
    pub fn all_optimal(&self) -> bool {
        self.complete && self.windows.iter().all(|w| w.stats.status.is_optimal())
    }

    pub fn total_iterations(&self) -> usize {
        self.windows.iter().map(|w| w.stats.iterations).sum()
    }

    /// Worst status over the windows.
    pub fn status(&self) -> SolveStatus {
        self.windows.iter().map(|w| w.stats.status).find(|s| !s.is_optimal()).unwrap_or(SolveStatus::Optimal)
    }

    pub fn plan(&self, p: &Prepared) -> TrajectoryPlan {
        let arm_masses = p.check_constants().arm_masses;
        TrajectoryPlan::from_knots(p.scenario.mode, p.dt(), &self.knots, arm_masses, &p.feet)
    }
}

fn solve_window(
    p: &Prepared,
    index: usize,
    horizon: Horizon,
    initial: BoundaryState,
    guess: Option<(&[f64], &NlpProblem, usize)>,
) -> Result<(NlpProblem, Vec<f64>, WindowRecord), PipelineError> {
    let problem = p.build(horizon, initial)?;
    let (x0, warm) = match guess {
        Some((x, prev, shift)) => (warm_start_shift(x, &prev.layout, &problem.layout, shift)?, true),
        None => (vec![0.0; problem.num_vars()], false),
    };
    let result = solve(&problem.program, &x0, &p.scenario.solver);
    info!(
        "window {index} t0={:.2} vars={} rows={} {:?} in {} iterations ({:.2} s)",
        horizon.start_time,
        problem.num_vars(),
        problem.program.num_rows(),
        result.stats.status,
        result.stats.iterations,
        result.stats.wall_time
    );
    let record = WindowRecord {
        index,
        start_time: horizon.start_time,
        num_knots: horizon.num_knots,
        num_vars: problem.num_vars(),
        num_rows: problem.program.num_rows(),
        warm_started: warm,
        stats: result.stats,
        cold_stats: None,
    };
    Ok((problem, result.x, record))
}

/// One solve over the whole motion from a zero guess.
pub fn solve_offline(p: &Prepared) -> Result<Solution, PipelineError> {
    let horizon = Horizon::offline(p.scenario.gait.total_time, p.dt());
    let (problem, x, record) = solve_window(p, 0, horizon, p.derived.initial_state(), None)?;
    Ok(Solution { knots: problem.knot_values(&x), complete: true, windows: vec![record] })
}

/// Fixed-length windows shifted by the replanning stride. Each window pins
/// its first knot to the state the previous window reached there; only the
/// first stride of every window is kept, and the last window is kept whole.
/// Halts at the first window that is not solved to optimality.
///
/// With `cold_reference` every warm-started window is also solved from a zero
/// guess; only the warm solution is used.
pub fn solve_receding(p: &Prepared, warm: bool, cold_reference: bool) -> Result<Solution, PipelineError> {
    let dt = p.dt();
    let last = p.total_knots() - 1;
    let span = ((p.scenario.horizon.window / dt).round() as usize).min(last);
    let stride = (p.scenario.horizon.replan_stride / dt).round() as usize;
    let mut start = 0;
    let mut initial = p.derived.initial_state();
    let mut knots: Vec<KnotValues> = Vec::with_capacity(last + 1);
    let mut windows = Vec::new();
    let mut prev: Option<(NlpProblem, Vec<f64>)> = None;
    loop {
        let horizon = Horizon { start_time: start as f64 * dt, num_knots: span + 1, dt };
        let guess = if warm { prev.as_ref().map(|(pp, x)| (x.as_slice(), pp, stride)) } else { None };
        let (problem, x, mut record) = solve_window(p, windows.len(), horizon, initial, guess)?;
        if cold_reference && record.warm_started {
            let cold = solve(&problem.program, &vec![0.0; problem.num_vars()], &p.scenario.solver);
            record.cold_stats = Some(cold.stats);
        }
        let ok = record.stats.status.is_optimal();
        windows.push(record);
        let values = problem.knot_values(&x);
        let final_window = start + span >= last;
        if !ok || final_window {
            knots.extend_from_slice(&values);
            return Ok(Solution { knots, windows, complete: ok && final_window });
        }
        knots.extend_from_slice(&values[..stride]);
        let next = &values[stride];
        initial = BoundaryState {
            com: next.com,
            arms: next.arms.map_or(initial.arms, |a| {
                std::array::from_fn(|i| crate::transcription::ArmState { position: a[i].position, velocity: a[i].velocity })
            }),
            feet_forces: Some(next.feet_forces),
            arm_forces: next.arms.map(|a| std::array::from_fn(|i| a[i].force)),
        };
        start += stride;
        prev = Some((problem, x));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IkSummary {
    pub samples: usize,
    pub max_level1_error: f64,
    pub max_level2_error: f64,
    pub divergence: Option<DivergenceReport>,
    pub min_manipulability: [f64; NUM_FEET],
    pub min_swing_manipulability: [f64; NUM_FEET],
}

impl IkSummary {
    pub fn new(t: &JointTrajectory) -> Self {
        Self {
            samples: t.samples.len(),
            max_level1_error: t.max_level1_error(),
            max_level2_error: t.samples.iter().map(|s| s.errors.level2()).fold(0.0, f64::max),
            divergence: t.divergence,
            min_manipulability: t.min_manipulability(),
            min_swing_manipulability: t.min_swing_manipulability(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Offline,
    Receding,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub kind: RunKind,
    /// The scenario with every default filled in.
    pub scenario: Scenario,
    pub warnings: Vec<String>,
    pub derived: Derived,
    pub check: CheckConstants,
    pub status: SolveStatus,
    pub complete: bool,
    pub total_iterations: usize,
    pub windows: Vec<WindowRecord>,
    /// Recomputed from the exported knot table.
    pub margins: Margins,
    pub ik: IkSummary,
    pub files: Vec<PathBuf>,
    pub wall_time: f64,
}

impl RunReport {
    /// Exit status of the CLI: every window optimal.
    pub fn success(&self) -> bool {
        self.complete && self.status.is_optimal()
    }
}

/// Everything a run produced, before export.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub prepared: Prepared,
    pub solution: Solution,
    pub plan: TrajectoryPlan,
    pub joints: JointTrajectory,
}

impl RunOutput {
    pub fn ik_options(p: &Prepared) -> IkOptions {
        IkOptions { dt: 1.0 / p.scenario.export.rate, ..p.scenario.ik }
    }

    fn finish(prepared: Prepared, solution: Solution) -> Self {
        let plan = solution.plan(&prepared);
        let joints = ik_track(&prepared.model, &plan, prepared.scenario.held_masses(), &Self::ik_options(&prepared));
        Self { prepared, solution, plan, joints }
    }

    pub fn offline(scenario: &Scenario) -> Result<Self, PipelineError> {
        let p = Prepared::new(scenario)?;
        let s = solve_offline(&p)?;
        Ok(Self::finish(p, s))
    }

    pub fn receding(scenario: &Scenario, cold_reference: bool) -> Result<Self, PipelineError> {
        let p = Prepared::new(scenario)?;
        let s = solve_receding(&p, scenario.horizon.warm_start, cold_reference)?;
        Ok(Self::finish(p, s))
    }

    /// Writes the exports and the report into `out_dir`.
    pub fn export(&self, kind: RunKind, out_dir: &Path, started: Instant) -> Result<RunReport, PipelineError> {
        let p = &self.prepared;
        std::fs::create_dir_all(out_dir).map_err(|e| ExportError::Io { path: out_dir.to_path_buf(), source: e })?;
        let format = p.scenario.export.format;
        let knots_path = export::write_knots(out_dir, format, &self.solution.knots)?;
        let rows = export::trajectory_rows(&self.plan, &self.joints, p.derived.robot_mass, &p.model);
        let traj_path = export::write_trajectory(out_dir, format, &p.model, &rows)?;
        // margins come from the file just written
        let reread = export::read_knots(&knots_path)?;
        let check = p.check_constants();
        let mut margins = check_knots(&reread, &check);
        if !self.solution.complete {
            margins.final_com_margin = None;
        }
        let report = RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            kind,
            scenario: p.scenario.clone(),
            warnings: p.warnings.clone(),
            derived: p.derived,
            check,
            status: self.solution.status(),
            complete: self.solution.complete,
            total_iterations: self.solution.total_iterations(),
            windows: self.solution.windows.clone(),
            margins,
            ik: IkSummary::new(&self.joints),
            files: vec![knots_path, traj_path, out_dir.join(export::REPORT_FILE)],
            wall_time: started.elapsed().as_secs_f64(),
        };
        export::write_report(out_dir, &report)?;
        Ok(report)
    }
}

pub fn run_offline(scenario: &Scenario, out_dir: &Path) -> Result<RunReport, PipelineError> {
    let started = Instant::now();
    RunOutput::offline(scenario)?.export(RunKind::Offline, out_dir, started)
}

pub fn run_receding(scenario: &Scenario, out_dir: &Path, cold_reference: bool) -> Result<RunReport, PipelineError> {
    let started = Instant::now();
    RunOutput::receding(scenario, cold_reference)?.export(RunKind::Receding, out_dir, started)
}

/// Payload-aware against locomotion-only on one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub scenario: String,
    pub payload_aware: export::TrajectoryDigest,
    pub locomotion_only: export::TrajectoryDigest,
    pub payload_aware_status: SolveStatus,
    pub locomotion_only_status: SolveStatus,
    pub payload_aware_vars: usize,
    pub locomotion_only_vars: usize,
    pub payload_aware_iterations: usize,
    pub locomotion_only_iterations: usize,
}

impl CompareReport {
    pub fn success(&self) -> bool {
        self.payload_aware_status.is_optimal() && self.locomotion_only_status.is_optimal()
    }
}

/// Runs both modes offline into `out_dir/<mode>` and digests the exports.
pub fn compare(scenario: &Scenario, out_dir: &Path) -> Result<CompareReport, PipelineError> {
    let mut reports = Vec::new();
    let mut digests = Vec::new();
    for (mode, dir) in [(PlannerMode::PayloadAware, "payload_aware"), (PlannerMode::LocomotionOnly, "locomotion_only")] {
        let s = Scenario { mode, ..scenario.clone() };
        let dir = out_dir.join(dir);
        let report = run_offline(&s, &dir)?;
        digests.push(export::digest_trajectory(&report.files[1])?);
        reports.push(report);
    }
    let out = CompareReport {
        scenario: scenario.name.clone(),
        payload_aware: digests[0].clone(),
        locomotion_only: digests[1].clone(),
        payload_aware_status: reports[0].status,
        locomotion_only_status: reports[1].status,
        payload_aware_vars: reports[0].windows[0].num_vars,
        locomotion_only_vars: reports[1].windows[0].num_vars,
        payload_aware_iterations: reports[0].total_iterations,
        locomotion_only_iterations: reports[1].total_iterations,
    };
    export::write_json(&out_dir.join("compare.json"), &out)?;
    Ok(out)
}
