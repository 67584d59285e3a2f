//! Scenario files: everything a run needs, validated on load.

use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::gait::{build_schedule, GaitSpec, Terrain};
use crate::kinematics::{IkOptions, KinematicModel, KinematicsError};
use crate::solver::SolverOptions;
use crate::srbd::{PayloadSpec, RobotConstants, GRAVITY, NUM_ARMS, NUM_FEET};
use crate::transcription::{ArmState, BoundaryState, PlannerMode, PlannerWeights};

pub const PRESETS: [&str; 6] = ["standing", "sc1", "sc2", "sc3", "experiment", "step_up"];

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Robot(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmSide {
    Left,
    Right,
}

impl ArmSide {
    pub fn slot(self) -> usize {
        match self {
            ArmSide::Left => 0,
            ArmSide::Right => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Payload {
    pub arm: ArmSide,
    /// [kg]
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSource {
    /// Chain description; the shipped robot when absent. Relative paths are
    /// resolved against the scenario file.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonSettings {
    /// Knot spacing [s].
    pub dt: f64,
    /// Receding-horizon window length [s].
    pub window: f64,
    /// Receding-horizon replanning stride [s].
    pub replan_stride: f64,
    pub warm_start: bool,
}

impl Default for HorizonSettings {
    fn default() -> Self {
        Self { dt: 0.2, window: 4.0, replan_stride: 0.2, warm_start: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSettings {
    /// Sampling rate of the trajectory export [Hz].
    pub rate: f64,
    pub format: ExportFormat,
}

impl Default for ExportSettings {
    fn default() -> Self {
        Self { rate: 100.0, format: ExportFormat::Csv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub mode: PlannerMode,
    #[serde(default)]
    pub robot: RobotSource,
    #[serde(default)]
    pub payloads: Vec<Payload>,
    pub gait: GaitSpec,
    #[serde(default)]
    pub horizon: HorizonSettings,
    #[serde(default)]
    pub weights: PlannerWeights,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub ik: IkOptions,
    #[serde(default)]
    pub export: ExportSettings,
}

fn is_multiple(x: f64, step: f64) -> bool {
    let r = x / step;
    (r - r.round()).abs() < 1e-9
}

impl Scenario {
    /// Parses and validates; relative robot paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self, ScenarioError> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if let (Some(dir), Some(file)) = (base_dir, s.robot.file.as_mut()) {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
        for w in s.validate()? {
            warn!("{w}");
        }
        Ok(s)
    }

    /// A shipped preset by name.
    pub fn preset(name: &str) -> Option<Self> {
        let text = match name {
            "standing" => include_str!("../scenarios/standing.toml"),
            "sc1" => include_str!("../scenarios/sc1.toml"),
            "sc2" => include_str!("../scenarios/sc2.toml"),
            "sc3" => include_str!("../scenarios/sc3.toml"),
            "experiment" => include_str!("../scenarios/experiment.toml"),
            "step_up" => include_str!("../scenarios/step_up.toml"),
            _ => return None,
        };
        Some(Self::from_toml_str(text, None).expect("shipped presets are valid"))
    }

    /// Checks cross-field consistency and returns warnings.
    pub fn validate(&self) -> Result<Vec<String>, ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let mut warnings = Vec::new();
        if self.name.trim().is_empty() {
            return bad("name must not be empty".into());
        }
        let mut seen = [false; NUM_ARMS];
        for p in &self.payloads {
            if !(p.mass >= 0.0 && p.mass.is_finite()) {
                return bad(format!("payload mass must be non-negative, got {}", p.mass));
            }
            if std::mem::replace(&mut seen[p.arm.slot()], true) {
                return bad(format!("two payloads on the {:?} arm", p.arm));
            }
            if p.mass == 0.0 && self.mode == PlannerMode::PayloadAware {
                warnings.push(format!("{:?} arm payload has zero mass; its arm is planned as massless", p.arm));
            }
        }
        let h = &self.horizon;
        if !(h.dt > 0.0 && h.dt.is_finite()) {
            return bad(format!("horizon.dt must be positive, got {}", h.dt));
        }
        if !is_multiple(self.gait.total_time, h.dt) {
            return bad(format!("gait.total_time {} is not a multiple of horizon.dt {}", self.gait.total_time, h.dt));
        }
        if !(h.window >= 1.0) || !is_multiple(h.window, h.dt) {
            return bad(format!("horizon.window must be at least 1 s and a multiple of dt, got {}", h.window));
        }
        if !(h.replan_stride > 0.0) || !is_multiple(h.replan_stride, h.dt) || h.replan_stride > h.window - h.dt + 1e-9 {
            return bad(format!(
                "horizon.replan_stride must be a positive multiple of dt shorter than the window, got {}",
                h.replan_stride
            ));
        }
        self.weights.validate().map_err(ScenarioError::Invalid)?;
        build_schedule(&self.gait).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        if let Terrain::Slope { angle_deg } = self.gait.terrain {
            if !(angle_deg.abs() < 45.0) {
                return bad(format!("slope angle must be within ±45 degrees, got {angle_deg}"));
            }
        }
        let so = &self.solver;
        if so.max_iterations == 0 || !(so.kkt_tolerance > 0.0) || !(so.feasibility_tolerance > 0.0) {
            return bad("solver needs max_iterations > 0 and positive tolerances".into());
        }
        if !(self.ik.dt > 0.0) || !(self.ik.damping > 0.0) || self.ik.max_iterations == 0 {
            return bad("ik needs dt > 0, damping > 0 and max_iterations > 0".into());
        }
        if !(self.export.rate > 0.0 && self.export.rate.is_finite()) {
            return bad(format!("export.rate must be positive, got {}", self.export.rate));
        }
        Ok(warnings)
    }

    pub fn payload_specs(&self) -> Vec<PayloadSpec> {
        self.payloads.iter().map(|p| PayloadSpec { mass: p.mass, grasp_arm_index: 5 + p.arm.slot() }).collect()
    }

    /// Payload mass held by each arm.
    pub fn held_masses(&self) -> [f64; NUM_ARMS] {
        let mut m = [0.0; NUM_ARMS];
        for p in &self.payloads {
            m[p.arm.slot()] += p.mass;
        }
        m
    }

    pub fn load_robot(&self) -> Result<KinematicModel, ScenarioError> {
        Ok(match &self.robot.file {
            Some(path) => KinematicModel::load(path)?,
            None => KinematicModel::default_robot(),
        })
    }
}

/// Reads a scenario file, or a preset when `arg` names one and no such file exists.
pub fn parse_scenario(arg: &str) -> Result<Scenario, ScenarioError> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(s) = Scenario::preset(arg) {
            return Ok(s);
        }
    }
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    Scenario::from_toml_str(&text, path.parent()).map_err(|e| match e {
        ScenarioError::Parse(m) => ScenarioError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Planner constants and the starting state derived from the robot model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Derived {
    /// Constants of the planned body: the robot alone, or robot plus payloads
    /// in locomotion-only mode.
    pub robot: RobotConstants,
    /// Robot mass without payloads [kg].
    pub robot_mass: f64,
    pub initial_stance: [Vector3<f64>; NUM_FEET],
    /// Horizontal distance of the nominal CoM from the feet centroid [m].
    pub com_horizontal_offset: f64,
}

impl Derived {
    pub fn new(model: &KinematicModel, scenario: &Scenario) -> Self {
        let q = model.nominal_configuration(Vector3::zeros());
        let frames = model.frames(&q);
        let mean = frames.feet.iter().sum::<Vector3<f64>>() / NUM_FEET as f64;
        let held = scenario.held_masses();
        let (mass, com) = match scenario.mode {
            PlannerMode::PayloadAware => (model.total_mass(), frames.com),
            PlannerMode::LocomotionOnly => {
                (model.total_mass() + held.iter().sum::<f64>(), model.com_with_payloads(&q, held))
            }
        };
        let rel = com - mean;
        let tan = match scenario.gait.terrain {
            Terrain::Slope { angle_deg } => angle_deg.to_radians().tan(),
            _ => 0.0,
        };
        let initial_stance = std::array::from_fn(|f| {
            let p = frames.feet[f] - mean;
            Vector3::new(p.x, p.y, p.x * tan)
        });
        Self {
            robot: RobotConstants {
                mass,
                gravity: GRAVITY,
                com_ref_offset: Vector3::new(0.0, 0.0, rel.z),
                nominal_arm_offsets: std::array::from_fn(|a| frames.arms[a] - frames.com),
            },
            robot_mass: model.total_mass(),
            initial_stance,
            com_horizontal_offset: rel.xy().norm(),
        }
    }

    /// At rest above the initial stance with the arms at their nominal offsets.
    pub fn initial_state(&self) -> BoundaryState {
        let mean = self.initial_stance.iter().sum::<Vector3<f64>>() / NUM_FEET as f64;
        let r0 = mean + self.robot.com_ref_offset;
        BoundaryState {
            com: crate::srbd::ComState::at_rest(r0),
            arms: std::array::from_fn(|a| ArmState {
                position: r0 + self.robot.nominal_arm_offsets[a],
                velocity: Vector3::zeros(),
            }),
            feet_forces: None,
            arm_forces: None,
        }
    }
}
