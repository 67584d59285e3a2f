//! File exports: the knot table (solver values at full precision), the
//! sampled trajectory and the run report.
//!
//! Schema version 1:
//! - `knots.csv` / `knots.json`: one row per knot, [`KNOT_COLUMNS`] columns.
//!   Locomotion-only tables and the final knot's jerk hold `NaN` in CSV and are
//!   absent in JSON.
//! - `trajectory.csv` / `trajectory.json`: one row per sample,
//!   [`TRAJECTORY_COLUMNS`] columns, see [`trajectory_columns`].
//! - `report.json`: the run report, including the constants needed to
//!   re-check the knot table.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::gait::Leg;
use crate::kinematics::{JointTrajectory, KinematicModel};
use crate::scenario::ExportFormat;
use crate::srbd::{ComState, NUM_ARMS, NUM_FEET};
use crate::transcription::{ArmKnot, KnotValues, TrajectoryPlan};
use crate::verify::{check_knots, CheckConstants, Margins};

pub const SCHEMA_VERSION: u32 = 1;
pub const KNOT_COLUMNS: usize = 1 + 12 + NUM_FEET * 7 + NUM_ARMS * 9;
pub const TRAJECTORY_COLUMNS: usize = 89;
pub const REPORT_FILE: &str = "report.json";
const ARM_NAMES: [&str; NUM_ARMS] = ["left_arm", "right_arm"];

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExportError + '_ {
    move |source| ExportError::Csv { path: path.to_path_buf(), source }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> ExportError + '_ {
    move |source| ExportError::Json { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, message: String) -> ExportError {
    ExportError::Format { path: path.to_path_buf(), message }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExportError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(json_err(path))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn xyz(prefix: &str) -> [String; 3] {
    ["x", "y", "z"].map(|a| format!("{prefix}{a}"))
}

pub fn knot_columns() -> Vec<String> {
    let mut c = vec!["time".to_string()];
    for p in ["r_", "v_", "a_", "jerk_"] {
        c.extend(xyz(p));
    }
    for leg in Leg::ALL {
        let n = leg.name();
        c.extend(xyz(&format!("{n}_p")));
        c.extend(xyz(&format!("{n}_f")));
        c.push(format!("{n}_loaded"));
    }
    for arm in ARM_NAMES {
        for q in ["p", "v", "f"] {
            c.extend(xyz(&format!("{arm}_{q}")));
        }
    }
    c
}

fn knot_row(k: &KnotValues) -> Vec<f64> {
    let mut row = Vec::with_capacity(KNOT_COLUMNS);
    row.push(k.time);
    for v in [k.com.position, k.com.velocity, k.com.acceleration, k.jerk.unwrap_or(Vector3::repeat(f64::NAN))] {
        row.extend(v.iter());
    }
    for f in 0..NUM_FEET {
        row.extend(k.feet_positions[f].iter());
        row.extend(k.feet_forces[f].iter());
        row.push(if k.loaded[f] { 1.0 } else { 0.0 });
    }
    for i in 0..NUM_ARMS {
        match &k.arms {
            Some(a) => {
                for v in [a[i].position, a[i].velocity, a[i].force] {
                    row.extend(v.iter());
                }
            }
            None => row.extend([f64::NAN; 9]),
        }
    }
    row
}

fn knot_from_row(row: &[f64]) -> KnotValues {
    let v = |i: usize| Vector3::new(row[i], row[i + 1], row[i + 2]);
    let jerk = v(10);
    let mut at = 13;
    let mut feet_positions = [Vector3::zeros(); NUM_FEET];
    let mut feet_forces = [Vector3::zeros(); NUM_FEET];
    let mut loaded = [false; NUM_FEET];
    for f in 0..NUM_FEET {
        feet_positions[f] = v(at);
        feet_forces[f] = v(at + 3);
        loaded[f] = row[at + 6] != 0.0;
        at += 7;
    }
    let arms = (!row[at].is_nan()).then(|| {
        std::array::from_fn(|i| {
            let b = at + 9 * i;
            ArmKnot { position: v(b), velocity: v(b + 3), force: v(b + 6) }
        })
    });
    KnotValues {
        time: row[0],
        com: ComState { position: v(1), velocity: v(4), acceleration: v(7) },
        jerk: (!jerk.x.is_nan()).then_some(jerk),
        feet_forces,
        loaded,
        feet_positions,
        arms,
    }
}

#[derive(Serialize, Deserialize)]
struct KnotFile {
    schema_version: u32,
    knots: Vec<KnotValues>,
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_csv(path: &Path, columns: usize) -> Result<(Vec<String>, Vec<Vec<f64>>), ExportError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(str::to_string).collect();
    if header.len() != columns {
        return Err(format_err(path, format!("{} columns, schema {SCHEMA_VERSION} has {columns}", header.len())));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| format_err(path, format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Writes the knot table and returns its path.
pub fn write_knots(dir: &Path, format: ExportFormat, knots: &[KnotValues]) -> Result<PathBuf, ExportError> {
    match format {
        ExportFormat::Csv => {
            let path = dir.join("knots.csv");
            write_csv(&path, &knot_columns(), knots.iter().map(knot_row))?;
            Ok(path)
        }
        ExportFormat::Json => {
            let path = dir.join("knots.json");
            write_json(&path, &KnotFile { schema_version: SCHEMA_VERSION, knots: knots.to_vec() })?;
            Ok(path)
        }
    }
}

/// Reads a knot table written by [`write_knots`]; the format follows the extension.
pub fn read_knots(path: &Path) -> Result<Vec<KnotValues>, ExportError> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let file: KnotFile = serde_json::from_str(&text).map_err(json_err(path))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(format_err(path, format!("schema version {} is not {SCHEMA_VERSION}", file.schema_version)));
        }
        return Ok(file.knots);
    }
    let (_, rows) = read_csv(path, KNOT_COLUMNS)?;
    Ok(rows.iter().map(|r| knot_from_row(r)).collect())
}

pub fn trajectory_columns(model: &KinematicModel) -> Vec<String> {
    let mut c = vec!["time".to_string()];
    for p in ["com_", "com_v", "com_a", "total_com_"] {
        c.extend(xyz(p));
    }
    for leg in Leg::ALL {
        c.extend(xyz(&format!("{}_p", leg.name())));
    }
    for leg in Leg::ALL {
        c.extend(xyz(&format!("{}_f", leg.name())));
    }
    for arm in ARM_NAMES {
        c.extend(xyz(&format!("{arm}_p")));
    }
    for arm in ARM_NAMES {
        c.extend(xyz(&format!("{arm}_f")));
    }
    c.extend(xyz("base_"));
    c.extend(["base_roll", "base_pitch", "base_yaw"].map(String::from));
    c.extend(model.joint_names());
    for leg in Leg::ALL {
        c.push(format!("manip_{}", leg.name()));
    }
    for leg in Leg::ALL {
        c.push(format!("swing_{}", leg.name()));
    }
    c.push("ik_level1_error".into());
    c.push("ik_level2_error".into());
    c
}

/// Samples the plan at the IK instants. Locomotion-only plans report the
/// tracked arm positions and no arm forces.
pub fn trajectory_rows(plan: &TrajectoryPlan, joints: &JointTrajectory, robot_mass: f64, model: &KinematicModel) -> Vec<Vec<f64>> {
    joints
        .samples
        .iter()
        .map(|s| {
            let ps = plan.sample(s.time);
            let mut row = Vec::with_capacity(TRAJECTORY_COLUMNS);
            row.push(s.time);
            for v in [ps.com.position, ps.com.velocity, ps.com.acceleration, plan.total_com(s.time, robot_mass)] {
                row.extend(v.iter());
            }
            for p in &ps.feet_positions {
                row.extend(p.iter());
            }
            for f in &ps.feet_forces {
                row.extend(f.iter());
            }
            let tracked = model.frames(&s.q).arms;
            for p in ps.arm_positions.unwrap_or(tracked) {
                row.extend(p.iter());
            }
            for f in ps.arm_forces.unwrap_or([Vector3::repeat(f64::NAN); NUM_ARMS]) {
                row.extend(f.iter());
            }
            row.extend(s.q.to_vector());
            row.extend(s.manipulability);
            row.extend(s.swing.map(|b| if b { 1.0 } else { 0.0 }));
            row.push(s.errors.level1());
            row.push(s.errors.level2());
            row
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    schema_version: u32,
    columns: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

pub fn write_trajectory(dir: &Path, format: ExportFormat, model: &KinematicModel, rows: &[Vec<f64>]) -> Result<PathBuf, ExportError> {
    let columns = trajectory_columns(model);
    match format {
        ExportFormat::Csv => {
            let path = dir.join("trajectory.csv");
            write_csv(&path, &columns, rows.iter().cloned())?;
            Ok(path)
        }
        ExportFormat::Json => {
            let path = dir.join("trajectory.json");
            let rows = rows.iter().map(|r| r.iter().map(|v| (!v.is_nan()).then_some(*v)).collect()).collect();
            write_json(&path, &TrajectoryFile { schema_version: SCHEMA_VERSION, columns, rows })?;
            Ok(path)
        }
    }
}

pub fn read_trajectory(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), ExportError> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let file: TrajectoryFile = serde_json::from_str(&text).map_err(json_err(path))?;
        if file.schema_version != SCHEMA_VERSION || file.columns.len() != TRAJECTORY_COLUMNS {
            return Err(format_err(path, "unexpected schema".into()));
        }
        let rows = file.rows.into_iter().map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect()).collect();
        return Ok((file.columns, rows));
    }
    read_csv(path, TRAJECTORY_COLUMNS)
}

/// Per-leg manipulability minima and total-CoM excursions of an exported
/// trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDigest {
    pub min_manipulability: [f64; NUM_FEET],
    /// Minimum while the leg swings; the overall minimum if it never does.
    pub min_swing_manipulability: [f64; NUM_FEET],
    pub total_com_min: [f64; 3],
    pub total_com_max: [f64; 3],
    pub total_com_path_length: f64,
    pub base_pitch_range: [f64; 2],
}

pub fn digest_trajectory(path: &Path) -> Result<TrajectoryDigest, ExportError> {
    let (cols, rows) = read_trajectory(path)?;
    let col = |name: &str| cols.iter().position(|c| c == name).ok_or_else(|| format_err(path, format!("missing column {name}")));
    if rows.is_empty() {
        return Err(format_err(path, "no samples".into()));
    }
    let mut d = TrajectoryDigest {
        min_manipulability: [f64::INFINITY; NUM_FEET],
        min_swing_manipulability: [f64::INFINITY; NUM_FEET],
        total_com_min: [f64::INFINITY; 3],
        total_com_max: [f64::NEG_INFINITY; 3],
        total_com_path_length: 0.0,
        base_pitch_range: [f64::INFINITY, f64::NEG_INFINITY],
    };
    let tc = col("total_com_x")?;
    let pitch = col("base_pitch")?;
    let mut prev: Option<Vector3<f64>> = None;
    for row in &rows {
        for (f, leg) in Leg::ALL.iter().enumerate() {
            let m = row[col(&format!("manip_{}", leg.name()))?];
            d.min_manipulability[f] = d.min_manipulability[f].min(m);
            if row[col(&format!("swing_{}", leg.name()))?] != 0.0 {
                d.min_swing_manipulability[f] = d.min_swing_manipulability[f].min(m);
            }
        }
        let c = Vector3::new(row[tc], row[tc + 1], row[tc + 2]);
        for ax in 0..3 {
            d.total_com_min[ax] = d.total_com_min[ax].min(c[ax]);
            d.total_com_max[ax] = d.total_com_max[ax].max(c[ax]);
        }
        if let Some(p) = prev {
            d.total_com_path_length += (c - p).norm();
        }
        prev = Some(c);
        d.base_pitch_range[0] = d.base_pitch_range[0].min(row[pitch]);
        d.base_pitch_range[1] = d.base_pitch_range[1].max(row[pitch]);
    }
    for f in 0..NUM_FEET {
        if !d.min_swing_manipulability[f].is_finite() {
            d.min_swing_manipulability[f] = d.min_manipulability[f];
        }
    }
    Ok(d)
}

pub fn write_report<T: Serialize>(dir: &Path, report: &T) -> Result<(), ExportError> {
    write_json(&dir.join(REPORT_FILE), report)
}

/// Outcome of re-checking an export directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub knots_file: PathBuf,
    pub recomputed: Margins,
    pub reported: Margins,
    /// Recomputed margins equal the reported ones exactly.
    pub reproduces_report: bool,
    pub violations: Vec<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.reproduces_report && self.violations.is_empty()
    }
}

/// Re-reads `report.json` and the knot table in `dir` and recomputes every
/// margin.
pub fn check_export(dir: &Path, tol: f64) -> Result<CheckOutcome, ExportError> {
    let report_path = dir.join(REPORT_FILE);
    let text = std::fs::read_to_string(&report_path).map_err(io_err(&report_path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(json_err(&report_path))?;
    let field = |name: &str| value.get(name).cloned().ok_or_else(|| format_err(&report_path, format!("missing {name}")));
    let check: CheckConstants = serde_json::from_value(field("check")?).map_err(json_err(&report_path))?;
    let reported: Margins = serde_json::from_value(field("margins")?).map_err(json_err(&report_path))?;
    let complete = field("complete")?.as_bool().unwrap_or(false);
    let knots_file = ["knots.csv", "knots.json"]
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .ok_or_else(|| format_err(dir, "no knot table".into()))?;
    let knots = read_knots(&knots_file)?;
    let mut recomputed = check_knots(&knots, &check);
    if !complete {
        recomputed.final_com_margin = None;
    }
    Ok(CheckOutcome {
        knots_file,
        violations: recomputed.violations(tol),
        reproduces_report: recomputed == reported,
        recomputed,
        reported,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srbd::GRAVITY;

    fn knot(t: f64, arms: bool, last: bool) -> KnotValues {
        KnotValues {
            time: t,
            com: ComState {
                position: Vector3::new(0.1 + t, 1.0 / 3.0, 0.7),
                velocity: Vector3::new(1e-17, -2.5, 0.0),
                acceleration: Vector3::new(0.0, 0.0, std::f64::consts::PI),
            },
            jerk: (!last).then(|| Vector3::new(1.0, 2.0, 3.0)),
            feet_forces: [Vector3::new(1.0, 2.0, 300.0), Vector3::zeros(), Vector3::new(0.1, 0.2, 0.3), Vector3::zeros()],
            loaded: [true, false, true, false],
            feet_positions: [Vector3::new(0.35, 0.3, 0.0); 4],
            arms: arms.then(|| {
                std::array::from_fn(|i| ArmKnot {
                    position: Vector3::new(0.5, 0.25 - 0.5 * i as f64, 1.0),
                    velocity: Vector3::new(0.0, 1e-300, 0.0),
                    force: 10.0 * GRAVITY,
                })
            }),
        }
    }

    #[test]
    fn knot_tables_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for arms in [true, false] {
            let knots: Vec<_> = (0..4).map(|k| knot(0.2 * k as f64, arms, k == 3)).collect();
            for format in [ExportFormat::Csv, ExportFormat::Json] {
                let path = write_knots(dir.path(), format, &knots).unwrap();
                assert_eq!(read_knots(&path).unwrap(), knots);
            }
        }
        assert_eq!(knot_columns().len(), KNOT_COLUMNS);
    }

    #[test]
    fn wrong_column_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("knots.csv");
        std::fs::write(&path, "time,r_x\n0,1\n").unwrap();
        assert!(matches!(read_knots(&path), Err(ExportError::Format { .. })));
    }

    #[test]
    fn trajectory_schema_has_fixed_width() {
        let model = KinematicModel::default_robot();
        let cols = trajectory_columns(&model);
        assert_eq!(cols.len(), TRAJECTORY_COLUMNS);
        let mut sorted = cols.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), cols.len());
    }
}
