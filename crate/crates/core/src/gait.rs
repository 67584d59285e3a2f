//! Heuristic feet planning: contact schedule and swing trajectories computed
//! from user gait inputs before the optimization runs. The results enter the
//! NLP as fixed parameters.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::splines::HermiteSegment;
use crate::srbd::NUM_FEET;

#[derive(Debug, Error, PartialEq)]
pub enum GaitError {
    #[error("invalid gait: {0}")]
    Invalid(String),
    #[error("swing of {a:?} at [{a_lift}, {a_touch}] overlaps swing of {b:?} at [{b_lift}, {b_touch}]")]
    OverlappingSwings {
        a: Leg,
        a_lift: f64,
        a_touch: f64,
        b: Leg,
        b_lift: f64,
        b_touch: f64,
    },
}

/// Legs in end-effector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Leg {
    FL,
    FR,
    RL,
    RR,
}

impl Leg {
    pub const ALL: [Leg; NUM_FEET] = [Leg::FL, Leg::FR, Leg::RL, Leg::RR];

    pub fn index(self) -> usize {
        match self {
            Leg::FL => 0,
            Leg::FR => 1,
            Leg::RL => 2,
            Leg::RR => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Leg::FL => "FL",
            Leg::FR => "FR",
            Leg::RL => "RL",
            Leg::RR => "RR",
        }
    }
}

/// Ground geometry under the footholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Terrain {
    Flat,
    /// Plane through the origin inclined about the y axis; positive angles
    /// rise along +x.
    Slope { angle_deg: f64 },
    /// Flat contact patches with an absolute touch-down height per step.
    Footholds { heights: Vec<f64> },
}

impl Terrain {
    /// Unit contact normal and the two tangents `(n̂, t̂x, t̂y)`.
    pub fn contact_frame(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        match self {
            Terrain::Slope { angle_deg } => {
                let th = angle_deg.to_radians();
                (
                    Vector3::new(-th.sin(), 0.0, th.cos()),
                    Vector3::new(th.cos(), 0.0, th.sin()),
                    Vector3::y(),
                )
            }
            _ => (Vector3::z(), Vector3::x(), Vector3::y()),
        }
    }
}

/// User gait inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitSpec {
    /// Legs in stepping order, one entry per step.
    pub pattern: Vec<Leg>,
    /// Foot displacement of every step [m].
    pub stride: Vector3<f64>,
    /// Swing duration of each step [s].
    pub step_duration: f64,
    /// Stance time between consecutive swings [s].
    #[serde(default = "default_dwell")]
    pub dwell: f64,
    /// First lift-off [s]; the step block is centered in the horizon when absent.
    #[serde(default)]
    pub start_time: Option<f64>,
    /// Explicit lift-off time for each step, overriding start_time and dwell.
    #[serde(default)]
    pub lift_off_times: Option<Vec<f64>>,
    /// Duration of the whole motion [s].
    pub total_time: f64,
    /// Apex height of each swing above the higher of its endpoints [m].
    pub clearance: f64,
    #[serde(default = "default_terrain")]
    pub terrain: Terrain,
}

fn default_dwell() -> f64 {
    0.2
}

fn default_terrain() -> Terrain {
    Terrain::Flat
}

impl GaitSpec {
    pub fn standing(total_time: f64) -> Self {
        Self {
            pattern: Vec::new(),
            stride: Vector3::zeros(),
            step_duration: 1.0,
            dwell: default_dwell(),
            start_time: None,
            lift_off_times: None,
            total_time,
            clearance: 0.0,
            terrain: Terrain::Flat,
        }
    }

    fn validate(&self) -> Result<(), GaitError> {
        let bad = |m: String| Err(GaitError::Invalid(m));
        if !(self.total_time > 0.0 && self.total_time.is_finite()) {
            return bad(format!("total_time must be positive, got {}", self.total_time));
        }
        if !(self.step_duration > 0.0 && self.step_duration.is_finite()) {
            return bad(format!("step_duration must be positive, got {}", self.step_duration));
        }
        if !(self.clearance >= 0.0) {
            return bad(format!("clearance must be non-negative, got {}", self.clearance));
        }
        if !(self.dwell >= 0.0) {
            return bad(format!("dwell must be non-negative, got {}", self.dwell));
        }
        if !self.stride.iter().all(|v| v.is_finite()) {
            return bad("stride must be finite".into());
        }
        let n = self.pattern.len() as f64;
        if self.total_time + 1e-9 < n * self.step_duration {
            return bad(format!(
                "total_time {} shorter than {} steps of {} s",
                self.total_time, n, self.step_duration
            ));
        }
        if let Some(times) = &self.lift_off_times {
            if times.len() != self.pattern.len() {
                return bad(format!(
                    "{} lift_off_times given for {} steps",
                    times.len(),
                    self.pattern.len()
                ));
            }
        }
        if let Terrain::Footholds { heights } = &self.terrain {
            if heights.len() != self.pattern.len() {
                return bad(format!(
                    "{} foothold heights given for {} steps",
                    heights.len(),
                    self.pattern.len()
                ));
            }
        }
        Ok(())
    }

    fn lift_offs(&self) -> Vec<f64> {
        if let Some(times) = &self.lift_off_times {
            return times.clone();
        }
        let n = self.pattern.len();
        if n == 0 {
            return Vec::new();
        }
        let active = n as f64 * self.step_duration + (n - 1) as f64 * self.dwell;
        let start = self
            .start_time
            .unwrap_or(0.5 * (self.total_time - active).max(0.0));
        (0..n)
            .map(|k| start + k as f64 * (self.step_duration + self.dwell))
            .collect()
    }
}

/// One swing window of a foot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwingWindow {
    pub lift_off: f64,
    pub touch_down: f64,
    /// Index of the step in the gait pattern.
    pub step: usize,
}

/// Per-foot swing intervals; every other instant of `[0, T]` is stance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSchedule {
    pub total_time: f64,
    pub swings: [Vec<SwingWindow>; NUM_FEET],
}

impl ContactSchedule {
    pub fn in_stance(&self, foot: usize, t: f64) -> bool {
        !self.swings[foot]
            .iter()
            .any(|w| t > w.lift_off && t < w.touch_down)
    }

    pub fn stance_count(&self, t: f64) -> usize {
        (0..NUM_FEET).filter(|&f| self.in_stance(f, t)).count()
    }

    /// Whether a foot can carry force at a knot: a piecewise-linear force
    /// that is nonzero at `t` is nonzero over `(t − dt, t + dt)`, so that whole
    /// interval must be free of swing.
    pub fn carries_force(&self, foot: usize, t: f64, dt: f64) -> bool {
        let eps = 1e-9;
        !self.swings[foot]
            .iter()
            .any(|w| w.lift_off < t + dt - eps && w.touch_down > t - dt + eps)
    }

    pub fn is_empty(&self) -> bool {
        self.swings.iter().all(Vec::is_empty)
    }

    /// Sorted boundary instants of every swing window.
    pub fn events(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .swings
            .iter()
            .flatten()
            .flat_map(|w| [w.lift_off, w.touch_down])
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// Builds the crawl contact schedule, one leg swinging at a time.
pub fn build_schedule(gait: &GaitSpec) -> Result<ContactSchedule, GaitError> {
    gait.validate()?;
    let mut swings: [Vec<SwingWindow>; NUM_FEET] = Default::default();
    let mut all = Vec::new();
    for (step, (leg, lift)) in gait.pattern.iter().zip(gait.lift_offs()).enumerate() {
        let touch = lift + gait.step_duration;
        if lift < -1e-9 || touch > gait.total_time + 1e-9 {
            return Err(GaitError::Invalid(format!(
                "step {step} swing [{lift}, {touch}] outside [0, {}]",
                gait.total_time
            )));
        }
        let w = SwingWindow { lift_off: lift, touch_down: touch, step };
        for (other_leg, o) in &all {
            let o: &SwingWindow = o;
            if w.lift_off < o.touch_down - 1e-9 && o.lift_off < w.touch_down - 1e-9 {
                return Err(GaitError::OverlappingSwings {
                    a: *other_leg,
                    a_lift: o.lift_off,
                    a_touch: o.touch_down,
                    b: *leg,
                    b_lift: lift,
                    b_touch: touch,
                });
            }
        }
        all.push((*leg, w));
        swings[leg.index()].push(w);
    }
    for s in swings.iter_mut() {
        s.sort_by(|a, b| a.lift_off.total_cmp(&b.lift_off));
    }
    Ok(ContactSchedule { total_time: gait.total_time, swings })
}

/// A phase of a single foot trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FootPhase {
    Stance {
        start: f64,
        end: f64,
        position: Vector3<f64>,
    },
    /// Lift-off to apex, then apex to touch-down.
    Swing {
        start: f64,
        end: f64,
        rise: HermiteSegment,
        fall: HermiteSegment,
    },
}

impl FootPhase {
    fn span(&self) -> (f64, f64) {
        match self {
            FootPhase::Stance { start, end, .. } | FootPhase::Swing { start, end, .. } => (*start, *end),
        }
    }
}

/// Time-parameterized feet trajectories covering `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeetPlan {
    pub total_time: f64,
    pub phases: [Vec<FootPhase>; NUM_FEET],
    pub contact_normal: Vector3<f64>,
    pub tangents: [Vector3<f64>; 2],
}

impl FeetPlan {
    fn phase(&self, foot: usize, t: f64) -> &FootPhase {
        let phases = &self.phases[foot];
        phases
            .iter()
            .find(|p| {
                let (s, e) = p.span();
                t >= s && t <= e
            })
            .unwrap_or_else(|| if t <= 0.0 { &phases[0] } else { &phases[phases.len() - 1] })
    }

    /// Foot position at `t`; times outside `[0, T]` clamp to the ends.
    pub fn position(&self, foot: usize, t: f64) -> Vector3<f64> {
        self.sample(foot, t).0
    }

    pub fn velocity(&self, foot: usize, t: f64) -> Vector3<f64> {
        self.sample(foot, t).1
    }

    fn sample(&self, foot: usize, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let t = t.clamp(0.0, self.total_time);
        match self.phase(foot, t) {
            FootPhase::Stance { position, .. } => (*position, Vector3::zeros()),
            FootPhase::Swing { start, rise, fall, .. } => {
                let local = t - start;
                let s = if local <= rise.duration {
                    rise.eval_unchecked(local.max(0.0))
                } else {
                    fall.eval_unchecked((local - rise.duration).min(fall.duration))
                };
                (s.position, s.velocity)
            }
        }
    }

    pub fn is_swinging(&self, foot: usize, t: f64) -> bool {
        matches!(self.phase(foot, t.clamp(0.0, self.total_time)), FootPhase::Swing { .. })
    }

    pub fn positions(&self, t: f64) -> [Vector3<f64>; NUM_FEET] {
        std::array::from_fn(|f| self.position(f, t))
    }

    /// Mean of the four feet, regardless of contact state.
    pub fn mean_position(&self, t: f64) -> Vector3<f64> {
        self.positions(t).iter().sum::<Vector3<f64>>() / NUM_FEET as f64
    }

    /// Final foothold of each foot.
    pub fn final_positions(&self) -> [Vector3<f64>; NUM_FEET] {
        self.positions(self.total_time)
    }
}

/// Plans stance holds and swing arcs for every foot.
pub fn plan_feet(gait: &GaitSpec, initial_stance: &[Vector3<f64>; NUM_FEET]) -> Result<FeetPlan, GaitError> {
    let schedule = build_schedule(gait)?;
    Ok(plan_feet_with_schedule(gait, &schedule, initial_stance))
}

pub(crate) fn plan_feet_with_schedule(
    gait: &GaitSpec,
    schedule: &ContactSchedule,
    initial_stance: &[Vector3<f64>; NUM_FEET],
) -> FeetPlan {
    let (normal, tx, ty) = gait.terrain.contact_frame();
    let phases = std::array::from_fn(|foot| {
        let mut out = Vec::new();
        let mut pos = initial_stance[foot];
        let mut t = 0.0;
        for w in &schedule.swings[foot] {
            out.push(FootPhase::Stance { start: t, end: w.lift_off, position: pos });
            let target = touch_down_point(gait, w.step, pos);
            let (rise, fall) = swing_segments(pos, target, w.touch_down - w.lift_off, gait.clearance);
            out.push(FootPhase::Swing { start: w.lift_off, end: w.touch_down, rise, fall });
            pos = target;
            t = w.touch_down;
        }
        out.push(FootPhase::Stance { start: t, end: gait.total_time, position: pos });
        out
    });
    FeetPlan {
        total_time: gait.total_time,
        phases,
        contact_normal: normal,
        tangents: [tx, ty],
    }
}

fn touch_down_point(gait: &GaitSpec, step: usize, lift: Vector3<f64>) -> Vector3<f64> {
    let mut p = lift + gait.stride;
    match &gait.terrain {
        Terrain::Flat => {}
        Terrain::Slope { angle_deg } => p.z += angle_deg.to_radians().tan() * gait.stride.x,
        Terrain::Footholds { heights } => p.z = heights[step],
    }
    p
}

/// Two Hermite segments through the apex. Horizontally this reproduces a
/// single rest-to-rest cubic; vertically both halves start and end at rest.
fn swing_segments(
    lift: Vector3<f64>,
    touch: Vector3<f64>,
    duration: f64,
    clearance: f64,
) -> (HermiteSegment, HermiteSegment) {
    let half = 0.5 * duration;
    let mut apex = 0.5 * (lift + touch);
    apex.z = lift.z.max(touch.z) + clearance;
    let mut apex_vel = 1.5 * (touch - lift) / duration;
    apex_vel.z = 0.0;
    (
        HermiteSegment { p0: lift, v0: Vector3::zeros(), p1: apex, v1: apex_vel, duration: half },
        HermiteSegment { p0: apex, v0: apex_vel, p1: touch, v1: Vector3::zeros(), duration: half },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stance() -> [Vector3<f64>; 4] {
        [
            Vector3::new(0.35, 0.3, 0.0),
            Vector3::new(0.35, -0.3, 0.0),
            Vector3::new(-0.35, 0.3, 0.0),
            Vector3::new(-0.35, -0.3, 0.0),
        ]
    }

    fn crawl(stride: Vector3<f64>, terrain: Terrain) -> GaitSpec {
        GaitSpec {
            pattern: vec![Leg::RL, Leg::FL, Leg::RR, Leg::FR],
            stride,
            step_duration: 1.5,
            dwell: 0.2,
            start_time: None,
            lift_off_times: None,
            total_time: 13.0,
            clearance: 0.1,
            terrain,
        }
    }

    #[test]
    fn four_step_crawl_schedule() {
        let s = build_schedule(&crawl(Vector3::new(0.25, 0.0, 0.0), Terrain::Flat)).unwrap();
        let mut windows: Vec<_> = s.swings.iter().flatten().copied().collect();
        assert_eq!(windows.len(), 4);
        windows.sort_by(|a, b| a.lift_off.total_cmp(&b.lift_off));
        for pair in windows.windows(2) {
            assert!(pair[0].touch_down <= pair[1].lift_off);
        }
        for i in 0..=1300 {
            assert!(s.stance_count(i as f64 * 0.01) >= 3);
        }
    }

    #[test]
    fn standing_schedule_is_empty() {
        let s = build_schedule(&GaitSpec::standing(4.0)).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.stance_count(2.0), 4);
        let plan = plan_feet(&GaitSpec::standing(4.0), &stance()).unwrap();
        for f in 0..4 {
            assert_eq!(plan.position(f, 3.3), stance()[f]);
        }
    }

    #[test]
    fn simultaneous_swings_are_rejected() {
        let mut g = crawl(Vector3::new(0.25, 0.0, 0.0), Terrain::Flat);
        g.lift_off_times = Some(vec![1.0, 1.5, 5.0, 8.0]);
        assert!(matches!(build_schedule(&g), Err(GaitError::OverlappingSwings { .. })));
    }

    #[test]
    fn invalid_inputs() {
        let mut g = crawl(Vector3::zeros(), Terrain::Flat);
        g.clearance = -0.1;
        assert!(build_schedule(&g).is_err());
        let mut g = crawl(Vector3::zeros(), Terrain::Flat);
        g.total_time = 5.0;
        assert!(build_schedule(&g).is_err());
        let mut g = crawl(Vector3::zeros(), Terrain::Flat);
        g.stride.x = f64::NAN;
        assert!(build_schedule(&g).is_err());
        let g = crawl(Vector3::zeros(), Terrain::Footholds { heights: vec![0.0] });
        assert!(build_schedule(&g).is_err());
    }

    #[test]
    fn longitudinal_touch_down() {
        let g = crawl(Vector3::new(0.25, 0.0, 0.0), Terrain::Flat);
        let plan = plan_feet(&g, &stance()).unwrap();
        let fin = plan.final_positions();
        for f in 0..4 {
            assert!((fin[f] - stance()[f] - Vector3::new(0.25, 0.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_clearance_is_straight() {
        let mut g = crawl(Vector3::new(0.25, 0.1, 0.0), Terrain::Flat);
        g.clearance = 0.0;
        let plan = plan_feet(&g, &stance()).unwrap();
        let s = build_schedule(&g).unwrap();
        let w = s.swings[0][0];
        let p0 = stance()[0];
        let dir = Vector3::new(0.25, 0.1, 0.0).normalize();
        for i in 0..=50 {
            let t = w.lift_off + (w.touch_down - w.lift_off) * i as f64 / 50.0;
            let d = plan.position(0, t) - p0;
            assert!((d - dir * d.dot(&dir)).norm() < 1e-12);
        }
    }

    #[test]
    fn slope_touch_down_height() {
        let th = -10.0f64.to_radians();
        let initial: [Vector3<f64>; 4] = std::array::from_fn(|i| {
            let p = stance()[i];
            Vector3::new(p.x, p.y, th.tan() * p.x)
        });
        let g = crawl(Vector3::new(0.2, 0.0, 0.0), Terrain::Slope { angle_deg: -10.0 });
        let plan = plan_feet(&g, &initial).unwrap();
        let fin = plan.final_positions();
        for f in 0..4 {
            let drop = fin[f].z - initial[f].z;
            assert!((drop - th.tan() * 0.2).abs() < 1e-12);
            assert!(drop < 0.0);
            // the new foothold lies on the slope plane
            assert!((fin[f].z - th.tan() * fin[f].x).abs() < 1e-12);
        }
        let (n, tx, ty) = g.terrain.contact_frame();
        assert!(n.dot(&tx).abs() < 1e-15 && n.dot(&ty).abs() < 1e-15);
    }

    #[test]
    fn swing_apex_and_continuity() {
        let g = crawl(Vector3::new(0.25, 0.0, 0.0), Terrain::Footholds { heights: vec![0.1, 0.1, 0.0, -0.05] });
        let plan = plan_feet(&g, &stance()).unwrap();
        let s = build_schedule(&g).unwrap();
        for foot in 0..4 {
            for w in &s.swings[foot] {
                let lo = plan.position(foot, w.lift_off);
                let td = plan.position(foot, w.touch_down);
                let apex = plan.position(foot, 0.5 * (w.lift_off + w.touch_down));
                assert!(apex.z >= lo.z.max(td.z) + g.clearance - 1e-9);
                assert!(plan.velocity(foot, w.lift_off).norm() < 1e-12);
                assert!(plan.velocity(foot, w.touch_down).norm() < 1e-12);
            }
            let mut prev = plan.position(foot, 0.0);
            for i in 1..=13000 {
                let p = plan.position(foot, i as f64 * 1e-3);
                assert!((p - prev).norm() < 2e-3, "jump at {}", i);
                prev = p;
            }
        }
    }

    #[test]
    fn knot_force_rule_excludes_swing_neighbourhood() {
        let mut g = crawl(Vector3::new(0.25, 0.0, 0.0), Terrain::Flat);
        g.lift_off_times = Some(vec![1.0, 3.0, 5.0, 7.0]);
        g.step_duration = 1.6;
        let s = build_schedule(&g).unwrap();
        let rl = Leg::RL.index();
        assert!(s.carries_force(rl, 0.8, 0.2));
        assert!(!s.carries_force(rl, 1.0, 0.2));
        assert!(!s.carries_force(rl, 2.6, 0.2));
        assert!(s.carries_force(rl, 2.8, 0.2));
        assert!(s.in_stance(rl, 1.0) && !s.in_stance(rl, 1.1));
    }
}
