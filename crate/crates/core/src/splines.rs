//! Trajectory parameterizations: cubic Hermite segments, constant-jerk CoM
//! segments and piecewise-linear force profiles.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed when checking that an evaluation time lies in range.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SplineError {
    #[error("time {t} outside [0, {end}]")]
    OutOfRange { t: f64, end: f64 },
    #[error("spline duration must be positive, got {0}")]
    BadDuration(f64),
    #[error("spline needs at least {needed} knots, got {got}")]
    TooFewKnots { needed: usize, got: usize },
}

/// Position, velocity and acceleration sampled from a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

/// Cubic segment defined by boundary positions and velocities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HermiteSegment {
    pub p0: Vector3<f64>,
    pub v0: Vector3<f64>,
    pub p1: Vector3<f64>,
    pub v1: Vector3<f64>,
    pub duration: f64,
}

impl HermiteSegment {
    pub fn new(
        p0: Vector3<f64>,
        v0: Vector3<f64>,
        p1: Vector3<f64>,
        v1: Vector3<f64>,
        duration: f64,
    ) -> Result<Self, SplineError> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(SplineError::BadDuration(duration));
        }
        Ok(Self { p0, v0, p1, v1, duration })
    }

    /// Power-basis coefficients `c0 + c1 t + c2 t² + c3 t³` in absolute time.
    pub fn coefficients(&self) -> [Vector3<f64>; 4] {
        let d = self.duration;
        let dp = self.p1 - self.p0;
        let c2 = (3.0 * dp - d * (2.0 * self.v0 + self.v1)) / (d * d);
        let c3 = (-2.0 * dp + d * (self.v0 + self.v1)) / (d * d * d);
        [self.p0, self.v0, c2, c3]
    }

    pub fn eval(&self, t: f64) -> Result<Sample, SplineError> {
        if !(t >= -TIME_EPS && t <= self.duration + TIME_EPS) {
            return Err(SplineError::OutOfRange { t, end: self.duration });
        }
        Ok(self.eval_unchecked(t.clamp(0.0, self.duration)))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> Sample {
        let [c0, c1, c2, c3] = self.coefficients();
        Sample {
            position: c0 + t * (c1 + t * (c2 + t * c3)),
            velocity: c1 + t * (2.0 * c2 + 3.0 * t * c3),
            acceleration: 2.0 * c2 + 6.0 * t * c3,
        }
    }

    /// Exact `∫ |p̈(t)|² dt` over the segment, summed over axes.
    pub fn accel_sq_integral(&self) -> f64 {
        let [_, _, c2, c3] = self.coefficients();
        let d = self.duration;
        // p̈ = a + b t, with a = 2 c2 and b = 6 c3; square and integrate termwise
        (0..3)
            .map(|axis| {
                let a = 2.0 * c2[axis];
                let b = 6.0 * c3[axis];
                a * a * d + a * b * d * d + b * b * d * d * d / 3.0
            })
            .sum()
    }
}

/// Evaluates one Hermite segment at `t ∈ [0, duration]`.
pub fn hermite_eval(seg: &HermiteSegment, t: f64) -> Result<Sample, SplineError> {
    seg.eval(t)
}

/// Sum of the exact squared-acceleration integrals of all segments.
pub fn accel_sq_integral(segments: &[HermiteSegment]) -> f64 {
    segments.iter().map(HermiteSegment::accel_sq_integral).sum()
}

/// Weights expressing the start and end accelerations of a Hermite segment as
/// linear combinations of `(p0, v0, p1, v1)`, per axis.
pub fn hermite_accel_weights(duration: f64) -> ([f64; 4], [f64; 4]) {
    let d = duration;
    let d2 = d * d;
    (
        [-6.0 / d2, -4.0 / d, 6.0 / d2, -2.0 / d],
        [6.0 / d2, 2.0 / d, -6.0 / d2, 4.0 / d],
    )
}

/// Chain of Hermite segments sharing knots, so position and velocity are
/// continuous by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteSpline {
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub dt: f64,
}

impl HermiteSpline {
    pub fn new(
        positions: Vec<Vector3<f64>>,
        velocities: Vec<Vector3<f64>>,
        dt: f64,
    ) -> Result<Self, SplineError> {
        if !(dt > 0.0) {
            return Err(SplineError::BadDuration(dt));
        }
        if positions.len() < 2 || velocities.len() != positions.len() {
            return Err(SplineError::TooFewKnots { needed: 2, got: positions.len() });
        }
        Ok(Self { positions, velocities, dt })
    }

    pub fn duration(&self) -> f64 {
        self.dt * (self.positions.len() - 1) as f64
    }

    pub fn segment(&self, k: usize) -> HermiteSegment {
        HermiteSegment {
            p0: self.positions[k],
            v0: self.velocities[k],
            p1: self.positions[k + 1],
            v1: self.velocities[k + 1],
            duration: self.dt,
        }
    }

    pub fn segments(&self) -> Vec<HermiteSegment> {
        (0..self.positions.len() - 1).map(|k| self.segment(k)).collect()
    }

    pub fn eval(&self, t: f64) -> Result<Sample, SplineError> {
        let (k, local) = locate(t, self.dt, self.positions.len())?;
        Ok(self.segment(k).eval_unchecked(local))
    }
}

/// Piecewise-linear force profile on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlForceProfile {
    pub knot_values: Vec<Vector3<f64>>,
    pub dt: f64,
}

impl PwlForceProfile {
    pub fn new(knot_values: Vec<Vector3<f64>>, dt: f64) -> Result<Self, SplineError> {
        if !(dt > 0.0) {
            return Err(SplineError::BadDuration(dt));
        }
        if knot_values.is_empty() {
            return Err(SplineError::TooFewKnots { needed: 1, got: 0 });
        }
        Ok(Self { knot_values, dt })
    }

    pub fn eval(&self, t: f64) -> Result<Vector3<f64>, SplineError> {
        if self.knot_values.len() == 1 {
            if t.abs() > TIME_EPS {
                return Err(SplineError::OutOfRange { t, end: 0.0 });
            }
            return Ok(self.knot_values[0]);
        }
        let (k, local) = locate(t, self.dt, self.knot_values.len())?;
        let s = local / self.dt;
        Ok(self.knot_values[k] * (1.0 - s) + self.knot_values[k + 1] * s)
    }
}

/// Evaluates a piecewise-linear profile at `t`.
pub fn pwl_eval(profile: &PwlForceProfile, t: f64) -> Result<Vector3<f64>, SplineError> {
    profile.eval(t)
}

/// CoM trajectory built from knot states `(r, ṙ, r̈)` and a constant jerk on
/// each segment. Each segment starts from its own knot state, so continuity
/// into the next knot holds exactly when the transcription's continuity rows
/// are satisfied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComSpline {
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub accelerations: Vec<Vector3<f64>>,
    pub jerks: Vec<Vector3<f64>>,
    pub dt: f64,
}

impl ComSpline {
    pub fn duration(&self) -> f64 {
        self.dt * (self.positions.len() - 1) as f64
    }

    pub fn eval(&self, t: f64) -> Result<Sample, SplineError> {
        let n = self.positions.len();
        if n == 1 {
            if t.abs() > TIME_EPS {
                return Err(SplineError::OutOfRange { t, end: 0.0 });
            }
            return Ok(Sample {
                position: self.positions[0],
                velocity: self.velocities[0],
                acceleration: self.accelerations[0],
            });
        }
        let (k, s) = locate(t, self.dt, n)?;
        let (r, v, a, j) = (self.positions[k], self.velocities[k], self.accelerations[k], self.jerks[k]);
        Ok(Sample {
            position: r + v * s + a * (s * s / 2.0) + j * (s * s * s / 6.0),
            velocity: v + a * s + j * (s * s / 2.0),
            acceleration: a + j * s,
        })
    }
}

/// Maps an absolute time to `(segment index, local time)` on a uniform grid
/// of `n` knots. Knot times resolve to the segment that starts there, except
/// the final knot.
pub(crate) fn locate(t: f64, dt: f64, n: usize) -> Result<(usize, f64), SplineError> {
    let end = dt * (n - 1) as f64;
    if !(t >= -TIME_EPS && t <= end + TIME_EPS) {
        return Err(SplineError::OutOfRange { t, end });
    }
    let t = t.clamp(0.0, end);
    let mut k = (t / dt).floor() as usize;
    if k >= n - 1 {
        k = n - 2;
    }
    let mut local = t - k as f64 * dt;
    // snap float noise just below a knot onto the knot
    if local > dt - 1e-12 && k + 2 < n {
        k += 1;
        local = 0.0;
    }
    Ok((k, local.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_seg(p0: f64, v0: f64, p1: f64, v1: f64, d: f64) -> HermiteSegment {
        HermiteSegment::new(
            Vector3::new(p0, 0.0, 0.0),
            Vector3::new(v0, 0.0, 0.0),
            Vector3::new(p1, 0.0, 0.0),
            Vector3::new(v1, 0.0, 0.0),
            d,
        )
        .unwrap()
    }

    #[test]
    fn midpoint_symmetry() {
        let s = hermite_eval(&scalar_seg(0.0, 0.0, 1.0, 0.0, 1.0), 0.5).unwrap();
        assert!((s.position.x - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_segment() {
        let c = Vector3::new(0.3, -1.0, 2.0);
        let seg = HermiteSegment::new(c, Vector3::zeros(), c, Vector3::zeros(), 0.7).unwrap();
        for i in 0..=10 {
            let s = seg.eval(0.07 * i as f64).unwrap();
            assert!((s.position - c).norm() < 1e-14);
            assert!(s.velocity.norm() < 1e-14);
            assert!(s.acceleration.norm() < 1e-14);
        }
        assert_eq!(accel_sq_integral(&[seg, seg]), 0.0);
    }

    #[test]
    fn start_acceleration_of_smoothstep() {
        // d²/dt² (3t² − 2t³) = 6 − 12t
        let seg = scalar_seg(0.0, 0.0, 1.0, 0.0, 1.0);
        assert!((seg.eval(0.0).unwrap().acceleration.x - 6.0).abs() < 1e-12);
        assert!((seg.eval(1.0).unwrap().acceleration.x + 6.0).abs() < 1e-12);
    }

    #[test]
    fn smoothstep_accel_integral() {
        // ∫₀¹ (6 − 12t)² dt = 12
        assert!((accel_sq_integral(&[scalar_seg(0.0, 0.0, 1.0, 0.0, 1.0)]) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn splitting_a_segment_keeps_the_integral() {
        let seg = HermiteSegment::new(
            Vector3::new(0.1, -0.4, 1.0),
            Vector3::new(1.0, 0.3, -2.0),
            Vector3::new(0.9, 0.2, 0.0),
            Vector3::new(-0.5, 0.0, 0.7),
            1.4,
        )
        .unwrap();
        let m = seg.eval(0.7).unwrap();
        let a = HermiteSegment::new(seg.p0, seg.v0, m.position, m.velocity, 0.7).unwrap();
        let b = HermiteSegment::new(m.position, m.velocity, seg.p1, seg.v1, 0.7).unwrap();
        let whole = accel_sq_integral(&[seg]);
        assert!((accel_sq_integral(&[a, b]) - whole).abs() < 1e-10 * whole);
    }

    #[test]
    fn accel_weights_match_evaluation() {
        let seg = scalar_seg(0.2, -1.0, 1.3, 0.4, 0.35);
        let (w0, w1) = hermite_accel_weights(0.35);
        let z = [0.2, -1.0, 1.3, 0.4];
        let a0: f64 = w0.iter().zip(z).map(|(w, v)| w * v).sum();
        let a1: f64 = w1.iter().zip(z).map(|(w, v)| w * v).sum();
        assert!((a0 - seg.eval(0.0).unwrap().acceleration.x).abs() < 1e-10);
        assert!((a1 - seg.eval(0.35).unwrap().acceleration.x).abs() < 1e-10);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let seg = scalar_seg(0.0, 0.0, 1.0, 0.0, 1.0);
        assert!(matches!(seg.eval(1.1), Err(SplineError::OutOfRange { .. })));
        assert!(matches!(seg.eval(-0.1), Err(SplineError::OutOfRange { .. })));
        assert!(HermiteSegment::new(Vector3::zeros(), Vector3::zeros(), Vector3::zeros(), Vector3::zeros(), 0.0).is_err());
    }

    #[test]
    fn pwl_profile() {
        let up = PwlForceProfile::new(vec![Vector3::zeros(), Vector3::new(0.0, 0.0, 100.0)], 0.2).unwrap();
        assert!((pwl_eval(&up, 0.1).unwrap() - Vector3::new(0.0, 0.0, 50.0)).norm() < 1e-12);
        let knots: Vec<_> = (0..5).map(|k| Vector3::new(k as f64, -(k as f64), 2.0)).collect();
        let p = PwlForceProfile::new(knots.clone(), 0.2).unwrap();
        for (k, v) in knots.iter().enumerate() {
            assert_eq!(p.eval(0.2 * k as f64).unwrap(), *v);
        }
        let c = PwlForceProfile::new(vec![Vector3::new(1.0, 2.0, 3.0); 4], 0.5).unwrap();
        for i in 0..=15 {
            assert!((c.eval(0.1 * i as f64).unwrap() - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-14);
        }
        assert!(p.eval(0.81).is_err());
        assert!(p.eval(-0.01).is_err());
    }

    #[test]
    fn com_spline_matches_constant_jerk_integration() {
        let dt: f64 = 0.2;
        let j = Vector3::new(1.0, -2.0, 0.5);
        let r0 = Vector3::new(0.0, 0.1, 0.7);
        let v0 = Vector3::new(0.1, 0.0, 0.0);
        let a0 = Vector3::new(0.0, 0.3, 0.0);
        let r1 = r0 + v0 * dt + a0 * dt * dt / 2.0 + j * dt.powi(3) / 6.0;
        let v1 = v0 + a0 * dt + j * dt * dt / 2.0;
        let a1 = a0 + j * dt;
        let spline = ComSpline {
            positions: vec![r0, r1],
            velocities: vec![v0, v1],
            accelerations: vec![a0, a1],
            jerks: vec![j],
            dt,
        };
        let end = spline.eval(dt).unwrap();
        assert!((end.position - r1).norm() < 1e-14);
        assert!((end.velocity - v1).norm() < 1e-14);
        assert!((end.acceleration - a1).norm() < 1e-14);
    }

    #[test]
    fn hermite_spline_is_c1_at_knots() {
        let spline = HermiteSpline::new(
            vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.5), Vector3::new(1.5, 1.0, 0.0)],
            vec![Vector3::zeros(), Vector3::new(0.5, 0.5, 0.0), Vector3::zeros()],
            0.4,
        )
        .unwrap();
        let left = spline.segment(0).eval(0.4).unwrap();
        let right = spline.segment(1).eval(0.0).unwrap();
        assert!((left.position - right.position).norm() < 1e-14);
        assert!((left.velocity - right.velocity).norm() < 1e-14);
        assert!((spline.eval(0.4).unwrap().position - Vector3::new(1.0, 0.0, 0.5)).norm() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec3() -> impl Strategy<Value = Vector3<f64>> {
            (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
        }

        fn segment() -> impl Strategy<Value = HermiteSegment> {
            (vec3(), vec3(), vec3(), vec3(), 0.05..2.0f64)
                .prop_map(|(p0, v0, p1, v1, d)| HermiteSegment::new(p0, v0, p1, v1, d).unwrap())
        }

        proptest! {
            #[test]
            fn boundary_data_reproduced(seg in segment()) {
                let a = seg.eval(0.0).unwrap();
                let b = seg.eval(seg.duration).unwrap();
                prop_assert!((a.position - seg.p0).norm() < 1e-12);
                prop_assert!((a.velocity - seg.v0).norm() < 1e-12);
                prop_assert!((b.position - seg.p1).norm() < 1e-10);
                prop_assert!((b.velocity - seg.v1).norm() < 1e-9);
            }

            #[test]
            fn velocity_matches_central_difference(seg in segment(), s in 0.1..0.9f64) {
                let t = s * seg.duration;
                let h = 1e-5;
                let fd = (seg.eval(t + h).unwrap().position - seg.eval(t - h).unwrap().position) / (2.0 * h);
                let v = seg.eval(t).unwrap().velocity;
                prop_assert!((fd - v).norm() <= 1e-6 * v.norm().max(1.0));
            }

            #[test]
            fn integral_nonnegative_and_translation_invariant(seg in segment(), d in vec3()) {
                let moved = HermiteSegment { p0: seg.p0 + d, p1: seg.p1 + d, ..seg };
                let a = accel_sq_integral(&[seg]);
                prop_assert!(a >= 0.0);
                prop_assert!((a - accel_sq_integral(&[moved])).abs() <= 1e-9 * a.max(1.0));
            }
        }
    }
}
