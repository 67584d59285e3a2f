//! Generic representation of the smooth programs produced by the
//! transcription: a least-squares cost and constraint rows that are at most
//! bilinear in the decision variables.
//!
//! Every constraint row has the form
//! `g(x) = c + Σ aᵢ xᵢ + Σ bₖ x_{iₖ} x_{jₖ}` with bounds `lower ≤ g(x) ≤ upper`
//! (equal bounds for equalities). Derivatives are exact and the Jacobian
//! sparsity is fixed by the row structure.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProgramError {
    #[error("vector has dimension {got}, program expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Affine function `constant + Σ coeff·x[index]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(i: usize, coeff: f64) -> Self {
        Self { terms: vec![(i, coeff)], constant: 0.0 }
    }

    pub fn add(&mut self, i: usize, coeff: f64) -> &mut Self {
        if coeff != 0.0 {
            self.terms.push((i, coeff));
        }
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>()
    }
}

/// One constraint row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Row {
    pub affine: Affine,
    /// `(i, j, coeff)` for a term `coeff · x[i] · x[j]`, `i != j`.
    pub bilinear: Vec<(usize, usize, f64)>,
}

impl Row {
    pub fn linear(affine: Affine) -> Self {
        Self { affine, bilinear: Vec::new() }
    }

    pub fn is_linear(&self) -> bool {
        self.bilinear.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.affine.eval(x) + self.bilinear.iter().map(|&(i, j, b)| b * x[i] * x[j]).sum::<f64>()
    }

    /// Gradient entries in a fixed order (affine first, then both factors of
    /// each bilinear term). Duplicate indices are summed by consumers.
    pub fn gradient(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.extend(self.affine.terms.iter().copied());
        for &(i, j, b) in &self.bilinear {
            out.push((i, b * x[j]));
            out.push((j, b * x[i]));
        }
    }

    /// Number of gradient entries produced by [`Row::gradient`].
    pub fn gradient_len(&self) -> usize {
        self.affine.terms.len() + 2 * self.bilinear.len()
    }
}

/// Constraint families, used for reporting and derivative checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SrbdLinear,
    SrbdAngular,
    ComContinuity,
    PayloadDynamics,
    InitialCondition,
    FinalCondition,
    Stability,
    Friction,
    ArmWorkspace,
    ArmSeparation,
    ArmForceBox,
    FinalComRegion,
    /// Generic rows used by hand-built programs.
    Custom,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::SrbdLinear => "srbd_linear",
            Family::SrbdAngular => "srbd_angular",
            Family::ComContinuity => "com_continuity",
            Family::PayloadDynamics => "payload_dynamics",
            Family::InitialCondition => "initial_condition",
            Family::FinalCondition => "final_condition",
            Family::Stability => "stability",
            Family::Friction => "friction",
            Family::ArmWorkspace => "arm_workspace",
            Family::ArmSeparation => "arm_separation",
            Family::ArmForceBox => "arm_force_box",
            Family::FinalComRegion => "final_com_region",
            Family::Custom => "custom",
        }
    }
}

/// A block of rows sharing a family; `knots[r]` records the knot a row
/// belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    pub family: Family,
    pub rows: Vec<Row>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub knots: Vec<usize>,
}

impl ConstraintBlock {
    pub fn new(family: Family) -> Self {
        Self { family, rows: Vec::new(), lower: Vec::new(), upper: Vec::new(), knots: Vec::new() }
    }

    pub fn push(&mut self, row: Row, lower: f64, upper: f64, knot: usize) {
        self.rows.push(row);
        self.lower.push(lower);
        self.upper.push(upper);
        self.knots.push(knot);
    }

    pub fn push_eq(&mut self, row: Row, knot: usize) {
        self.push(row, 0.0, 0.0, knot);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn eval(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(self.rows.iter().map(|r| r.eval(x)));
    }
}

/// Cost families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFamily {
    ComJerk,
    TangentialForce,
    ComReference,
    ArmAcceleration,
    ArmFinalPose,
    Custom,
}

impl CostFamily {
    pub fn name(self) -> &'static str {
        match self {
            CostFamily::ComJerk => "com_jerk",
            CostFamily::TangentialForce => "tangential_force",
            CostFamily::ComReference => "com_reference",
            CostFamily::ArmAcceleration => "arm_acceleration",
            CostFamily::ArmFinalPose => "arm_final_pose",
            CostFamily::Custom => "custom",
        }
    }
}

/// `weight · Σ residual(x)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTerm {
    pub family: CostFamily,
    pub weight: f64,
    pub residuals: Vec<Affine>,
}

impl CostTerm {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.weight * self.residuals.iter().map(|r| r.eval(x).powi(2)).sum::<f64>()
    }

    pub fn add_gradient(&self, x: &[f64], grad: &mut [f64]) {
        for r in &self.residuals {
            let s = 2.0 * self.weight * r.eval(x);
            for &(i, a) in &r.terms {
                grad[i] += s * a;
            }
        }
    }

    /// Lower-triangle Hessian triplets `(row ≥ col)`; duplicates are summed.
    pub fn hessian(&self, out: &mut Vec<(usize, usize, f64)>) {
        for r in &self.residuals {
            for &(i, a) in &r.terms {
                for &(j, b) in &r.terms {
                    if i >= j {
                        out.push((i, j, 2.0 * self.weight * a * b));
                    }
                }
            }
        }
    }
}

/// A complete smooth program.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Program {
    pub num_vars: usize,
    pub equalities: Vec<ConstraintBlock>,
    pub inequalities: Vec<ConstraintBlock>,
    pub costs: Vec<CostTerm>,
}

impl Program {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, ..Default::default() }
    }

    fn check(&self, x: &[f64]) -> Result<(), ProgramError> {
        if x.len() != self.num_vars {
            return Err(ProgramError::DimensionMismatch { expected: self.num_vars, got: x.len() });
        }
        Ok(())
    }

    pub fn num_eq(&self) -> usize {
        self.equalities.iter().map(ConstraintBlock::len).sum()
    }

    pub fn num_ineq(&self) -> usize {
        self.inequalities.iter().map(ConstraintBlock::len).sum()
    }

    /// All blocks, equalities first.
    pub fn blocks(&self) -> impl Iterator<Item = &ConstraintBlock> {
        self.equalities.iter().chain(self.inequalities.iter())
    }

    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.blocks().flat_map(|b| b.rows.iter())
    }

    pub fn num_rows(&self) -> usize {
        self.num_eq() + self.num_ineq()
    }

    /// Stacked `(lower, upper)` over all rows, equalities first.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = self.blocks().flat_map(|b| b.lower.iter().copied()).collect();
        let hi = self.blocks().flat_map(|b| b.upper.iter().copied()).collect();
        (lo, hi)
    }

    pub fn linear_rows(&self) -> Vec<bool> {
        self.rows().map(Row::is_linear).collect()
    }

    /// Equality values and inequality values `g(x)` (to be read against the
    /// bounds).
    pub fn eval_constraints(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ProgramError> {
        self.check(x)?;
        let mut eq = Vec::with_capacity(self.num_eq());
        for b in &self.equalities {
            b.eval(x, &mut eq);
        }
        let mut ineq = Vec::with_capacity(self.num_ineq());
        for b in &self.inequalities {
            b.eval(x, &mut ineq);
        }
        Ok((eq, ineq))
    }

    /// All row values, equalities first.
    pub fn eval_rows(&self, x: &[f64]) -> Vec<f64> {
        self.rows().map(|r| r.eval(x)).collect()
    }

    pub fn eval_cost(&self, x: &[f64]) -> Result<f64, ProgramError> {
        self.check(x)?;
        Ok(self.costs.iter().map(|c| c.value(x)).sum())
    }

    pub fn eval_cost_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>), ProgramError> {
        self.check(x)?;
        let mut g = vec![0.0; self.num_vars];
        let mut f = 0.0;
        for c in &self.costs {
            f += c.value(x);
            c.add_gradient(x, &mut g);
        }
        Ok((f, g))
    }

    /// Lower-triangle triplets of the (constant) cost Hessian.
    pub fn cost_hessian(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for c in &self.costs {
            c.hessian(&mut out);
        }
        out
    }

    /// Jacobian triplets `(row, col, value)` over all rows, equalities first.
    /// The sequence of `(row, col)` pairs depends only on the structure.
    pub fn jacobian(&self, x: &[f64]) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        let mut buf = Vec::new();
        for (r, row) in self.rows().enumerate() {
            buf.clear();
            row.gradient(x, &mut buf);
            out.extend(buf.iter().map(|&(c, v)| (r, c, v)));
        }
        out
    }

    /// Lower-triangle triplets of `Σ yᵣ ∇²gᵣ`.
    pub fn constraint_curvature(&self, y: &[f64]) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (row, &w) in self.rows().zip(y) {
            if w == 0.0 {
                continue;
            }
            for &(i, j, b) in &row.bilinear {
                let (hi, lo) = if i > j { (i, j) } else { (j, i) };
                let scale = if i == j { 2.0 } else { 1.0 };
                out.push((hi, lo, scale * w * b));
            }
        }
        out
    }

    /// Largest bound violation over all rows.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let (lo, hi) = self.bounds();
        self.eval_rows(x)
            .iter()
            .zip(lo.iter().zip(&hi))
            .map(|(&g, (&l, &u))| (l - g).max(g - u).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Value of each cost family.
    pub fn cost_breakdown(&self, x: &[f64]) -> Vec<(CostFamily, f64)> {
        self.costs.iter().map(|c| (c.family, c.value(x))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_row_gradient_and_curvature() {
        let mut row = Row::linear(Affine { terms: vec![(0, 2.0)], constant: 1.0 });
        row.bilinear.push((0, 1, 3.0));
        let x = [0.5, -2.0];
        assert_eq!(row.eval(&x), 1.0 + 1.0 - 3.0);
        let mut g = Vec::new();
        row.gradient(&x, &mut g);
        let mut dense = [0.0; 2];
        for (i, v) in g {
            dense[i] += v;
        }
        assert_eq!(dense, [2.0 - 6.0, 1.5]);

        let mut p = Program::new(2);
        let mut b = ConstraintBlock::new(Family::Custom);
        b.push_eq(row, 0);
        p.equalities.push(b);
        assert_eq!(p.constraint_curvature(&[2.0]), vec![(1, 0, 6.0)]);
        assert!(p.eval_constraints(&[0.0]).is_err());
    }

    #[test]
    fn cost_term_gradient_and_hessian() {
        let c = CostTerm {
            family: CostFamily::Custom,
            weight: 0.5,
            residuals: vec![Affine { terms: vec![(0, 1.0), (1, -1.0)], constant: 0.2 }],
        };
        let x = [1.0, 0.3];
        assert!((c.value(&x) - 0.5 * 0.9f64.powi(2)).abs() < 1e-15);
        let mut g = [0.0; 2];
        c.add_gradient(&x, &mut g);
        assert!((g[0] - 0.9).abs() < 1e-15 && (g[1] + 0.9).abs() < 1e-15);
        let mut h = Vec::new();
        c.hessian(&mut h);
        assert_eq!(h, vec![(0, 0, 1.0), (1, 0, -1.0), (1, 1, 1.0)]);
    }
}
