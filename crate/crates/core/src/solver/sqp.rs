//! Sequential quadratic programming with an L1 merit line search.
//!
//! Each iteration linearizes the rows around the current point and solves
//! a convex QP with the cost Hessian (optionally plus convexified constraint
//! curvature). Steps are accepted by Armijo backtracking on
//! `f + ν Σ violation`, with a second-order correction when the full step is
//! rejected. When the linearization is inconsistent a feasibility
//! restoration step minimizes the linearized residual of the nonlinear rows
//! subject to the linear rows.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::qp::{QpSettings, QpStatus, QpWorkspace};
use super::sparse::{CsrMatrix, EnvelopeCholesky};
use crate::program::Program;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Scaled stationarity and complementarity tolerance.
    pub kkt_tolerance: f64,
    /// Largest admissible bound violation.
    pub feasibility_tolerance: f64,
    /// Diagonal added to the QP Hessian.
    pub regularization: f64,
    /// Add `Σ yᵢ ∇²gᵢ` to the QP Hessian (shifted until positive definite).
    pub exact_hessian: bool,
    pub armijo: f64,
    pub backtrack: f64,
    pub min_step: f64,
    pub second_order_correction: bool,
    pub max_restorations: usize,
    /// Proximal weight of the restoration least-squares step.
    pub restoration_damping: f64,
    pub qp: QpSettings,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            kkt_tolerance: 1e-6,
            feasibility_tolerance: 1e-6,
            regularization: 1e-6,
            exact_hessian: false,
            armijo: 1e-4,
            backtrack: 0.5,
            min_step: 1e-10,
            second_order_correction: true,
            max_restorations: 30,
            restoration_damping: 1e-4,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    Infeasible,
    NumericalError,
}

impl SolveStatus {
    pub fn is_optimal(self) -> bool {
        self == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveStats {
    pub status: SolveStatus,
    pub iterations: usize,
    pub qp_iterations: usize,
    pub restorations: usize,
    pub wall_time: f64,
    pub cost: f64,
    /// Scaled stationarity `‖∇f + Jᵀy‖∞ / s_d`.
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl SolveStats {
    pub fn kkt(&self) -> f64 {
        self.stationarity.max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: Vec<f64>,
    /// Row multipliers (equalities first), `∇f + Jᵀy = 0` at a solution.
    pub y: Vec<f64>,
    pub stats: SolveStats,
}

/// Scaled first-order optimality measures at `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

pub fn kkt_residuals(program: &Program, x: &[f64], y: &[f64]) -> KktResiduals {
    let (_, grad) = program.eval_cost_and_gradient(x).expect("dimension checked by caller");
    let (l, u) = program.bounds();
    let g = program.eval_rows(x);
    let mut jty = grad;
    for (r, c, v) in program.jacobian(x) {
        jty[c] += v * y[r];
    }
    kkt_from_parts(&jty, &g, &l, &u, y)
}

fn kkt_from_parts(lag_grad: &[f64], g: &[f64], l: &[f64], u: &[f64], y: &[f64]) -> KktResiduals {
    const S_MAX: f64 = 100.0;
    let m = y.len();
    let y1: f64 = y.iter().map(|v| v.abs()).sum();
    let s_d = (S_MAX.max(y1 / m.max(1) as f64)) / S_MAX;
    let stationarity = lag_grad.iter().fold(0.0f64, |a, v| a.max(v.abs())) / s_d;
    let mut feasibility = 0.0f64;
    let mut comp = 0.0f64;
    for i in 0..m {
        feasibility = feasibility.max((l[i] - g[i]).max(g[i] - u[i]).max(0.0));
        if l[i] == u[i] {
            continue;
        }
        // y > 0 pushes against the upper bound, y < 0 against the lower
        let gap = if y[i] > 0.0 { u[i] - g[i] } else { g[i] - l[i] };
        let gap = if gap.is_finite() { gap.max(0.0) } else { 1.0 };
        comp = comp.max(y[i].abs() * gap);
    }
    KktResiduals { stationarity, feasibility, complementarity: comp / s_d }
}

fn l1_violation(g: &[f64], l: &[f64], u: &[f64]) -> f64 {
    g.iter().zip(l.iter().zip(u)).map(|(&v, (&lo, &hi))| (lo - v).max(v - hi).max(0.0)).sum()
}

/// Holds the fixed Jacobian and Hessian structure of one program.
struct Structure {
    jac: CsrMatrix,
    jac_map: Vec<usize>,
    hess: CsrMatrix,
    /// Cost Hessian values in `hess.data` (constant).
    hess_base: Vec<f64>,
    hess_diag: Vec<usize>,
    /// Slots for `constraint_curvature` entries, in emission order with all
    /// multipliers equal to one.
    curv_map: Vec<usize>,
}

impl Structure {
    fn new(program: &Program, x: &[f64], exact: bool) -> Self {
        let n = program.num_vars;
        let m = program.num_rows();
        let jt = program.jacobian(x);
        let (jac, jac_map) = CsrMatrix::pattern_from_triplets(m, n, jt.iter().map(|t| (t.0, t.1)));
        let cost = program.cost_hessian();
        let curv = if exact { program.constraint_curvature(&vec![1.0; m]) } else { Vec::new() };
        let entries = cost
            .iter()
            .map(|t| (t.0, t.1))
            .chain((0..n).map(|i| (i, i)))
            .chain(curv.iter().map(|t| (t.0, t.1)));
        let (mut hess, map) = CsrMatrix::pattern_from_triplets(n, n, entries);
        for (k, t) in cost.iter().enumerate() {
            hess.data[map[k]] += t.2;
        }
        let hess_base = hess.data.clone();
        let hess_diag = map[cost.len()..cost.len() + n].to_vec();
        let curv_map = map[cost.len() + n..].to_vec();
        Self { jac, jac_map, hess, hess_base, hess_diag, curv_map }
    }

    fn fill_jacobian(&mut self, program: &Program, x: &[f64]) {
        self.jac.data.iter_mut().for_each(|v| *v = 0.0);
        for (k, t) in program.jacobian(x).into_iter().enumerate() {
            self.jac.data[self.jac_map[k]] += t.2;
        }
    }

    fn fill_hessian(&mut self, program: &Program, y: &[f64], delta: f64, exact: bool) {
        self.hess.data.copy_from_slice(&self.hess_base);
        for &s in &self.hess_diag {
            self.hess.data[s] += delta;
        }
        if exact {
            // same emission order as `constraint_curvature` with unit weights
            let mut k = 0;
            for (row, &w) in program.rows().zip(y) {
                for &(i, j, b) in &row.bilinear {
                    let scale = if i == j { 2.0 } else { 1.0 };
                    self.hess.data[self.curv_map[k]] += scale * w * b;
                    k += 1;
                }
            }
        }
    }
}

/// Solves `program` from `x0` with zero initial multipliers.
pub fn solve(program: &Program, x0: &[f64], opts: &SolverOptions) -> SolveResult {
    solve_warm(program, x0, None, opts)
}

/// Solves `program` from `x0`, optionally with initial multipliers.
pub fn solve_warm(program: &Program, x0: &[f64], y0: Option<&[f64]>, opts: &SolverOptions) -> SolveResult {
    let start = Instant::now();
    let n = program.num_vars;
    let m = program.num_rows();
    assert_eq!(x0.len(), n, "initial point has the wrong dimension");
    let (l, u) = program.bounds();
    let linear = program.linear_rows();

    let mut x = x0.to_vec();
    let mut y = match y0 {
        Some(v) if v.len() == m => v.to_vec(),
        _ => vec![0.0; m],
    };
    let mut st = Structure::new(program, &x, opts.exact_hessian);
    let mut ws = QpWorkspace::new(&st.hess, &st.jac);
    let mut convex_check = if opts.exact_hessian {
        let pattern: Vec<(usize, usize)> =
            (0..n).flat_map(|r| st.hess.indices[st.hess.indptr[r]..st.hess.indptr[r + 1]].iter().map(move |&c| (r, c))).collect();
        Some(EnvelopeCholesky::new(n, &pattern))
    } else {
        None
    };
    let mut restoration: Option<Restoration> = None;

    let mut nu = 1.0f64;
    let mut qp_iterations = 0;
    let mut restorations = 0;
    let mut consecutive_restorations = 0;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut d_prev = vec![0.0; n];

    let mut ql = vec![0.0; m];
    let mut qu = vec![0.0; m];
    let mut jd = vec![0.0; m];

    loop {
        let (f, grad) = program.eval_cost_and_gradient(&x).expect("dimension checked");
        let g = program.eval_rows(&x);
        st.fill_jacobian(program, &x);
        let mut lag = grad.clone();
        {
            let mut jty = vec![0.0; n];
            st.jac.tmul_vec(&y, &mut jty);
            lag.iter_mut().zip(&jty).for_each(|(a, b)| *a += b);
        }
        let kkt = kkt_from_parts(&lag, &g, &l, &u, &y);
        log::debug!(
            "sqp {iterations:3}: f={f:.6e} stat={:.2e} feas={:.2e} comp={:.2e}",
            kkt.stationarity,
            kkt.feasibility,
            kkt.complementarity
        );
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            status = SolveStatus::NumericalError;
            break;
        }
        if kkt.feasibility <= opts.feasibility_tolerance
            && kkt.stationarity <= opts.kkt_tolerance
            && kkt.complementarity <= opts.kkt_tolerance
        {
            status = SolveStatus::Optimal;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;

        st.fill_hessian(program, &y, opts.regularization, opts.exact_hessian);
        if let Some(chol) = convex_check.as_mut() {
            convexify(&mut st, chol, opts.regularization);
        }
        for i in 0..m {
            ql[i] = l[i] - g[i];
            qu[i] = u[i] - g[i];
        }
        let sol = ws.solve(&st.hess, &grad, &st.jac, &ql, &qu, Some((&d_prev, &y)), &opts.qp);
        qp_iterations += sol.iterations;
        log::debug!(
            "  qp: {:?} after {} iterations, polished {}, prim {:.1e} dual {:.1e}",
            sol.status,
            sol.iterations,
            sol.polished,
            sol.prim_res,
            sol.dual_res
        );
        match sol.status {
            QpStatus::Solved | QpStatus::MaxIterations if sol.prim_res.is_finite() => {}
            QpStatus::PrimalInfeasible => {
                consecutive_restorations += 1;
                if consecutive_restorations > opts.max_restorations {
                    status = SolveStatus::Infeasible;
                    break;
                }
                let rest = restoration.get_or_insert_with(|| Restoration::new(&st.jac, &linear, opts.restoration_damping));
                let settings = QpSettings { max_iter: opts.qp.max_iter.min(4000), ..opts.qp };
                match rest.step(&st.jac, &g, &l, &u, &settings) {
                    Some((d, its)) => {
                        qp_iterations += its;
                        restorations += 1;
                        x.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
                        d_prev.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    None => {
                        status = SolveStatus::Infeasible;
                        break;
                    }
                }
            }
            _ => {
                status = SolveStatus::NumericalError;
                break;
            }
        }
        consecutive_restorations = 0;
        let d = sol.x;
        let y_qp = sol.y;

        let y_inf = y_qp.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if nu < 1.1 * y_inf {
            nu = 1.1 * y_inf;
        }
        let viol0 = l1_violation(&g, &l, &u);
        let phi0 = f + nu * viol0;
        let slope = grad.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() - nu * viol0;
        let merit = |xt: &[f64]| -> f64 {
            let ft = program.eval_cost(xt).expect("dimension checked");
            let gt = program.eval_rows(xt);
            ft + nu * l1_violation(&gt, &l, &u)
        };

        let mut alpha = 1.0;
        let mut x_trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        let mut accepted = merit(&x_trial) <= phi0 + opts.armijo * slope;
        let mut step = d.clone();
        if !accepted && opts.second_order_correction {
            let gt = program.eval_rows(&x_trial);
            st.jac.mul_vec(&d, &mut jd);
            let mut sl = vec![0.0; m];
            let mut su = vec![0.0; m];
            for i in 0..m {
                let shift = gt[i] - jd[i];
                sl[i] = l[i] - shift;
                su[i] = u[i] - shift;
            }
            let soc = ws.solve(&st.hess, &grad, &st.jac, &sl, &su, Some((&d, &y_qp)), &opts.qp);
            qp_iterations += soc.iterations;
            if soc.status == QpStatus::Solved {
                let xs: Vec<f64> = x.iter().zip(&soc.x).map(|(a, b)| a + b).collect();
                if merit(&xs) <= phi0 + opts.armijo * slope {
                    x_trial = xs;
                    step = soc.x;
                    accepted = true;
                }
            }
        }
        while !accepted {
            alpha *= opts.backtrack;
            if alpha < opts.min_step {
                break;
            }
            for i in 0..n {
                x_trial[i] = x[i] + alpha * d[i];
            }
            accepted = merit(&x_trial) <= phi0 + opts.armijo * alpha * slope;
        }
        if !accepted {
            // the QP step is no longer a descent direction for the merit:
            // accept if it is already tiny, otherwise report failure
            let d_inf = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let x_inf = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            if d_inf <= 1e-10 * x_inf {
                y = y_qp;
                let x_new: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
                x = x_new;
                continue;
            }
            status = SolveStatus::NumericalError;
            break;
        }
        x = x_trial;
        for i in 0..m {
            y[i] += alpha * (y_qp[i] - y[i]);
        }
        d_prev = step.iter().map(|v| alpha * v).collect();
    }

    let cost = program.eval_cost(&x).unwrap_or(f64::NAN);
    let kkt = kkt_residuals(program, &x, &y);
    SolveResult {
        x,
        y,
        stats: SolveStats {
            status,
            iterations,
            qp_iterations,
            restorations,
            wall_time: start.elapsed().as_secs_f64(),
            cost,
            stationarity: kkt.stationarity,
            feasibility: kkt.feasibility,
            complementarity: kkt.complementarity,
        },
    }
}

/// Shifts the Hessian diagonal until it factors.
fn convexify(st: &mut Structure, chol: &mut EnvelopeCholesky, base: f64) {
    let mut shift = 0.0;
    let mut next = base.max(1e-8);
    loop {
        chol.values_mut().iter_mut().for_each(|v| *v = 0.0);
        for r in 0..st.hess.nrows {
            for k in st.hess.indptr[r]..st.hess.indptr[r + 1] {
                let c = st.hess.indices[k];
                let extra = if r == c { shift } else { 0.0 };
                let s = chol.slot(r, c);
                chol.values_mut()[s] = st.hess.data[k] + extra;
            }
        }
        if chol.factor().is_ok() || next > 1e10 {
            break;
        }
        shift = next;
        next *= 10.0;
    }
    if shift > 0.0 {
        for &s in &st.hess_diag {
            st.hess.data[s] += shift;
        }
    }
}

/// Least-squares restoration on the nonlinear rows.
struct Restoration {
    nonlinear: Vec<usize>,
    p: CsrMatrix,
    a: CsrMatrix,
    lin_rows: Vec<usize>,
    ws: QpWorkspace,
    delta: f64,
}

impl Restoration {
    fn new(jac: &CsrMatrix, linear: &[bool], delta: f64) -> Self {
        let n = jac.ncols;
        let nonlinear: Vec<usize> = (0..jac.nrows).filter(|&r| !linear[r]).collect();
        let lin_rows: Vec<usize> = (0..jac.nrows).filter(|&r| linear[r]).collect();
        let mut entries: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for &r in &nonlinear {
            let cols = &jac.indices[jac.indptr[r]..jac.indptr[r + 1]];
            for &ci in cols {
                for &cj in cols {
                    if ci > cj {
                        entries.push((ci, cj));
                    }
                }
            }
        }
        let (p, _) = CsrMatrix::pattern_from_triplets(n, n, entries.iter().copied());
        let mut trip = Vec::new();
        for (k, &r) in lin_rows.iter().enumerate() {
            for (c, v) in jac.row(r) {
                trip.push((k, c, v));
            }
        }
        // keep structural zeros so later Jacobians share the pattern
        let (mut a, amap) = CsrMatrix::pattern_from_triplets(lin_rows.len(), n, trip.iter().map(|t| (t.0, t.1)));
        for (k, t) in trip.iter().enumerate() {
            a.data[amap[k]] += t.2;
        }
        let ws = QpWorkspace::new(&p, &a);
        Self { nonlinear, p, a, lin_rows, ws, delta }
    }

    fn slot(&self, r: usize, c: usize) -> usize {
        let span = self.p.indptr[r]..self.p.indptr[r + 1];
        let pos = self.p.indices[span.clone()].binary_search(&c).expect("entry in pattern");
        span.start + pos
    }

    /// Returns the step and QP iteration count, or `None` when the linear
    /// rows alone are inconsistent.
    fn step(&mut self, jac: &CsrMatrix, g: &[f64], l: &[f64], u: &[f64], settings: &QpSettings) -> Option<(Vec<f64>, usize)> {
        let n = jac.ncols;
        let mut p = self.p.clone();
        p.data.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let s = self.slot(i, i);
            p.data[s] += 2.0 * self.delta;
        }
        let mut q = vec![0.0; n];
        for &r in &self.nonlinear {
            let target = g[r].clamp(l[r], u[r]);
            let res = g[r] - target;
            let span = jac.indptr[r]..jac.indptr[r + 1];
            for k in span.clone() {
                let (ci, vi) = (jac.indices[k], jac.data[k]);
                q[ci] += vi * res;
                for k2 in span.clone() {
                    let (cj, vj) = (jac.indices[k2], jac.data[k2]);
                    if ci >= cj {
                        let s = self.slot(ci, cj);
                        p.data[s] += vi * vj;
                    }
                }
            }
        }
        let mut a = self.a.clone();
        let mut bl = Vec::with_capacity(self.lin_rows.len());
        let mut bu = Vec::with_capacity(self.lin_rows.len());
        for (k, &r) in self.lin_rows.iter().enumerate() {
            let span = a.indptr[k]..a.indptr[k + 1];
            for (slot, (c, v)) in span.zip(jac.row(r)) {
                debug_assert_eq!(a.indices[slot], c);
                a.data[slot] = v;
            }
            bl.push(l[r] - g[r]);
            bu.push(u[r] - g[r]);
        }
        let sol = self.ws.solve(&p, &q, &a, &bl, &bu, None, settings);
        log::debug!(
            "  restoration qp: {:?} after {} iterations, polished {}",
            sol.status,
            sol.iterations,
            sol.polished
        );
        match sol.status {
            QpStatus::Solved | QpStatus::MaxIterations if sol.prim_res.is_finite() => Some((sol.x, sol.iterations)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{Affine, ConstraintBlock, CostFamily, CostTerm, Family, Row};

    /// min (x0 − 2)² + (x1 − 1)²  s.t.  x0 · x1 = 1, x0 ≥ 0.5
    fn hyperbola() -> Program {
        let mut p = Program::new(2);
        p.costs.push(CostTerm {
            family: CostFamily::Custom,
            weight: 1.0,
            residuals: vec![
                Affine { terms: vec![(0, 1.0)], constant: -2.0 },
                Affine { terms: vec![(1, 1.0)], constant: -1.0 },
            ],
        });
        let mut eq = ConstraintBlock::new(Family::Custom);
        eq.push_eq(Row { affine: Affine::constant(-1.0), bilinear: vec![(0, 1, 1.0)] }, 0);
        p.equalities.push(eq);
        let mut ineq = ConstraintBlock::new(Family::Custom);
        ineq.push(Row::linear(Affine::var(0, 1.0)), 0.5, f64::INFINITY, 0);
        p.inequalities.push(ineq);
        p
    }

    /// Independent oracle: stationary point along the curve x1 = 1/x0.
    fn hyperbola_oracle() -> (f64, f64) {
        // d/dx [(x − 2)² + (1/x − 1)²] = 2(x − 2) − 2(1/x − 1)/x² = 0
        let h = |x: f64| (x - 2.0) - (1.0 / x - 1.0) / (x * x);
        let (mut a, mut b) = (1.0, 3.0);
        for _ in 0..200 {
            let c = 0.5 * (a + b);
            if h(a) * h(c) <= 0.0 {
                b = c;
            } else {
                a = c;
            }
        }
        let x = 0.5 * (a + b);
        (x, 1.0 / x)
    }

    #[test]
    fn bilinear_equality_from_feasible_start() {
        let p = hyperbola();
        let r = solve(&p, &[1.0, 1.0], &SolverOptions::default());
        assert_eq!(r.stats.status, SolveStatus::Optimal, "{:?}", r.stats);
        let (xs, ys) = hyperbola_oracle();
        assert!((r.x[0] - xs).abs() < 1e-6, "{:?} vs {xs}", r.x);
        assert!((r.x[1] - ys).abs() < 1e-6);
        let k = kkt_residuals(&p, &r.x, &r.y);
        assert!(k.stationarity < 1e-6 && k.feasibility < 1e-6);
    }

    #[test]
    fn zero_start_needs_restoration() {
        // the linearization at the origin is 0 = 1, so the first QP fails
        let p = hyperbola();
        let r = solve(&p, &[0.0, 0.0], &SolverOptions::default());
        assert_eq!(r.stats.status, SolveStatus::Optimal, "{:?}", r.stats);
        assert!(r.stats.restorations >= 1);
        let (xs, _) = hyperbola_oracle();
        assert!((r.x[0] - xs).abs() < 1e-6);
    }

    #[test]
    fn exact_hessian_matches_gauss_newton() {
        let p = hyperbola();
        let opts = SolverOptions { exact_hessian: true, ..Default::default() };
        let a = solve(&p, &[1.0, 1.0], &opts);
        let b = solve(&p, &[1.0, 1.0], &SolverOptions::default());
        assert_eq!(a.stats.status, SolveStatus::Optimal);
        assert!((a.x[0] - b.x[0]).abs() < 1e-6);
        assert!(a.stats.iterations <= b.stats.iterations);
    }

    #[test]
    fn inconsistent_linear_rows_are_infeasible() {
        let mut p = hyperbola();
        let mut ineq = ConstraintBlock::new(Family::Custom);
        ineq.push(Row::linear(Affine::var(0, 1.0)), f64::NEG_INFINITY, 0.2, 0);
        p.inequalities.push(ineq);
        let r = solve(&p, &[0.0, 0.0], &SolverOptions::default());
        assert_eq!(r.stats.status, SolveStatus::Infeasible);
    }

    #[test]
    fn deterministic() {
        let p = hyperbola();
        let a = solve(&p, &[0.3, 0.1], &SolverOptions::default());
        let b = solve(&p, &[0.3, 0.1], &SolverOptions::default());
        assert_eq!(a.x, b.x);
        assert_eq!(a.stats.iterations, b.stats.iterations);
    }
}
