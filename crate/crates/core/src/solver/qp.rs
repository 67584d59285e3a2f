//! Operator-splitting (ADMM) solver for convex quadratic programs
//!
//! ```text
//! minimize    ½ xᵀ P x + qᵀ x
//! subject to  l ≤ A x ≤ u
//! ```
//!
//! with Ruiz equilibration, adaptive step size, primal infeasibility
//! certificates and an active-set polishing pass that recovers high-accuracy
//! solutions. The sparsity of `P` and `A` is fixed when the workspace is
//! built so repeated solves (one per SQP iteration) share the symbolic setup.

use serde::{Deserialize, Serialize};

use super::sparse::{CsrMatrix, EnvelopeCholesky};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_pinf: f64,
    pub max_iter: usize,
    pub scaling_iters: usize,
    pub adaptive_rho_interval: usize,
    pub check_interval: usize,
    pub polish: bool,
    pub polish_refine_iters: usize,
    /// Active-set repair rounds of the polishing pass.
    pub polish_rounds: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-4,
            eps_rel: 1e-4,
            eps_pinf: 1e-6,
            max_iter: 20000,
            scaling_iters: 15,
            adaptive_rho_interval: 25,
            check_interval: 5,
            polish: true,
            polish_refine_iters: 40,
            polish_rounds: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    PrimalInfeasible,
    MaxIterations,
    NumericalError,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Row multipliers: `P x + q + Aᵀ y = 0`, `y ≥ 0` on active upper bounds.
    pub y: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub prim_res: f64,
    pub dual_res: f64,
    pub polished: bool,
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;

/// Reusable symbolic setup for a fixed `(P, A)` sparsity.
pub struct QpWorkspace {
    n: usize,
    m: usize,
    p_indptr: Vec<usize>,
    p_indices: Vec<usize>,
    a_indptr: Vec<usize>,
    a_indices: Vec<usize>,
    chol: EnvelopeCholesky,
    p_slots: Vec<usize>,
    diag_slots: Vec<usize>,
    /// Per row of A: `(k1, k2, slot)` products `a[k1]·a[k2]` landing in `slot`.
    pair_ptr: Vec<usize>,
    pairs: Vec<(usize, usize, usize)>,
}

impl QpWorkspace {
    /// `p` holds the lower triangle of P; `a` is `m × n`.
    pub fn new(p: &CsrMatrix, a: &CsrMatrix) -> Self {
        let n = p.nrows;
        let m = a.nrows;
        assert_eq!(a.ncols, n);
        let mut pattern: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for r in 0..n {
            for (c, _) in p.row(r) {
                pattern.push((r, c));
            }
        }
        for r in 0..m {
            let cols = &a.indices[a.indptr[r]..a.indptr[r + 1]];
            for (i, &ci) in cols.iter().enumerate() {
                for &cj in &cols[..=i] {
                    pattern.push(if ci >= cj { (ci, cj) } else { (cj, ci) });
                }
            }
        }
        pattern.sort_unstable();
        pattern.dedup();
        let chol = EnvelopeCholesky::new(n, &pattern);
        let mut p_slots = Vec::with_capacity(p.nnz());
        for r in 0..n {
            for (c, _) in p.row(r) {
                p_slots.push(chol.slot(r, c));
            }
        }
        let diag_slots = (0..n).map(|i| chol.slot(i, i)).collect();
        let mut pair_ptr = vec![0];
        let mut pairs = Vec::new();
        for r in 0..m {
            let base = a.indptr[r];
            let cols = &a.indices[base..a.indptr[r + 1]];
            for (i, &ci) in cols.iter().enumerate() {
                for (j, &cj) in cols[..=i].iter().enumerate() {
                    pairs.push((base + i, base + j, chol.slot(ci, cj)));
                }
            }
            pair_ptr.push(pairs.len());
        }
        Self {
            n,
            m,
            p_indptr: p.indptr.clone(),
            p_indices: p.indices.clone(),
            a_indptr: a.indptr.clone(),
            a_indices: a.indices.clone(),
            chol,
            p_slots,
            diag_slots,
            pair_ptr,
            pairs,
        }
    }

    fn assemble(&mut self, p: &CsrMatrix, a: &CsrMatrix, sigma: f64, row_weights: &[f64]) -> bool {
        let vals = self.chol.values_mut();
        vals.iter_mut().for_each(|v| *v = 0.0);
        for (k, &s) in self.p_slots.iter().enumerate() {
            vals[s] += p.data[k];
        }
        for &s in &self.diag_slots {
            vals[s] += sigma;
        }
        for r in 0..self.m {
            let w = row_weights[r];
            if w == 0.0 {
                continue;
            }
            for &(k1, k2, s) in &self.pairs[self.pair_ptr[r]..self.pair_ptr[r + 1]] {
                let v = a.data[k1] * a.data[k2];
                // off-diagonal pairs appear once in the lower triangle
                vals[s] += w * v;
            }
        }
        self.chol.factor().is_ok()
    }

    fn check_structure(&self, p: &CsrMatrix, a: &CsrMatrix) {
        assert!(p.indptr == self.p_indptr && p.indices == self.p_indices, "P structure changed");
        assert!(a.indptr == self.a_indptr && a.indices == self.a_indices, "A structure changed");
    }

    /// Solves the QP. `warm` provides starting `(x, y)` in unscaled units.
    pub fn solve(
        &mut self,
        p: &CsrMatrix,
        q: &[f64],
        a: &CsrMatrix,
        l: &[f64],
        u: &[f64],
        warm: Option<(&[f64], &[f64])>,
        settings: &QpSettings,
    ) -> QpSolution {
        self.check_structure(p, a);
        let (n, m) = (self.n, self.m);
        let sc = Scaling::ruiz(p, q, a, settings.scaling_iters);
        let ps = sc.scale_p(p);
        let as_ = sc.scale_a(a);
        let qs: Vec<f64> = (0..n).map(|i| sc.c * sc.d[i] * q[i]).collect();
        let ls: Vec<f64> = (0..m).map(|i| sc.e[i] * l[i]).collect();
        let us: Vec<f64> = (0..m).map(|i| sc.e[i] * u[i]).collect();

        let mut x = vec![0.0; n];
        let mut y = vec![0.0; m];
        if let Some((x0, y0)) = warm {
            for i in 0..n {
                x[i] = x0[i] / sc.d[i];
            }
            for i in 0..m {
                y[i] = sc.c * y0[i] / sc.e[i];
            }
        }
        let mut z = vec![0.0; m];
        as_.mul_vec(&x, &mut z);
        for i in 0..m {
            z[i] = z[i].clamp(ls[i], us[i]);
        }

        let mut rho = settings.rho;
        let row_kind: Vec<RowKind> = (0..m).map(|i| RowKind::of(ls[i], us[i])).collect();
        let mut rho_vec = rho_vector(&row_kind, rho);
        if !self.assemble(&ps, &as_, settings.sigma, &rho_vec) {
            return failed(n, m);
        }

        let sigma = settings.sigma;
        let alpha = settings.alpha;
        let mut rhs = vec![0.0; n];
        let mut tmp_m = vec![0.0; m];
        let mut xt_z = vec![0.0; m];
        let mut eps_abs = settings.eps_abs;
        let mut eps_rel = settings.eps_rel;
        let mut best: Option<QpSolution> = None;
        let mut iter = 0;
        while iter < settings.max_iter {
            iter += 1;
            let y_prev = y.clone();
            for i in 0..m {
                tmp_m[i] = rho_vec[i] * z[i] - y[i];
            }
            as_.tmul_vec(&tmp_m, &mut rhs);
            for i in 0..n {
                rhs[i] += sigma * x[i] - qs[i];
            }
            self.chol.solve(&mut rhs);
            as_.mul_vec(&rhs, &mut xt_z);
            for i in 0..n {
                x[i] = alpha * rhs[i] + (1.0 - alpha) * x[i];
            }
            for i in 0..m {
                let zr = alpha * xt_z[i] + (1.0 - alpha) * z[i];
                let zn = (zr + y[i] / rho_vec[i]).clamp(ls[i], us[i]);
                y[i] += rho_vec[i] * (zr - zn);
                z[i] = zn;
            }

            if iter % settings.check_interval != 0 && iter != settings.max_iter {
                continue;
            }
            let res = residuals(&ps, &qs, &as_, &sc, &x, &z, &y);
            if !res.prim.is_finite() || !res.dual.is_finite() {
                return failed(n, m);
            }
            let eps_p = eps_abs + eps_rel * res.prim_scale;
            let eps_d = eps_abs + eps_rel * res.dual_scale;
            if res.prim <= eps_p && res.dual <= eps_d {
                let mut sol = unscaled(&sc, &x, &y, QpStatus::Solved, iter, res.prim, res.dual);
                if !settings.polish {
                    return sol;
                }
                if let Some(pol) = self.polish(&ps, &qs, &as_, &ls, &us, &sc, &x, &z, &y, settings, sigma, &rho_vec) {
                    if pol.prim_res <= res.prim.max(1e-9) && pol.dual_res <= res.dual.max(1e-9) {
                        let mut pol = pol;
                        pol.iterations = iter;
                        return pol;
                    }
                }
                // polishing failed: tighten and keep iterating from here
                if eps_abs > 1e-11 {
                    sol.status = QpStatus::Solved;
                    best = Some(sol);
                    eps_abs *= 0.1;
                    eps_rel *= 0.1;
                    if !self.assemble(&ps, &as_, sigma, &rho_vec) {
                        return failed(n, m);
                    }
                    continue;
                }
                return sol;
            }
            if primal_infeasible(&as_, &sc, &ls, &us, &y, &y_prev, settings.eps_pinf) {
                let mut sol = unscaled(&sc, &x, &y, QpStatus::PrimalInfeasible, iter, res.prim, res.dual);
                // report the certificate direction rather than the iterate
                let dy: Vec<f64> = y.iter().zip(&y_prev).map(|(a, b)| a - b).collect();
                sol.y = (0..m).map(|i| sc.e[i] * dy[i]).collect();
                return sol;
            }
            if iter % settings.adaptive_rho_interval == 0 {
                let ratio = ((res.prim_s / res.prim_scale_s.max(1e-30))
                    / (res.dual_s / res.dual_scale_s.max(1e-30)).max(1e-30))
                .sqrt();
                let new_rho = (rho * ratio).clamp(RHO_MIN, RHO_MAX);
                if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                    rho = new_rho;
                    rho_vec = rho_vector(&row_kind, rho);
                    if !self.assemble(&ps, &as_, sigma, &rho_vec) {
                        return failed(n, m);
                    }
                }
            }
        }
        if let Some(b) = best {
            return b;
        }
        let res = residuals(&ps, &qs, &as_, &sc, &x, &z, &y);
        unscaled(&sc, &x, &y, QpStatus::MaxIterations, iter, res.prim, res.dual)
    }

    /// Solves the equality QP on the guessed active set by proximal method of
    /// multipliers, then validates the guess. A wrong guess is repaired a few
    /// times by adding violated rows and dropping rows whose multiplier has
    /// the wrong sign.
    #[allow(clippy::too_many_arguments)]
    fn polish(
        &mut self,
        ps: &CsrMatrix,
        qs: &[f64],
        as_: &CsrMatrix,
        ls: &[f64],
        us: &[f64],
        sc: &Scaling,
        x_admm: &[f64],
        z: &[f64],
        y_admm: &[f64],
        settings: &QpSettings,
        sigma: f64,
        rho_vec: &[f64],
    ) -> Option<QpSolution> {
        let m = self.m;
        let mut target = vec![f64::NAN; m];
        for i in 0..m {
            if ls[i] == us[i] {
                target[i] = ls[i];
            } else if z[i] - ls[i] < -y_admm[i] {
                target[i] = ls[i];
            } else if us[i] - z[i] < y_admm[i] {
                target[i] = us[i];
            }
        }
        let mut x = x_admm.to_vec();
        let mut y: Vec<f64> = (0..m).map(|i| if target[i].is_finite() { y_admm[i] } else { 0.0 }).collect();
        let mut result = None;
        for _round in 0..settings.polish_rounds.max(1) {
            if !self.refine(ps, qs, as_, sc, &target, &mut x, &mut y, settings) {
                break;
            }
            let mut ax = vec![0.0; m];
            as_.mul_vec(&x, &mut ax);
            let tol = 1e-9;
            let mut changed = false;
            for i in 0..m {
                let scale = 1.0 / sc.e[i];
                if !target[i].is_finite() {
                    if (ax[i] - us[i]) * scale > tol {
                        target[i] = us[i];
                        changed = true;
                    } else if (ls[i] - ax[i]) * scale > tol {
                        target[i] = ls[i];
                        changed = true;
                    }
                } else if ls[i] != us[i] {
                    let yu = y[i] * sc.e[i] / sc.c;
                    let wrong = (target[i] == us[i] && yu < -tol) || (target[i] == ls[i] && yu > tol);
                    if wrong {
                        target[i] = f64::NAN;
                        y[i] = 0.0;
                        changed = true;
                    }
                }
            }
            if !changed {
                let zc: Vec<f64> = (0..m).map(|i| ax[i].clamp(ls[i], us[i])).collect();
                let res = residuals(ps, qs, as_, sc, &x, &zc, &y);
                let mut sol = unscaled(sc, &x, &y, QpStatus::Solved, 0, res.prim, res.dual);
                sol.polished = true;
                result = Some(sol);
                break;
            }
        }
        // restore the ADMM factorization for any continued iterations
        let _ = self.assemble(ps, as_, sigma, rho_vec);
        result
    }

    /// Proximal method of multipliers on the rows with a finite target.
    #[allow(clippy::too_many_arguments)]
    fn refine(
        &mut self,
        ps: &CsrMatrix,
        qs: &[f64],
        as_: &CsrMatrix,
        sc: &Scaling,
        target: &[f64],
        x: &mut [f64],
        y: &mut [f64],
        settings: &QpSettings,
    ) -> bool {
        let (n, m) = (self.n, self.m);
        let rho_p = 1e6;
        let delta = 1e-7;
        let weights: Vec<f64> = target.iter().map(|t| if t.is_finite() { rho_p } else { 0.0 }).collect();
        if !self.assemble(ps, as_, delta, &weights) {
            return false;
        }
        let mut rhs = vec![0.0; n];
        let mut tmp = vec![0.0; m];
        let mut ax = vec![0.0; m];
        for _ in 0..settings.polish_refine_iters {
            for i in 0..m {
                tmp[i] = if weights[i] > 0.0 { rho_p * target[i] - y[i] } else { 0.0 };
            }
            as_.tmul_vec(&tmp, &mut rhs);
            for i in 0..n {
                rhs[i] += delta * x[i] - qs[i];
            }
            self.chol.solve(&mut rhs);
            let step = rhs.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            x.copy_from_slice(&rhs);
            as_.mul_vec(x, &mut ax);
            let mut viol: f64 = 0.0;
            for i in 0..m {
                if weights[i] > 0.0 {
                    let r = ax[i] - target[i];
                    y[i] += rho_p * r;
                    viol = viol.max((r / sc.e[i]).abs());
                }
            }
            if viol < 1e-13 && step < 1e-13 {
                break;
            }
        }
        x.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RowKind {
    Equality,
    Free,
    Inequality,
}

impl RowKind {
    fn of(l: f64, u: f64) -> Self {
        if l == u {
            RowKind::Equality
        } else if l == f64::NEG_INFINITY && u == f64::INFINITY {
            RowKind::Free
        } else {
            RowKind::Inequality
        }
    }
}

fn rho_vector(kinds: &[RowKind], rho: f64) -> Vec<f64> {
    kinds
        .iter()
        .map(|k| match k {
            RowKind::Equality => (RHO_EQ_FACTOR * rho).min(RHO_MAX * RHO_EQ_FACTOR),
            RowKind::Free => RHO_MIN,
            RowKind::Inequality => rho,
        })
        .collect()
}

fn failed(n: usize, m: usize) -> QpSolution {
    QpSolution {
        x: vec![0.0; n],
        y: vec![0.0; m],
        status: QpStatus::NumericalError,
        iterations: 0,
        prim_res: f64::INFINITY,
        dual_res: f64::INFINITY,
        polished: false,
    }
}

/// Diagonal equilibration `P̄ = c D P D`, `Ā = E A D`.
struct Scaling {
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

impl Scaling {
    fn ruiz(p: &CsrMatrix, q: &[f64], a: &CsrMatrix, iters: usize) -> Self {
        let n = p.nrows;
        let m = a.nrows;
        let mut d = vec![1.0; n];
        let mut e = vec![1.0; m];
        let mut col = vec![0.0f64; n];
        let mut row = vec![0.0f64; m];
        for _ in 0..iters {
            col.iter_mut().for_each(|v| *v = 0.0);
            row.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..n {
                for (c, v) in p.row(r) {
                    let s = (d[r] * v * d[c]).abs();
                    col[r] = col[r].max(s);
                    col[c] = col[c].max(s);
                }
            }
            for r in 0..m {
                for (c, v) in a.row(r) {
                    let s = (e[r] * v * d[c]).abs();
                    col[c] = col[c].max(s);
                    row[r] = row[r].max(s);
                }
            }
            for i in 0..n {
                d[i] *= 1.0 / limit(col[i]).sqrt();
            }
            for i in 0..m {
                e[i] *= 1.0 / limit(row[i]).sqrt();
            }
        }
        let mut pcol = vec![0.0f64; n];
        for r in 0..n {
            for (c, v) in p.row(r) {
                let s = (d[r] * v * d[c]).abs();
                pcol[r] = pcol[r].max(s);
                pcol[c] = pcol[c].max(s);
            }
        }
        let mean_p = pcol.iter().sum::<f64>() / n.max(1) as f64;
        let q_norm = q.iter().zip(&d).map(|(a, b)| (a * b).abs()).fold(0.0, f64::max);
        let c = 1.0 / limit(mean_p.max(q_norm));
        Self { d, e, c }
    }

    fn scale_p(&self, p: &CsrMatrix) -> CsrMatrix {
        let mut out = p.clone();
        for r in 0..p.nrows {
            for k in p.indptr[r]..p.indptr[r + 1] {
                out.data[k] = self.c * self.d[r] * p.data[k] * self.d[p.indices[k]];
            }
        }
        out
    }

    fn scale_a(&self, a: &CsrMatrix) -> CsrMatrix {
        let mut out = a.clone();
        for r in 0..a.nrows {
            for k in a.indptr[r]..a.indptr[r + 1] {
                out.data[k] = self.e[r] * a.data[k] * self.d[a.indices[k]];
            }
        }
        out
    }
}

fn limit(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        v.min(1e4)
    }
}

struct Residuals {
    prim: f64,
    dual: f64,
    prim_scale: f64,
    dual_scale: f64,
    prim_s: f64,
    dual_s: f64,
    prim_scale_s: f64,
    dual_scale_s: f64,
}

fn residuals(
    ps: &CsrMatrix,
    qs: &[f64],
    as_: &CsrMatrix,
    sc: &Scaling,
    x: &[f64],
    z: &[f64],
    y: &[f64],
) -> Residuals {
    let n = x.len();
    let m = z.len();
    let mut ax = vec![0.0; m];
    as_.mul_vec(x, &mut ax);
    let mut px = vec![0.0; n];
    ps.sym_lower_mul_vec(x, &mut px);
    let mut aty = vec![0.0; n];
    as_.tmul_vec(y, &mut aty);
    let (mut prim, mut ax_n, mut z_n, mut prim_s, mut ax_s, mut z_s) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..m {
        let ei = 1.0 / sc.e[i];
        prim = prim.max(((ax[i] - z[i]) * ei).abs());
        ax_n = ax_n.max((ax[i] * ei).abs());
        z_n = z_n.max((z[i] * ei).abs());
        prim_s = prim_s.max((ax[i] - z[i]).abs());
        ax_s = ax_s.max(ax[i].abs());
        z_s = z_s.max(z[i].abs());
    }
    let (mut dual, mut px_n, mut aty_n, mut q_n, mut dual_s, mut px_s, mut aty_s, mut q_s) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        let di = 1.0 / (sc.d[i] * sc.c);
        let r = px[i] + qs[i] + aty[i];
        dual = dual.max((r * di).abs());
        px_n = px_n.max((px[i] * di).abs());
        aty_n = aty_n.max((aty[i] * di).abs());
        q_n = q_n.max((qs[i] * di).abs());
        dual_s = dual_s.max(r.abs());
        px_s = px_s.max(px[i].abs());
        aty_s = aty_s.max(aty[i].abs());
        q_s = q_s.max(qs[i].abs());
    }
    Residuals {
        prim,
        dual,
        prim_scale: ax_n.max(z_n),
        dual_scale: px_n.max(aty_n).max(q_n),
        prim_s,
        dual_s,
        prim_scale_s: ax_s.max(z_s),
        dual_scale_s: px_s.max(aty_s).max(q_s),
    }
}

fn unscaled(sc: &Scaling, x: &[f64], y: &[f64], status: QpStatus, iterations: usize, prim: f64, dual: f64) -> QpSolution {
    QpSolution {
        x: x.iter().zip(&sc.d).map(|(v, d)| v * d).collect(),
        y: y.iter().zip(&sc.e).map(|(v, e)| v * e / sc.c).collect(),
        status,
        iterations,
        prim_res: prim,
        dual_res: dual,
        polished: false,
    }
}

fn primal_infeasible(as_: &CsrMatrix, sc: &Scaling, ls: &[f64], us: &[f64], y: &[f64], y_prev: &[f64], eps: f64) -> bool {
    let m = y.len();
    let dy: Vec<f64> = y.iter().zip(y_prev).map(|(a, b)| a - b).collect();
    let norm = dy.iter().zip(&sc.e).map(|(v, e)| (v * e).abs()).fold(0.0, f64::max);
    if norm < 1e-12 {
        return false;
    }
    let mut support = 0.0;
    for i in 0..m {
        if dy[i] > 0.0 {
            if us[i].is_infinite() {
                if dy[i] * sc.e[i] > eps * norm {
                    return false;
                }
                continue;
            }
            support += us[i] * dy[i];
        } else if dy[i] < 0.0 {
            if ls[i].is_infinite() {
                if -dy[i] * sc.e[i] > eps * norm {
                    return false;
                }
                continue;
            }
            support += ls[i] * dy[i];
        }
    }
    if support >= -eps * norm {
        return false;
    }
    let mut aty = vec![0.0; sc.d.len()];
    as_.tmul_vec(&dy, &mut aty);
    let lhs = aty.iter().zip(&sc.d).map(|(v, d)| (v / d).abs()).fold(0.0, f64::max);
    lhs <= eps * norm
}
