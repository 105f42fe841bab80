use nalgebra::{DMatrix, DVector};

use super::{quad_form, ConicProgram, ConstraintKind};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Target for every KKT residual.
    pub tol: f64,
    /// Newton-step budget for each phase.
    pub max_newton: usize,
    /// Barrier parameter growth per outer iteration.
    pub mu: f64,
    pub t0: f64,
    pub armijo: f64,
    pub shrink: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_newton: 200, mu: 10.0, t0: 1.0, armijo: 1e-4, shrink: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveStatus {
    pub converged: bool,
    /// Newton steps in phase II.
    pub iterations: usize,
    pub phase1_iterations: usize,
    pub outer_iterations: usize,
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub objective: f64,
    /// Objective after each completed centering.
    pub outer_objectives: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub x: Vec<f64>,
    pub status: SolveStatus,
}

/// Solve with default options and the given KKT tolerance.
pub fn solve(prog: &ConicProgram, x0: Option<&[f64]>, tol: f64) -> Result<Solution> {
    solve_with(prog, x0, &SolveOptions { tol, ..Default::default() })
}

/// Maximize `prog`. Fails with [`Error::Infeasible`] naming the blocking
/// constraint group when phase I cannot find a strictly feasible point.
/// Running out of Newton steps returns the last iterate with
/// `converged = false`.
pub fn solve_with(prog: &ConicProgram, x0: Option<&[f64]>, opts: &SolveOptions) -> Result<Solution> {
    prog.validate()?;
    if let Some(x0) = x0 {
        if x0.len() != prog.n {
            return Err(Error::Dimension(format!("start has {} entries, program {}", x0.len(), prog.n)));
        }
    }
    let n = prog.n;
    let start = match x0 {
        Some(x) => x.to_vec(),
        None => default_start(prog),
    };

    let phase2 = Barrier::new(prog, false)?;
    let mut y = phase2.reduced.restrict(&start);
    if phase2.value(&phase2.reduced.expand(&y), 1.0).is_none() {
        let phase1 = Barrier::new(prog, true)?;
        let mut xs = phase2.reduced.expand(&y);
        xs.push(phase1.initial_slack(&xs));
        let mut y1 = phase1.reduced.restrict(&xs);
        let mut t = opts.t0;
        let mut steps = 0;
        let found = loop {
            let r = phase1.center(&mut y1, t, opts, opts.max_newton - steps, true);
            steps += r.steps;
            let x = phase1.reduced.expand(&y1);
            if x[n] < 0.0 {
                break true;
            }
            if r.stuck || steps >= opts.max_newton || phase1.nu / t < 1e-10 {
                break false;
            }
            t *= opts.mu;
        };
        let x = phase1.reduced.expand(&y1);
        if !found {
            let (_, group) = prog.max_violation(&x[..n]);
            return Err(Error::Infeasible(group));
        }
        y = phase2.reduced.restrict(&x[..n]);
        phase2_solve(prog, &phase2, y, opts, steps)
    } else {
        phase2_solve(prog, &phase2, y, opts, 0)
    }
}

fn phase2_solve(
    prog: &ConicProgram,
    bar: &Barrier,
    mut y: DVector<f64>,
    opts: &SolveOptions,
    phase1_steps: usize,
) -> Result<Solution> {
    let mut t = opts.t0;
    let mut steps = 0;
    let mut outer = 0;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut residuals;
    loop {
        let r = bar.center(&mut y, t, opts, opts.max_newton.saturating_sub(steps), false);
        steps += r.steps;
        outer += 1;
        let x = bar.reduced.expand(&y);
        trace.push(prog.objective.value(&x));
        residuals = bar.residuals(&x, t);
        if bar.nu / t <= opts.tol {
            converged = residuals.stationarity <= opts.tol
                && residuals.primal <= opts.tol
                && residuals.dual <= opts.tol
                && residuals.complementarity <= opts.tol;
            break;
        }
        if steps >= opts.max_newton || r.stuck {
            break;
        }
        t *= opts.mu;
    }
    let x = bar.reduced.expand(&y);
    let objective = prog.objective.value(&x);
    Ok(Solution {
        x,
        status: SolveStatus {
            converged,
            iterations: steps,
            phase1_iterations: phase1_steps,
            outer_iterations: outer,
            stationarity: residuals.stationarity,
            primal: residuals.primal,
            dual: residuals.dual,
            complementarity: residuals.complementarity,
            objective,
            outer_objectives: trace,
        },
    })
}

fn default_start(prog: &ConicProgram) -> Vec<f64> {
    (0..prog.n)
        .map(|i| {
            let (l, u) = (prog.lower[i], prog.upper[i]);
            match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => l + 1.0,
                (false, true) => u - 1.0,
                (false, false) => 0.0,
            }
        })
        .collect()
}

/// Affine parametrization of `{x : A x = c}` by its free coordinates:
/// `x_P = rhs − R x_F`.
struct Reduced {
    n: usize,
    free: Vec<usize>,
    piv: Vec<usize>,
    r: DMatrix<f64>,
    rhs: DVector<f64>,
    /// Original rows, kept for the primal residual.
    rows: Vec<(Vec<(usize, f64)>, f64)>,
}

impl Reduced {
    fn new(n: usize, rows: Vec<(Vec<(usize, f64)>, f64)>, groups: &[String]) -> Result<Self> {
        let m = rows.len();
        let mut a: DMatrix<f64> = DMatrix::zeros(m, n);
        let mut b: DVector<f64> = DVector::zeros(m);
        for (i, (coeffs, rhs)) in rows.iter().enumerate() {
            for &(j, c) in coeffs {
                a[(i, j)] += c;
            }
            let scale = a.row(i).amax();
            if scale > 0.0 {
                a.row_mut(i).scale_mut(1.0 / scale);
                b[i] = rhs / scale;
            } else {
                b[i] = *rhs;
            }
        }
        let mut order: Vec<usize> = (0..m).collect();
        let mut piv = Vec::new();
        let mut row = 0;
        for col in 0..n {
            if row == m {
                break;
            }
            let (p, best) = (row..m).map(|i| (i, a[(i, col)].abs())).fold((row, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc });
            if best <= 1e-10 {
                continue;
            }
            a.swap_rows(row, p);
            b.swap_rows(row, p);
            order.swap(row, p);
            let d = a[(row, col)];
            a.row_mut(row).scale_mut(1.0 / d);
            b[row] /= d;
            for i in 0..m {
                if i != row {
                    let f = a[(i, col)];
                    if f != 0.0 {
                        for j in 0..n {
                            a[(i, j)] -= f * a[(row, j)];
                        }
                        b[i] -= f * b[row];
                    }
                }
            }
            piv.push(col);
            row += 1;
        }
        for i in row..m {
            if b[i].abs() > 1e-9 {
                return Err(Error::Infeasible(groups[order[i]].clone()));
            }
        }
        let free: Vec<usize> = (0..n).filter(|j| !piv.contains(j)).collect();
        let rank = piv.len();
        let r = DMatrix::from_fn(rank, free.len(), |i, j| a[(i, free[j])]);
        let rhs = DVector::from_fn(rank, |i, _| b[i]);
        Ok(Self { n, free, piv, r, rhs, rows })
    }

    fn restrict(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&j| x[j]))
    }

    fn expand(&self, y: &DVector<f64>) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (j, &f) in self.free.iter().enumerate() {
            x[f] = y[j];
        }
        if !self.piv.is_empty() {
            let xp = &self.rhs - &self.r * y;
            for (i, &p) in self.piv.iter().enumerate() {
                x[p] = xp[i];
            }
        }
        x
    }

    fn grad(&self, g: &[f64]) -> DVector<f64> {
        let mut gy = DVector::from_iterator(self.free.len(), self.free.iter().map(|&j| g[j]));
        if !self.piv.is_empty() {
            let gp = DVector::from_iterator(self.piv.len(), self.piv.iter().map(|&j| g[j]));
            gy -= self.r.tr_mul(&gp);
        }
        gy
    }

    fn hess(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let hff = h.select_rows(&self.free).select_columns(&self.free);
        if self.piv.is_empty() {
            return hff;
        }
        let hpf = h.select_rows(&self.piv).select_columns(&self.free);
        let hpp = h.select_rows(&self.piv).select_columns(&self.piv);
        let cross = self.r.tr_mul(&hpf);
        hff - &cross - cross.transpose() + self.r.tr_mul(&(hpp * &self.r))
    }

    fn primal_residual(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|(c, rhs)| (c.iter().map(|&(j, v)| v * x[j]).sum::<f64>() - rhs).abs())
            .fold(0.0, f64::max)
    }
}

struct Centering {
    steps: usize,
    stuck: bool,
}

struct Residuals {
    stationarity: f64,
    primal: f64,
    dual: f64,
    complementarity: f64,
}

/// Log-barrier for the inequality part of a program; with `phase1` every
/// inequality is loosened by a shared slack variable stored after `x`.
struct Barrier<'a> {
    prog: &'a ConicProgram,
    phase1: bool,
    /// Index of the slack, equal to `prog.n` in phase I.
    s: Option<usize>,
    lower: Vec<usize>,
    upper: Vec<usize>,
    reduced: Reduced,
    /// Self-concordance parameter (duality-gap multiplier).
    nu: f64,
}

impl<'a> Barrier<'a> {
    fn new(prog: &'a ConicProgram, phase1: bool) -> Result<Self> {
        let n_ext = prog.n + usize::from(phase1);
        let mut rows = Vec::new();
        let mut groups = Vec::new();
        for c in &prog.constraints {
            if let ConstraintKind::LinearEq(a) = &c.kind {
                rows.push((a.coeffs.clone(), -a.constant));
                groups.push(c.group.clone());
            }
        }
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for i in 0..prog.n {
            if prog.lower[i] == prog.upper[i] {
                rows.push((vec![(i, 1.0)], prog.lower[i]));
                groups.push(format!("bounds:{}", prog.names[i]));
                continue;
            }
            if prog.lower[i].is_finite() {
                lower.push(i);
            }
            if prog.upper[i].is_finite() {
                upper.push(i);
            }
        }
        let reduced = Reduced::new(n_ext, rows, &groups)?;
        let mut nu = (lower.len() + upper.len()) as f64;
        for c in &prog.constraints {
            nu += match c.kind {
                ConstraintKind::LinearEq(_) => 0.0,
                ConstraintKind::LinearLe(_) | ConstraintKind::Quadratic { .. } => 1.0,
                ConstraintKind::Hyperbolic { .. } | ConstraintKind::RotatedCone { .. } => 4.0,
                ConstraintKind::AffinePlusLog { .. } => 2.0,
            };
        }
        if phase1 {
            nu += 1.0;
        }
        Ok(Self { prog, phase1, s: phase1.then_some(prog.n), lower, upper, reduced, nu })
    }

    fn slack(&self, x: &[f64]) -> f64 {
        self.s.map_or(0.0, |i| x[i])
    }

    /// Smallest slack making every inequality strictly satisfied at `x`.
    fn initial_slack(&self, x: &[f64]) -> f64 {
        let p = self.prog;
        let mut need = f64::NEG_INFINITY;
        for &i in &self.lower {
            need = need.max(p.lower[i] - x[i]);
        }
        for &i in &self.upper {
            need = need.max(x[i] - p.upper[i]);
        }
        for c in &p.constraints {
            let v = match &c.kind {
                ConstraintKind::LinearEq(_) => continue,
                ConstraintKind::LinearLe(a) => a.eval(x),
                ConstraintKind::Quadratic { vars, q, lin } => quad_form(vars, q, x) + lin.eval(x),
                ConstraintKind::Hyperbolic { r, a, b } => {
                    (-a.eval(x)).max(-b.eval(x)) + r.eval(x).abs()
                }
                ConstraintKind::RotatedCone { vars, q, a, b } => {
                    (-a.eval(x)).max(-b.eval(x)) + quad_form(vars, q, x).max(0.0).sqrt()
                }
                ConstraintKind::AffinePlusLog { lin, var, coeff } => {
                    if x[*var] > 0.0 {
                        -(lin.eval(x) + coeff * x[*var].ln())
                    } else {
                        f64::INFINITY
                    }
                }
            };
            need = need.max(v);
        }
        if need.is_finite() {
            need.max(0.0) + 1.0
        } else {
            1.0
        }
    }

    /// `t·(−f0)` (phase II) or `t·s` (phase I) plus the barrier; `None`
    /// outside the strict interior.
    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        let p = self.prog;
        let s = self.slack(x);
        let mut v = 0.0;
        let mut term = |phi: f64| -> bool {
            if phi > 0.0 {
                v -= phi.ln();
                true
            } else {
                false
            }
        };
        for &i in &self.lower {
            if !term(x[i] - p.lower[i] + s) {
                return None;
            }
        }
        for &i in &self.upper {
            if !term(p.upper[i] - x[i] + s) {
                return None;
            }
        }
        for c in &p.constraints {
            let ok = match &c.kind {
                ConstraintKind::LinearEq(_) => true,
                ConstraintKind::LinearLe(a) => term(s - a.eval(x)),
                ConstraintKind::Quadratic { vars, q, lin } => term(s - quad_form(vars, q, x) - lin.eval(x)),
                ConstraintKind::Hyperbolic { r, a, b } => {
                    let (r, a, b) = (r.eval(x), a.eval(x) + s, b.eval(x) + s);
                    term(a) && term(b) && term(a * b - r * r)
                }
                ConstraintKind::RotatedCone { vars, q, a, b } => {
                    let (a, b) = (a.eval(x) + s, b.eval(x) + s);
                    term(a) && term(b) && term(a * b - quad_form(vars, q, x))
                }
                ConstraintKind::AffinePlusLog { lin, var, coeff } => {
                    x[*var] > 0.0 && term(s + lin.eval(x) + coeff * x[*var].ln())
                }
            };
            if !ok {
                return None;
            }
        }
        if self.phase1 {
            if !term(s + 1.0) {
                return None;
            }
            v += t * s;
        } else {
            let f = p.objective.value(x);
            if !f.is_finite() {
                return None;
            }
            v -= t * f;
        }
        v.is_finite().then_some(v)
    }

    /// Gradient and Hessian of the barrier alone (no objective).
    fn barrier_derivatives(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let p = self.prog;
        let n = self.reduced.n;
        let s = self.slack(x);
        let mut g = vec![0.0; n];
        let mut h = DMatrix::zeros(n, n);
        let sl = self.s;
        // −log φ with sparse ∇φ; the caller adds −∇²φ/φ itself when nonzero
        let add = |phi: f64, grad: &[(usize, f64)], g: &mut Vec<f64>, h: &mut DMatrix<f64>| {
            let inv = 1.0 / phi;
            for &(i, d) in grad {
                g[i] -= d * inv;
            }
            let inv2 = inv * inv;
            for &(i, di) in grad {
                for &(j, dj) in grad {
                    h[(i, j)] += di * dj * inv2;
                }
            }
        };
        let with_slack = |mut v: Vec<(usize, f64)>| {
            if let Some(si) = sl {
                v.push((si, 1.0));
            }
            v
        };
        for &i in &self.lower {
            add(x[i] - p.lower[i] + s, &with_slack(vec![(i, 1.0)]), &mut g, &mut h);
        }
        for &i in &self.upper {
            add(p.upper[i] - x[i] + s, &with_slack(vec![(i, -1.0)]), &mut g, &mut h);
        }
        for c in &p.constraints {
            match &c.kind {
                ConstraintKind::LinearEq(_) => {}
                ConstraintKind::LinearLe(a) => {
                    let phi = s - a.eval(x);
                    let grad = with_slack(a.coeffs.iter().map(|&(i, c)| (i, -c)).collect());
                    add(phi, &grad, &mut g, &mut h);
                }
                ConstraintKind::Quadratic { vars, q, lin } => {
                    let phi = s - quad_form(vars, q, x) - lin.eval(x);
                    let mut grad: Vec<(usize, f64)> = lin.coeffs.iter().map(|&(i, c)| (i, -c)).collect();
                    for (a, &va) in vars.iter().enumerate() {
                        let mut d = 0.0;
                        for (b, &vb) in vars.iter().enumerate() {
                            d += (q[(a, b)] + q[(b, a)]) * x[vb];
                        }
                        grad.push((va, -d));
                    }
                    let grad = merge(with_slack(grad));
                    add(phi, &grad, &mut g, &mut h);
                    let inv = 1.0 / phi;
                    for (a, &va) in vars.iter().enumerate() {
                        for (b, &vb) in vars.iter().enumerate() {
                            h[(va, vb)] += (q[(a, b)] + q[(b, a)]) * inv;
                        }
                    }
                }
                ConstraintKind::Hyperbolic { r, a, b } => {
                    let (rv, av, bv) = (r.eval(x), a.eval(x) + s, b.eval(x) + s);
                    let ga = with_slack(a.coeffs.clone());
                    let gb = with_slack(b.coeffs.clone());
                    add(av, &ga, &mut g, &mut h);
                    add(bv, &gb, &mut g, &mut h);
                    let phi = av * bv - rv * rv;
                    let mut grad: Vec<(usize, f64)> = Vec::with_capacity(ga.len() + gb.len() + r.coeffs.len());
                    grad.extend(ga.iter().map(|&(i, c)| (i, bv * c)));
                    grad.extend(gb.iter().map(|&(i, c)| (i, av * c)));
                    grad.extend(r.coeffs.iter().map(|&(i, c)| (i, -2.0 * rv * c)));
                    let grad = merge(grad);
                    add(phi, &grad, &mut g, &mut h);
                    // −∇²φ/φ with ∇²φ = ∇a∇bᵀ + ∇b∇aᵀ − 2∇r∇rᵀ
                    let inv = 1.0 / phi;
                    for &(i, ci) in &ga {
                        for &(j, cj) in &gb {
                            h[(i, j)] -= ci * cj * inv;
                            h[(j, i)] -= ci * cj * inv;
                        }
                    }
                    for &(i, ci) in &r.coeffs {
                        for &(j, cj) in &r.coeffs {
                            h[(i, j)] += 2.0 * ci * cj * inv;
                        }
                    }
                }
                ConstraintKind::RotatedCone { vars, q, a, b } => {
                    let (av, bv) = (a.eval(x) + s, b.eval(x) + s);
                    let ga = with_slack(a.coeffs.clone());
                    let gb = with_slack(b.coeffs.clone());
                    add(av, &ga, &mut g, &mut h);
                    add(bv, &gb, &mut g, &mut h);
                    let phi = av * bv - quad_form(vars, q, x);
                    let mut grad: Vec<(usize, f64)> = Vec::with_capacity(ga.len() + gb.len() + vars.len());
                    grad.extend(ga.iter().map(|&(i, c)| (i, bv * c)));
                    grad.extend(gb.iter().map(|&(i, c)| (i, av * c)));
                    for (ia, &va) in vars.iter().enumerate() {
                        let d: f64 = vars.iter().enumerate().map(|(ib, &vb)| (q[(ia, ib)] + q[(ib, ia)]) * x[vb]).sum();
                        grad.push((va, -d));
                    }
                    let grad = merge(grad);
                    add(phi, &grad, &mut g, &mut h);
                    let inv = 1.0 / phi;
                    for &(i, ci) in &ga {
                        for &(j, cj) in &gb {
                            h[(i, j)] -= ci * cj * inv;
                            h[(j, i)] -= ci * cj * inv;
                        }
                    }
                    for (ia, &va) in vars.iter().enumerate() {
                        for (ib, &vb) in vars.iter().enumerate() {
                            h[(va, vb)] += (q[(ia, ib)] + q[(ib, ia)]) * inv;
                        }
                    }
                }
                ConstraintKind::AffinePlusLog { lin, var, coeff } => {
                    let xv = x[*var];
                    let phi = s + lin.eval(x) + coeff * xv.ln();
                    let mut grad = lin.coeffs.clone();
                    grad.push((*var, coeff / xv));
                    let grad = merge(with_slack(grad));
                    add(phi, &grad, &mut g, &mut h);
                    h[(*var, *var)] += coeff / (xv * xv) / phi;
                }
            }
        }
        if let Some(si) = sl {
            add(s + 1.0, &[(si, 1.0)], &mut g, &mut h);
        }
        (g, h)
    }

    fn objective_derivatives(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.reduced.n;
        let mut g = vec![0.0; n];
        let mut h = DMatrix::zeros(n, n);
        if let Some(si) = self.s {
            g[si] = -1.0;
        } else {
            self.prog.objective.add_gradient(x, &mut g);
            self.prog.objective.add_hessian(x, &mut h);
        }
        (g, h)
    }

    /// Damped Newton centering for `t·(−f0) + φ` over the affine set.
    fn center(&self, y: &mut DVector<f64>, t: f64, opts: &SolveOptions, budget: usize, stop_on_negative_slack: bool) -> Centering {
        let mut steps = 0;
        let mut x = self.reduced.expand(y);
        let Some(mut val) = self.value(&x, t) else {
            return Centering { steps, stuck: true };
        };
        loop {
            if steps >= budget {
                return Centering { steps, stuck: false };
            }
            let (gf, hf) = self.objective_derivatives(&x);
            let (mut g, mut h) = self.barrier_derivatives(&x);
            for i in 0..g.len() {
                g[i] -= t * gf[i];
            }
            h -= hf * t;
            let gy = self.reduced.grad(&g);
            let hy = self.reduced.hess(&h);
            let d = newton_direction(hy, &gy);
            let slope = gy.dot(&d);
            if !(slope < 0.0) || -slope * 0.5 <= 1e-10 {
                return Centering { steps, stuck: false };
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let cand = &*y + &d * step;
                let xc = self.reduced.expand(&cand);
                if let Some(v) = self.value(&xc, t) {
                    if v <= val + opts.armijo * step * slope {
                        accepted = Some((cand, xc, v));
                        break;
                    }
                }
                step *= opts.shrink;
            }
            steps += 1;
            let Some((cand, xc, v)) = accepted else {
                return Centering { steps, stuck: true };
            };
            *y = cand;
            x = xc;
            val = v;
            if stop_on_negative_slack && self.slack(&x) < 0.0 {
                return Centering { steps, stuck: false };
            }
        }
    }

    /// Phase-II constraint functions `φ_j(x) ≥ 0` with sparse gradients.
    fn constraint_functions(&self, x: &[f64]) -> Vec<(f64, Vec<(usize, f64)>)> {
        let p = self.prog;
        let mut out = Vec::new();
        for &i in &self.lower {
            out.push((x[i] - p.lower[i], vec![(i, 1.0)]));
        }
        for &i in &self.upper {
            out.push((p.upper[i] - x[i], vec![(i, -1.0)]));
        }
        for c in &p.constraints {
            match &c.kind {
                ConstraintKind::LinearEq(_) => {}
                ConstraintKind::LinearLe(a) => {
                    out.push((-a.eval(x), a.coeffs.iter().map(|&(i, c)| (i, -c)).collect()));
                }
                ConstraintKind::Quadratic { vars, q, lin } => {
                    let mut grad: Vec<(usize, f64)> = lin.coeffs.iter().map(|&(i, c)| (i, -c)).collect();
                    for (a, &va) in vars.iter().enumerate() {
                        let d: f64 = vars.iter().enumerate().map(|(b, &vb)| (q[(a, b)] + q[(b, a)]) * x[vb]).sum();
                        grad.push((va, -d));
                    }
                    out.push((-quad_form(vars, q, x) - lin.eval(x), merge(grad)));
                }
                ConstraintKind::Hyperbolic { r, a, b } => {
                    let (rv, av, bv) = (r.eval(x), a.eval(x), b.eval(x));
                    let mut grad: Vec<(usize, f64)> = Vec::new();
                    grad.extend(a.coeffs.iter().map(|&(i, c)| (i, bv * c)));
                    grad.extend(b.coeffs.iter().map(|&(i, c)| (i, av * c)));
                    grad.extend(r.coeffs.iter().map(|&(i, c)| (i, -2.0 * rv * c)));
                    out.push((av * bv - rv * rv, merge(grad)));
                    out.push((av, a.coeffs.clone()));
                    out.push((bv, b.coeffs.clone()));
                }
                ConstraintKind::RotatedCone { vars, q, a, b } => {
                    let (av, bv) = (a.eval(x), b.eval(x));
                    let mut grad: Vec<(usize, f64)> = Vec::new();
                    grad.extend(a.coeffs.iter().map(|&(i, c)| (i, bv * c)));
                    grad.extend(b.coeffs.iter().map(|&(i, c)| (i, av * c)));
                    for (ia, &va) in vars.iter().enumerate() {
                        let d: f64 = vars.iter().enumerate().map(|(ib, &vb)| (q[(ia, ib)] + q[(ib, ia)]) * x[vb]).sum();
                        grad.push((va, -d));
                    }
                    out.push((av * bv - quad_form(vars, q, x), merge(grad)));
                    out.push((av, a.coeffs.clone()));
                    out.push((bv, b.coeffs.clone()));
                }
                ConstraintKind::AffinePlusLog { lin, var, coeff } => {
                    let mut grad = lin.coeffs.clone();
                    grad.push((*var, coeff / x[*var]));
                    out.push((lin.eval(x) + coeff * x[*var].ln(), merge(grad)));
                }
            }
        }
        out
    }

    /// KKT residuals with multipliers of the nearly active constraints
    /// re-estimated by least squares; the remaining multipliers are zero.
    fn residuals(&self, x: &[f64], t: f64) -> Residuals {
        let (gf, _) = self.objective_derivatives(x);
        let gfy = self.reduced.grad(&gf);
        let terms = self.constraint_functions(x);
        let cutoff = t.sqrt().recip();
        let active: Vec<&(f64, Vec<(usize, f64)>)> = terms.iter().filter(|(phi, _)| *phi <= cutoff).collect();
        let inactive = (terms.len() - active.len()) as f64;
        let mut stat_vec = gfy.clone();
        let mut dual: f64 = 0.0;
        let mut comp = inactive / t;
        if !active.is_empty() {
            let mut dense = vec![0.0; self.reduced.n];
            let mut jac = DMatrix::zeros(gfy.len(), active.len());
            for (col, (_, grad)) in active.iter().enumerate() {
                dense.iter_mut().for_each(|v| *v = 0.0);
                for &(i, c) in grad {
                    dense[i] += c;
                }
                jac.set_column(col, &self.reduced.grad(&dense));
            }
            let lambda = jac
                .clone()
                .svd(true, true)
                .solve(&(-&gfy), 1e-12 * (1.0 + jac.amax()))
                .unwrap_or_else(|_| DVector::zeros(active.len()));
            stat_vec += &jac * &lambda;
            for (l, (phi, _)) in lambda.iter().zip(&active) {
                dual = dual.max(-l);
                comp += l.max(0.0) * phi.max(0.0);
            }
        }
        let stat = stat_vec.amax() / (1.0 + gfy.amax());
        let (viol, _) = self.prog.max_violation(x);
        let primal = self.reduced.primal_residual(x).max(viol.max(0.0));
        Residuals { stationarity: stat, primal, dual, complementarity: comp }
    }
}

fn merge(mut v: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    v.sort_by_key(|c| c.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(v.len());
    for (i, c) in v {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 += c,
            _ => out.push((i, c)),
        }
    }
    out
}

/// Solve `H d = −g`, regularizing if `H` is numerically singular.
fn newton_direction(h: DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = h.clone().cholesky() {
        return ch.solve(&(-g));
    }
    let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut delta = 1e-12 * scale;
    for _ in 0..10 {
        let reg = &h + DMatrix::identity(h.nrows(), h.ncols()) * delta;
        if let Some(ch) = reg.cholesky() {
            return ch.solve(&(-g));
        }
        delta *= 100.0;
    }
    h.lu().solve(&(-g)).unwrap_or_else(|| -g.clone())
}

#[cfg(test)]
mod tests {
    use super::super::{Affine, Objective};
    use super::*;

    #[test]
    fn monotone_log_objective_hits_upper_bound() {
        let mut p = ConicProgram::new(1, Objective::sum_log2_one_plus(&[0], 1.0));
        p.set_bounds(0, 0.0, 3.0);
        let sol = solve(&p, None, 1e-10).unwrap();
        assert!(sol.status.converged, "{:?}", sol);
        assert!((sol.x[0] - 3.0).abs() < 1e-8);
        assert!((sol.status.objective - 2.0).abs() < 1e-8);
    }

    #[test]
    fn hyperbolic_toy_from_infeasible_start() {
        let mut p = ConicProgram::new(3, Objective::linear(vec![(0, 1.0)]));
        p.add_le("x_cap", Affine::new(vec![(1, 1.0)], -2.0));
        p.add_le("y_cap", Affine::new(vec![(2, 1.0)], -8.0));
        p.add_hyperbolic("cone", Affine::var(0), Affine::var(1), Affine::var(2));
        let sol = solve(&p, Some(&[10.0, -5.0, 20.0]), 1e-10).unwrap();
        assert!(sol.status.converged, "{:?}", sol);
        assert!(sol.status.phase1_iterations > 0);
        assert!((sol.x[0] - 4.0).abs() < 1e-8, "{}", sol.x[0]);
    }

    #[test]
    fn equalities_with_dependent_rows() {
        // maximize x0 + x1 + x2 on the simplex, duplicated row and x2 fixed
        let mut p = ConicProgram::new(3, Objective::sum_log2_one_plus(&[0, 1, 2], 1.0));
        for i in 0..3 {
            p.set_bounds(i, 0.0, 1.0);
        }
        let sum = Affine::new(vec![(0, 1.0), (1, 1.0), (2, 1.0)], -1.0);
        p.add_eq("simplex", sum.clone());
        p.add_eq("simplex_copy", sum.scaled(2.0));
        p.set_bounds(2, 0.25, 0.25);
        let sol = solve(&p, None, 1e-9).unwrap();
        assert!(sol.status.converged);
        assert!((sol.x[0] - 0.375).abs() < 1e-7 && (sol.x[1] - 0.375).abs() < 1e-7);
        assert!(sol.status.primal < 1e-12);
    }

    #[test]
    fn inconsistent_equalities_name_their_group() {
        let mut p = ConicProgram::new(1, Objective::linear(vec![(0, 1.0)]));
        p.add_eq("first", Affine::new(vec![(0, 1.0)], -1.0));
        p.add_eq("second", Affine::new(vec![(0, 1.0)], -2.0));
        match solve(&p, None, 1e-7) {
            Err(Error::Infeasible(g)) => assert_eq!(g, "second"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_cone_fails_phase_one() {
        let mut p = ConicProgram::new(3, Objective::linear(vec![(0, 1.0)]));
        p.set_bounds(1, 0.0, 1.0);
        p.set_bounds(2, 0.0, 1.0);
        p.add_le("t_floor", Affine::new(vec![(0, -1.0)], 2.0));
        p.add_hyperbolic("cone", Affine::var(0), Affine::var(1), Affine::var(2));
        match solve(&p, None, 1e-7) {
            Err(Error::Infeasible(g)) => assert!(g == "cone" || g == "t_floor", "{g}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rotated_cone_toy() {
        // maximize x0 + x1 s.t. x0² + x1² ≤ y z, y ≤ 2, z ≤ 1
        let mut p = ConicProgram::new(4, Objective::linear(vec![(0, 1.0), (1, 1.0)]));
        p.add_le("y_cap", Affine::new(vec![(2, 1.0)], -2.0));
        p.add_le("z_cap", Affine::new(vec![(3, 1.0)], -1.0));
        p.add_rotated_cone("cone", vec![0, 1], DMatrix::identity(2, 2), Affine::var(2), Affine::var(3));
        let sol = solve(&p, Some(&[3.0, 0.0, 0.5, 0.5]), 1e-10).unwrap();
        assert!(sol.status.converged, "{:?}", sol.status);
        assert!((sol.x[0] - 1.0).abs() < 1e-7 && (sol.x[1] - 1.0).abs() < 1e-7, "{:?}", sol.x);
    }

    #[test]
    fn log_constraint_caps_a_linear_objective() {
        // maximize y s.t. y ≤ ln x, x ≤ e²
        let mut p = ConicProgram::new(2, Objective::linear(vec![(1, 1.0)]));
        p.set_bounds(0, 0.0, std::f64::consts::E.powi(2));
        p.push("log", ConstraintKind::AffinePlusLog { lin: Affine::new(vec![(1, -1.0)], 0.0), var: 0, coeff: 1.0 });
        let sol = solve(&p, Some(&[1.0, 5.0]), 1e-10).unwrap();
        assert!(sol.status.converged);
        assert!((sol.x[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn outer_objectives_do_not_decrease() {
        let mut p = ConicProgram::new(2, Objective::sum_log2_one_plus(&[0, 1], 1.0));
        p.add_quadratic("disk", vec![0, 1], DMatrix::identity(2, 2), Affine::constant(-4.0));
        p.set_bounds(0, 0.0, 10.0);
        p.set_bounds(1, 0.0, 10.0);
        let sol = solve(&p, None, 1e-9).unwrap();
        let tr = &sol.status.outer_objectives;
        assert!(tr.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{tr:?}");
        let r = 2f64.sqrt();
        assert!((sol.x[0] - r).abs() < 1e-6 && (sol.x[1] - r).abs() < 1e-6);
    }

    #[test]
    fn box_qp_matches_projected_gradient() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for n in [3, 8, 20] {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let p = a.transpose() * &a + DMatrix::identity(n, n) * 0.1;
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..4.0)).collect();
            let f = |x: &[f64]| {
                let v = nalgebra::DVector::from_column_slice(x);
                c.iter().zip(x).map(|(ci, xi)| ci * xi).sum::<f64>() - 0.5 * v.dot(&(&p * &v))
            };
            let step = 1.0 / p.symmetric_eigenvalues().max();
            let mut x = vec![0.5; n];
            for _ in 0..1_000_000 {
                let v = nalgebra::DVector::from_column_slice(&x);
                let g = &p * &v;
                let mut moved = 0.0f64;
                for i in 0..n {
                    let y = (x[i] + step * (c[i] - g[i])).clamp(0.0, 1.0);
                    moved = moved.max((y - x[i]).abs());
                    x[i] = y;
                }
                if moved < 1e-15 {
                    break;
                }
            }
            let mut prog = ConicProgram::new(n, Objective::concave_quadratic(c.iter().copied().enumerate().collect(), p.clone()));
            for i in 0..n {
                prog.set_bounds(i, 0.0, 1.0);
            }
            let sol = solve(&prog, None, 1e-8).unwrap();
            assert!(sol.status.converged, "n={n}: {:?} pg {} got {}", sol.status, f(&x), f(&sol.x));
            assert!((f(&sol.x) - f(&x)).abs() < 1e-6, "n={n}: {} vs {}", f(&sol.x), f(&x));
        }
    }
}
