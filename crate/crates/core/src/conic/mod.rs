//! Dense log-barrier interior-point solver for small structured convex
//! programs: a smooth concave objective (maximized), linear equalities and
//! inequalities, box bounds, convex quadratic inequalities and hyperbolic
//! (rotated second-order cone) constraints `r² ≤ a·b, a ≥ 0, b ≥ 0` with
//! affine `r`, `a`, `b`, plus the concave scalar form `lin + c·ln x_j ≥ 0`.
//!
//! ```
//! use risopt::conic::{Affine, ConicProgram, Objective, solve};
//!
//! // maximize t  s.t.  t² ≤ x·y, x ≤ 2, y ≤ 8
//! let mut p = ConicProgram::new(3, Objective::linear(vec![(0, 1.0)]));
//! p.set_bounds(1, 0.0, 2.0);
//! p.set_bounds(2, 0.0, 8.0);
//! p.add_hyperbolic("cone", Affine::var(0), Affine::var(1), Affine::var(2));
//! let sol = solve(&p, None, 1e-9).unwrap();
//! assert!((sol.x[0] - 4.0).abs() < 1e-6);
//! ```

mod solver;

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::{Error, Result};

pub use solver::{solve, solve_with, Solution, SolveOptions, SolveStatus};

/// Sparse affine expression `constant + Σ coeff·x_i`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Affine {
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn new(coeffs: Vec<(usize, f64)>, constant: f64) -> Self {
        Self { coeffs, constant }
    }

    pub fn constant(c: f64) -> Self {
        Self { coeffs: Vec::new(), constant: c }
    }

    pub fn var(i: usize) -> Self {
        Self { coeffs: vec![(i, 1.0)], constant: 0.0 }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.constant *= k;
        for c in &mut self.coeffs {
            c.1 *= k;
        }
        self
    }

    pub fn plus(mut self, other: &Affine) -> Self {
        self.constant += other.constant;
        self.coeffs.extend_from_slice(&other.coeffs);
        self
    }

    pub fn max_index(&self) -> Option<usize> {
        self.coeffs.iter().map(|c| c.0).max()
    }

    /// Merge repeated indices and drop exact zeros.
    pub fn compact(mut self) -> Self {
        self.coeffs.sort_by_key(|c| c.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.coeffs.len());
        for (i, c) in self.coeffs {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|c| c.1 != 0.0);
        self.coeffs = out;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintKind {
    /// `aff = 0`.
    LinearEq(Affine),
    /// `aff ≤ 0`.
    LinearLe(Affine),
    /// `zᵀ Q z + lin ≤ 0` with `z = x[vars]`, `Q` positive semidefinite.
    Quadratic { vars: Vec<usize>, q: DMatrix<f64>, lin: Affine },
    /// `r² ≤ a·b`, `a ≥ 0`, `b ≥ 0`.
    Hyperbolic { r: Affine, a: Affine, b: Affine },
    /// `zᵀ Q z ≤ a·b`, `a ≥ 0`, `b ≥ 0` with `z = x[vars]`, `Q` positive
    /// semidefinite.
    RotatedCone { vars: Vec<usize>, q: DMatrix<f64>, a: Affine, b: Affine },
    /// `lin + coeff·ln(x_var) ≥ 0` with `coeff > 0`.
    AffinePlusLog { lin: Affine, var: usize, coeff: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    /// Name reported when this constraint blocks feasibility.
    pub group: String,
    pub kind: ConstraintKind,
}

impl Constraint {
    /// Signed violation: positive when the constraint is violated.
    pub fn violation(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ConstraintKind::LinearEq(a) => a.eval(x).abs(),
            ConstraintKind::LinearLe(a) => a.eval(x),
            ConstraintKind::Quadratic { vars, q, lin } => quad_form(vars, q, x) + lin.eval(x),
            ConstraintKind::Hyperbolic { r, a, b } => {
                let (r, a, b) = (r.eval(x), a.eval(x), b.eval(x));
                (r * r - a * b).max(-a).max(-b)
            }
            ConstraintKind::RotatedCone { vars, q, a, b } => {
                let (a, b) = (a.eval(x), b.eval(x));
                (quad_form(vars, q, x) - a * b).max(-a).max(-b)
            }
            ConstraintKind::AffinePlusLog { lin, var, coeff } => {
                if x[*var] > 0.0 {
                    -(lin.eval(x) + coeff * x[*var].ln())
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

pub(crate) fn quad_form(vars: &[usize], q: &DMatrix<f64>, x: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, &vi) in vars.iter().enumerate() {
        let mut row = 0.0;
        for (j, &vj) in vars.iter().enumerate() {
            row += q[(i, j)] * x[vj];
        }
        s += x[vi] * row;
    }
    s
}

/// `{r² ≤ a·b, a ≥ 0, b ≥ 0}`: exactly positive semidefiniteness of
/// `[[a, r], [r, b]]`.
pub fn schur_2x2_to_hyperbolic(a: Affine, b: Affine, r: Affine) -> ConstraintKind {
    ConstraintKind::Hyperbolic { r, a, b }
}

/// Verdict of a hyperbolic constraint at numeric `(r, a, b)`.
pub fn hyperbolic_holds(r: f64, a: f64, b: f64) -> bool {
    a >= 0.0 && b >= 0.0 && a * b - r * r >= 0.0
}

/// A concave term contributed to the objective by the caller.
pub trait ConcaveTerm: Send + Sync {
    /// `f64::NEG_INFINITY` (or NaN) outside the domain.
    fn value(&self, x: &[f64]) -> f64;
    /// Adds the gradient into `g`.
    fn add_gradient(&self, x: &[f64], g: &mut [f64]);
    /// Adds the Hessian into `h`.
    fn add_hessian(&self, x: &[f64], h: &mut DMatrix<f64>);
    fn describe(&self) -> String {
        "custom".into()
    }
}

/// Concave objective to maximize:
/// `Σ c_i x_i + Σ w_i log2(1 + x_i) − Σ zᵀ P z + custom terms`.
#[derive(Default)]
pub struct Objective {
    pub linear: Vec<(usize, f64)>,
    pub log2_terms: Vec<(usize, f64)>,
    /// `(vars, P)` with `P` positive semidefinite; contributes `−zᵀ P z`.
    pub quadratic: Vec<(Vec<usize>, DMatrix<f64>)>,
    pub custom: Vec<Box<dyn ConcaveTerm>>,
}

impl std::fmt::Debug for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Objective")
            .field("linear", &self.linear)
            .field("log2_terms", &self.log2_terms)
            .field("quadratic", &self.quadratic.len())
            .field("custom", &self.custom.len())
            .finish()
    }
}

impl Objective {
    pub fn linear(c: Vec<(usize, f64)>) -> Self {
        Self { linear: c, ..Default::default() }
    }

    /// `weight · Σ_{i ∈ indices} log2(1 + x_i)`.
    pub fn sum_log2_one_plus(indices: &[usize], weight: f64) -> Self {
        Self { log2_terms: indices.iter().map(|&i| (i, weight)).collect(), ..Default::default() }
    }

    /// `cᵀx − ½ xᵀ P x` over all `n` variables.
    pub fn concave_quadratic(c: Vec<(usize, f64)>, p: DMatrix<f64>) -> Self {
        let vars = (0..p.nrows()).collect();
        Self { linear: c, quadratic: vec![(vars, p * 0.5)], ..Default::default() }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut v: f64 = self.linear.iter().map(|&(i, c)| c * x[i]).sum();
        for &(i, w) in &self.log2_terms {
            if !(x[i] > -1.0) {
                return f64::NEG_INFINITY;
            }
            v += w * (1.0 + x[i]).log2();
        }
        for (vars, p) in &self.quadratic {
            v -= quad_form(vars, p, x);
        }
        for t in &self.custom {
            v += t.value(x);
        }
        v
    }

    pub(crate) fn add_gradient(&self, x: &[f64], g: &mut [f64]) {
        for &(i, c) in &self.linear {
            g[i] += c;
        }
        for &(i, w) in &self.log2_terms {
            g[i] += w / ((1.0 + x[i]) * std::f64::consts::LN_2);
        }
        for (vars, p) in &self.quadratic {
            for (a, &va) in vars.iter().enumerate() {
                let mut s = 0.0;
                for (b, &vb) in vars.iter().enumerate() {
                    s += (p[(a, b)] + p[(b, a)]) * x[vb];
                }
                g[va] -= s;
            }
        }
        for t in &self.custom {
            t.add_gradient(x, g);
        }
    }

    pub(crate) fn add_hessian(&self, x: &[f64], h: &mut DMatrix<f64>) {
        for &(i, w) in &self.log2_terms {
            let d = 1.0 + x[i];
            h[(i, i)] -= w / (d * d * std::f64::consts::LN_2);
        }
        for (vars, p) in &self.quadratic {
            for (a, &va) in vars.iter().enumerate() {
                for (b, &vb) in vars.iter().enumerate() {
                    h[(va, vb)] -= p[(a, b)] + p[(b, a)];
                }
            }
        }
        for t in &self.custom {
            t.add_hessian(x, h);
        }
    }

    fn max_index(&self) -> Option<usize> {
        let a = self.linear.iter().chain(&self.log2_terms).map(|c| c.0).max();
        let b = self.quadratic.iter().flat_map(|(v, _)| v.iter().copied()).max();
        a.max(b)
    }
}

/// A maximization problem over `n` real variables.
#[derive(Debug)]
pub struct ConicProgram {
    pub n: usize,
    pub names: Vec<String>,
    pub objective: Objective,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConicProgram {
    pub fn new(n: usize, objective: Objective) -> Self {
        Self {
            n,
            names: (0..n).map(|i| format!("x{i}")).collect(),
            objective,
            constraints: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn set_name(&mut self, i: usize, name: impl Into<String>) {
        self.names[i] = name.into();
    }

    pub fn set_bounds(&mut self, i: usize, lo: f64, hi: f64) {
        self.lower[i] = lo;
        self.upper[i] = hi;
    }

    pub fn add_eq(&mut self, group: &str, aff: Affine) {
        self.push(group, ConstraintKind::LinearEq(aff.compact()));
    }

    pub fn add_le(&mut self, group: &str, aff: Affine) {
        self.push(group, ConstraintKind::LinearLe(aff.compact()));
    }

    pub fn add_quadratic(&mut self, group: &str, vars: Vec<usize>, q: DMatrix<f64>, lin: Affine) {
        self.push(group, ConstraintKind::Quadratic { vars, q, lin: lin.compact() });
    }

    pub fn add_hyperbolic(&mut self, group: &str, r: Affine, a: Affine, b: Affine) {
        self.push(group, schur_2x2_to_hyperbolic(a.compact(), b.compact(), r.compact()));
    }

    pub fn add_rotated_cone(&mut self, group: &str, vars: Vec<usize>, q: DMatrix<f64>, a: Affine, b: Affine) {
        self.push(group, ConstraintKind::RotatedCone { vars, q, a: a.compact(), b: b.compact() });
    }

    pub fn push(&mut self, group: &str, kind: ConstraintKind) {
        self.constraints.push(Constraint { group: group.to_string(), kind });
    }

    /// Dimension and convexity checks.
    pub fn validate(&self) -> Result<()> {
        let bad = |i: Option<usize>| i.is_some_and(|i| i >= self.n);
        if self.lower.len() != self.n || self.upper.len() != self.n {
            return Err(Error::InvalidProgram("bound vectors have the wrong length".into()));
        }
        for i in 0..self.n {
            if self.lower[i] > self.upper[i] || self.lower[i].is_nan() || self.upper[i].is_nan() {
                return Err(Error::InvalidProgram(format!("empty bounds on {}", self.names[i])));
            }
        }
        if bad(self.objective.max_index()) {
            return Err(Error::InvalidProgram("objective indexes past the variable count".into()));
        }
        for (vars, p) in &self.objective.quadratic {
            check_psd(vars, p, "objective")?;
        }
        for c in &self.constraints {
            let ok = match &c.kind {
                ConstraintKind::LinearEq(a) | ConstraintKind::LinearLe(a) => !bad(a.max_index()),
                ConstraintKind::Quadratic { vars, q, lin } => {
                    check_psd(vars, q, &c.group)?;
                    !bad(vars.iter().copied().max()) && !bad(lin.max_index())
                }
                ConstraintKind::Hyperbolic { r, a, b } => {
                    !bad(r.max_index()) && !bad(a.max_index()) && !bad(b.max_index())
                }
                ConstraintKind::RotatedCone { vars, q, a, b } => {
                    check_psd(vars, q, &c.group)?;
                    !bad(vars.iter().copied().max()) && !bad(a.max_index()) && !bad(b.max_index())
                }
                ConstraintKind::AffinePlusLog { lin, var, coeff } => {
                    if !(*coeff > 0.0) {
                        return Err(Error::InvalidProgram(format!("`{}`: log coefficient must be positive", c.group)));
                    }
                    !bad(lin.max_index()) && *var < self.n
                }
            };
            if !ok {
                return Err(Error::InvalidProgram(format!("constraint `{}` indexes past {}", c.group, self.n)));
            }
        }
        Ok(())
    }

    /// Largest violation over all constraints and bounds, with its group.
    pub fn max_violation(&self, x: &[f64]) -> (f64, String) {
        let mut worst = (f64::NEG_INFINITY, String::new());
        for c in &self.constraints {
            let v = c.violation(x);
            if v > worst.0 {
                worst = (v, c.group.clone());
            }
        }
        for i in 0..self.n {
            let v = (self.lower[i] - x[i]).max(x[i] - self.upper[i]);
            if v > worst.0 {
                worst = (v, format!("bounds:{}", self.names[i]));
            }
        }
        worst
    }

    /// Plain-text listing of every constraint, for cross-checking against
    /// an external solver.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "risopt-conic 1");
        let _ = writeln!(s, "sense maximize");
        let _ = writeln!(s, "variables {}", self.n);
        for (i, name) in self.names.iter().enumerate() {
            let _ = writeln!(s, "var {i} {name} {:.17e} {:.17e}", self.lower[i], self.upper[i]);
        }
        for &(i, c) in &self.objective.linear {
            let _ = writeln!(s, "objective linear {i} {c:.17e}");
        }
        for &(i, w) in &self.objective.log2_terms {
            let _ = writeln!(s, "objective log2_one_plus {i} {w:.17e}");
        }
        for (vars, p) in &self.objective.quadratic {
            let _ = writeln!(s, "objective neg_quadratic {}", fmt_matrix(vars, p));
        }
        for t in &self.objective.custom {
            let _ = writeln!(s, "objective custom {}", t.describe());
        }
        let _ = writeln!(s, "constraints {}", self.constraints.len());
        for c in &self.constraints {
            match &c.kind {
                ConstraintKind::LinearEq(a) => {
                    let _ = writeln!(s, "{} eq {}", c.group, fmt_affine(a));
                }
                ConstraintKind::LinearLe(a) => {
                    let _ = writeln!(s, "{} le {}", c.group, fmt_affine(a));
                }
                ConstraintKind::Quadratic { vars, q, lin } => {
                    let _ = writeln!(s, "{} quad {} lin {}", c.group, fmt_matrix(vars, q), fmt_affine(lin));
                }
                ConstraintKind::RotatedCone { vars, q, a, b } => {
                    let _ = writeln!(
                        s,
                        "{} rotated_cone {} a {} b {}",
                        c.group,
                        fmt_matrix(vars, q),
                        fmt_affine(a),
                        fmt_affine(b)
                    );
                }
                ConstraintKind::AffinePlusLog { lin, var, coeff } => {
                    let _ = writeln!(s, "{} affine_plus_log lin {} var {var} coeff {coeff:.17e}", c.group, fmt_affine(lin));
                }
                ConstraintKind::Hyperbolic { r, a, b } => {
                    let _ = writeln!(
                        s,
                        "{} hyperbolic r {} a {} b {}",
                        c.group,
                        fmt_affine(r),
                        fmt_affine(a),
                        fmt_affine(b)
                    );
                }
            }
        }
        s.push_str("end\n");
        s
    }
}

fn fmt_affine(a: &Affine) -> String {
    let mut s = format!("[{:.17e}", a.constant);
    for &(i, c) in &a.coeffs {
        let _ = write!(s, " {i}:{c:.17e}");
    }
    s.push(']');
    s
}

fn fmt_matrix(vars: &[usize], q: &DMatrix<f64>) -> String {
    let mut s = String::from("vars [");
    s.push_str(&vars.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "));
    s.push_str("] rows [");
    let rows: Vec<String> = (0..q.nrows())
        .map(|i| (0..q.ncols()).map(|j| format!("{:.17e}", q[(i, j)])).collect::<Vec<_>>().join(" "))
        .collect();
    s.push_str(&rows.join("; "));
    s.push(']');
    s
}

fn check_psd(vars: &[usize], q: &DMatrix<f64>, group: &str) -> Result<()> {
    if q.nrows() != vars.len() || q.ncols() != vars.len() {
        return Err(Error::InvalidProgram(format!("`{group}`: matrix size differs from variable list")));
    }
    let scale = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sym = (q + q.transpose()) * 0.5;
    let shifted = sym + DMatrix::identity(vars.len(), vars.len()) * (1e-10 * (1.0 + scale));
    if shifted.cholesky().is_none() {
        return Err(Error::InvalidProgram(format!("`{group}`: quadratic form is not positive semidefinite")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schur_boundary_cases() {
        assert!(hyperbolic_holds(1.0, 1.0, 1.0));
        assert!(!hyperbolic_holds(1.01, 1.0, 1.0));
        assert!(!hyperbolic_holds(0.0, -1.0, -1.0));
    }

    #[test]
    fn schur_matches_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let (a, b, r): (f64, f64, f64) =
                (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let m = nalgebra::Matrix2::new(a, r, r, b);
            let min_eig = m.symmetric_eigenvalues().min();
            assert_eq!(hyperbolic_holds(r, a, b), min_eig >= 0.0);
        }
    }

    #[test]
    fn affine_compacts_duplicates() {
        let a = Affine::new(vec![(2, 1.0), (0, 3.0), (2, -1.0), (0, 1.0)], 0.5).compact();
        assert_eq!(a.coeffs, vec![(0, 4.0)]);
        assert_eq!(a.eval(&[1.0, 9.0, 9.0]), 4.5);
    }

    #[test]
    fn rejects_indefinite_quadratic() {
        let mut p = ConicProgram::new(2, Objective::linear(vec![(0, 1.0)]));
        p.add_quadratic("q", vec![0, 1], DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]), Affine::constant(-1.0));
        assert!(matches!(p.validate(), Err(Error::InvalidProgram(_))));
    }

    #[test]
    fn text_dump_lists_every_constraint() {
        let mut p = ConicProgram::new(3, Objective::sum_log2_one_plus(&[0], 1.0));
        p.add_eq("sum", Affine::new(vec![(1, 1.0), (2, 1.0)], -1.0));
        p.add_hyperbolic("cone", Affine::var(0), Affine::var(1), Affine::var(2));
        let t = p.to_text();
        assert!(t.starts_with("risopt-conic 1"));
        assert!(t.contains("sum eq"));
        assert!(t.contains("cone hyperbolic"));
        assert!(t.trim_end().ends_with("end"));
    }
}
