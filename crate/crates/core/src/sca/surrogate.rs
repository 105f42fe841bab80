//! Fixed-depth subproblem with the epigraph variables eliminated.
//!
//! At the optimum of the conic subproblem `t_k = √L_k(w)` and
//! `ω_k = wᵀP_k w`, so its value is that of
//! `max Σ_k ln(1 + a_k √L_k(w) − c_k wᵀP_k w)` over the selection polytope,
//! a concave program in `w` alone. It is solved here by a feasible-start
//! Newton barrier method on the equality-constrained polytope.

use nalgebra::{DMatrix, DVector};

use super::{ScaProblem, ScaState};

const MU: f64 = 50.0;
const MAX_NEWTON: usize = 400;

struct Term {
    l: DVector<f64>,
    l0: f64,
    a: f64,
    c: f64,
    p: DMatrix<f64>,
}

impl Term {
    /// `(L, wᵀPw, g)`; `None` outside the domain.
    fn eval(&self, w: &DVector<f64>) -> Option<(f64, f64, f64)> {
        let l = self.l.dot(w) + self.l0;
        if !(l > 0.0) {
            return None;
        }
        let q = w.dot(&(&self.p * w));
        let g = self.a * l.sqrt() - self.c * q;
        (1.0 + g > 0.0).then_some((l, q, g))
    }
}

/// Optimum of the eliminated subproblem.
pub(crate) struct SurrogatePoint {
    pub w: Vec<f64>,
    pub rho: Vec<f64>,
    pub t: Vec<f64>,
    pub omega: Vec<f64>,
}

pub(crate) struct Surrogate {
    n: usize,
    terms: Vec<Option<Term>>,
    eq: DMatrix<f64>,
    rows: Vec<Vec<usize>>,
    nu: f64,
}

impl Surrogate {
    pub(crate) fn new(state: &ScaState, problem: &ScaProblem) -> Self {
        let (s_n, m_n) = (problem.n_beams, problem.n_rf);
        let n = s_n * m_n;
        let terms = (0..problem.n_users)
            .map(|k| {
                let (tb, ob) = (state.t_bar[k], state.omega_bar[k]);
                if !(tb > 0.0 && ob > 0.0) {
                    return None;
                }
                let pb = state.p_bar[k];
                let form = problem.signal_form(k);
                let l = DVector::from_iterator(n, form.iter().map(|z| 2.0 * (pb.conj() * z.conj()).re));
                Some(Term {
                    l,
                    l0: -pb.norm_sqr(),
                    a: 2.0 * tb / ob,
                    c: tb * tb / (ob * ob),
                    p: problem.denominator_matrix(k, state.bits),
                })
            })
            .collect();
        let square = s_n == m_n;
        let n_eq = m_n + if square { s_n - 1 } else { 0 };
        let mut eq = DMatrix::zeros(n_eq, n);
        for m in 0..m_n {
            for s in 0..s_n {
                eq[(m, m * s_n + s)] = 1.0;
            }
        }
        let mut rows = Vec::new();
        for s in 0..s_n {
            let idx: Vec<usize> = (0..m_n).map(|m| m * s_n + s).collect();
            if square {
                if s + 1 < s_n {
                    for &i in &idx {
                        eq[(m_n + s, i)] = 1.0;
                    }
                }
            } else {
                rows.push(idx);
            }
        }
        let nu = (2 * n + rows.len()) as f64;
        Self { n, terms, eq, rows, nu }
    }

    fn objective(&self, w: &DVector<f64>) -> Option<f64> {
        let mut f = 0.0;
        for term in self.terms.iter().flatten() {
            let (_, _, g) = term.eval(w)?;
            f += g.ln_1p();
        }
        Some(f)
    }

    fn row_slack(&self, w: &DVector<f64>, idx: &[usize]) -> f64 {
        1.0 - idx.iter().map(|&i| w[i]).sum::<f64>()
    }

    /// `−t F(w)` plus the log barrier of the inequalities.
    fn value(&self, w: &DVector<f64>, t: f64) -> Option<f64> {
        let mut v = 0.0;
        for &x in w.iter() {
            if !(x > 0.0 && x < 1.0) {
                return None;
            }
            v -= x.ln() + (1.0 - x).ln();
        }
        for idx in &self.rows {
            let r = self.row_slack(w, idx);
            if !(r > 0.0) {
                return None;
            }
            v -= r.ln();
        }
        let f = self.objective(w)?;
        Some(v - t * f)
    }

    fn derivatives(&self, w: &DVector<f64>, t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            let (a, b) = (1.0 / w[i], 1.0 / (1.0 - w[i]));
            g[i] = b - a;
            h[(i, i)] = a * a + b * b;
        }
        for idx in &self.rows {
            let inv = 1.0 / self.row_slack(w, idx);
            for &i in idx {
                g[i] += inv;
                for &j in idx {
                    h[(i, j)] += inv * inv;
                }
            }
        }
        for term in self.terms.iter().flatten() {
            let (l, _, gv) = term.eval(w).expect("iterate stays in the domain");
            let sq = l.sqrt();
            let e = 1.0 / (1.0 + gv);
            let pw = &term.p * w;
            let dg = &term.l * (term.a / (2.0 * sq)) - pw * (2.0 * term.c);
            g.axpy(-t * e, &dg, 1.0);
            let c = 2.0 * term.c * e * t;
            h.iter_mut().zip(term.p.iter()).for_each(|(hv, pv)| *hv += c * pv);
            h.ger(t * term.a * e / (4.0 * l * sq), &term.l, &term.l, 1.0);
            h.ger(t * e * e, &dg, &dg, 1.0);
        }
        (g, h)
    }

    /// Newton direction on the null space of the equality rows.
    fn direction(&self, g: &DVector<f64>, h: DMatrix<f64>) -> Option<DVector<f64>> {
        let ch = h.cholesky()?;
        let y = ch.solve(g);
        let x = ch.solve(&self.eq.transpose());
        let s = &self.eq * &x;
        let lam = s.cholesky()?.solve(&(&self.eq * &y));
        Some(-(y - x * lam))
    }

    /// Maximize from the strictly feasible `w0`; `None` when `w0` is outside
    /// the domain or Newton breaks down.
    pub(crate) fn solve(&self, w0: &[f64], gap_tol: f64) -> Option<SurrogatePoint> {
        let mut w = DVector::from_column_slice(w0);
        // start where the barrier gap is a tenth of the objective scale
        let f0 = self.objective(&w)?;
        let mut t = 10.0 * self.nu / (1.0 + f0.abs());
        let mut val = self.value(&w, t)?;
        let mut steps = 0;
        loop {
            loop {
                if steps >= MAX_NEWTON {
                    break;
                }
                let (g, h) = self.derivatives(&w, t);
                let d = self.direction(&g, h)?;
                let slope = g.dot(&d);
                if !(slope < 0.0) || -slope * 0.5 <= 1e-10 {
                    break;
                }
                let mut step = 1.0;
                let mut next = None;
                for _ in 0..60 {
                    let cand = &w + &d * step;
                    if let Some(v) = self.value(&cand, t) {
                        if v <= val + 1e-4 * step * slope {
                            next = Some((cand, v));
                            break;
                        }
                    }
                    step *= 0.5;
                }
                steps += 1;
                let Some((cand, v)) = next else {
                    break;
                };
                w = cand;
                val = v;
            }
            let f = self.objective(&w)?;
            if self.nu / t <= gap_tol * (1.0 + f.abs()) || steps >= MAX_NEWTON {
                break;
            }
            t *= MU;
            val = self.value(&w, t)?;
        }
        let k_n = self.terms.len();
        let (mut rho, mut tt, mut omega) = (vec![0.0; k_n], vec![0.0; k_n], vec![0.0; k_n]);
        for (k, term) in self.terms.iter().enumerate() {
            if let Some(term) = term {
                let (l, q, g) = term.eval(&w)?;
                rho[k] = g;
                tt[k] = l.sqrt();
                omega[k] = q;
            }
        }
        Some(SurrogatePoint { w: w.as_slice().to_vec(), rho, t: tt, omega })
    }
}
