//! Joint bit-depth and beam-selection optimization for fixed decoders and
//! RIS phases.
//!
//! The selection `W` (`S × M`) is relaxed to the transportation polytope and
//! improved by successive convex approximation: every iteration solves a
//! conic program whose optimal value lower-bounds the true sum rate and is
//! tight at the current point. `W` is vectorized column-major,
//! `w[m·S + s] = W[s, m]`.
//!
//! Bits enter the rate only through the distortion ratio `κ(b) = q/g²`, so
//! the best integer depth for any fixed `W` is `argmin κ`. That is the
//! default [`BitSearch::Dominant`]; [`BitSearch::Sweep`] repeats the loop for
//! every depth and [`BitSearch::Coupled`] optimizes a continuous `b` inside
//! the subproblem.

use nalgebra::DMatrix;

use crate::assignment::max_weight_assignment;
use crate::channel::ChannelRealization;
use crate::conic::{solve_with, Affine, ConicProgram, Objective, SolveOptions};
use crate::quantizer::{
    alpha_of_bits, effective_sum_rate, AqnmMode, CombinerState, DecoderBank, PhaseVector, AQNM_SCALE,
};
use crate::{CMat, CVec, Error, Result, C64};

mod surrogate;
use surrogate::Surrogate;

/// Linear forms `A_{k,l}` with `⟨w, A_{k,l}⟩ = g u_kᴴ Fᴴ c_l` where
/// `⟨w, A⟩ = Σ_i conj(A_i) w_i` and `g` is the signal gain.
#[derive(Clone, Debug, PartialEq)]
pub struct RateLinearForms {
    pub n_beams: usize,
    pub n_rf: usize,
    /// `a[k][l]`, each of length `S·M`.
    pub a: Vec<Vec<CVec>>,
    pub gain: f64,
    /// `Dᴴ c_l` as columns (`S × K`).
    pub beam_channels: CMat,
    /// `Dᴴ D`.
    pub gram: CMat,
    pub decoders: Vec<CVec>,
}

impl RateLinearForms {
    pub fn n_users(&self) -> usize {
        self.a.len()
    }

    pub fn eval(&self, k: usize, l: usize, w: &[f64]) -> C64 {
        inner(&self.a[k][l], w)
    }

    /// Desired-signal form `A_k = A_{k,k}`.
    pub fn signal(&self, k: usize) -> &CVec {
        &self.a[k][k]
    }
}

fn inner(a: &CVec, w: &[f64]) -> C64 {
    a.iter().zip(w).map(|(ai, &wi)| ai.conj() * wi).sum()
}

/// Column-major vectorization of a selection matrix.
pub fn vectorize(w: &DMatrix<f64>) -> Vec<f64> {
    w.as_slice().to_vec()
}

pub fn unvectorize(v: &[f64], n_beams: usize, n_rf: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n_beams, n_rf, v)
}

/// Forms on an effective channel `heff` (`n_ap × K`). Only the codebook
/// and bit depth of `comb` are used.
pub fn build_linear_forms_effective(
    heff: &CMat,
    comb: &CombinerState,
    decoders: &DecoderBank,
    mode: AqnmMode,
) -> Result<RateLinearForms> {
    let k_users = heff.ncols();
    let (s_n, m_n) = (comb.n_beams(), comb.n_rf());
    if decoders.u.len() != k_users {
        return Err(Error::Dimension(format!("{} decoders for {k_users} users", decoders.u.len())));
    }
    if heff.nrows() != comb.codebook.nrows() {
        return Err(Error::Dimension(format!(
            "channel has {} rows, codebook {}",
            heff.nrows(),
            comb.codebook.nrows()
        )));
    }
    if let Some(k) = decoders.u.iter().position(|u| u.len() != m_n) {
        return Err(Error::Dimension(format!("decoder {k} has length {}", decoders.u[k].len())));
    }
    let gain = mode.signal_gain(comb.bits);
    let d = comb.codebook.adjoint() * heff;
    let a = (0..k_users)
        .map(|k| {
            let u = &decoders.u[k];
            (0..k_users)
                .map(|l| CVec::from_fn(s_n * m_n, |i, _| u[i / s_n] * d[(i % s_n, l)].conj() * gain))
                .collect()
        })
        .collect();
    Ok(RateLinearForms {
        n_beams: s_n,
        n_rf: m_n,
        a,
        gain,
        beam_channels: d,
        gram: comb.codebook.adjoint() * &comb.codebook,
        decoders: decoders.u.clone(),
    })
}

pub fn build_linear_forms(
    chan: &ChannelRealization,
    comb: &CombinerState,
    theta: &PhaseVector,
    decoders: &DecoderBank,
    mode: AqnmMode,
) -> Result<RateLinearForms> {
    build_linear_forms_effective(&chan.cascaded(theta.as_slice()), comb, decoders, mode)
}

/// The rate model in the relaxed selection, normalized by `σ² g²`:
/// `SINR_k(w, b) = |⟨w, A'_k⟩|² / wᵀ(B_k + κ(b) Q_k)w`, where `B_k` collects
/// interference and noise and `Q_k` the quantizer distortion.
#[derive(Clone, Debug)]
pub struct ScaProblem {
    pub n_beams: usize,
    pub n_rf: usize,
    pub n_users: usize,
    pub mode: AqnmMode,
    pub b_min: u32,
    pub b_max: u32,
    signal: Vec<CVec>,
    base: Vec<DMatrix<f64>>,
    quant: Vec<DMatrix<f64>>,
}

impl ScaProblem {
    pub fn new(forms: &RateLinearForms, noise_power: f64, mode: AqnmMode, b_min: u32, b_max: u32) -> Result<Self> {
        if !(forms.gain > 0.0) {
            return Err(Error::Domain(format!("signal gain {} is not positive", forms.gain)));
        }
        if !(noise_power > 0.0) {
            return Err(Error::Domain("noise power must be positive".into()));
        }
        if b_min > b_max {
            return Err(Error::Domain(format!("bit range [{b_min}, {b_max}] is empty")));
        }
        let (s_n, m_n, k_n) = (forms.n_beams, forms.n_rf, forms.n_users());
        let n = s_n * m_n;
        let scale = 1.0 / (forms.gain * noise_power.sqrt());
        let d = forms.beam_channels.map(|z| z / noise_power.sqrt());
        let mut beam_power = DMatrix::from_fn(s_n, s_n, |s, t| forms.gram[(s, t)].re);
        for l in 0..k_n {
            for s in 0..s_n {
                for t in 0..s_n {
                    beam_power[(s, t)] += (d[(s, l)] * d[(t, l)].conj()).re;
                }
            }
        }
        let mut signal = Vec::with_capacity(k_n);
        let mut base = Vec::with_capacity(k_n);
        let mut quant = Vec::with_capacity(k_n);
        for k in 0..k_n {
            // the rate is invariant to the scale of u_k
            let un = forms.decoders[k].norm();
            if !(un > 0.0) {
                return Err(Error::Domain(format!("decoder {k} is zero")));
            }
            let u = forms.decoders[k].map(|z| z / un);
            let scale = scale / un;
            signal.push(forms.a[k][k].map(|z| z * scale));
            let mut b = DMatrix::from_fn(n, n, |i, j| {
                let (mi, si, mj, sj) = (i / s_n, i % s_n, j / s_n, j % s_n);
                (u[mi].conj() * u[mj] * forms.gram[(si, sj)]).re
            });
            for l in (0..k_n).filter(|&l| l != k) {
                let a = forms.a[k][l].map(|z| z * scale);
                for i in 0..n {
                    for j in 0..n {
                        b[(i, j)] += (a[i].conj() * a[j]).re;
                    }
                }
            }
            let mut q = DMatrix::zeros(n, n);
            for m in 0..m_n {
                let w = u[m].norm_sqr();
                for s in 0..s_n {
                    for t in 0..s_n {
                        q[(m * s_n + s, m * s_n + t)] = w * beam_power[(s, t)];
                    }
                }
            }
            base.push(b);
            quant.push(q);
        }
        Ok(Self { n_beams: s_n, n_rf: m_n, n_users: k_n, mode, b_min, b_max, signal, base, quant })
    }

    /// Problem on an effective channel for the codebook of `comb`.
    pub fn from_effective(
        heff: &CMat,
        comb: &CombinerState,
        decoders: &DecoderBank,
        noise_power: f64,
        mode: AqnmMode,
        b_min: u32,
        b_max: u32,
    ) -> Result<Self> {
        let forms = build_linear_forms_effective(heff, comb, decoders, mode)?;
        Self::new(&forms, noise_power, mode, b_min, b_max)
    }

    pub fn dim(&self) -> usize {
        self.n_beams * self.n_rf
    }

    pub fn kappa(&self, bits: f64) -> f64 {
        self.mode.distortion_ratio(bits)
    }

    /// Integer depth in range with the smallest distortion ratio.
    pub fn dominant_bits(&self) -> u32 {
        let mut best = self.b_min;
        for b in self.b_min..=self.b_max {
            if self.kappa(b as f64) < self.kappa(best as f64) {
                best = b;
            }
        }
        best
    }

    pub fn signal(&self, k: usize, w: &[f64]) -> C64 {
        inner(&self.signal[k], w)
    }

    pub fn signal_form(&self, k: usize) -> &CVec {
        &self.signal[k]
    }

    pub fn base_matrix(&self, k: usize) -> &DMatrix<f64> {
        &self.base[k]
    }

    pub fn quant_matrix(&self, k: usize) -> &DMatrix<f64> {
        &self.quant[k]
    }

    pub fn denominator_matrix(&self, k: usize, bits: f64) -> DMatrix<f64> {
        &self.base[k] + &self.quant[k] * self.kappa(bits)
    }

    pub fn denominator(&self, k: usize, w: &[f64], bits: f64) -> f64 {
        quad(&self.base[k], w) + self.kappa(bits) * quad(&self.quant[k], w)
    }

    pub fn sinr(&self, k: usize, w: &[f64], bits: f64) -> f64 {
        self.signal(k, w).norm_sqr() / self.denominator(k, w, bits)
    }

    /// Exact sum rate at a relaxed selection; equals
    /// [`effective_sum_rate`] for the same `W` and `b`.
    pub fn sum_rate(&self, w: &[f64], bits: f64) -> f64 {
        (0..self.n_users).map(|k| (1.0 + self.sinr(k, w, bits)).log2()).sum()
    }
}

fn quad(p: &DMatrix<f64>, w: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..w.len() {
        if w[j] == 0.0 {
            continue;
        }
        let col = p.column(j);
        let mut c = 0.0;
        for i in 0..w.len() {
            c += col[i] * w[i];
        }
        s += c * w[j];
    }
    s
}

pub const ETA_MIN: f64 = 1e-6;
pub const ETA_MAX: f64 = 1e6;

/// AGM tightening point `η = √((1 − ŵ)/w)`, clamped to `[ETA_MIN, ETA_MAX]`.
pub fn agm_point(w_hat_prev: f64, w_prev: f64) -> f64 {
    if !(w_prev > 0.0) {
        return ETA_MAX;
    }
    ((1.0 - w_hat_prev).max(0.0) / w_prev).sqrt().clamp(ETA_MIN, ETA_MAX)
}

/// `½((wη)² + ((1 − ŵ)/η)²)`, an upper bound on `w(1 − ŵ)`.
pub fn agm_bound(w: f64, w_hat: f64, eta: f64) -> f64 {
    0.5 * ((w * eta).powi(2) + ((1.0 - w_hat) / eta).powi(2))
}

/// Relaxed-binary constraints carried as explicit variables: the copy
/// `ŵ = w`, the cone `r² ≤ w(1 − ŵ)` and the linearized AGM bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gadget {
    /// Linearize `r²` as `r̄ r − r̄²` instead of `2 r̄ r − r̄²`.
    pub literal: bool,
    /// Slack added to the AGM bound; without it the bound and the cone
    /// leave no strict interior.
    pub eps: f64,
}

impl Default for Gadget {
    fn default() -> Self {
        Self { literal: false, eps: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BitSearch {
    #[default]
    Dominant,
    Sweep,
    Coupled,
}

impl BitSearch {
    pub fn name(self) -> &'static str {
        match self {
            BitSearch::Dominant => "dominant",
            BitSearch::Sweep => "sweep",
            BitSearch::Coupled => "coupled",
        }
    }
}

impl std::str::FromStr for BitSearch {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "dominant" => Ok(BitSearch::Dominant),
            "sweep" => Ok(BitSearch::Sweep),
            "coupled" => Ok(BitSearch::Coupled),
            other => Err(format!("unknown bit search `{other}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScaOptions {
    /// Stop once successive objectives differ by less than this.
    pub tol: f64,
    pub max_iter: usize,
    pub bit_search: BitSearch,
    pub gadget: Option<Gadget>,
    /// Slack on the linearized side of the `ζ`–`b` coupling.
    pub eps_b: f64,
    pub solver: SolveOptions,
    /// Keep the text of the first subproblem in the result.
    pub capture_subproblem: bool,
    /// Solve fixed-depth subproblems without the epigraph variables; the
    /// full conic program is used when this is off or the reduced solve
    /// cannot start.
    pub eliminate: bool,
    /// Search past the subproblem optimum along the ray from the current
    /// point (reduced path only).
    pub extrapolate: bool,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 50,
            bit_search: BitSearch::Dominant,
            gadget: None,
            eps_b: 0.05,
            solver: SolveOptions { tol: 1e-7, ..Default::default() },
            capture_subproblem: false,
            eliminate: true,
            extrapolate: true,
        }
    }
}

/// Iterate and linearization points of the loop.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaState {
    pub n: usize,
    pub bits: f64,
    pub w: DMatrix<f64>,
    pub w_hat: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub rho: Vec<f64>,
    pub zeta: f64,
    pub t: Vec<f64>,
    pub omega: Vec<f64>,
    pub eta: DMatrix<f64>,
    pub r_bar: DMatrix<f64>,
    pub zeta_bar: f64,
    pub omega_bar: Vec<f64>,
    pub t_bar: Vec<f64>,
    /// `⟨w̄, A'_k⟩`, the phase reference of the signal tangent.
    pub p_bar: Vec<C64>,
    pub trace: Vec<f64>,
}

impl ScaState {
    /// State whose auxiliary variables and linearization points are all
    /// exact at `(w, bits)`.
    pub fn at(problem: &ScaProblem, w: &DMatrix<f64>, bits: f64) -> Result<Self> {
        if w.shape() != (problem.n_beams, problem.n_rf) {
            return Err(Error::Dimension(format!("selection is {:?}", w.shape())));
        }
        let v = vectorize(w);
        let p_bar: Vec<C64> = (0..problem.n_users).map(|k| problem.signal(k, &v)).collect();
        let t: Vec<f64> = p_bar.iter().map(|p| p.norm()).collect();
        let omega: Vec<f64> = (0..problem.n_users).map(|k| problem.denominator(k, &v, bits)).collect();
        let rho = t.iter().zip(&omega).map(|(t, o)| t * t / o).collect();
        let r = w.map(|x| (x * (1.0 - x)).max(0.0).sqrt());
        let eta = w.map(|x| agm_point(x, x));
        let zeta = alpha_of_bits(bits);
        Ok(Self {
            n: 0,
            bits,
            w: w.clone(),
            w_hat: w.clone(),
            r: r.clone(),
            rho,
            zeta,
            t: t.clone(),
            omega: omega.clone(),
            eta,
            r_bar: r,
            zeta_bar: zeta,
            omega_bar: omega,
            t_bar: t,
            p_bar,
            trace: vec![problem.sum_rate(&v, bits)],
        })
    }

    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace starts with the initial objective")
    }
}

/// Variable offsets inside a subproblem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarLayout {
    pub b: usize,
    pub w: usize,
    pub w_hat: Option<usize>,
    pub r: Option<usize>,
    pub rho: usize,
    pub zeta: usize,
    pub t: usize,
    pub omega: usize,
    /// Distortion epigraph variables in the coupled formulation.
    pub y: Option<usize>,
    pub n: usize,
}

impl VarLayout {
    pub fn new(sm: usize, k: usize, gadget: bool, coupled: bool) -> Self {
        let w = 1;
        let mut next = w + sm;
        let (w_hat, r) = if gadget {
            next += 2 * sm;
            (Some(w + sm), Some(w + 2 * sm))
        } else {
            (None, None)
        };
        let rho = next;
        let zeta = rho + k;
        let t = zeta + 1;
        let omega = t + k;
        next = omega + k;
        let y = coupled.then_some(next);
        if coupled {
            next += k;
        }
        Self { b: 0, w, w_hat, r, rho, zeta, t, omega, y, n: next }
    }
}

/// `1/κ(b)` and its derivative.
fn inverse_kappa(mode: AqnmMode, b: f64) -> (f64, f64) {
    let ln4 = 4f64.ln();
    match mode {
        AqnmMode::PaperFaithful => {
            let c = AQNM_SCALE * 4f64.powf(-b) / b;
            (c, -c * (ln4 + 1.0 / b))
        }
        AqnmMode::Standard => {
            let p = 4f64.powf(b) / AQNM_SCALE;
            (p - 1.0, ln4 * p)
        }
    }
}

/// Tangent of `1/κ` at `b̄`: a lower bound because `1/κ` is convex, so
/// `wᵀQw / ℓ(b)` over-estimates the distortion term.
fn inverse_kappa_tangent(mode: AqnmMode, b_bar: f64, b_var: usize) -> Affine {
    let (c, dc) = inverse_kappa(mode, b_bar);
    Affine::new(vec![(b_var, dc)], c - dc * b_bar)
}

/// Convex subproblem at the linearization points of `state`.
pub fn assemble_subproblem(
    state: &ScaState,
    problem: &ScaProblem,
    opts: &ScaOptions,
) -> (ConicProgram, VarLayout) {
    let (s_n, m_n, k_n) = (problem.n_beams, problem.n_rf, problem.n_users);
    let sm = s_n * m_n;
    let coupled = opts.bit_search == BitSearch::Coupled;
    let single = s_n == 1;
    let gadget = opts.gadget.filter(|_| !single);
    let lay = VarLayout::new(sm, k_n, gadget.is_some(), coupled);
    let weight = 1.0 / state.objective().max(1.0);
    let rho_idx: Vec<usize> = (0..k_n).map(|k| lay.rho + k).collect();
    let mut prog = ConicProgram::new(lay.n, Objective::sum_log2_one_plus(&rho_idx, weight));

    prog.set_name(lay.b, "b");
    prog.set_name(lay.zeta, "zeta");
    let (b_lo, b_hi) = (problem.b_min as f64, problem.b_max as f64);
    if coupled {
        prog.set_bounds(lay.b, b_lo, b_hi);
        prog.set_bounds(lay.zeta, alpha_of_bits(b_hi), alpha_of_bits(b_lo));
        let ln4 = 4f64.ln();
        let log4c = AQNM_SCALE.ln() / ln4;
        // ζ ≥ C 4^{-b}
        prog.push(
            "bit_coupling_exact",
            crate::conic::ConstraintKind::AffinePlusLog {
                lin: Affine::new(vec![(lay.b, 1.0)], -log4c),
                var: lay.zeta,
                coeff: 1.0 / ln4,
            },
        );
        // b ≤ log4(C/ζ) linearized at ζ̄
        let zb = state.zeta_bar;
        let c0 = log4c - zb.ln() / ln4 + 1.0 / ln4 + opts.eps_b;
        prog.add_le(
            "bit_coupling_linearized",
            Affine::new(vec![(lay.b, 1.0), (lay.zeta, 1.0 / (zb * ln4))], -c0),
        );
    } else {
        prog.set_bounds(lay.b, state.bits, state.bits);
        let z = alpha_of_bits(state.bits);
        prog.set_bounds(lay.zeta, z, z);
    }

    for m in 0..m_n {
        for s in 0..s_n {
            let i = lay.w + m * s_n + s;
            prog.set_name(i, format!("w[{s},{m}]"));
            if single {
                prog.set_bounds(i, 1.0, 1.0);
            } else {
                prog.set_bounds(i, 0.0, 1.0);
            }
        }
    }
    if !single {
        for m in 0..m_n {
            let coeffs = (0..s_n).map(|s| (lay.w + m * s_n + s, 1.0)).collect();
            prog.add_eq("column_sum", Affine::new(coeffs, -1.0));
        }
        for s in 0..s_n {
            let coeffs = (0..m_n).map(|m| (lay.w + m * s_n + s, 1.0)).collect();
            if s_n == m_n {
                prog.add_eq("row_sum", Affine::new(coeffs, -1.0));
            } else {
                prog.add_le("row_sum", Affine::new(coeffs, -1.0));
            }
        }
    }

    if let (Some(wh), Some(r)) = (lay.w_hat, lay.r) {
        let g = gadget.expect("layout has gadget variables");
        for m in 0..m_n {
            for s in 0..s_n {
                let j = m * s_n + s;
                let (wi, whi, ri) = (lay.w + j, wh + j, r + j);
                prog.set_name(whi, format!("w_hat[{s},{m}]"));
                prog.set_name(ri, format!("r[{s},{m}]"));
                prog.set_bounds(whi, 0.0, 1.0);
                prog.set_bounds(ri, -1.0, 1.0);
                prog.add_eq("hat_consistency", Affine::new(vec![(whi, 1.0), (wi, -1.0)], 0.0));
                prog.add_hyperbolic("bilinear_cone", Affine::var(ri), Affine::var(wi), Affine::new(vec![(whi, -1.0)], 1.0));
                let eta = state.eta[(s, m)];
                let rb = state.r_bar[(s, m)];
                let (c1, c0) = if g.literal { (rb, rb * rb) } else { (2.0 * rb, rb * rb) };
                let e2 = eta * eta;
                let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5 * e2, 0.5 / e2]));
                // ½η²w² + ½(1 − ŵ)²/η² − (c1 r − c0) − ε ≤ 0
                let lin = Affine::new(vec![(whi, -1.0 / e2), (ri, -c1)], 0.5 / e2 + c0 - g.eps);
                prog.add_quadratic("agm_bound", vec![wi, whi], q, lin);
            }
        }
    }

    let wvars: Vec<usize> = (lay.w..lay.w + sm).collect();
    let full_w = wvars.len() == sm && !single;
    for k in 0..k_n {
        let (ri, ti, oi) = (lay.rho + k, lay.t + k, lay.omega + k);
        prog.set_name(ri, format!("rho[{k}]"));
        prog.set_name(ti, format!("t[{k}]"));
        prog.set_name(oi, format!("omega[{k}]"));
        let form = problem.signal_form(k);
        let t_cap: f64 = form.iter().map(|z| z.norm()).sum::<f64>();
        let (tb, ob) = (state.t_bar[k], state.omega_bar[k]);
        let pb = state.p_bar[k];
        let p = problem.denominator_matrix(k, state.bits);
        let o_cap = m_n as f64 * p.trace() * 1.01 + 1.0;
        prog.set_bounds(oi, 0.0, o_cap.max(2.0 * ob + 1.0));
        let rho_cap = if ob > 0.0 { 2.0 * tb * t_cap / ob + 1.0 } else { 1.0 };
        prog.set_bounds(ri, -0.5, rho_cap);
        if tb > 0.0 && t_cap > 0.0 {
            prog.set_bounds(ti, -t_cap * 1.01, t_cap * 1.01);
            // L_k(w) = 2 Re(conj(p̄)⟨w, A⟩) − |p̄|²
            let coeffs = (0..sm)
                .map(|i| (lay.w + i, 2.0 * (pb.conj() * form[i].conj()).re))
                .collect();
            let l_k = Affine::new(coeffs, -pb.norm_sqr());
            prog.add_hyperbolic("signal_cone", Affine::var(ti), Affine::constant(1.0), l_k);
        } else {
            prog.set_bounds(ti, 0.0, 0.0);
        }
        // ρ ≤ (2t̄/ω̄) t − (t̄²/ω̄²) ω
        let (a1, a2) = if ob > 0.0 { (2.0 * tb / ob, tb * tb / (ob * ob)) } else { (0.0, 0.0) };
        prog.add_le("taylor", Affine::new(vec![(ri, 1.0), (ti, -a1), (oi, a2)], 0.0));

        let quad_vars = if full_w { wvars.clone() } else { Vec::new() };
        if let Some(y0) = lay.y {
            let yi = y0 + k;
            prog.set_name(yi, format!("y[{k}]"));
            let lk = inverse_kappa_tangent(problem.mode, state.bits, lay.b);
            let (c, _) = inverse_kappa(problem.mode, state.bits);
            let qk = problem.quant_matrix(k);
            let y_cap = 4.0 * m_n as f64 * qk.trace() / c.max(1e-300) + 1.0;
            prog.set_bounds(yi, 0.0, y_cap);
            if full_w {
                prog.add_quadratic(
                    "interference_epigraph",
                    quad_vars.clone(),
                    problem.base_matrix(k).clone(),
                    Affine::new(vec![(yi, 1.0), (oi, -1.0)], 0.0),
                );
                prog.add_rotated_cone("quantization_cone", quad_vars, qk.clone(), Affine::var(yi), lk);
            } else {
                let base = problem.base_matrix(k)[(0, 0)];
                prog.add_le("interference_epigraph", Affine::new(vec![(yi, 1.0), (oi, -1.0)], base));
                let q = DMatrix::from_element(1, 1, qk[(0, 0)]);
                prog.add_rotated_cone("quantization_cone", vec![lay.w], q, Affine::var(yi), lk);
            }
        } else if full_w {
            prog.add_quadratic("interference_epigraph", quad_vars, p, Affine::new(vec![(oi, -1.0)], 0.0));
        } else {
            prog.add_le("interference_epigraph", Affine::new(vec![(oi, -1.0)], p[(0, 0)]));
        }
    }
    (prog, lay)
}

/// A starting point near the linearization point, strictly inside the
/// subproblem when the relaxation has an interior; the solver runs phase I
/// otherwise.
fn interior_start(state: &ScaState, problem: &ScaProblem, lay: &VarLayout, opts: &ScaOptions) -> Vec<f64> {
    let (s_n, m_n, k_n) = (problem.n_beams, problem.n_rf, problem.n_users);
    let sm = s_n * m_n;
    let mut x = vec![0.0; lay.n];
    x[lay.b] = state.bits;
    x[lay.zeta] = alpha_of_bits(state.bits);
    let mix = if s_n == 1 { 0.0 } else { 1e-3 };
    let w0: Vec<f64> = vectorize(&state.w).iter().map(|&v| (1.0 - mix) * v + mix / s_n as f64).collect();
    x[lay.w..lay.w + sm].copy_from_slice(&w0);
    if let (Some(wh), Some(r)) = (lay.w_hat, lay.r) {
        let eps = opts.gadget.map_or(0.0, |g| g.eps);
        for j in 0..sm {
            x[wh + j] = w0[j];
            let rb = state.r_bar.as_slice()[j];
            x[r + j] = if rb > 0.0 { (rb - eps / (4.0 * rb)).max(0.0) } else { 0.0 };
        }
    }
    if lay.y.is_some() {
        let (lo, hi) = (problem.b_min as f64, problem.b_max as f64);
        let delta = (1e-3f64).min(0.25 * (hi - lo));
        let b0 = state.bits.clamp(lo + delta, hi - delta);
        let room = alpha_of_bits(lo) / alpha_of_bits(b0) - 1.0;
        x[lay.b] = b0;
        x[lay.zeta] = alpha_of_bits(b0) * (1.0 + (0.5 * opts.eps_b).min(0.5 * room));
    }
    for k in 0..k_n {
        let (tb, ob) = (state.t_bar[k], state.omega_bar[k]);
        let p = problem.signal(k, &w0);
        let l = 2.0 * (state.p_bar[k].conj() * p).re - state.p_bar[k].norm_sqr();
        let t = if tb > 0.0 { 0.999 * l.max(0.0).sqrt() } else { 0.0 };
        let den = problem.denominator(k, &w0, state.bits);
        let mut omega = den * (1.0 + 1e-4) + 1e-12;
        if let Some(y0) = lay.y {
            let q = quad(problem.quant_matrix(k), &w0) * problem.kappa(state.bits);
            x[y0 + k] = q * 1.01 + 1e-13;
            omega += q * 0.01;
        }
        let rhs = if ob > 0.0 { 2.0 * tb / ob * t - tb * tb / (ob * ob) * omega } else { 0.0 };
        x[lay.t + k] = t;
        x[lay.omega + k] = omega;
        x[lay.rho + k] = (rhs - 1e-3 * (rhs + 0.5).abs()).max(-0.49);
    }
    x
}

/// Largest `γ` keeping `w̄ + γd` in the selection polytope, for a direction
/// `d` with zero column sums.
pub fn ray_limit(w_bar: &[f64], d: &[f64], n_beams: usize, n_rf: usize) -> f64 {
    let mut g_max = f64::INFINITY;
    for (i, &di) in d.iter().enumerate() {
        if di > 0.0 {
            g_max = g_max.min((1.0 - w_bar[i]) / di);
        } else if di < 0.0 {
            g_max = g_max.min(-w_bar[i] / di);
        }
    }
    for s in 0..n_beams {
        let (mut used, mut ds) = (0.0, 0.0);
        for m in 0..n_rf {
            used += w_bar[m * n_beams + s];
            ds += d[m * n_beams + s];
        }
        if ds > 0.0 {
            g_max = g_max.min((1.0 - used).max(0.0) / ds);
        }
    }
    g_max
}

/// Best true objective on `w̄ + γ(w* − w̄)` for `γ = 1, 2, 4, …` up to the
/// edge of the selection polytope. Column sums are preserved along the ray.
fn extrapolate(problem: &ScaProblem, w_bar: &[f64], w_star: &[f64], bits: f64) -> Vec<f64> {
    let d: Vec<f64> = w_star.iter().zip(w_bar).map(|(a, b)| a - b).collect();
    let g_max = ray_limit(w_bar, &d, problem.n_beams, problem.n_rf);
    let at = |g: f64| -> Vec<f64> { w_bar.iter().zip(&d).map(|(b, di)| (b + g * di).clamp(0.0, 1.0)).collect() };
    let mut best = (problem.sum_rate(w_star, bits), w_star.to_vec());
    let mut g = 2.0;
    loop {
        let last = g >= g_max;
        let cand = at(g.min(g_max));
        let v = problem.sum_rate(&cand, bits);
        if !(v > best.0) {
            break;
        }
        best = (v, cand);
        if last || g > 1e6 {
            break;
        }
        g *= 2.0;
    }
    best.1
}

/// Largest violation of the relaxed selection constraints: nonnegativity,
/// unit column sums and row sums at most one.
pub fn selection_violation(w: &DMatrix<f64>) -> f64 {
    let mut v: f64 = w.iter().fold(0.0, |a, &x| a.max(-x));
    for m in 0..w.ncols() {
        v = v.max((w.column(m).sum() - 1.0).abs());
    }
    for s in 0..w.nrows() {
        v = v.max(w.row(s).sum() - 1.0);
    }
    v
}

/// One accepted loop iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaIterate {
    pub n: usize,
    pub objective: f64,
    pub b: f64,
    /// Largest constraint violation of the subproblem at its solution
    /// (zero for the starting point).
    pub max_violation: f64,
}

#[derive(Clone, Debug)]
pub struct ScaResult {
    pub bits: f64,
    pub selection: DMatrix<f64>,
    pub objective: f64,
    pub trace: Vec<ScaIterate>,
    /// Subproblem solves, including a rejected final one.
    pub solves: usize,
    pub converged: bool,
    /// Why the loop stopped early, if it did.
    pub stalled: Option<String>,
    pub state: ScaState,
    /// Objective of each integer depth tried by a sweep.
    pub per_bits: Vec<(u32, f64)>,
    pub subproblem_text: Option<String>,
}

impl ScaResult {
    pub fn objectives(&self) -> Vec<f64> {
        self.trace.iter().map(|it| it.objective).collect()
    }
}

/// Successive convex approximation from `state0`, keeping the bit depth
/// fixed unless the options select the coupled formulation.
pub fn sca_loop(problem: &ScaProblem, state0: ScaState, opts: &ScaOptions) -> Result<ScaResult> {
    let mut state = state0;
    let mut trace = vec![ScaIterate { n: 0, objective: state.objective(), b: state.bits, max_violation: 0.0 }];
    let mut solves = 0;
    let mut converged = false;
    let mut stalled = None;
    let mut text = None;
    let sm = problem.dim();
    let eliminate = opts.eliminate && opts.gadget.is_none() && opts.bit_search != BitSearch::Coupled && problem.n_beams > 1;
    while solves < opts.max_iter {
        if opts.capture_subproblem && text.is_none() {
            text = Some(assemble_subproblem(&state, problem, opts).0.to_text());
        }
        solves += 1;
        let reduced = if eliminate {
            let w0: Vec<f64> = vectorize(&state.w).iter().map(|&v| (1.0 - 1e-3) * v + 1e-3 / problem.n_beams as f64).collect();
            Surrogate::new(&state, problem).solve(&w0, opts.solver.tol)
        } else {
            None
        };
        let (w_vec, bits, aux, viol, gadget_vars) = match reduced {
            Some(pt) => {
                let (w, aux) = if opts.extrapolate {
                    (extrapolate(problem, &vectorize(&state.w), &pt.w, state.bits), None)
                } else {
                    (pt.w, Some((pt.rho, pt.t, pt.omega, state.zeta)))
                };
                let viol = selection_violation(&unvectorize(&w, problem.n_beams, problem.n_rf)).max(0.0);
                (w, state.bits, aux, viol, None)
            }
            None => {
                let (prog, lay) = assemble_subproblem(&state, problem, opts);
                let x0 = interior_start(&state, problem, &lay, opts);
                let sol = match solve_with(&prog, Some(&x0), &opts.solver) {
                    Ok(s) => s,
                    Err(Error::Infeasible(group)) => {
                        stalled = Some(format!("subproblem {solves} infeasible in `{group}`"));
                        break;
                    }
                    Err(e) => return Err(e),
                };
                let x = sol.x;
                let bits = if lay.y.is_some() { x[lay.b].clamp(problem.b_min as f64, problem.b_max as f64) } else { state.bits };
                let k_n = problem.n_users;
                let aux = Some((
                    x[lay.rho..lay.rho + k_n].to_vec(),
                    x[lay.t..lay.t + k_n].to_vec(),
                    x[lay.omega..lay.omega + k_n].to_vec(),
                    x[lay.zeta],
                ));
                let gadget_vars = match (lay.w_hat, lay.r) {
                    (Some(wh), Some(r)) => Some((x[wh..wh + sm].to_vec(), x[r..r + sm].to_vec())),
                    _ => None,
                };
                let (viol, _) = prog.max_violation(&x);
                (x[lay.w..lay.w + sm].to_vec(), bits, aux, viol.max(0.0), gadget_vars)
            }
        };
        let w_new = unvectorize(&w_vec, problem.n_beams, problem.n_rf);
        let obj = problem.sum_rate(&w_vec, bits);
        let prev = state.objective();
        if !obj.is_finite() || obj < prev - 1e-12 * (1.0 + prev.abs()) {
            stalled = Some(format!("subproblem {solves} did not improve the objective"));
            break;
        }
        let mut next = ScaState::at(problem, &w_new, bits)?;
        next.n = state.n + 1;
        if let Some((wh, r)) = gadget_vars {
            next.w_hat = unvectorize(&wh, problem.n_beams, problem.n_rf);
            next.r = unvectorize(&r, problem.n_beams, problem.n_rf);
            next.r_bar = next.r.clone();
            next.eta = DMatrix::from_fn(problem.n_beams, problem.n_rf, |s, m| {
                agm_point(next.w_hat[(s, m)], w_new[(s, m)])
            });
        }
        if let Some(aux) = aux {
            (next.rho, next.t, next.omega, next.zeta) = aux;
        }
        let mut tr = std::mem::take(&mut state.trace);
        tr.push(obj);
        next.trace = tr;
        trace.push(ScaIterate { n: next.n, objective: obj, b: bits, max_violation: viol });
        state = next;
        if (obj - prev).abs() < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(ScaResult {
        bits: state.bits,
        selection: state.w.clone(),
        objective: state.objective(),
        trace,
        solves,
        converged,
        stalled,
        state,
        per_bits: Vec::new(),
        subproblem_text: text,
    })
}

/// Algorithm entry point: optimize `(b, W)` from the selection `w0`.
/// `start_bits` seeds the coupled search and is otherwise ignored.
pub fn sca_solve(problem: &ScaProblem, w0: &DMatrix<f64>, start_bits: f64, opts: &ScaOptions) -> Result<ScaResult> {
    match opts.bit_search {
        BitSearch::Dominant => {
            let b = problem.dominant_bits() as f64;
            sca_loop(problem, ScaState::at(problem, w0, b)?, opts)
        }
        BitSearch::Coupled => {
            let b = start_bits.clamp(problem.b_min as f64, problem.b_max as f64);
            sca_loop(problem, ScaState::at(problem, w0, b)?, opts)
        }
        BitSearch::Sweep => {
            let mut best: Option<ScaResult> = None;
            let mut per_bits = Vec::new();
            for b in problem.b_min..=problem.b_max {
                let r = sca_loop(problem, ScaState::at(problem, w0, b as f64)?, opts)?;
                per_bits.push((b, r.objective));
                if best.as_ref().is_none_or(|cur| r.objective > cur.objective) {
                    best = Some(r);
                }
            }
            let mut best = best.expect("bit range is nonempty");
            best.per_bits = per_bits;
            Ok(best)
        }
    }
}

/// Rounding of a relaxed depth: `⌊b*⌋` when the fractional part is at most
/// `delta`, `⌈b*⌉` otherwise, then clamped to `[b_min, b_max]`.
pub fn round_bits(b_star: f64, delta: f64, b_min: u32, b_max: u32) -> u32 {
    let fl = b_star.floor();
    let b = if b_star - fl <= delta { fl } else { b_star.ceil() };
    (b.max(b_min as f64).min(b_max as f64)) as u32
}

/// Nearest binary selection: maximum-weight assignment of RF chains to
/// distinct beams under the relaxed weights.
pub fn project_selection(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(binary_selection(w.nrows(), &project_beams(w)?))
}

/// Beam per RF chain chosen by [`project_selection`].
pub fn project_beams(w: &DMatrix<f64>) -> Result<Vec<usize>> {
    if w.iter().any(|&x| !(x >= -1e-8)) {
        return Err(Error::Domain("relaxed selection has negative or non-finite entries".into()));
    }
    Ok(max_weight_assignment(w)?.0)
}

pub fn binary_selection(n_beams: usize, beams: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n_beams, beams.len());
    for (m, &b) in beams.iter().enumerate() {
        out[(b, m)] = 1.0;
    }
    out
}

/// Exhaustive optimum over integer depths and beam assignments.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub bits: u32,
    pub beams: Vec<usize>,
    pub value: f64,
    pub evaluations: u128,
}

/// Number of evaluations [`enumerate_oracle`] would perform.
pub fn oracle_count(n_beams: usize, n_rf: usize, b_min: u32, b_max: u32) -> u128 {
    if n_rf > n_beams || b_min > b_max {
        return 0;
    }
    let perms: u128 = (0..n_rf).map(|i| (n_beams - i) as u128).product();
    perms * (b_max - b_min + 1) as u128
}

#[allow(clippy::too_many_arguments)]
pub fn enumerate_oracle_effective(
    heff: &CMat,
    codebook: &CMat,
    n_rf: usize,
    decoders: &DecoderBank,
    noise_power: f64,
    mode: AqnmMode,
    bits: (u32, u32),
    cap: u128,
) -> Result<OracleResult> {
    let s_n = codebook.ncols();
    if n_rf > s_n {
        return Err(Error::Structural { rf: n_rf, beams: s_n });
    }
    let needed = oracle_count(s_n, n_rf, bits.0, bits.1);
    if needed > cap {
        return Err(Error::EnumerationCap { needed, cap });
    }
    let mut best: Option<OracleResult> = None;
    let mut count = 0u128;
    let mut beams = Vec::with_capacity(n_rf);
    let mut used = vec![false; s_n];
    let mut assignments = Vec::new();
    collect_assignments(s_n, n_rf, &mut beams, &mut used, &mut assignments);
    for b in bits.0..=bits.1 {
        for a in &assignments {
            let comb = CombinerState::binary(codebook.clone(), a, b as f64)?;
            let v = effective_sum_rate(heff, &comb, decoders, noise_power, mode)?;
            count += 1;
            if best.as_ref().is_none_or(|cur| v > cur.value) {
                best = Some(OracleResult { bits: b, beams: a.clone(), value: v, evaluations: 0 });
            }
        }
    }
    let mut best = best.ok_or_else(|| Error::Domain("empty bit range".into()))?;
    best.evaluations = count;
    Ok(best)
}

fn collect_assignments(s_n: usize, m_n: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
    if cur.len() == m_n {
        out.push(cur.clone());
        return;
    }
    for s in 0..s_n {
        if !used[s] {
            used[s] = true;
            cur.push(s);
            collect_assignments(s_n, m_n, cur, used, out);
            cur.pop();
            used[s] = false;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn enumerate_oracle(
    chan: &ChannelRealization,
    codebook: &CMat,
    n_rf: usize,
    theta: &PhaseVector,
    decoders: &DecoderBank,
    noise_power: f64,
    mode: AqnmMode,
    bits: (u32, u32),
    cap: u128,
) -> Result<OracleResult> {
    let heff = chan.cascaded(theta.as_slice());
    enumerate_oracle_effective(&heff, codebook, n_rf, decoders, noise_power, mode, bits, cap)
}
