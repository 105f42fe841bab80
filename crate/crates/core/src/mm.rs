//! Per-user decoder design by minorize-maximization of the generalized
//! Rayleigh quotient `uᴴ B u / uᴴ D u`, where `B − D` is the rank-one
//! desired-signal term so the quotient equals `1 + SINR`.

use nalgebra::SymmetricEigen;

use crate::quantizer::{effective_quant_noise_diag, AqnmMode, CombinerState, DecoderBank};
use crate::{CMat, CVec, Error, Result, C64};

/// `B` (all users, noise and distortion) and `D` (everything but the
/// desired signal) for one user.
#[derive(Clone, Debug, PartialEq)]
pub struct QuotientPair {
    pub b: CMat,
    pub d: CMat,
}

impl QuotientPair {
    pub fn new(b: CMat, d: CMat) -> Result<Self> {
        if b.shape() != d.shape() || b.nrows() != b.ncols() {
            return Err(Error::Dimension("quotient matrices must be square and equal-sized".into()));
        }
        let scale = 1.0 + b.norm().max(d.norm());
        if (&b - b.adjoint()).norm() > 1e-12 * scale || (&d - d.adjoint()).norm() > 1e-12 * scale {
            return Err(Error::Domain("quotient matrices must be Hermitian".into()));
        }
        if min_eigenvalue(&d) <= 0.0 {
            return Err(Error::Domain("denominator matrix is not positive definite".into()));
        }
        if min_eigenvalue(&b) < -1e-10 * scale {
            return Err(Error::Domain("numerator matrix is not positive semidefinite".into()));
        }
        Ok(Self { b, d })
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn quotient(&self, u: &CVec) -> f64 {
        quad(&self.b, u) / quad(&self.d, u)
    }

    /// Largest eigenvalue of `D`.
    pub fn lambda_d(&self) -> f64 {
        max_eigenvalue(&self.d)
    }
}

fn quad(m: &CMat, u: &CVec) -> f64 {
    u.dotc(&(m * u)).re
}

fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    SymmetricEigen::new(sym).eigenvalues.iter().copied().collect()
}

pub fn max_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigenvalues(m).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min)
}

/// Quotient pair of user `k` on the effective channel `heff` (`n_ap × K`).
pub fn build_quotient_effective(
    heff: &CMat,
    comb: &CombinerState,
    noise_power: f64,
    mode: AqnmMode,
    k: usize,
) -> Result<QuotientPair> {
    if k >= heff.ncols() {
        return Err(Error::Dimension(format!("user {k} of {}", heff.ncols())));
    }
    let (b, d) = quotient_matrices(heff, comb, noise_power, mode)?.remove(k);
    QuotientPair::new(b, d)
}

/// `(B_k, D_k)` for every user. `B_k` is the same total covariance for all
/// users; `D_k` removes user `k`'s signal from it.
fn quotient_matrices(heff: &CMat, comb: &CombinerState, noise_power: f64, mode: AqnmMode) -> Result<Vec<(CMat, CMat)>> {
    let f = comb.combiner();
    if f.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::EmptyCombiner);
    }
    let g = mode.signal_gain(comb.bits);
    let g2 = C64::new(g * g, 0.0);
    let a = f.adjoint() * heff;
    let mut total = f.adjoint() * &f * (g2 * noise_power);
    let qdiag = effective_quant_noise_diag(heff, comb, noise_power, mode);
    for (i, q) in qdiag.iter().enumerate() {
        total[(i, i)] += q;
    }
    total += &a * a.adjoint() * g2;
    Ok((0..heff.ncols())
        .map(|k| {
            let ak = a.column(k);
            let d = &total - (&ak * ak.adjoint()) * g2;
            (total.clone(), d)
        })
        .collect())
}

/// Quotient pair of user `k` for the RIS cascade `G diag(θ) H`.
pub fn build_quotient(
    chan: &crate::channel::ChannelRealization,
    comb: &CombinerState,
    theta: &crate::quantizer::PhaseVector,
    noise_power: f64,
    mode: AqnmMode,
    k: usize,
) -> Result<QuotientPair> {
    build_quotient_effective(&chan.cascaded(theta.as_slice()), comb, noise_power, mode, k)
}

/// One minorize-maximization update. With `ȳ = ūᴴDū` and `λ = λ_max(D)`:
/// `v = Bū/ȳ − (ūᴴBū)(D − λI)ū/ȳ²`, `β = λ ūᴴBū/ȳ²`, `u = v/β`.
/// Returns `None` when `β = 0` (only if `Bū = 0`).
pub fn mm_step_with(u_prev: &CVec, qp: &QuotientPair, lambda: f64) -> Option<CVec> {
    let bu = &qp.b * u_prev;
    let du = &qp.d * u_prev;
    let num = u_prev.dotc(&bu).re;
    let y = u_prev.dotc(&du).re;
    let beta = lambda * num / (y * y);
    if !(beta > 0.0) || !beta.is_finite() {
        return None;
    }
    let shift = du - u_prev * C64::new(lambda, 0.0);
    let v = bu / C64::new(y, 0.0) - shift * C64::new(num / (y * y), 0.0);
    let u = v / C64::new(beta, 0.0);
    let n = u.norm();
    (n > 0.0 && n.is_finite()).then(|| u / C64::new(n, 0.0))
}

pub fn mm_step(u_prev: &CVec, qp: &QuotientPair) -> Option<CVec> {
    mm_step_with(u_prev, qp, qp.lambda_d())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MmResult {
    /// Unit-norm decoder.
    pub u: CVec,
    pub quotient: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `β = 0` was hit; `u` is the last valid iterate.
    pub degenerate: bool,
    /// Quotient at the start and after every step.
    pub trace: Vec<f64>,
}

impl MmResult {
    pub fn sinr(&self) -> f64 {
        self.quotient - 1.0
    }
}

pub const MM_TOL: f64 = 1e-8;
pub const MM_MAX_ITER: usize = 500;

/// Iterate [`mm_step`] until the relative quotient change drops below
/// `tol` or `max_iter` steps are taken.
pub fn mm_solve(qp: &QuotientPair, u0: &CVec, tol: f64, max_iter: usize) -> Result<MmResult> {
    if u0.len() != qp.dim() {
        return Err(Error::Dimension(format!("start has length {}, pair {}", u0.len(), qp.dim())));
    }
    let n0 = u0.norm();
    if !(n0 > 0.0) {
        return Err(Error::Domain("MM start vector is zero".into()));
    }
    let lambda = qp.lambda_d();
    let mut u = u0 / C64::new(n0, 0.0);
    let mut q = qp.quotient(&u);
    let mut trace = vec![q];
    let mut converged = false;
    let mut degenerate = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let Some(next) = mm_step_with(&u, qp, lambda) else {
            degenerate = true;
            converged = true;
            break;
        };
        iterations += 1;
        let qn = qp.quotient(&next);
        trace.push(qn);
        let change = (qn - q).abs();
        u = next;
        q = qn;
        if !(change > tol * q.abs()) {
            converged = true;
            break;
        }
    }
    Ok(MmResult { u, quotient: q, iterations, converged, degenerate, trace })
}

/// Maximizer of the quotient in closed form. `B − D` is rank one, so the
/// optimum is `D⁻¹ a` up to scale, with `a` any nonzero column of `B − D`.
pub fn optimal_decoder(qp: &QuotientPair) -> Option<CVec> {
    let s = &qp.b - &qp.d;
    let j = (0..s.ncols()).max_by(|&i, &j| s.column(i).norm().total_cmp(&s.column(j).norm()))?;
    let a = s.column(j).into_owned();
    if !(a.norm() > 0.0) {
        return None;
    }
    let u = qp.d.clone().cholesky()?.solve(&a);
    let n = u.norm();
    (n > 0.0 && n.is_finite()).then(|| u / C64::new(n, 0.0))
}

/// Closed-form optimal decoders for every user; a user with no signal
/// keeps its decoder from `fallback`.
pub fn optimal_decoders(
    heff: &CMat,
    comb: &CombinerState,
    noise_power: f64,
    mode: AqnmMode,
    fallback: &DecoderBank,
) -> Result<DecoderBank> {
    let u = quotient_matrices(heff, comb, noise_power, mode)?
        .into_iter()
        .enumerate()
        .map(|(k, (b, d))| optimal_decoder(&QuotientPair { b, d }).unwrap_or_else(|| fallback.u[k].clone()))
        .collect();
    DecoderBank::new(u)
}

/// Run [`mm_solve`] for every user from `start`, keeping a user's previous
/// decoder whenever MM does not improve its quotient.
pub fn optimize_decoders(
    heff: &CMat,
    comb: &CombinerState,
    noise_power: f64,
    mode: AqnmMode,
    start: &DecoderBank,
    tol: f64,
    max_iter: usize,
) -> Result<(DecoderBank, Vec<MmResult>)> {
    let mut u = Vec::with_capacity(start.u.len());
    let mut reports = Vec::with_capacity(start.u.len());
    let pairs = quotient_matrices(heff, comb, noise_power, mode)?;
    for ((b, d), u0) in pairs.into_iter().zip(&start.u) {
        let qp = QuotientPair::new(b, d)?;
        let r = mm_solve(&qp, u0, tol, max_iter)?;
        if r.quotient >= qp.quotient(u0) {
            u.push(r.u.clone());
        } else {
            u.push(u0.clone());
        }
        reports.push(r);
    }
    Ok((DecoderBank::new(u)?, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_normal;
    use crate::quantizer::{dft_codebook, effective_rate_terms};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pd(m: usize, rng: &mut ChaCha8Rng) -> CMat {
        let x = CMat::from_fn(m, m, |_, _| complex_normal(rng));
        &x * x.adjoint() / C64::new(m as f64, 0.0) + CMat::identity(m, m)
    }

    #[test]
    fn identity_pair_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_pd(3, &mut rng);
        let qp = QuotientPair::new(d.clone(), d).unwrap();
        let u = CVec::from_fn(3, |_, _| complex_normal(&mut rng));
        let next = mm_step(&u, &qp).unwrap();
        assert!((qp.quotient(&next) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_converges_to_dominant_direction() {
        let b = CMat::from_diagonal(&CVec::from_vec(vec![C64::new(2.0, 0.0), C64::new(1.0, 0.0)]));
        let qp = QuotientPair::new(b, CMat::identity(2, 2)).unwrap();
        let u0 = CVec::from_element(2, C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0));
        let r = mm_solve(&qp, &u0, 1e-14, 500).unwrap();
        assert!((r.quotient - 2.0).abs() < 1e-10);
        assert!(r.u[1].norm() < 1e-5);
    }

    #[test]
    fn monotone_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let d = random_pd(8, &mut rng);
            let y = CMat::from_fn(8, 2, |_, _| complex_normal(&mut rng));
            let qp = QuotientPair::new(&d + &y * y.adjoint(), d).unwrap();
            let u0 = CVec::from_fn(8, |_, _| complex_normal(&mut rng));
            let r = mm_solve(&qp, &u0, 0.0, 100).unwrap();
            assert!(r.trace.windows(2).all(|w| w[1] >= w[0] - 1e-10));
        }
    }

    #[test]
    fn infinite_tolerance_takes_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_pd(4, &mut rng);
        let qp = QuotientPair::new(&d * C64::new(3.0, 0.0), d).unwrap();
        let u0 = CVec::from_fn(4, |_, _| complex_normal(&mut rng));
        assert_eq!(mm_solve(&qp, &u0, f64::INFINITY, 500).unwrap().iterations, 1);
    }

    #[test]
    fn quotient_is_one_plus_sinr() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let heff = CMat::from_fn(6, 3, |_, _| complex_normal(&mut rng));
        let comb = CombinerState::binary(dft_codebook(6, 4), &[3, 1], 2.0).unwrap();
        let dec = DecoderBank::new((0..3).map(|_| CVec::from_fn(2, |_, _| complex_normal(&mut rng))).collect()).unwrap();
        let terms = effective_rate_terms(&heff, &comb, &dec, 0.3, AqnmMode::Standard).unwrap();
        for k in 0..3 {
            let qp = build_quotient_effective(&heff, &comb, 0.3, AqnmMode::Standard, k).unwrap();
            assert!((qp.quotient(&dec.u[k]) - 1.0 - terms[k].sinr()).abs() < 1e-10);
            let diff = &qp.b - &qp.d;
            let eig = hermitian_eigenvalues(&diff);
            let nonzero = eig.iter().filter(|e| e.abs() > 1e-10 * (1.0 + diff.norm())).count();
            assert_eq!(nonzero, 1);
        }
    }

    #[test]
    fn rejects_indefinite_denominator() {
        let d = CMat::from_diagonal(&CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]));
        assert!(QuotientPair::new(CMat::identity(2, 2), d).is_err());
    }

    #[test]
    fn closed_form_decoder_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let heff = CMat::from_fn(6, 3, |_, _| complex_normal(&mut rng));
        let comb = CombinerState::binary(dft_codebook(6, 4), &[0, 3, 1], 2.0).unwrap();
        for mode in [AqnmMode::PaperFaithful, AqnmMode::Standard] {
            for k in 0..3 {
                let qp = build_quotient_effective(&heff, &comb, 0.4, mode, k).unwrap();
                let u = optimal_decoder(&qp).unwrap();
                let mut dec = DecoderBank::new((0..3).map(|_| u.clone()).collect()).unwrap();
                let sinr = effective_rate_terms(&heff, &comb, &dec, 0.4, mode).unwrap()[k].sinr();
                assert!((qp.quotient(&u) - 1.0 - sinr).abs() < 1e-8 * (1.0 + sinr));
                for _ in 0..10_000 {
                    dec.u[k] = CVec::from_fn(3, |_, _| complex_normal(&mut rng));
                    let other = effective_rate_terms(&heff, &comb, &dec, 0.4, mode).unwrap()[k].sinr();
                    assert!(other <= sinr * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn iteration_agrees_with_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for m in 2..=6 {
            let d = random_pd(m, &mut rng);
            let a = CVec::from_fn(m, |_, _| complex_normal(&mut rng));
            let qp = QuotientPair::new(&d + &a * a.adjoint(), d).unwrap();
            let best = optimal_decoder(&qp).unwrap();
            let u0 = CVec::from_fn(m, |_, _| complex_normal(&mut rng));
            let r = mm_solve(&qp, &u0, 1e-14, 5_000).unwrap();
            assert!((r.quotient / qp.quotient(&best) - 1.0).abs() < 1e-6);
            let warm = mm_solve(&qp, &best, MM_TOL, MM_MAX_ITER).unwrap();
            assert!(warm.converged && warm.iterations <= 2);
        }
    }
}
