//! Riemannian gradient ascent of the sum rate over the RIS phases on the
//! complex-circle manifold `{θ : |θ_i| = 1}`.

use std::f64::consts::LN_2;

use crate::channel::ChannelRealization;
use crate::mm::optimal_decoders;
use crate::quantizer::{effective_rate_terms, effective_sum_rate, AqnmMode, CombinerState, DecoderBank, PhaseVector};
use crate::{CMat, CVec, Error, Result, C64};

/// Euclidean gradient `2 ∂(Σ_k R_k)/∂θ*`, so that the real directional
/// derivative along `d` is `Re(gᴴ d)`. The quantizer covariance is
/// differentiated through its θ-dependence.
pub fn sum_rate_egrad_raw(
    chan: &ChannelRealization,
    comb: &CombinerState,
    decoders: &DecoderBank,
    theta: &[C64],
    noise_power: f64,
    mode: AqnmMode,
) -> Result<CVec> {
    let n_ris = chan.n_ris();
    if theta.len() != n_ris {
        return Err(Error::Dimension(format!("{} phases for {n_ris} elements", theta.len())));
    }
    let k_users = chan.n_users();
    let f = comb.combiner();
    let g = mode.signal_gain(comb.bits);
    let q = mode.distortion_scale(comb.bits);
    let gbar = f.adjoint() * &chan.g;
    let heff = chan.cascaded(theta);
    let a = f.adjoint() * &heff;
    let terms = effective_rate_terms(&heff, comb, decoders, noise_power, mode)?;
    let m = comb.n_rf();
    // z_l = Σ_k (x_kl / T_k − x'_kl / den_k), with
    // x_kl = g s_kl u_k + q (|u_k|² ∘ a_l) and x'_kl dropping the signal for l = k
    let mut z = CMat::zeros(m, k_users);
    for (k, uk) in decoders.u.iter().enumerate() {
        let total = terms[k].signal + terms[k].denominator();
        let den = terms[k].denominator();
        let w_total = 1.0 / (total * LN_2);
        let w_den = 1.0 / (den * LN_2);
        let proj = uk.adjoint() * &a;
        for l in 0..k_users {
            let s_kl = proj[l] * g;
            let cross = w_total - if l == k { 0.0 } else { w_den };
            for i in 0..m {
                let quant = a[(i, l)] * (q * uk[i].norm_sqr());
                z[(i, l)] += uk[i] * (s_kl * g * cross) + quant * (w_total - w_den);
            }
        }
    }
    let back = gbar.adjoint() * z;
    let mut grad = CVec::zeros(n_ris);
    for l in 0..k_users {
        let h = &chan.h[l];
        for i in 0..n_ris {
            grad[i] += h[i].conj() * back[(i, l)];
        }
    }
    Ok(grad * C64::new(2.0, 0.0))
}

pub fn sum_rate_egrad(
    chan: &ChannelRealization,
    comb: &CombinerState,
    decoders: &DecoderBank,
    theta: &PhaseVector,
    noise_power: f64,
    mode: AqnmMode,
) -> Result<CVec> {
    sum_rate_egrad_raw(chan, comb, decoders, theta.as_slice(), noise_power, mode)
}

/// Sum rate at an arbitrary (not necessarily unit-modulus) θ.
pub fn sum_rate_at(
    chan: &ChannelRealization,
    comb: &CombinerState,
    decoders: &DecoderBank,
    theta: &[C64],
    noise_power: f64,
    mode: AqnmMode,
) -> Result<f64> {
    effective_sum_rate(&chan.cascaded(theta), comb, decoders, noise_power, mode)
}

/// Central differences along the real and imaginary part of every θ_i,
/// in the same convention as [`sum_rate_egrad`].
pub fn sum_rate_fd_grad(
    chan: &ChannelRealization,
    comb: &CombinerState,
    decoders: &DecoderBank,
    theta: &[C64],
    noise_power: f64,
    mode: AqnmMode,
    h: f64,
) -> Result<CVec> {
    let mut grad = CVec::zeros(theta.len());
    let mut x = theta.to_vec();
    for i in 0..theta.len() {
        let mut partial = [0.0; 2];
        for (p, dir) in [C64::new(h, 0.0), C64::new(0.0, h)].into_iter().enumerate() {
            x[i] = theta[i] + dir;
            let up = sum_rate_at(chan, comb, decoders, &x, noise_power, mode)?;
            x[i] = theta[i] - dir;
            let down = sum_rate_at(chan, comb, decoders, &x, noise_power, mode)?;
            x[i] = theta[i];
            partial[p] = (up - down) / (2.0 * h);
        }
        grad[i] = C64::new(partial[0], partial[1]);
    }
    Ok(grad)
}

/// Tangent projection `g − Re(g ∘ θ*) ∘ θ`.
pub fn riemannian_grad(egrad: &CVec, theta: &PhaseVector) -> CVec {
    CVec::from_iterator(
        egrad.len(),
        egrad.iter().zip(theta.as_slice()).map(|(g, t)| g - t * (g * t.conj()).re),
    )
}

/// Elementwise `(θ_i + step·d_i)/|θ_i + step·d_i|`; an element whose sum
/// vanishes keeps its previous value.
pub fn retract(theta: &PhaseVector, direction: &CVec, step: f64) -> PhaseVector {
    let out = theta
        .as_slice()
        .iter()
        .zip(direction.iter())
        .map(|(&t, &d)| {
            let z = t + d * step;
            let n = z.norm();
            if n > 0.0 && n.is_finite() {
                z / n
            } else {
                t
            }
        })
        .collect::<Vec<_>>();
    PhaseVector::new_unchecked(CVec::from_vec(out))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradientMode {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Debug)]
pub struct MoOptions {
    /// Stop when `‖rgrad‖ ≤ tol·max(1, Σ R_k)`.
    pub tol: f64,
    pub max_iter: usize,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub conjugate: bool,
    pub gradient: GradientMode,
    /// Stop once an accepted step gains at most `ftol·max(1, Σ R_k)`.
    pub ftol: f64,
    /// Evaluate every θ with its closed-form optimal decoders, so the block
    /// ascends over `(θ, u)` jointly.
    pub joint_decoders: bool,
}

impl Default for MoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 50,
            conjugate: false,
            gradient: GradientMode::Analytic,
            ftol: 1e-14,
            joint_decoders: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldState {
    pub theta: PhaseVector,
    pub euclidean_grad: CVec,
    pub riemannian_grad: CVec,
    pub step: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoResult {
    pub theta: PhaseVector,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The line search failed `max_backtracks` times.
    pub stalled: bool,
    /// Decoders matching `theta` under `joint_decoders`.
    pub decoders: Option<DecoderBank>,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub last: ManifoldState,
}

fn gradient(
    chan: &ChannelRealization,
    comb: &CombinerState,
    decoders: &DecoderBank,
    theta: &PhaseVector,
    noise_power: f64,
    mode: AqnmMode,
    which: GradientMode,
) -> Result<CVec> {
    match which {
        GradientMode::Analytic => sum_rate_egrad(chan, comb, decoders, theta, noise_power, mode),
        GradientMode::FiniteDifference => {
            sum_rate_fd_grad(chan, comb, decoders, theta.as_slice(), noise_power, mode, 1e-6)
        }
    }
}

fn real_inner(a: &CVec, b: &CVec) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Riemannian ascent with Armijo backtracking. The search direction is
/// scaled so its largest element has unit modulus before the first trial
/// step of length one.
pub fn mo_solve(
    chan: &ChannelRealization,
    comb: &CombinerState,
    decoders: &DecoderBank,
    noise_power: f64,
    mode: AqnmMode,
    theta0: &PhaseVector,
    opts: &MoOptions,
) -> Result<MoResult> {
    if theta0.len() != chan.n_ris() {
        return Err(Error::Dimension(format!("{} phases for {} elements", theta0.len(), chan.n_ris())));
    }
    let decoders_at = |t: &PhaseVector| -> Result<Option<DecoderBank>> {
        if opts.joint_decoders {
            optimal_decoders(&chan.cascaded(t.as_slice()), comb, noise_power, mode, decoders).map(Some)
        } else {
            Ok(None)
        }
    };
    let eval = |t: &PhaseVector, d: &Option<DecoderBank>| {
        sum_rate_at(chan, comb, d.as_ref().unwrap_or(decoders), t.as_slice(), noise_power, mode)
    };
    let mut theta = theta0.clone();
    let mut dec = decoders_at(&theta)?;
    let mut f = eval(&theta, &dec)?;
    let mut trace = vec![f];
    let mut eg = gradient(chan, comb, dec.as_ref().unwrap_or(decoders), &theta, noise_power, mode, opts.gradient)?;
    let mut rg = riemannian_grad(&eg, &theta);
    let mut dir = rg.clone();
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0;
    let mut last_step = 0.0;
    while iterations < opts.max_iter {
        let gnorm = rg.norm();
        if !(gnorm > opts.tol * f.abs().max(1.0)) {
            converged = true;
            break;
        }
        let mut slope = real_inner(&rg, &dir);
        if !(slope > 0.0) {
            dir = rg.clone();
            slope = gnorm * gnorm;
        }
        let scale = dir.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let d = &dir / C64::new(scale, 0.0);
        let slope = slope / scale;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let cand = retract(&theta, &d, step);
            let dc = decoders_at(&cand)?;
            let fc = eval(&cand, &dc)?;
            if fc >= f + opts.armijo * step * slope {
                accepted = Some((cand, dc, fc));
                break;
            }
            step *= opts.shrink;
        }
        let Some((cand, dc, fc)) = accepted else {
            stalled = true;
            break;
        };
        iterations += 1;
        last_step = step;
        let improvement = fc - f;
        theta = cand;
        dec = dc;
        f = fc;
        trace.push(f);
        let eg_new = gradient(chan, comb, dec.as_ref().unwrap_or(decoders), &theta, noise_power, mode, opts.gradient)?;
        let rg_new = riemannian_grad(&eg_new, &theta);
        if opts.conjugate {
            // transport the previous quantities by tangent projection
            let old_rg = riemannian_grad(&rg, &theta);
            let old_dir = riemannian_grad(&dir, &theta);
            let beta = (real_inner(&rg_new, &(&rg_new - &old_rg)) / rg.norm_squared()).max(0.0);
            dir = &rg_new + old_dir * C64::new(beta, 0.0);
        } else {
            dir = rg_new.clone();
        }
        eg = eg_new;
        rg = rg_new;
        if !(improvement > opts.ftol * f.abs().max(1.0)) {
            converged = true;
            break;
        }
    }
    let last = ManifoldState {
        theta: theta.clone(),
        euclidean_grad: eg,
        riemannian_grad: rg,
        step: last_step,
        objective: f,
    };
    Ok(MoResult { theta, objective: f, iterations, converged, stalled, decoders: dec, trace, last })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_normal;
    use crate::quantizer::dft_codebook;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(n_ris: usize, k: usize, rng: &mut ChaCha8Rng) -> (ChannelRealization, CombinerState, DecoderBank) {
        let chan = ChannelRealization::from_matrices(
            CMat::from_fn(6, n_ris, |_, _| complex_normal(rng)),
            (0..k).map(|_| CVec::from_fn(n_ris, |_, _| complex_normal(rng))).collect(),
        )
        .unwrap();
        let comb = CombinerState::binary(dft_codebook(6, 4), &[2, 0, 3], 1.0).unwrap();
        let dec = DecoderBank::new((0..k).map(|_| CVec::from_fn(3, |_, _| complex_normal(rng))).collect()).unwrap();
        (chan, comb, dec)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for mode in [AqnmMode::PaperFaithful, AqnmMode::Standard] {
            let (chan, comb, dec) = instance(5, 3, &mut rng);
            let theta = PhaseVector::random(5, &mut rng);
            let g = sum_rate_egrad(&chan, &comb, &dec, &theta, 0.7, mode).unwrap();
            let fd = sum_rate_fd_grad(&chan, &comb, &dec, theta.as_slice(), 0.7, mode, 1e-6).unwrap();
            assert!((&g - &fd).norm() <= 1e-6 * g.norm(), "{g} {fd}");
        }
    }

    #[test]
    fn zero_channel_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (mut chan, comb, dec) = instance(4, 2, &mut rng);
        chan.g.fill(C64::new(0.0, 0.0));
        let g = sum_rate_egrad(&chan, &comb, &dec, &PhaseVector::ones(4), 0.5, AqnmMode::PaperFaithful).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn common_phase_direction_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (chan, comb, dec) = instance(6, 2, &mut rng);
        let theta = PhaseVector::random(6, &mut rng);
        let g = sum_rate_egrad(&chan, &comb, &dec, &theta, 0.5, AqnmMode::PaperFaithful).unwrap();
        let jt = theta.vector().map(|z| z * C64::new(0.0, 1.0));
        assert!(real_inner(&g, &jt).abs() < 1e-8 * (1.0 + g.norm()));
    }

    #[test]
    fn retraction_cases() {
        let t = PhaseVector::ones(1);
        let d = CVec::from_element(1, C64::new(0.0, 1.0));
        let r = retract(&t, &d, 1.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r.as_slice()[0] - C64::new(s, s)).norm() < 1e-15);
        assert_eq!(retract(&t, &d, 0.0), t);
        let back = CVec::from_element(1, C64::new(-1.0, 0.0));
        assert_eq!(retract(&t, &back, 1.0), t);
    }

    #[test]
    fn ascent_is_monotone_and_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for conjugate in [false, true] {
            let (chan, comb, dec) = instance(8, 3, &mut rng);
            let opts = MoOptions { conjugate, ..Default::default() };
            let r = mo_solve(&chan, &comb, &dec, 0.5, AqnmMode::PaperFaithful, &PhaseVector::ones(8), &opts).unwrap();
            assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
            assert!(r.theta.as_slice().iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
            for (g, t) in r.last.riemannian_grad.iter().zip(r.theta.as_slice()) {
                assert!((g * t.conj()).re.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_element_is_phase_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let (chan, comb, dec) = instance(1, 2, &mut rng);
        let r = mo_solve(&chan, &comb, &dec, 0.5, AqnmMode::PaperFaithful, &PhaseVector::ones(1), &MoOptions::default())
            .unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
    }

    #[test]
    fn single_user_single_path_reaches_co_phasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for n_ris in [2, 4, 8] {
            let a_t = crate::channel::steering_vector(6, 0.4);
            let a_r = crate::channel::steering_vector(n_ris, -0.7);
            let b_r = crate::channel::steering_vector(n_ris, 1.1);
            let g = (&a_t * a_r.transpose()) * complex_normal(&mut rng);
            let h = &b_r * complex_normal(&mut rng);
            let chan = ChannelRealization::from_matrices(g, vec![h]).unwrap();
            let comb = CombinerState::binary(dft_codebook(6, 4), &[0, 2], 2.0).unwrap();
            let dec = DecoderBank::new(vec![CVec::from_fn(2, |_, _| complex_normal(&mut rng))]).unwrap();
            // the cascade is a_t (a_rᵀ Θ b_r) up to a scalar, so aligning each product's phase is optimal
            let best = PhaseVector::new(CVec::from_fn(n_ris, |i, _| {
                let z = a_r[i] * b_r[i];
                z.conj() / z.norm()
            }))
            .unwrap();
            for mode in [AqnmMode::PaperFaithful, AqnmMode::Standard] {
                let want = sum_rate_at(&chan, &comb, &dec, best.as_slice(), 1e-2, mode).unwrap();
                let r = mo_solve(&chan, &comb, &dec, 1e-2, mode, &PhaseVector::ones(n_ris), &MoOptions::default())
                    .unwrap();
                assert!(r.objective >= 0.999 * want, "n_ris {n_ris}: {} vs {want}", r.objective);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn retraction_stays_on_the_circle(seed in 0u64..1_000, n in 1usize..12, step in 0.0f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = PhaseVector::random(n, &mut rng);
            let d = CVec::from_fn(n, |_, _| complex_normal(&mut rng));
            let rg = riemannian_grad(&d, &theta);
            for (g, t) in rg.iter().zip(theta.as_slice()) {
                proptest::prop_assert!((g * t.conj()).re.abs() <= 1e-10 * (1.0 + g.norm()));
            }
            let next = retract(&theta, &rg, step);
            proptest::prop_assert!(next.as_slice().iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
    }
}
