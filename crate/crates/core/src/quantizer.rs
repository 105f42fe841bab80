//! Additive quantization noise model (AQNM), hybrid combiner algebra and the
//! exact per-user achievable rate.
//!
//! Every optimizer in the crate is scored through [`rate_per_user`] /
//! [`sum_rate`]; nothing else re-derives the rate expression.
//!
//! For a combiner `F = D W`, decoders `u_k` and effective channels
//! `c_l = G Θ h_l`, user `k` sees
//!
//! ```text
//! signal  = g² |u_kᴴ Fᴴ c_k|²
//! interf  = g² Σ_{l≠k} |u_kᴴ Fᴴ c_l|²
//! noise   = σ² g² ‖F u_k‖²
//! quant   = u_kᴴ A_a u_k,   A_a = q · diag(Fᴴ C Cᴴ F + σ² Fᴴ F)
//! R_k     = log2(1 + signal / (interf + noise + quant))
//! ```
//!
//! where the signal gain `g` and distortion scale `q` depend on the bit
//! depth through [`AqnmMode`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::channel::{complex_normal, ChannelRealization};
use crate::{CMat, CVec, Error, Result, C64};

/// `π √3 / 2`.
pub const AQNM_SCALE: f64 = PI * 1.732_050_807_568_877_2 / 2.0;

/// Normalized quantization error `α = (π√3/2) 4^{-b}`.
pub fn alpha_of_bits(b: f64) -> f64 {
    AQNM_SCALE * 4f64.powf(-b)
}

/// How the bit depth enters the rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AqnmMode {
    /// Signal path scaled by `α` and distortion covariance `α·b·diag(·)`,
    /// literally as the model is written. The signal gain shrinks as `b`
    /// grows, so more bits lower the rate.
    #[default]
    PaperFaithful,
    /// Conventional AQNM: signal gain `1 − ρ` and distortion covariance
    /// `ρ(1 − ρ) diag(·)` with `ρ = α(b)`.
    Standard,
}

impl AqnmMode {
    pub fn signal_gain(self, bits: f64) -> f64 {
        let a = alpha_of_bits(bits);
        match self {
            AqnmMode::PaperFaithful => a,
            AqnmMode::Standard => 1.0 - a,
        }
    }

    pub fn distortion_scale(self, bits: f64) -> f64 {
        let a = alpha_of_bits(bits);
        match self {
            AqnmMode::PaperFaithful => a * bits,
            AqnmMode::Standard => a * (1.0 - a),
        }
    }

    /// Distortion-to-signal-power ratio `q / g²`. For a fixed combiner and
    /// decoder every rate is a decreasing function of it.
    pub fn distortion_ratio(self, bits: f64) -> f64 {
        let g = self.signal_gain(bits);
        self.distortion_scale(bits) / (g * g)
    }

    pub fn name(self) -> &'static str {
        match self {
            AqnmMode::PaperFaithful => "paper-faithful",
            AqnmMode::Standard => "standard-aqnm",
        }
    }
}

impl std::str::FromStr for AqnmMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "paper-faithful" | "paper" => Ok(AqnmMode::PaperFaithful),
            "standard-aqnm" | "standard" => Ok(AqnmMode::Standard),
            other => Err(format!("unknown AQNM mode `{other}`")),
        }
    }
}

/// Orthonormal DFT codebook: `n_beams` columns of the `n_ap`-point DFT
/// spread uniformly over the spatial-frequency axis.
pub fn dft_codebook(n_ap: usize, n_beams: usize) -> CMat {
    let scale = 1.0 / (n_ap as f64).sqrt();
    let mut d = CMat::zeros(n_ap, n_beams);
    for s in 0..n_beams {
        let bin = ((s * n_ap) as f64 / n_beams as f64).round() as usize % n_ap;
        for i in 0..n_ap {
            let phase = 2.0 * PI * (i * bin) as f64 / n_ap as f64;
            d[(i, s)] = C64::from_polar(scale, phase);
        }
    }
    d
}

/// Codebook `D`, selection `W` (binary, or its relaxation) and bit depth `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinerState {
    /// `n_ap × n_beams`.
    pub codebook: CMat,
    /// `n_beams × n_rf`, nonnegative, columns summing to one, rows to at most one.
    pub selection: DMatrix<f64>,
    /// Bit depth. Integral everywhere except inside relaxed bit searches.
    pub bits: f64,
}

const SELECTION_TOL: f64 = 1e-8;

impl CombinerState {
    pub fn new(codebook: CMat, selection: DMatrix<f64>, bits: f64) -> Result<Self> {
        if selection.nrows() != codebook.ncols() {
            return Err(Error::Dimension(format!(
                "selection has {} rows, codebook {} beams",
                selection.nrows(),
                codebook.ncols()
            )));
        }
        if !(bits >= 0.0) {
            return Err(Error::Domain(format!("bit depth {bits} is negative")));
        }
        check_selection(&selection)?;
        Ok(Self { codebook, selection, bits })
    }

    /// Binary selection: RF chain `m` uses beam `beams[m]`.
    pub fn binary(codebook: CMat, beams: &[usize], bits: f64) -> Result<Self> {
        let s = codebook.ncols();
        let mut w = DMatrix::zeros(s, beams.len());
        for (m, &b) in beams.iter().enumerate() {
            if b >= s {
                return Err(Error::Dimension(format!("beam {b} outside codebook of {s}")));
            }
            w[(b, m)] = 1.0;
        }
        Self::new(codebook, w, bits)
    }

    pub fn n_beams(&self) -> usize {
        self.selection.nrows()
    }

    pub fn n_rf(&self) -> usize {
        self.selection.ncols()
    }

    /// `F = D W`.
    pub fn combiner(&self) -> CMat {
        &self.codebook * self.selection.map(|x| C64::new(x, 0.0))
    }

    pub fn is_binary(&self) -> bool {
        self.selection.iter().all(|&x| x == 0.0 || x == 1.0)
    }

    /// Beam index per RF chain if the selection is binary.
    pub fn assigned_beams(&self) -> Option<Vec<usize>> {
        if !self.is_binary() {
            return None;
        }
        (0..self.n_rf())
            .map(|m| self.selection.column(m).iter().position(|&x| x == 1.0))
            .collect()
    }

    pub fn with_bits(&self, bits: f64) -> Self {
        Self { bits, ..self.clone() }
    }
}

/// Relaxed beam-selection feasibility: `W ≥ 0`, unit column sums, row sums ≤ 1.
pub fn check_selection(w: &DMatrix<f64>) -> Result<()> {
    if w.iter().any(|&x| !(x >= -SELECTION_TOL) || !x.is_finite()) {
        return Err(Error::Domain("selection has negative or non-finite entries".into()));
    }
    for m in 0..w.ncols() {
        let s: f64 = w.column(m).sum();
        if (s - 1.0).abs() > SELECTION_TOL {
            return Err(Error::Domain(format!("RF chain {m} selection sums to {s}")));
        }
    }
    for s in 0..w.nrows() {
        let r: f64 = w.row(s).sum();
        if r > 1.0 + SELECTION_TOL {
            return Err(Error::Domain(format!("beam {s} feeds total weight {r}")));
        }
    }
    Ok(())
}

/// Per-user decoding vectors `u_k`, each of length `n_rf`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBank {
    pub u: Vec<CVec>,
}

impl DecoderBank {
    pub fn new(u: Vec<CVec>) -> Result<Self> {
        for (k, uk) in u.iter().enumerate() {
            if uk.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Domain(format!("decoder {k} is not finite")));
            }
            if uk.norm_squared() == 0.0 {
                return Err(Error::Domain(format!("decoder {k} is zero")));
            }
        }
        Ok(Self { u })
    }

    /// Matched filters `u_k = g Fᴴ c_k` on the effective channel. Users with
    /// a zero matched filter fall back to the first unit vector.
    pub fn matched_filters(heff: &CMat, comb: &CombinerState, mode: AqnmMode) -> Self {
        let g = mode.signal_gain(comb.bits);
        let a = comb.combiner().adjoint() * heff;
        let u = (0..heff.ncols())
            .map(|k| {
                let col: CVec = a.column(k).map(|z| z * g);
                if col.norm_squared() > 0.0 {
                    col
                } else {
                    let mut e = CVec::zeros(comb.n_rf());
                    e[0] = C64::new(1.0, 0.0);
                    e
                }
            })
            .collect();
        Self { u }
    }
}

/// RIS reflection coefficients with `|θ_i| = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseVector {
    theta: CVec,
}

pub const UNIT_MODULUS_TOL: f64 = 1e-12;

impl PhaseVector {
    pub fn new(theta: CVec) -> Result<Self> {
        if let Some(i) = theta.iter().position(|z| (z.norm() - 1.0).abs() > UNIT_MODULUS_TOL) {
            return Err(Error::Domain(format!("|θ_{i}| = {} is not 1", theta[i].norm())));
        }
        Ok(Self { theta })
    }

    pub(crate) fn new_unchecked(theta: CVec) -> Self {
        Self { theta }
    }

    pub fn ones(n: usize) -> Self {
        Self { theta: DVector::from_element(n, C64::new(1.0, 0.0)) }
    }

    pub fn from_angles(phases: &[f64]) -> Self {
        Self { theta: DVector::from_iterator(phases.len(), phases.iter().map(|&p| C64::from_polar(1.0, p))) }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let phases: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self::from_angles(&phases)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        self.theta.as_slice()
    }

    pub fn vector(&self) -> &CVec {
        &self.theta
    }

    /// Multiply every element by `e^{jφ}`.
    pub fn rotated(&self, phi: f64) -> Self {
        let r = C64::from_polar(1.0, phi);
        Self { theta: self.theta.map(|z| z * r) }
    }
}

/// Rate components of one user.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateTerms {
    pub signal: f64,
    pub interference: f64,
    pub noise: f64,
    pub quantization: f64,
}

impl RateTerms {
    pub fn denominator(&self) -> f64 {
        self.interference + self.noise + self.quantization
    }

    pub fn sinr(&self) -> f64 {
        self.signal / self.denominator()
    }

    pub fn rate(&self) -> f64 {
        (1.0 + self.sinr()).log2()
    }
}

fn nonzero_combiner(f: &CMat) -> Result<()> {
    if f.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::EmptyCombiner);
    }
    Ok(())
}

/// Diagonal of `A_a` for the effective channel `heff` (`n_ap × K`).
pub fn effective_quant_noise_diag(
    heff: &CMat,
    comb: &CombinerState,
    noise_power: f64,
    mode: AqnmMode,
) -> Vec<f64> {
    let f = comb.combiner();
    let a = f.adjoint() * heff;
    quant_diag_from_projection(&a, &f, noise_power, mode.distortion_scale(comb.bits))
}

fn quant_diag_from_projection(a: &CMat, f: &CMat, noise_power: f64, scale: f64) -> Vec<f64> {
    (0..f.ncols())
        .map(|m| {
            let sig: f64 = a.row(m).iter().map(|z| z.norm_sqr()).sum();
            let fhf = f.column(m).norm_squared();
            scale * (sig + noise_power * fhf)
        })
        .collect()
}

/// Quantization noise covariance `A_a` (diagonal, `n_rf × n_rf`).
pub fn quant_noise_cov(
    chan: &ChannelRealization,
    comb: &CombinerState,
    theta: &PhaseVector,
    noise_power: f64,
    mode: AqnmMode,
) -> CMat {
    let heff = chan.cascaded(theta.as_slice());
    let d = effective_quant_noise_diag(&heff, comb, noise_power, mode);
    CMat::from_diagonal(&DVector::from_iterator(d.len(), d.iter().map(|&x| C64::new(x, 0.0))))
}

/// Rate components of every user on an effective channel `heff`
/// (`n_ap × K`, the cascaded `G Θ H` or a direct channel).
pub fn effective_rate_terms(
    heff: &CMat,
    comb: &CombinerState,
    decoders: &DecoderBank,
    noise_power: f64,
    mode: AqnmMode,
) -> Result<Vec<RateTerms>> {
    let k_users = heff.ncols();
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
    let f = comb.combiner();
    nonzero_combiner(&f)?;
    let g2 = mode.signal_gain(comb.bits).powi(2);
    let a = f.adjoint() * heff;
    let qdiag = quant_diag_from_projection(&a, &f, noise_power, mode.distortion_scale(comb.bits));
    let mut out = Vec::with_capacity(k_users);
    for (k, uk) in decoders.u.iter().enumerate() {
        if uk.len() != comb.n_rf() {
            return Err(Error::Dimension(format!("decoder {k} has length {}", uk.len())));
        }
        // u_kᴴ a_l for every l
        let proj = uk.adjoint() * &a;
        let signal = g2 * proj[k].norm_sqr();
        let interference =
            g2 * proj.iter().enumerate().filter(|&(l, _)| l != k).map(|(_, z)| z.norm_sqr()).sum::<f64>();
        let noise = noise_power * g2 * (&f * uk).norm_squared();
        let quantization: f64 = uk.iter().zip(&qdiag).map(|(z, q)| z.norm_sqr() * q).sum();
        let t = RateTerms { signal, interference, noise, quantization };
        if !(t.denominator() > 0.0) {
            return Err(Error::Domain(format!("user {k} has a zero rate denominator")));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn effective_rate_per_user(
    heff: &CMat,
    comb: &CombinerState,
    decoders: &DecoderBank,
    noise_power: f64,
    mode: AqnmMode,
) -> Result<Vec<f64>> {
    Ok(effective_rate_terms(heff, comb, decoders, noise_power, mode)?.iter().map(RateTerms::rate).collect())
}

pub fn effective_sum_rate(
    heff: &CMat,
    comb: &CombinerState,
    decoders: &DecoderBank,
    noise_power: f64,
    mode: AqnmMode,
) -> Result<f64> {
    Ok(effective_rate_per_user(heff, comb, decoders, noise_power, mode)?.iter().sum())
}

/// Achievable rate of every user, bits/s/Hz.
pub fn rate_per_user(
    chan: &ChannelRealization,
    comb: &CombinerState,
    theta: &PhaseVector,
    decoders: &DecoderBank,
    noise_power: f64,
    mode: AqnmMode,
) -> Result<Vec<f64>> {
    if theta.len() != chan.n_ris() {
        return Err(Error::Dimension(format!("{} phases for {} elements", theta.len(), chan.n_ris())));
    }
    effective_rate_per_user(&chan.cascaded(theta.as_slice()), comb, decoders, noise_power, mode)
}

/// Achievable sum rate, bits/s/Hz.
pub fn sum_rate(
    chan: &ChannelRealization,
    comb: &CombinerState,
    theta: &PhaseVector,
    decoders: &DecoderBank,
    noise_power: f64,
    mode: AqnmMode,
) -> Result<f64> {
    Ok(rate_per_user(chan, comb, theta, decoders, noise_power, mode)?.iter().sum())
}

/// Draw one quantizer output `g ȳ + n_q`, `n_q ~ CN(0, A_a)`. Validation
/// use only; the optimizers work with the closed-form rate.
pub fn quantize<R: Rng + ?Sized>(
    y_bar: &CVec,
    comb: &CombinerState,
    chan: &ChannelRealization,
    theta: &PhaseVector,
    noise_power: f64,
    mode: AqnmMode,
    rng: &mut R,
) -> CVec {
    let heff = chan.cascaded(theta.as_slice());
    let qdiag = effective_quant_noise_diag(&heff, comb, noise_power, mode);
    quantize_with_diag(y_bar, mode.signal_gain(comb.bits), &qdiag, rng)
}

/// [`quantize`] with a precomputed `A_a` diagonal.
pub fn quantize_with_diag<R: Rng + ?Sized>(y_bar: &CVec, gain: f64, qdiag: &[f64], rng: &mut R) -> CVec {
    DVector::from_iterator(
        y_bar.len(),
        y_bar.iter().zip(qdiag).map(|(y, &q)| y * gain + complex_normal(rng) * q.sqrt()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cmat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(r, c, |_, _| complex_normal(rng))
    }

    fn small_instance(rng: &mut ChaCha8Rng) -> (ChannelRealization, CombinerState, PhaseVector, DecoderBank) {
        let chan = ChannelRealization::from_matrices(
            random_cmat(4, 2, rng),
            (0..2).map(|_| random_cmat(2, 1, rng).column(0).into_owned()).collect(),
        )
        .unwrap();
        let comb = CombinerState::binary(dft_codebook(4, 3), &[2, 0], 2.0).unwrap();
        let theta = PhaseVector::random(2, rng);
        let dec = DecoderBank::new((0..2).map(|_| random_cmat(2, 1, rng).column(0).into_owned()).collect()).unwrap();
        (chan, comb, theta, dec)
    }

    #[test]
    fn alpha_values() {
        assert!((alpha_of_bits(1.0) - 0.680_174_761_587_831_7).abs() < 1e-12);
        assert!((alpha_of_bits(0.0) - 2.720_699_046_351_326_8).abs() < 1e-12);
        assert!(alpha_of_bits(40.0) < 1e-23);
    }

    #[test]
    fn codebook_is_orthonormal() {
        for (n, s) in [(64, 12), (8, 4), (4, 3), (5, 5)] {
            let d = dft_codebook(n, s);
            let gram = d.adjoint() * &d;
            assert!((gram - CMat::identity(s, s)).norm() < 1e-12, "n={n} s={s}");
        }
    }

    #[test]
    fn zero_channel_leaves_only_noise_in_quantizer_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut chan, comb, theta, _) = small_instance(&mut rng);
        for h in &mut chan.h {
            h.fill(C64::new(0.0, 0.0));
        }
        let a = quant_noise_cov(&chan, &comb, &theta, 0.3, AqnmMode::PaperFaithful);
        let f = comb.combiner();
        let scale = AqnmMode::PaperFaithful.distortion_scale(2.0);
        for m in 0..2 {
            let expect = scale * 0.3 * f.column(m).norm_squared();
            assert!((a[(m, m)].re - expect).abs() < 1e-14 && expect > 0.0);
        }
        assert_eq!(a[(0, 1)], C64::new(0.0, 0.0));
    }

    #[test]
    fn quantizer_covariance_is_nonnegative_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (chan, comb, theta, _) = small_instance(&mut rng);
            let a = quant_noise_cov(&chan, &comb, &theta, 0.1, AqnmMode::Standard);
            for i in 0..2 {
                for j in 0..2 {
                    if i == j {
                        assert!(a[(i, i)].re >= 0.0 && a[(i, i)].im == 0.0);
                    } else {
                        assert_eq!(a[(i, j)], C64::new(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn quantize_without_distortion_is_pure_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = CVec::from_vec(vec![C64::new(1.0, -2.0), C64::new(0.5, 0.25)]);
        let out = quantize_with_diag(&y, 0.7, &[0.0, 0.0], &mut rng);
        assert_eq!(out, y.map(|z| z * 0.7));
    }

    #[test]
    fn zero_user_channel_has_zero_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut chan, comb, theta, dec) = small_instance(&mut rng);
        chan.h[1].fill(C64::new(0.0, 0.0));
        let r = rate_per_user(&chan, &comb, &theta, &dec, 0.5, AqnmMode::PaperFaithful).unwrap();
        assert_eq!(r[1], 0.0);
        assert!(r[0] > 0.0);
    }

    #[test]
    fn decoder_scaling_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (chan, comb, theta, dec) = small_instance(&mut rng);
        let base = rate_per_user(&chan, &comb, &theta, &dec, 0.5, AqnmMode::PaperFaithful).unwrap();
        let mut scaled = dec.clone();
        scaled.u[0] *= C64::new(-3.0, 7.5);
        let r = rate_per_user(&chan, &comb, &theta, &scaled, 0.5, AqnmMode::PaperFaithful).unwrap();
        assert!((r[0] - base[0]).abs() < 1e-12);
    }

    #[test]
    fn empty_combiner_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (chan, comb, theta, dec) = small_instance(&mut rng);
        let zero = CombinerState { codebook: CMat::zeros(4, 3), ..comb };
        let err = sum_rate(&chan, &zero, &theta, &dec, 0.5, AqnmMode::PaperFaithful).unwrap_err();
        assert!(matches!(err, Error::EmptyCombiner));
    }

    #[test]
    fn single_user_sum_equals_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut chan, comb, theta, mut dec) = small_instance(&mut rng);
        chan.h.truncate(1);
        dec.u.truncate(1);
        let r = rate_per_user(&chan, &comb, &theta, &dec, 0.2, AqnmMode::Standard).unwrap();
        let s = sum_rate(&chan, &comb, &theta, &dec, 0.2, AqnmMode::Standard).unwrap();
        assert_eq!(r[0], s);
    }

    #[test]
    fn relaxed_selection_checks() {
        let d = dft_codebook(4, 3);
        let ok = DMatrix::from_row_slice(3, 2, &[0.5, 0.2, 0.5, 0.3, 0.0, 0.5]);
        assert!(CombinerState::new(d.clone(), ok, 1.0).is_ok());
        let bad_col = DMatrix::from_row_slice(3, 2, &[0.5, 0.2, 0.4, 0.3, 0.0, 0.5]);
        assert!(CombinerState::new(d.clone(), bad_col, 1.0).is_err());
        let bad_row = DMatrix::from_row_slice(3, 2, &[0.9, 0.6, 0.1, 0.4, 0.0, 0.0]);
        assert!(CombinerState::new(d, bad_row, 1.0).is_err());
    }

    #[test]
    fn phase_vector_rejects_non_unit_entries() {
        let v = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.9, 0.0)]);
        assert!(PhaseVector::new(v).is_err());
    }

    fn mode_of(paper: bool) -> AqnmMode {
        if paper {
            AqnmMode::PaperFaithful
        } else {
            AqnmMode::Standard
        }
    }

    proptest::proptest! {
        #[test]
        fn common_phase_is_invisible(seed in 0u64..1_000, phi in 0.0f64..6.3, paper: bool, bits in 1.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (chan, comb, theta, dec) = small_instance(&mut rng);
            let comb = CombinerState { bits, ..comb };
            let mode = mode_of(paper);
            let turned = PhaseVector::new(theta.vector() * C64::from_polar(1.0, phi)).unwrap();
            let a = rate_per_user(&chan, &comb, &theta, &dec, 0.5, mode).unwrap();
            let b = rate_per_user(&chan, &comb, &turned, &dec, 0.5, mode).unwrap();
            for (x, y) in a.iter().zip(&b) {
                proptest::prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn rates_are_finite_and_nonnegative(seed in 0u64..1_000, paper: bool, bits in 1.0f64..5.0, noise in 1e-6f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (chan, comb, theta, dec) = small_instance(&mut rng);
            let comb = CombinerState { bits, ..comb };
            let r = rate_per_user(&chan, &comb, &theta, &dec, noise, mode_of(paper)).unwrap();
            proptest::prop_assert!(r.iter().all(|v| v.is_finite() && *v >= 0.0));
        }

        #[test]
        fn stronger_interferer_never_helps(seed in 0u64..1_000, paper: bool, boost in 1.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (chan, comb, theta, dec) = small_instance(&mut rng);
            let mode = mode_of(paper);
            let before = rate_per_user(&chan, &comb, &theta, &dec, 0.5, mode).unwrap();
            let mut louder = chan.clone();
            louder.h[1] *= C64::new(boost, 0.0);
            let after = rate_per_user(&louder, &comb, &theta, &dec, 0.5, mode).unwrap();
            proptest::prop_assert!(after[0] <= before[0] * (1.0 + 1e-12));
        }
    }
}
