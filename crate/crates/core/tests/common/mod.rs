#![allow(dead_code)]

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use risopt::quantizer::AqnmMode;
use risopt::{CMat, CVec, C64};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `CN(0, 1)` via Box–Muller.
pub fn cn<R: Rng>(rng: &mut R) -> C64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    let r = (-u1.ln()).sqrt();
    let phi = 2.0 * std::f64::consts::PI * u2;
    C64::new(r * phi.cos(), r * phi.sin())
}

pub fn cmat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| cn(rng))
}

pub fn cvec<R: Rng>(rng: &mut R, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| cn(rng))
}

/// `(π√3/2)·2^{−2b}`.
pub fn alpha(b: f64) -> f64 {
    std::f64::consts::PI * 3f64.sqrt() / 2.0 * 2f64.powf(-2.0 * b)
}

/// Signal gain and distortion scale of each mode.
pub fn gain_and_scale(mode: AqnmMode, b: f64) -> (f64, f64) {
    let a = alpha(b);
    match mode {
        AqnmMode::PaperFaithful => (a, a * b),
        AqnmMode::Standard => (1.0 - a, a * (1.0 - a)),
    }
}

/// Everything the rate formula reads, in plain arrays.
pub struct RateInputs<'a> {
    pub g: &'a CMat,
    pub h: &'a [CVec],
    pub theta: &'a [C64],
    pub codebook: &'a CMat,
    pub selection: &'a DMatrix<f64>,
    pub bits: f64,
    pub u: &'a [CVec],
    pub sigma2: f64,
    pub mode: AqnmMode,
}

/// Term-by-term evaluation of the achievable rates with explicit loops.
pub fn rates_oracle(x: &RateInputs) -> Vec<f64> {
    let n = x.g.nrows();
    let nr = x.g.ncols();
    let s_n = x.codebook.ncols();
    let m_n = x.selection.ncols();
    let k_n = x.h.len();
    let (ga, q) = gain_and_scale(x.mode, x.bits);

    // F = D W
    let mut f = vec![vec![C64::new(0.0, 0.0); m_n]; n];
    for i in 0..n {
        for m in 0..m_n {
            for s in 0..s_n {
                f[i][m] += x.codebook[(i, s)] * x.selection[(s, m)];
            }
        }
    }
    // c_l = G Θ h_l
    let mut c = vec![vec![C64::new(0.0, 0.0); n]; k_n];
    for l in 0..k_n {
        for i in 0..n {
            for j in 0..nr {
                c[l][i] += x.g[(i, j)] * x.theta[j] * x.h[l][j];
            }
        }
    }
    // y_l = Fᴴ c_l
    let mut y = vec![vec![C64::new(0.0, 0.0); m_n]; k_n];
    for l in 0..k_n {
        for m in 0..m_n {
            for i in 0..n {
                y[l][m] += f[i][m].conj() * c[l][i];
            }
        }
    }
    // A_a diagonal: q (Σ_l |y_l[m]|² + σ² ‖f_m‖²)
    let mut a_diag = vec![0.0; m_n];
    for m in 0..m_n {
        let mut sig = 0.0;
        for yl in &y {
            sig += yl[m].norm_sqr();
        }
        let mut ff = 0.0;
        for row in &f {
            ff += row[m].norm_sqr();
        }
        a_diag[m] = q * (sig + x.sigma2 * ff);
    }
    let mut out = Vec::with_capacity(k_n);
    for k in 0..k_n {
        let uk = &x.u[k];
        let proj = |l: usize| -> C64 {
            let mut z = C64::new(0.0, 0.0);
            for m in 0..m_n {
                z += uk[m].conj() * y[l][m] * ga;
            }
            z
        };
        let num = proj(k).norm_sqr();
        let mut den = 0.0;
        for l in 0..k_n {
            if l != k {
                den += proj(l).norm_sqr();
            }
        }
        // σ² ‖u_kᴴ g Fᴴ‖²
        let mut fu = 0.0;
        for row in &f {
            let mut z = C64::new(0.0, 0.0);
            for m in 0..m_n {
                z += uk[m].conj() * ga * row[m].conj();
            }
            fu += z.norm_sqr();
        }
        den += x.sigma2 * fu;
        for m in 0..m_n {
            den += uk[m].norm_sqr() * a_diag[m];
        }
        out.push((1.0 + num / den).log2());
    }
    out
}

/// Real symmetric embedding `[[Re, −Im], [Im, Re]]` of a Hermitian matrix.
pub fn real_embedding(m: &CMat) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = m[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// `λ_max` of the pencil `(B, D)` for Hermitian `B` and positive definite `D`.
pub fn generalized_max_eig(b: &CMat, d: &CMat) -> f64 {
    let l = d.clone().cholesky().expect("D positive definite").l();
    let li = l.try_inverse().expect("invertible factor");
    let c = &li * b * li.adjoint();
    let c = (&c + c.adjoint()) * C64::new(0.5, 0.0);
    SymmetricEigen::new(real_embedding(&c)).eigenvalues.max()
}

/// Closed-form smallest eigenvalue of `[[a, r], [r, b]]`.
pub fn min_eig_2x2(a: f64, b: f64, r: f64) -> f64 {
    let mean = 0.5 * (a + b);
    let half = 0.5 * (a - b);
    mean - (half * half + r * r).sqrt()
}

/// Line written past the test harness's output capture.
pub fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {criterion}: {verdict} ({detail})");
    let _ = out.flush();
}
