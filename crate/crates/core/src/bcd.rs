//! Outer block-coordinate ascent over `(b, W)`, the decoders `u` and the
//! RIS phases `θ`, plus the baseline schemes scored on the same model.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::channel::ChannelRealization;
use crate::mm::{optimal_decoders, optimize_decoders, MM_MAX_ITER, MM_TOL};
use crate::phase::{mo_solve, MoOptions};
use crate::quantizer::{
    dft_codebook, effective_rate_per_user, effective_sum_rate, AqnmMode, CombinerState, DecoderBank, PhaseVector,
};
use crate::sca::{binary_selection, project_beams, ray_limit, round_bits, sca_solve, ScaIterate, ScaOptions, ScaProblem};
use crate::scenario::{Stream, SystemConfig, TrialSeed};
use crate::conic::SolveOptions;
use crate::{CMat, Result, C64};

/// How a fixed-depth baseline treats the RIS phases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseMode {
    Random,
    Optimized,
}

impl std::str::FromStr for PhaseMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "random" => Ok(PhaseMode::Random),
            "optimized" => Ok(PhaseMode::Optimized),
            other => Err(format!("unknown phase mode `{other}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BcdOptions {
    pub mode: AqnmMode,
    /// Stop once the sum rate changes by less than this (bits/s/Hz).
    pub tol: f64,
    pub max_outer: usize,
    pub sca: ScaOptions,
    pub mm_tol: f64,
    pub mm_max_iter: usize,
    pub mo: MoOptions,
    /// Round `b` and project `W` after every SCA block instead of once at
    /// the end.
    pub round_each_iter: bool,
    /// Rounding threshold for the relaxed depth.
    pub delta: f64,
    /// After each outer iteration, search along the step from the previous
    /// outer iterate in `(W, θ)` with decoders re-optimized in closed form.
    pub extrapolate: bool,
    /// Improve the projected beams by single replacements and swaps before
    /// the final polish.
    pub refine_beams: bool,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            mode: AqnmMode::default(),
            tol: 1e-4,
            max_outer: 30,
            sca: ScaOptions { tol: 1e-5, max_iter: 10, solver: SolveOptions { tol: 1e-4, ..Default::default() }, ..Default::default() },
            mm_tol: MM_TOL,
            mm_max_iter: MM_MAX_ITER,
            mo: MoOptions { joint_decoders: true, ftol: 1e-8, max_iter: 50, ..Default::default() },
            round_each_iter: false,
            delta: 0.5,
            extrapolate: true,
            refine_beams: true,
        }
    }
}

/// Accumulated wall time per block, seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BlockTimes {
    pub sca: f64,
    pub mm: f64,
    pub mo: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub scheme: String,
    /// Sum rate at the start and after every outer iteration, evaluated on
    /// the (possibly relaxed) iterate.
    pub trace: Vec<f64>,
    /// Sum rate after each block of each outer iteration: `[sca, mm, mo]`.
    pub block_trace: Vec<[f64; 3]>,
    pub iterations: usize,
    pub converged: bool,
    /// Blocks that failed or stalled, in order.
    pub flags: Vec<String>,
    /// Last relaxed depth before rounding.
    pub relaxed_bits: f64,
    pub bits: u32,
    pub beams: Vec<usize>,
    pub combiner: CombinerState,
    pub decoders: DecoderBank,
    /// `None` for schemes without an RIS.
    pub theta: Option<PhaseVector>,
    pub rates: Vec<f64>,
    /// Sum rate of the final binary design.
    pub sum_rate: f64,
    pub times: BlockTimes,
    /// SCA iterates of every outer iteration.
    pub sca_traces: Vec<Vec<ScaIterate>>,
}

/// Beam per RF chain by descending beam gain `‖(Dᴴ X)_s‖²`.
pub fn greedy_beams(codebook: &CMat, x: &CMat, n_rf: usize) -> Vec<usize> {
    let p = codebook.adjoint() * x;
    let gain: Vec<f64> = (0..p.nrows()).map(|s| p.row(s).iter().map(|z| z.norm_sqr()).sum()).collect();
    let mut order: Vec<usize> = (0..gain.len()).collect();
    order.sort_by(|&a, &b| gain[b].total_cmp(&gain[a]).then(a.cmp(&b)));
    order.truncate(n_rf);
    order
}

/// The channel a scheme optimizes over.
enum Link<'a> {
    Ris { chan: &'a ChannelRealization, optimize: bool },
    Direct(&'a CMat),
}

struct Setup<'a> {
    link: Link<'a>,
    theta: Option<PhaseVector>,
    bits: (u32, u32),
    scheme: &'static str,
}

fn effective(link: &Link, theta: &Option<PhaseVector>) -> CMat {
    match link {
        Link::Ris { chan, .. } => chan.cascaded(theta.as_ref().expect("RIS schemes carry phases").as_slice()),
        Link::Direct(h) => (*h).clone(),
    }
}

fn run(cfg: &SystemConfig, setup: Setup, opts: &BcdOptions) -> Result<SolveReport> {
    cfg.validate()?;
    let noise = cfg.noise_power;
    let mode = opts.mode;
    let (b_min, b_max) = setup.bits;
    let codebook = dft_codebook(cfg.n_ap, cfg.n_beams);
    let mut theta = setup.theta;
    let link = setup.link;
    let init_x = match &link {
        Link::Ris { chan, .. } => chan.g.clone(),
        Link::Direct(h) => (*h).clone(),
    };
    let beams0 = greedy_beams(&codebook, &init_x, cfg.n_rf);
    let mut comb = CombinerState::binary(codebook.clone(), &beams0, b_max as f64)?;
    let mut heff = effective(&link, &theta);
    let mut dec = DecoderBank::matched_filters(&heff, &comb, mode);
    let mut obj = effective_sum_rate(&heff, &comb, &dec, noise, mode)?;
    let mut trace = vec![obj];
    let mut block_trace = Vec::new();
    let mut flags = Vec::new();
    let mut times = BlockTimes::default();
    let mut sca_traces = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last: Option<(DMatrix<f64>, Option<PhaseVector>)> = None;

    for j in 1..=opts.max_outer {
        iterations = j;
        let prev = obj;

        let t0 = Instant::now();
        let problem = ScaProblem::from_effective(&heff, &comb, &dec, noise, mode, b_min, b_max)?;
        match sca_solve(&problem, &comb.selection, comb.bits, &opts.sca) {
            Ok(r) => {
                if let Some(why) = &r.stalled {
                    flags.push(format!("outer {j} sca: {why}"));
                }
                let mut next = CombinerState::new(codebook.clone(), r.selection.clone(), r.bits)?;
                if opts.round_each_iter {
                    let b = round_bits(r.bits, opts.delta, b_min, b_max);
                    let beams = project_beams(&r.selection)?;
                    next = CombinerState::binary(codebook.clone(), &beams, b as f64)?;
                }
                let v = effective_sum_rate(&heff, &next, &dec, noise, mode)?;
                if v >= obj || opts.round_each_iter {
                    comb = next;
                    obj = v;
                }
                sca_traces.push(r.trace);
            }
            Err(e) => flags.push(format!("outer {j} sca: {e}")),
        }
        times.sca += t0.elapsed().as_secs_f64();
        let after_sca = obj;

        let t0 = Instant::now();
        match optimize_decoders(&heff, &comb, noise, mode, &dec, opts.mm_tol, opts.mm_max_iter) {
            Ok((d, _)) => {
                dec = d;
                obj = effective_sum_rate(&heff, &comb, &dec, noise, mode)?;
            }
            Err(e) => flags.push(format!("outer {j} mm: {e}")),
        }
        times.mm += t0.elapsed().as_secs_f64();
        let after_mm = obj;

        let t0 = Instant::now();
        if let Link::Ris { chan, optimize: true } = &link {
            let th = theta.as_ref().expect("RIS schemes carry phases");
            match mo_solve(chan, &comb, &dec, noise, mode, th, &opts.mo) {
                Ok(r) => {
                    if r.stalled {
                        flags.push(format!("outer {j} mo: line search stalled"));
                    }
                    if r.objective >= obj {
                        theta = Some(r.theta);
                        if let Some(d) = r.decoders {
                            dec = d;
                        }
                        heff = effective(&link, &theta);
                        obj = effective_sum_rate(&heff, &comb, &dec, noise, mode)?;
                    }
                }
                Err(e) => flags.push(format!("outer {j} mo: {e}")),
            }
        }
        times.mo += t0.elapsed().as_secs_f64();
        block_trace.push([after_sca, after_mm, obj]);
        if opts.extrapolate {
            if let Some(prev_iter) = &last {
                let cur = Iterate { comb: &comb, theta: &theta };
                if let Some((c, t, d, v)) = outer_extrapolation(&link, cur, prev_iter, &dec, noise, mode, obj, !opts.round_each_iter)? {
                    comb = c;
                    theta = t;
                    dec = d;
                    heff = effective(&link, &theta);
                    obj = v;
                }
            }
            last = Some((comb.selection.clone(), theta.clone()));
        }
        trace.push(obj);
        if (obj - prev).abs() < opts.tol {
            converged = true;
            break;
        }
    }

    let relaxed_bits = comb.bits;
    let bits = round_bits(relaxed_bits, opts.delta, b_min, b_max);
    let mut beams = project_beams(&comb.selection)?;
    let mut comb = CombinerState::binary(codebook.clone(), &beams, bits as f64)?;
    // polish the continuous blocks on the binary design
    let t0 = Instant::now();
    if let Ok((d, _)) = optimize_decoders(&heff, &comb, noise, mode, &dec, opts.mm_tol, opts.mm_max_iter) {
        dec = d;
    }
    times.mm += t0.elapsed().as_secs_f64();
    if opts.refine_beams {
        let t0 = Instant::now();
        let (b, d) = refine_beams(&heff, &codebook, beams, bits as f64, &dec, noise, mode)?;
        beams = b;
        dec = d;
        comb = CombinerState::binary(codebook.clone(), &beams, bits as f64)?;
        times.sca += t0.elapsed().as_secs_f64();
    }
    if let Link::Ris { chan, optimize: true } = &link {
        let t0 = Instant::now();
        let th = theta.as_ref().expect("RIS schemes carry phases");
        let before = effective_sum_rate(&heff, &comb, &dec, noise, mode)?;
        if let Ok(r) = mo_solve(chan, &comb, &dec, noise, mode, th, &opts.mo) {
            if r.objective >= before {
                theta = Some(r.theta);
                if let Some(d) = r.decoders {
                    dec = d;
                }
                heff = effective(&link, &theta);
            }
        }
        times.mo += t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        if let Ok((d, _)) = optimize_decoders(&heff, &comb, noise, mode, &dec, opts.mm_tol, opts.mm_max_iter) {
            dec = d;
        }
        times.mm += t0.elapsed().as_secs_f64();
    }
    comb.selection = binary_selection(cfg.n_beams, &beams);
    let rates = effective_rate_per_user(&heff, &comb, &dec, noise, mode)?;
    let sum_rate = rates.iter().sum();
    Ok(SolveReport {
        scheme: setup.scheme.to_string(),
        trace,
        block_trace,
        iterations,
        converged,
        flags,
        relaxed_bits,
        bits,
        beams,
        combiner: comb,
        decoders: dec,
        theta: match link {
            Link::Ris { .. } => theta,
            Link::Direct(_) => None,
        },
        rates,
        sum_rate,
        times,
        sca_traces,
    })
}

/// First-improvement local search over binary designs: each RF chain tries
/// every other beam, swapping with the chain that holds it. Candidates are
/// scored with their optimal decoders; the returned decoders keep `dec`
/// when nothing improves.
fn refine_beams(
    heff: &CMat,
    codebook: &CMat,
    mut beams: Vec<usize>,
    bits: f64,
    dec: &DecoderBank,
    noise: f64,
    mode: AqnmMode,
) -> Result<(Vec<usize>, DecoderBank)> {
    let score = |b: &[usize]| -> Result<(f64, DecoderBank)> {
        let comb = CombinerState::binary(codebook.clone(), b, bits)?;
        let d = optimal_decoders(heff, &comb, noise, mode, dec)?;
        Ok((effective_sum_rate(heff, &comb, &d, noise, mode)?, d))
    };
    let start = CombinerState::binary(codebook.clone(), &beams, bits)?;
    let mut best = effective_sum_rate(heff, &start, dec, noise, mode)?;
    let mut best_dec = dec.clone();
    for _ in 0..10 {
        let mut improved = false;
        for m in 0..beams.len() {
            for s in 0..codebook.ncols() {
                if beams[m] == s {
                    continue;
                }
                let mut cand = beams.clone();
                if let Some(other) = cand.iter().position(|&x| x == s) {
                    cand.swap(m, other);
                } else {
                    cand[m] = s;
                }
                let (v, d) = score(&cand)?;
                if v > best * (1.0 + 1e-12) {
                    best = v;
                    best_dec = d;
                    beams = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok((beams, best_dec))
}

struct Iterate<'a> {
    comb: &'a CombinerState,
    theta: &'a Option<PhaseVector>,
}

/// Best point on `x + β(x − x_prev)`, `β = 1, 2, 4, …`, over the selection
/// and the phases, each candidate scored with its optimal decoders. `None`
/// unless some candidate beats `obj`.
fn outer_extrapolation(
    link: &Link,
    cur: Iterate,
    prev: &(DMatrix<f64>, Option<PhaseVector>),
    dec: &DecoderBank,
    noise: f64,
    mode: AqnmMode,
    obj: f64,
    move_w: bool,
) -> Result<Option<(CombinerState, Option<PhaseVector>, DecoderBank, f64)>> {
    let (s_n, m_n) = cur.comb.selection.shape();
    let w: Vec<f64> = cur.comb.selection.as_slice().to_vec();
    let dw: Vec<f64> = if move_w {
        w.iter().zip(prev.0.as_slice()).map(|(a, b)| a - b).collect()
    } else {
        vec![0.0; w.len()]
    };
    let w_max = ray_limit(&w, &dw, s_n, m_n);
    let dtheta = match (cur.theta, &prev.1) {
        (Some(t), Some(p)) => Some(t.vector() - p.vector()),
        _ => None,
    };
    let mut best: Option<(CombinerState, Option<PhaseVector>, DecoderBank, f64)> = None;
    let mut beta: f64 = 1.0;
    for _ in 0..8 {
        let bw = beta.min(w_max);
        let sel = DMatrix::from_iterator(s_n, m_n, w.iter().zip(&dw).map(|(a, d)| (a + bw * d).clamp(0.0, 1.0)));
        let comb = CombinerState::new(cur.comb.codebook.clone(), sel, cur.comb.bits)?;
        let theta = match (cur.theta, &dtheta) {
            (Some(t), Some(d)) => {
                let v = t.vector() + d * C64::new(beta, 0.0);
                Some(PhaseVector::new(v.map(|z| if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) }))?)
            }
            (t, _) => t.clone(),
        };
        let heff = effective(link, &theta);
        let d = optimal_decoders(&heff, &comb, noise, mode, dec)?;
        let v = effective_sum_rate(&heff, &comb, &d, noise, mode)?;
        let bar = best.as_ref().map_or(obj, |b| b.3);
        if !(v > bar) {
            break;
        }
        best = Some((comb, theta, d, v));
        beta *= 2.0;
    }
    Ok(best)
}

/// Full pipeline: bits and selection, decoders, then phases, repeated
/// until the sum rate settles.
pub fn bcd_solve(cfg: &SystemConfig, chan: &ChannelRealization, opts: &BcdOptions) -> Result<SolveReport> {
    let setup = Setup {
        link: Link::Ris { chan, optimize: true },
        theta: Some(PhaseVector::ones(chan.n_ris())),
        bits: (cfg.b_min, cfg.b_max),
        scheme: "full",
    };
    run(cfg, setup, opts)
}

/// Bits, selection and decoders optimized on a direct user→AP channel
/// (`n_ap × K`) with no RIS.
pub fn baseline_no_ris(cfg: &SystemConfig, direct: &CMat, opts: &BcdOptions) -> Result<SolveReport> {
    let setup = Setup { link: Link::Direct(direct), theta: None, bits: (cfg.b_min, cfg.b_max), scheme: "no-ris" };
    run(cfg, setup, opts)
}

/// The pipeline with the bit depth pinned to `b_fixed`. Random phases are
/// drawn once from the trial's phase stream and kept.
pub fn baseline_fixed(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    b_fixed: u32,
    phase_mode: PhaseMode,
    seed: TrialSeed,
    opts: &BcdOptions,
) -> Result<SolveReport> {
    if b_fixed < cfg.b_min || b_fixed > cfg.b_max {
        return Err(crate::Error::Domain(format!(
            "fixed depth {b_fixed} outside [{}, {}]",
            cfg.b_min, cfg.b_max
        )));
    }
    let (theta, optimize, scheme) = match phase_mode {
        PhaseMode::Random => {
            let mut rng = seed.rng(Stream::RandomPhases);
            (PhaseVector::random(chan.n_ris(), &mut rng), false, "fixed-random")
        }
        PhaseMode::Optimized => (PhaseVector::ones(chan.n_ris()), true, "fixed-optimized"),
    };
    let setup = Setup { link: Link::Ris { chan, optimize }, theta: Some(theta), bits: (b_fixed, b_fixed), scheme };
    run(cfg, setup, opts)
}

/// A selection matrix that is uniform over beams, the usual relaxed start.
pub fn uniform_selection(n_beams: usize, n_rf: usize) -> DMatrix<f64> {
    DMatrix::from_element(n_beams, n_rf, 1.0 / n_beams as f64)
}
