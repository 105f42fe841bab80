//! Monte-Carlo sweeps, single-trial traces and block timing benchmarks.
//!
//! All CSV output uses `,` separators, a header row and floats written with
//! 17 significant digits. The main sweep file holds no timings so that a
//! re-run with the same config is byte-identical; wall times go to a
//! `_timings.csv` companion.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::bcd::{baseline_fixed, baseline_no_ris, bcd_solve, greedy_beams, BcdOptions, PhaseMode, SolveReport};
use crate::channel::{draw_channels, draw_direct_channels, ChannelRealization};
use crate::mm::optimize_decoders;
use crate::phase::mo_solve;
use crate::quantizer::{dft_codebook, CombinerState, DecoderBank, PhaseVector};
use crate::sca::{sca_solve, ScaProblem};
use crate::scenario::{user_positions, SystemConfig, TrialSeed};
use crate::{Error, Result};

/// Exponent string of the per-iteration complexity the bench compares to.
pub const COMPLEXITY: &str = "O(SM^{3.5}+K^{2.5}+KN_{t}+N_{r}N_{t})";

/// Float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Full,
    NoRis,
    /// Pinned depth (`None` means `b_max`) with random or optimized phases.
    Fixed { phase: PhaseMode, bits: Option<u32> },
}

impl Scheme {
    pub fn name(&self) -> String {
        match self {
            Scheme::Full => "full".into(),
            Scheme::NoRis => "no-ris".into(),
            Scheme::Fixed { phase, bits } => {
                let p = match phase {
                    PhaseMode::Random => "fixed-random",
                    PhaseMode::Optimized => "fixed-optimized",
                };
                match bits {
                    Some(b) => format!("{p}:{b}"),
                    None => p.into(),
                }
            }
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (head, bits) = match s.split_once(':') {
            Some((h, b)) => (h, Some(b.parse::<u32>().map_err(|_| format!("bad bit depth in `{s}`"))?)),
            None => (s, None),
        };
        match head {
            "full" if bits.is_none() => Ok(Scheme::Full),
            "no-ris" if bits.is_none() => Ok(Scheme::NoRis),
            "fixed-random" => Ok(Scheme::Fixed { phase: PhaseMode::Random, bits }),
            "fixed-optimized" => Ok(Scheme::Fixed { phase: PhaseMode::Optimized, bits }),
            _ => Err(format!("unknown scheme `{s}`")),
        }
    }
}

/// Channels of one trial, drawn once and shared by every scheme.
pub struct TrialDraw {
    pub seed: TrialSeed,
    pub chan: ChannelRealization,
    pub direct: Option<crate::CMat>,
}

pub fn draw_trial(cfg: &SystemConfig, trial: u64, with_direct: bool) -> Result<TrialDraw> {
    cfg.validate()?;
    let seed = TrialSeed::new(cfg.seed, trial);
    let positions = user_positions(cfg, seed);
    let chan = draw_channels(cfg, &positions, seed)?;
    let direct = if with_direct { Some(draw_direct_channels(cfg, &positions, seed)?) } else { None };
    Ok(TrialDraw { seed, chan, direct })
}

pub fn run_scheme(cfg: &SystemConfig, scheme: Scheme, draw: &TrialDraw, opts: &BcdOptions) -> Result<SolveReport> {
    match scheme {
        Scheme::Full => bcd_solve(cfg, &draw.chan, opts),
        Scheme::NoRis => {
            let direct = match &draw.direct {
                Some(d) => d.clone(),
                None => draw_direct_channels(cfg, &user_positions(cfg, draw.seed), draw.seed)?,
            };
            baseline_no_ris(cfg, &direct, opts)
        }
        Scheme::Fixed { phase, bits } => {
            baseline_fixed(cfg, &draw.chan, bits.unwrap_or(cfg.b_max), phase, draw.seed, opts)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub scheme: String,
    pub value: Option<usize>,
    pub trial: u64,
    pub seed: u64,
    /// `Err` holds the failure message.
    pub status: std::result::Result<(), String>,
    pub asr: f64,
    pub iterations: usize,
    pub converged: bool,
    pub bits: u32,
    pub flags: Vec<String>,
    pub wall_s: f64,
    pub block_s: [f64; 3],
}

impl TrialOutcome {
    pub fn ok(&self) -> bool {
        self.status.is_ok()
    }
}

fn outcome(scheme: Scheme, value: Option<usize>, seed: TrialSeed, res: Result<SolveReport>, wall_s: f64) -> TrialOutcome {
    let mut o = TrialOutcome {
        scheme: scheme.name(),
        value,
        trial: seed.trial_index,
        seed: seed.derived_stream,
        status: Ok(()),
        asr: f64::NAN,
        iterations: 0,
        converged: false,
        bits: 0,
        flags: Vec::new(),
        wall_s,
        block_s: [0.0; 3],
    };
    match res {
        Ok(r) => {
            o.asr = r.sum_rate;
            o.iterations = r.iterations;
            o.converged = r.converged;
            o.bits = r.bits;
            o.flags = r.flags;
            o.block_s = [r.times.sca, r.times.mm, r.times.mo];
            if !o.asr.is_finite() {
                o.status = Err("non-finite sum rate".into());
            }
        }
        Err(e) => o.status = Err(e.to_string()),
    }
    o
}

/// Run every scheme on trial `trial` of `cfg`.
pub fn run_trial(cfg: &SystemConfig, schemes: &[Scheme], trial: u64, value: Option<usize>, opts: &BcdOptions) -> Vec<TrialOutcome> {
    let seed = TrialSeed::new(cfg.seed, trial);
    let with_direct = schemes.contains(&Scheme::NoRis);
    let draw = match draw_trial(cfg, trial, with_direct) {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return schemes
                .iter()
                .map(|&s| outcome(s, value, seed, Err(Error::Domain(msg.clone())), 0.0))
                .collect();
        }
    };
    schemes
        .iter()
        .map(|&s| {
            let t0 = Instant::now();
            let r = run_scheme(cfg, s, &draw, opts);
            outcome(s, value, seed, r, t0.elapsed().as_secs_f64())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    NRis,
    NRf,
    BMax,
    None,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::NRis => "n_ris",
            SweepParam::NRf => "n_rf",
            SweepParam::BMax => "b_max",
            SweepParam::None => "none",
        }
    }

    /// `cfg` with the parameter set to `value`.
    pub fn apply(self, cfg: &SystemConfig, value: usize) -> Result<SystemConfig> {
        let mut c = cfg.clone();
        if self != SweepParam::None {
            c.set(self.name(), &value.to_string()).map_err(Error::Domain)?;
        }
        c.validate()?;
        Ok(c)
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "n_ris" => Ok(SweepParam::NRis),
            "n_rf" => Ok(SweepParam::NRf),
            "b_max" => Ok(SweepParam::BMax),
            "none" => Ok(SweepParam::None),
            other => Err(format!("unknown sweep parameter `{other}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub param: SweepParam,
    /// Ignored for [`SweepParam::None`].
    pub values: Vec<usize>,
    pub trials: usize,
    pub schemes: Vec<Scheme>,
    /// Main CSV; companions are written next to it.
    pub out: Option<PathBuf>,
}

impl SweepSpec {
    fn points(&self) -> Vec<Option<usize>> {
        if self.param == SweepParam::None {
            vec![None]
        } else {
            self.values.iter().map(|&v| Some(v)).collect()
        }
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Domain("no schemes".into()));
        }
        if self.param != SweepParam::None && self.values.is_empty() {
            return Err(Error::Domain(format!("no values for `{}`", self.param.name())));
        }
        for v in self.values.iter().filter(|_| self.param != SweepParam::None) {
            self.param.apply(cfg, *v)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub scheme: String,
    pub value: Option<usize>,
    pub n_ok: usize,
    pub n_failed: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
}

impl SummaryRow {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Linearly interpolated quantile of sorted data; NaN when empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(rows: &[TrialOutcome]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, Option<usize>)> = Vec::new();
    for r in rows {
        let k = (r.scheme.clone(), r.value);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(scheme, value)| {
            let group: Vec<&TrialOutcome> = rows.iter().filter(|r| r.scheme == scheme && r.value == value).collect();
            let mut asr: Vec<f64> = group.iter().filter(|r| r.ok()).map(|r| r.asr).collect();
            asr.sort_by(f64::total_cmp);
            let mean = if asr.is_empty() { f64::NAN } else { asr.iter().sum::<f64>() / asr.len() as f64 };
            SummaryRow {
                scheme,
                value,
                n_ok: asr.len(),
                n_failed: group.len() - asr.len(),
                median: quantile(&asr, 0.5),
                q1: quantile(&asr, 0.25),
                q3: quantile(&asr, 0.75),
                mean,
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub param: SweepParam,
    pub rows: Vec<TrialOutcome>,
    pub summary: Vec<SummaryRow>,
}

impl SweepResult {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(TrialOutcome::ok)
    }

    pub fn median(&self, scheme: &str, value: Option<usize>) -> Option<f64> {
        self.summary.iter().find(|s| s.scheme == scheme && s.value == value).map(|s| s.median)
    }
}

/// Run the sweep on a pool of `jobs` workers (`0` picks the core count).
/// Rows come back in (value, trial, scheme) order regardless of `jobs`.
pub fn run_sweep(spec: &SweepSpec, cfg: &SystemConfig, opts: &BcdOptions, jobs: usize) -> Result<SweepResult> {
    spec.validate(cfg)?;
    let tasks: Vec<(Option<usize>, u64)> = spec
        .points()
        .into_iter()
        .flat_map(|v| (0..spec.trials as u64).map(move |t| (v, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Domain(e.to_string()))?;
    let rows: Vec<TrialOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(v, t)| {
                let c = match v {
                    Some(v) => spec.param.apply(cfg, v).expect("validated"),
                    None => cfg.clone(),
                };
                run_trial(&c, &spec.schemes, t, v, opts)
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let summary = summarize(&rows);
    let res = SweepResult { param: spec.param, rows, summary };
    if let Some(out) = &spec.out {
        write_sweep(out, &res)?;
    }
    Ok(res)
}

fn value_text(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Commas and newlines cannot appear inside a field.
fn field(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

pub fn sweep_csv(res: &SweepResult) -> String {
    let mut s = String::from("scheme,param,value,trial,seed,status,asr,iterations,converged,bits,flags\n");
    for r in &res.rows {
        let status = match &r.status {
            Ok(()) => "ok".to_string(),
            Err(e) => format!("error: {}", field(e)),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.scheme,
            res.param.name(),
            value_text(r.value),
            r.trial,
            r.seed,
            status,
            fmt_f64(r.asr),
            r.iterations,
            r.converged,
            r.bits,
            field(&r.flags.join(" | ")),
        );
    }
    s
}

pub fn timings_csv(res: &SweepResult) -> String {
    let mut s = String::from("scheme,param,value,trial,wall_s,sca_s,mm_s,mo_s\n");
    for r in &res.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.scheme,
            res.param.name(),
            value_text(r.value),
            r.trial,
            fmt_f64(r.wall_s),
            fmt_f64(r.block_s[0]),
            fmt_f64(r.block_s[1]),
            fmt_f64(r.block_s[2]),
        );
    }
    s
}

pub fn summary_csv(res: &SweepResult) -> String {
    let mut s = String::from("scheme,param,value,n_ok,n_failed,median,q1,q3,iqr,mean\n");
    for r in &res.summary {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.scheme,
            res.param.name(),
            value_text(r.value),
            r.n_ok,
            r.n_failed,
            fmt_f64(r.median),
            fmt_f64(r.q1),
            fmt_f64(r.q3),
            fmt_f64(r.iqr()),
            fmt_f64(r.mean),
        );
    }
    s
}

/// `out` with `suffix` inserted before the extension: `a/b.csv` → `a/b_suffix.csv`.
pub fn companion_path(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    out.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn write_sweep(out: &Path, res: &SweepResult) -> Result<()> {
    write_text(out, &sweep_csv(res))?;
    write_text(&companion_path(out, "summary"), &summary_csv(res))?;
    write_text(&companion_path(out, "timings"), &timings_csv(res))
}

/// Per-outer-iteration objective of one report. Row 0 is the starting
/// point and leaves the block columns empty.
pub fn trace_csv(report: &SolveReport) -> String {
    let mut s = String::from("iteration,objective,after_sca,after_mm,after_mo\n");
    for (j, v) in report.trace.iter().enumerate() {
        let blocks = match j.checked_sub(1).and_then(|i| report.block_trace.get(i)) {
            Some(b) => format!("{},{},{}", fmt_f64(b[0]), fmt_f64(b[1]), fmt_f64(b[2])),
            None => ",,".into(),
        };
        let _ = writeln!(s, "{j},{},{blocks}", fmt_f64(*v));
    }
    s
}

/// Every SCA iterate of every outer iteration.
pub fn sca_trace_csv(report: &SolveReport) -> String {
    let mut s = String::from("outer,n,objective,b,max_violation\n");
    for (j, tr) in report.sca_traces.iter().enumerate() {
        for it in tr {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                j + 1,
                it.n,
                fmt_f64(it.objective),
                fmt_f64(it.b),
                fmt_f64(it.max_violation)
            );
        }
    }
    s
}

/// Dimension scaled by the bench.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchDim {
    /// `S`, beams in the codebook.
    Beams,
    /// `M`, RF chains.
    RfChains,
    /// `K`, users.
    Users,
    /// `N_t`, AP antennas.
    Antennas,
    /// `N_r`, RIS elements.
    RisElements,
}

impl BenchDim {
    pub const ALL: [BenchDim; 5] =
        [BenchDim::Beams, BenchDim::RfChains, BenchDim::Users, BenchDim::Antennas, BenchDim::RisElements];

    pub fn name(self) -> &'static str {
        match self {
            BenchDim::Beams => "n_beams",
            BenchDim::RfChains => "n_rf",
            BenchDim::Users => "n_users",
            BenchDim::Antennas => "n_ap",
            BenchDim::RisElements => "n_ris",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchSpec {
    pub base: SystemConfig,
    pub dims: Vec<(BenchDim, Vec<usize>)>,
    pub repeats: usize,
}

impl BenchSpec {
    /// A small base point with each dimension doubled twice.
    pub fn standard(cfg: &SystemConfig) -> Self {
        let mut base = cfg.clone();
        base.n_ap = 32;
        base.n_beams = 8;
        base.n_rf = 4;
        base.n_users = 4;
        base.n_ris = 8;
        base.ris_geometry = crate::scenario::RisGeometry::Linear;
        Self {
            base,
            dims: vec![
                (BenchDim::Beams, vec![8, 16, 32]),
                (BenchDim::RfChains, vec![2, 4, 8]),
                (BenchDim::Users, vec![2, 4, 8]),
                (BenchDim::Antennas, vec![32, 64, 128]),
                (BenchDim::RisElements, vec![8, 16, 32]),
            ],
            repeats: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub dim: BenchDim,
    pub value: usize,
    /// Mean and sample standard deviation of `[sca, mm, mo]` seconds.
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    /// Log-log slope of each block's mean time per dimension.
    pub slopes: Vec<(BenchDim, [f64; 3])>,
}

/// The pipeline's starting point on a trial: all-ones phases, greedy beams
/// at `b_max` and matched filters.
pub struct StartPoint {
    pub theta: PhaseVector,
    pub heff: crate::CMat,
    pub comb: CombinerState,
    pub dec: DecoderBank,
}

pub fn start_point(cfg: &SystemConfig, chan: &ChannelRealization, opts: &BcdOptions) -> Result<StartPoint> {
    let codebook = dft_codebook(cfg.n_ap, cfg.n_beams);
    let theta = PhaseVector::ones(chan.n_ris());
    let heff = chan.cascaded(theta.as_slice());
    let beams = greedy_beams(&codebook, &chan.g, cfg.n_rf);
    let comb = CombinerState::binary(codebook, &beams, cfg.b_max as f64)?;
    let dec = DecoderBank::matched_filters(&heff, &comb, opts.mode);
    Ok(StartPoint { theta, heff, comb, dec })
}

/// Text of the first SCA subproblem the full pipeline solves.
pub fn first_subproblem_text(cfg: &SystemConfig, chan: &ChannelRealization, opts: &BcdOptions) -> Result<String> {
    let p = start_point(cfg, chan, opts)?;
    let problem = ScaProblem::from_effective(&p.heff, &p.comb, &p.dec, cfg.noise_power, opts.mode, cfg.b_min, cfg.b_max)?;
    let sca = crate::sca::ScaOptions { capture_subproblem: true, max_iter: 1, ..opts.sca.clone() };
    let r = sca_solve(&problem, &p.comb.selection, p.comb.bits, &sca)?;
    r.subproblem_text.ok_or_else(|| Error::Domain("no subproblem was assembled".into()))
}

/// One pass of each block from the starting point.
pub fn time_blocks(cfg: &SystemConfig, trial: u64, opts: &BcdOptions) -> Result<[f64; 3]> {
    let draw = draw_trial(cfg, trial, false)?;
    let (chan, noise, mode) = (&draw.chan, cfg.noise_power, opts.mode);
    let StartPoint { theta, heff, comb, dec } = start_point(cfg, chan, opts)?;

    let t0 = Instant::now();
    let problem = ScaProblem::from_effective(&heff, &comb, &dec, noise, mode, cfg.b_min, cfg.b_max)?;
    let _ = sca_solve(&problem, &comb.selection, comb.bits, &opts.sca)?;
    let sca = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let (dec, _) = optimize_decoders(&heff, &comb, noise, mode, &dec, opts.mm_tol, opts.mm_max_iter)?;
    let mm = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let _ = mo_solve(chan, &comb, &dec, noise, mode, &theta, &opts.mo)?;
    let mo = t0.elapsed().as_secs_f64();
    Ok([sca, mm, mo])
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn run_bench(spec: &BenchSpec, opts: &BcdOptions) -> Result<BenchResult> {
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for (dim, values) in &spec.dims {
        let first = rows.len();
        for &v in values {
            let mut cfg = spec.base.clone();
            cfg.set(dim.name(), &v.to_string()).map_err(Error::Domain)?;
            if cfg.n_beams > cfg.n_ap {
                cfg.n_ap = cfg.n_beams;
            }
            if cfg.n_rf > cfg.n_beams {
                cfg.n_beams = cfg.n_rf;
            }
            let samples: Vec<[f64; 3]> =
                (0..spec.repeats as u64).map(|r| time_blocks(&cfg, r, opts)).collect::<Result<_>>()?;
            let n = samples.len() as f64;
            let mut mean = [0.0; 3];
            let mut std = [0.0; 3];
            for b in 0..3 {
                mean[b] = samples.iter().map(|s| s[b]).sum::<f64>() / n;
                let ss: f64 = samples.iter().map(|s| (s[b] - mean[b]).powi(2)).sum();
                std[b] = if samples.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
            }
            rows.push(BenchRow { dim: *dim, value: v, mean, std });
        }
        let pts = &rows[first..];
        let x: Vec<f64> = pts.iter().map(|r| r.value as f64).collect();
        let mut s = [0.0; 3];
        for (b, sb) in s.iter_mut().enumerate() {
            let y: Vec<f64> = pts.iter().map(|r| r.mean[b]).collect();
            *sb = loglog_slope(&x, &y);
        }
        slopes.push((*dim, s));
    }
    Ok(BenchResult { rows, slopes })
}

/// Timings are wall-clock and differ between runs.
pub fn bench_csv(res: &BenchResult) -> String {
    let mut s = format!("# per-iteration complexity {COMPLEXITY}\n");
    s.push_str("dim,value,sca_mean_s,sca_std_s,mm_mean_s,mm_std_s,mo_mean_s,mo_std_s\n");
    for r in &res.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.dim.name(),
            r.value,
            fmt_f64(r.mean[0]),
            fmt_f64(r.std[0]),
            fmt_f64(r.mean[1]),
            fmt_f64(r.std[1]),
            fmt_f64(r.mean[2]),
            fmt_f64(r.std[2]),
        );
    }
    s
}

pub fn bench_slopes_csv(res: &BenchResult) -> String {
    let mut s = format!("# per-iteration complexity {COMPLEXITY}\n");
    s.push_str("dim,sca_slope,mm_slope,mo_slope\n");
    for (d, sl) in &res.slopes {
        let _ = writeln!(s, "{},{},{},{}", d.name(), fmt_f64(sl[0]), fmt_f64(sl[1]), fmt_f64(sl[2]));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_names_round_trip() {
        for s in ["full", "no-ris", "fixed-random", "fixed-optimized:3", "fixed-random:1"] {
            let parsed: Scheme = s.parse().unwrap();
            assert_eq!(parsed.name(), s);
        }
        assert!("full:2".parse::<Scheme>().is_err());
        assert!("fixed-random:x".parse::<Scheme>().is_err());
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn slope_of_power_law() {
        let x = [2.0, 4.0, 8.0, 16.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((loglog_slope(&x, &y) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn companion_names() {
        let p = Path::new("/tmp/x/run.csv");
        assert_eq!(companion_path(p, "summary"), Path::new("/tmp/x/run_summary.csv"));
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }

    fn tiny() -> SystemConfig {
        let mut c = SystemConfig::paper_defaults();
        c.n_ap = 8;
        c.n_ris = 4;
        c.n_beams = 4;
        c.n_rf = 2;
        c.n_users = 2;
        c
    }

    #[test]
    fn one_trial_one_row() {
        let spec = SweepSpec {
            param: SweepParam::None,
            values: vec![],
            trials: 1,
            schemes: vec![Scheme::Full],
            out: None,
        };
        let r = run_sweep(&spec, &tiny(), &BcdOptions::default(), 1).unwrap();
        assert!(r.all_ok());
        assert_eq!(sweep_csv(&r).lines().count(), 2);
    }

    #[test]
    fn sweep_rows_independent_of_jobs() {
        let spec = SweepSpec {
            param: SweepParam::NRis,
            values: vec![2, 4],
            trials: 2,
            schemes: vec![Scheme::Full, Scheme::NoRis],
            out: None,
        };
        let opts = BcdOptions { max_outer: 3, ..Default::default() };
        let a = run_sweep(&spec, &tiny(), &opts, 1).unwrap();
        let b = run_sweep(&spec, &tiny(), &opts, 2).unwrap();
        assert_eq!(sweep_csv(&a), sweep_csv(&b));
        assert_eq!(a.rows.len(), 8);
    }

    #[test]
    fn invalid_point_rejected() {
        let spec = SweepSpec {
            param: SweepParam::NRf,
            values: vec![64],
            trials: 1,
            schemes: vec![Scheme::Full],
            out: None,
        };
        assert!(run_sweep(&spec, &tiny(), &BcdOptions::default(), 1).is_err());
    }
}
