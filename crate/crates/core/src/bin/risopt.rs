use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use risopt::bcd::BcdOptions;
use risopt::channel::write_channel_dump;
use risopt::experiment::{
    bench_csv, bench_slopes_csv, companion_path, draw_trial, first_subproblem_text, fmt_f64, run_bench, run_scheme,
    run_sweep, sca_trace_csv, summary_csv, trace_csv, write_text, BenchSpec, Scheme, SweepParam, SweepSpec,
};
use risopt::phase::GradientMode;
use risopt::quantizer::AqnmMode;
use risopt::sca::{BitSearch, Gadget};
use risopt::scenario::{load_config, SystemConfig};

#[derive(Parser)]
#[command(name = "risopt", version, about = "Sum-rate optimization for RIS-aided uplinks with adaptive ADCs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one trial with every selected scheme.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Monte-Carlo sweep over one system parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// n_ris, n_rf, b_max or none.
        #[arg(long, default_value = "none")]
        param: SweepParam,
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
    },
    /// Per-block wall time across scaled problem sizes.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Outer objective after every iteration of one trial.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
}

#[derive(Args)]
struct Common {
    /// `key = value` config file; unset keys keep the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// full, no-ris, fixed-random[:b] or fixed-optimized[:b]; comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "full")]
    scheme: Vec<Scheme>,
    /// paper-faithful or standard-aqnm.
    #[arg(long, default_value = "paper-faithful")]
    aqnm_mode: AqnmMode,
    /// Write the trial's channels to this file.
    #[arg(long)]
    dump_channels: Option<PathBuf>,
    /// Write the first SCA subproblem as text to this file.
    #[arg(long)]
    dump_subproblem: Option<PathBuf>,
    /// Write every SCA iterate to this CSV.
    #[arg(long)]
    sca_trace: Option<PathBuf>,
    /// Carry the relaxed-binary constraints explicitly in the SCA subproblem.
    #[arg(long)]
    gadget: bool,
    /// Use the literal `r̄ r − r̄²` linearization (implies --gadget).
    #[arg(long)]
    paper_literal_17: bool,
    /// Round and project after every SCA block.
    #[arg(long)]
    round_each_iter: bool,
    /// Central finite differences for the phase gradient.
    #[arg(long)]
    fd_grad: bool,
    #[arg(long, default_value = "dominant")]
    bit_search: BitSearch,
}

impl Common {
    fn config(&self) -> Result<SystemConfig, String> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p).map_err(|e| format!("{}: {e}", p.display()))?,
            None => SystemConfig::paper_defaults(),
        };
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            cfg.set(k, v)?;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    fn options(&self) -> BcdOptions {
        let mut o = BcdOptions { mode: self.aqnm_mode, round_each_iter: self.round_each_iter, ..Default::default() };
        o.sca.bit_search = self.bit_search;
        if self.gadget || self.paper_literal_17 {
            o.sca.gadget = Some(Gadget { literal: self.paper_literal_17, ..Default::default() });
        }
        if self.fd_grad {
            o.mo.gradient = GradientMode::FiniteDifference;
        }
        o
    }

    fn emit(&self, text: &str) -> Result<(), String> {
        match &self.out {
            Some(p) => write_text(p, text).map_err(|e| format!("{}: {e}", p.display())),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    write_text(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Dumps shared by `run` and `trace`; returns the trial's draw.
fn dumps(common: &Common, cfg: &SystemConfig, opts: &BcdOptions, trial: u64) -> Result<risopt::experiment::TrialDraw, String> {
    let with_direct = common.scheme.contains(&Scheme::NoRis);
    let draw = draw_trial(cfg, trial, with_direct).map_err(|e| e.to_string())?;
    if let Some(p) = &common.dump_channels {
        write_channel_dump(p, &draw.chan).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    if let Some(p) = &common.dump_subproblem {
        let text = first_subproblem_text(cfg, &draw.chan, opts).map_err(|e| e.to_string())?;
        write(p, &text)?;
    }
    Ok(draw)
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.cmd {
        Cmd::Run { common, trial } => {
            let cfg = common.config()?;
            let opts = common.options();
            let draw = dumps(&common, &cfg, &opts, trial)?;
            let mut all_ok = true;
            let mut csv = String::from("scheme,trial,seed,status,asr,iterations,converged,bits,relaxed_bits,beams\n");
            let mut sca = String::new();
            for &s in &common.scheme {
                match run_scheme(&cfg, s, &draw, &opts) {
                    Ok(r) => {
                        let beams: Vec<String> = r.beams.iter().map(|b| b.to_string()).collect();
                        csv.push_str(&format!(
                            "{},{trial},{},ok,{},{},{},{},{},{}\n",
                            s.name(),
                            draw.seed.derived_stream,
                            fmt_f64(r.sum_rate),
                            r.iterations,
                            r.converged,
                            r.bits,
                            fmt_f64(r.relaxed_bits),
                            beams.join(" "),
                        ));
                        if sca.is_empty() {
                            sca = sca_trace_csv(&r);
                        }
                    }
                    Err(e) => {
                        all_ok = false;
                        eprintln!("{}: {e}", s.name());
                        csv.push_str(&format!("{},{trial},{},error,,,,,,\n", s.name(), draw.seed.derived_stream));
                    }
                }
            }
            if let Some(p) = &common.sca_trace {
                write(p, &sca)?;
            }
            common.emit(&csv)?;
            Ok(all_ok)
        }
        Cmd::Sweep { common, param, values, trials } => {
            let cfg = common.config()?;
            let opts = common.options();
            let spec = SweepSpec { param, values, trials, schemes: common.scheme.clone(), out: common.out.clone() };
            let res = run_sweep(&spec, &cfg, &opts, common.jobs).map_err(|e| e.to_string())?;
            if common.out.is_none() {
                print!("{}", summary_csv(&res));
            }
            for r in res.rows.iter().filter(|r| !r.ok()) {
                if let Err(e) = &r.status {
                    eprintln!("{} trial {}: {e}", r.scheme, r.trial);
                }
            }
            Ok(res.all_ok())
        }
        Cmd::Bench { common, repeats } => {
            let cfg = common.config()?;
            let opts = common.options();
            let spec = BenchSpec { repeats, ..BenchSpec::standard(&cfg) };
            let res = run_bench(&spec, &opts).map_err(|e| e.to_string())?;
            common.emit(&bench_csv(&res))?;
            match &common.out {
                Some(p) => write(&companion_path(p, "slopes"), &bench_slopes_csv(&res))?,
                None => print!("{}", bench_slopes_csv(&res)),
            }
            Ok(true)
        }
        Cmd::Trace { common, trial } => {
            let cfg = common.config()?;
            let opts = common.options();
            let draw = dumps(&common, &cfg, &opts, trial)?;
            let scheme = common.scheme.first().copied().unwrap_or(Scheme::Full);
            let r = run_scheme(&cfg, scheme, &draw, &opts).map_err(|e| e.to_string())?;
            if let Some(p) = &common.sca_trace {
                write(p, &sca_trace_csv(&r))?;
            }
            common.emit(&trace_csv(&r))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("risopt: {e}");
            ExitCode::FAILURE
        }
    }
}
