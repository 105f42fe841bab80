//! Per-user decoders: minorize-maximization against the closed form.

use risopt::experiment::draw_trial;
use risopt::mm::{build_quotient_effective, mm_solve, optimal_decoder, MM_MAX_ITER, MM_TOL};
use risopt::quantizer::{dft_codebook, AqnmMode, CombinerState, DecoderBank, PhaseVector};
use risopt::scenario::SystemConfig;

fn main() -> risopt::Result<()> {
    let cfg = SystemConfig::paper_defaults();
    let draw = draw_trial(&cfg, 0, false)?;
    let heff = draw.chan.cascaded(PhaseVector::ones(cfg.n_ris).as_slice());
    let beams: Vec<usize> = (0..cfg.n_rf).collect();
    let comb = CombinerState::binary(dft_codebook(cfg.n_ap, cfg.n_beams), &beams, 1.0)?;
    let mode = AqnmMode::PaperFaithful;
    let start = DecoderBank::matched_filters(&heff, &comb, mode);
    for k in 0..cfg.n_users {
        let qp = build_quotient_effective(&heff, &comb, cfg.noise_power, mode, k)?;
        let r = mm_solve(&qp, &start.u[k], MM_TOL, MM_MAX_ITER)?;
        let closed = optimal_decoder(&qp).map(|u| qp.quotient(&u)).unwrap_or(1.0);
        println!(
            "user {k:2}: matched {:8.4}  MM {:8.4} ({:3} steps)  closed form {:8.4}",
            r.trace[0] - 1.0,
            r.sinr(),
            r.iterations,
            closed - 1.0
        );
    }
    Ok(())
}
