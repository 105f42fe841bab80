//! RIS phases by Riemannian ascent on the unit-modulus manifold.

use risopt::experiment::draw_trial;
use risopt::phase::{mo_solve, MoOptions};
use risopt::quantizer::{dft_codebook, AqnmMode, CombinerState, DecoderBank, PhaseVector};
use risopt::scenario::SystemConfig;

fn main() -> risopt::Result<()> {
    let cfg = SystemConfig::paper_defaults();
    let draw = draw_trial(&cfg, 0, false)?;
    let beams: Vec<usize> = (0..cfg.n_rf).collect();
    let comb = CombinerState::binary(dft_codebook(cfg.n_ap, cfg.n_beams), &beams, 1.0)?;
    let mode = AqnmMode::PaperFaithful;
    let theta0 = PhaseVector::ones(cfg.n_ris);
    let dec = DecoderBank::matched_filters(&draw.chan.cascaded(theta0.as_slice()), &comb, mode);
    for conjugate in [false, true] {
        let opts = MoOptions { conjugate, ..Default::default() };
        let r = mo_solve(&draw.chan, &comb, &dec, cfg.noise_power, mode, &theta0, &opts)?;
        println!(
            "conjugate={conjugate}: {:.4} -> {:.4} in {} steps, converged={}",
            r.trace[0], r.objective, r.iterations, r.converged
        );
    }
    Ok(())
}
