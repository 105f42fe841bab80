//! Quantizer model: distortion factor per bit depth, per-user rates under
//! both gain conventions, and a Monte-Carlo look at the quantizer output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use risopt::experiment::draw_trial;
use risopt::quantizer::{
    alpha_of_bits, dft_codebook, quantize, sum_rate, AqnmMode, CombinerState, DecoderBank, PhaseVector,
};
use risopt::scenario::SystemConfig;
use risopt::CVec;

fn main() -> risopt::Result<()> {
    for b in 1..=5 {
        println!("b={b}  alpha={:.6}", alpha_of_bits(b as f64));
    }

    let cfg = SystemConfig::paper_defaults();
    let draw = draw_trial(&cfg, 0, false)?;
    let theta = PhaseVector::ones(cfg.n_ris);
    let beams: Vec<usize> = (0..cfg.n_rf).collect();
    for mode in [AqnmMode::PaperFaithful, AqnmMode::Standard] {
        print!("{mode:?}:");
        for b in 1..=5 {
            let comb = CombinerState::binary(dft_codebook(cfg.n_ap, cfg.n_beams), &beams, b as f64)?;
            let heff = draw.chan.cascaded(theta.as_slice());
            let dec = DecoderBank::matched_filters(&heff, &comb, mode);
            print!("  b={b} {:.3}", sum_rate(&draw.chan, &comb, &theta, &dec, cfg.noise_power, mode)?);
        }
        println!();
    }

    let comb = CombinerState::binary(dft_codebook(cfg.n_ap, cfg.n_beams), &beams, 1.0)?;
    let y = CVec::from_element(cfg.n_rf, risopt::C64::new(1e-6, 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 20_000;
    let mut mean = CVec::zeros(cfg.n_rf);
    for _ in 0..n {
        mean += quantize(&y, &comb, &draw.chan, &theta, cfg.noise_power, AqnmMode::Standard, &mut rng);
    }
    mean /= risopt::C64::new(n as f64, 0.0);
    println!("mean output / input on chain 0: {:.4}", mean[0].re / y[0].re);
    Ok(())
}
