//! Relaxed beam selection and bit depth by SCA on a small instance,
//! rounded and projected, next to the exhaustive optimum.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use risopt::channel::complex_normal;
use risopt::quantizer::{dft_codebook, AqnmMode, CombinerState, DecoderBank};
use risopt::sca::{
    binary_selection, enumerate_oracle_effective, project_beams, round_bits, sca_solve, vectorize, ScaOptions,
    ScaProblem,
};
use risopt::{CMat, CVec};

fn main() -> risopt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, s, m, k) = (8, 4, 2, 2);
    let cb = dft_codebook(n, s);
    let heff = CMat::from_fn(n, k, |_, _| complex_normal(&mut rng));
    let dec = DecoderBank::new((0..k).map(|_| CVec::from_fn(m, |_, _| complex_normal(&mut rng))).collect())?;
    let comb = CombinerState::binary(cb.clone(), &[0, 1], 3.0)?;
    for mode in [AqnmMode::PaperFaithful, AqnmMode::Standard] {
        let p = ScaProblem::from_effective(&heff, &comb, &dec, 1.0, mode, 1, 5)?;
        let r = sca_solve(&p, &DMatrix::from_element(s, m, 1.0 / s as f64), 5.0, &ScaOptions::default())?;
        let bits = round_bits(r.bits, 0.5, 1, 5);
        let beams = project_beams(&r.selection)?;
        let got = p.sum_rate(&vectorize(&binary_selection(s, &beams)), bits as f64);
        let best = enumerate_oracle_effective(&heff, &cb, m, &dec, 1.0, mode, (1, 5), 1 << 20)?;
        println!("{mode:?}");
        println!("  SCA trace    {:?}", r.objectives().iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>());
        println!("  relaxed W    {:.3}", r.selection);
        println!("  projected    b={bits} beams={beams:?} rate {got:.4}");
        println!("  enumeration  b={} beams={:?} rate {:.4}", best.bits, best.beams, best.value);
    }
    Ok(())
}
