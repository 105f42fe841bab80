//! Monte-Carlo orderings between the baseline schemes on reduced systems.

use risopt::bcd::{baseline_fixed, BcdOptions, PhaseMode};
use risopt::channel::draw_channels;
use risopt::experiment::quantile;
use risopt::quantizer::AqnmMode;
use risopt::scenario::{user_positions, SystemConfig, TrialSeed};

fn reduced() -> SystemConfig {
    SystemConfig { n_ap: 16, n_ris: 8, n_beams: 6, n_rf: 3, n_users: 3, ..SystemConfig::paper_defaults() }
}

fn median_fixed(cfg: &SystemConfig, bits: u32, phase: PhaseMode, opts: &BcdOptions, draws: u64) -> f64 {
    let mut v: Vec<f64> = (0..draws)
        .map(|t| {
            let seed = TrialSeed::new(cfg.seed, t);
            let chan = draw_channels(cfg, &user_positions(cfg, seed), seed).unwrap();
            baseline_fixed(cfg, &chan, bits, phase, seed, opts).unwrap().sum_rate
        })
        .collect();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

#[test]
fn optimized_phases_beat_random_phases() {
    let cfg = reduced();
    let opts = BcdOptions::default();
    let random = median_fixed(&cfg, 3, PhaseMode::Random, &opts, 50);
    let optimized = median_fixed(&cfg, 3, PhaseMode::Optimized, &opts, 50);
    assert!(optimized >= random, "optimized {optimized} random {random}");
}

#[test]
fn finer_quantization_helps_under_standard_model() {
    let cfg = reduced();
    let opts = BcdOptions { mode: AqnmMode::Standard, ..Default::default() };
    let coarse = median_fixed(&cfg, cfg.b_min, PhaseMode::Optimized, &opts, 50);
    let fine = median_fixed(&cfg, cfg.b_max, PhaseMode::Optimized, &opts, 50);
    assert!(fine >= coarse, "b_max {fine} b_min {coarse}");
}
