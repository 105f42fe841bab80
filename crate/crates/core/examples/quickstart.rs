//! Optimize one trial of the default system with the full pipeline.

use risopt::bcd::{bcd_solve, BcdOptions};
use risopt::experiment::draw_trial;
use risopt::scenario::SystemConfig;

fn main() -> risopt::Result<()> {
    let cfg = SystemConfig::paper_defaults();
    let draw = draw_trial(&cfg, 0, false)?;
    let report = bcd_solve(&cfg, &draw.chan, &BcdOptions::default())?;
    println!("sum rate      {:.4} bit/s/Hz", report.sum_rate);
    println!("ADC bits      {} (relaxed {:.3})", report.bits, report.relaxed_bits);
    println!("beams         {:?}", report.beams);
    println!("outer iters   {} converged={}", report.iterations, report.converged);
    for (k, r) in report.rates.iter().enumerate() {
        println!("  user {k:2}  {r:.4}");
    }
    Ok(())
}
