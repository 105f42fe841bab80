//! Outer objective after each block of every BCD iteration.

use risopt::bcd::{bcd_solve, BcdOptions};
use risopt::experiment::draw_trial;
use risopt::scenario::SystemConfig;

fn main() -> risopt::Result<()> {
    let cfg = SystemConfig::paper_defaults();
    let draw = draw_trial(&cfg, 1, false)?;
    let r = bcd_solve(&cfg, &draw.chan, &BcdOptions::default())?;
    println!("iter  objective   after SCA   after MM    after MO");
    println!("{:4}  {:.6}", 0, r.trace[0]);
    for (j, (obj, b)) in r.trace.iter().skip(1).zip(&r.block_trace).enumerate() {
        println!("{:4}  {obj:.6}    {:.6}    {:.6}    {:.6}", j + 1, b[0], b[1], b[2]);
    }
    println!(
        "final (rounded) {:.6}; time sca {:.2}s mm {:.2}s mo {:.2}s",
        r.sum_rate, r.times.sca, r.times.mm, r.times.mo
    );
    Ok(())
}
