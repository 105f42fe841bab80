//! Median sum rate against the number of RIS elements, RIS pipeline versus
//! the direct-link baseline. Pass a trial count to change the default of 8.

use risopt::bcd::BcdOptions;
use risopt::experiment::{run_sweep, summary_csv, Scheme, SweepParam, SweepSpec};
use risopt::scenario::SystemConfig;

fn main() -> risopt::Result<()> {
    let trials = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    let spec = SweepSpec {
        param: SweepParam::NRis,
        values: vec![4, 8, 16],
        trials,
        schemes: vec![Scheme::Full, Scheme::NoRis],
        out: None,
    };
    let res = run_sweep(&spec, &SystemConfig::paper_defaults(), &BcdOptions::default(), 0)?;
    print!("{}", summary_csv(&res));
    Ok(())
}
