//! Draw the geometric channels of one trial and inspect them.

use risopt::channel::{draw_channels, read_channel_dump, write_channel_dump};
use risopt::scenario::{user_positions, SystemConfig, TrialSeed};

fn main() -> risopt::Result<()> {
    let cfg = SystemConfig::paper_defaults();
    let seed = TrialSeed::new(cfg.seed, 0);
    let pos = user_positions(&cfg, seed);
    let chan = draw_channels(&cfg, &pos, seed)?;

    let sv = chan.g.clone().singular_values();
    let rank = sv.iter().filter(|s| **s > 1e-9 * sv[0]).count();
    println!("G is {}x{}, numerical rank {rank}", chan.n_ap(), chan.n_ris());
    for (k, (p, h)) in pos.iter().zip(&chan.h).enumerate() {
        println!("user {k:2} at y={:5.1} m  |h|^2 = {:.3e}", p[1], h.norm_squared());
    }

    let path = std::env::temp_dir().join("risopt_channels.txt");
    write_channel_dump(&path, &chan)?;
    let back = read_channel_dump(&path)?;
    println!("dump round trip exact: {}", back.g == chan.g && back.h == chan.h);
    Ok(())
}
