//! Geometric mmWave channels.
//!
//! `G` (RIS→AP) is a sum of `n_paths_g` outer products of AP-side and
//! RIS-side steering vectors and each user channel `h_k` (user→RIS) is a sum
//! of `n_paths_h` RIS-side steering vectors. Every path carries an i.i.d.
//! `CN(0, 1)` small-scale gain, every link one `CN(0, 10^{-κ/10})` large-scale
//! gain with `κ = 72 + 29.2 log10(d) + shadow`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{BufRead, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::scenario::{distance, path_loss_db, Point3, RisGeometry, Stream, SystemConfig, TrialSeed};
use crate::{CMat, CVec, Error, Result, C64};

/// Half-wavelength ULA response with unit norm:
/// `a_i = exp(j π i sin(angle)) / sqrt(n)`.
pub fn steering_vector(n: usize, angle: f64) -> CVec {
    let s = angle.sin();
    let scale = 1.0 / (n as f64).sqrt();
    DVector::from_fn(n, |i, _| C64::from_polar(scale, PI * i as f64 * s))
}

/// Half-wavelength UPA response with unit norm, row-major element order.
pub fn planar_steering_vector(rows: usize, cols: usize, azimuth: f64, elevation: f64) -> CVec {
    let n = rows * cols;
    let scale = 1.0 / (n as f64).sqrt();
    let (u, v) = (azimuth.sin() * elevation.sin(), elevation.cos());
    DVector::from_fn(n, |i, _| {
        let (p, q) = ((i / cols) as f64, (i % cols) as f64);
        C64::from_polar(scale, PI * (p * u + q * v))
    })
}

/// Variance `10^{-κ/10}` of the large-scale gain at distance `d` meters with
/// a shadowing term in dB.
pub fn large_scale_variance(d: f64, shadow_db: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("distance must be positive, got {d}")));
    }
    Ok(10f64.powf(-0.1 * (path_loss_db(d) + shadow_db)))
}

/// One draw of the large-scale gain `CN(0, 10^{-κ/10})`.
pub fn large_scale_gain<R: Rng + ?Sized>(d: f64, shadow_db: f64, rng: &mut R) -> Result<C64> {
    let var = large_scale_variance(d, shadow_db)?;
    Ok(complex_normal(rng) * var.sqrt())
}

/// Circularly-symmetric `CN(0, 1)` sample.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    /// Small-scale gain.
    pub gain: C64,
    /// AP-side angle (RIS→AP paths and direct paths), radians.
    pub ap_angle: Option<f64>,
    /// RIS-side (azimuth, elevation); elevation is only used by planar arrays.
    pub ris_angles: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkRecord {
    pub distance_m: f64,
    pub shadow_db: f64,
    /// Drawn large-scale gain.
    pub beta_ls: C64,
    pub paths: Vec<PathRecord>,
}

/// One draw of `G` and `h_1..h_K`. The RIS amplitude is fixed to 1; large
/// scale fading is stored separately as `beta_ls`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    /// `n_ap × n_ris`.
    pub g: CMat,
    /// One `n_ris` vector per user.
    pub h: Vec<CVec>,
    pub g_link: Option<LinkRecord>,
    pub h_links: Vec<LinkRecord>,
}

impl ChannelRealization {
    pub fn from_matrices(g: CMat, h: Vec<CVec>) -> Result<Self> {
        if let Some(bad) = h.iter().find(|hk| hk.len() != g.ncols()) {
            return Err(Error::Dimension(format!(
                "user channel of length {} against {} RIS elements",
                bad.len(),
                g.ncols()
            )));
        }
        Ok(Self { g, h, g_link: None, h_links: Vec::new() })
    }

    pub fn n_ap(&self) -> usize {
        self.g.nrows()
    }

    pub fn n_ris(&self) -> usize {
        self.g.ncols()
    }

    pub fn n_users(&self) -> usize {
        self.h.len()
    }

    /// `H = [h_1, ..., h_K]`, `n_ris × K`.
    pub fn h_matrix(&self) -> CMat {
        let mut m = CMat::zeros(self.n_ris(), self.n_users());
        for (k, hk) in self.h.iter().enumerate() {
            m.set_column(k, hk);
        }
        m
    }

    /// Cascaded channel `G Θ H`, `n_ap × K`.
    pub fn cascaded(&self, theta: &[C64]) -> CMat {
        let mut out = CMat::zeros(self.n_ap(), self.n_users());
        let mut scaled = CVec::zeros(self.n_ris());
        for (k, hk) in self.h.iter().enumerate() {
            for i in 0..self.n_ris() {
                scaled[i] = theta[i] * hk[i];
            }
            out.set_column(k, &(&self.g * &scaled));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.g.iter().all(|z| z.re.is_finite() && z.im.is_finite())
            && self.h.iter().all(|v| v.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}

fn uniform_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-FRAC_PI_2..=FRAC_PI_2)
}

fn shadow<R: Rng + ?Sized>(std_db: f64, rng: &mut R) -> f64 {
    if std_db == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, std_db).expect("finite std").sample(rng)
}

fn ris_response<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> ((f64, f64), CVec) {
    let az = uniform_angle(rng);
    match cfg.ris_geometry {
        RisGeometry::Linear => ((az, 0.0), steering_vector(cfg.n_ris, az)),
        RisGeometry::Planar { rows } => {
            let el = rng.random_range(0.0..=PI);
            ((az, el), planar_steering_vector(rows, cfg.n_ris / rows, az, el))
        }
    }
}

/// Draw `G` and every `h_k` for the given user positions.
pub fn draw_channels(
    cfg: &SystemConfig,
    positions: &[Point3],
    seed: TrialSeed,
) -> Result<ChannelRealization> {
    if positions.len() != cfg.n_users {
        return Err(Error::Dimension(format!(
            "{} positions for {} users",
            positions.len(),
            cfg.n_users
        )));
    }
    let mut rng = seed.rng(Stream::RisChannel);
    let (n, nr) = (cfg.n_ap, cfg.n_ris);

    let d_g = distance(&cfg.ap_pos, &cfg.ris_pos);
    let sh = shadow(cfg.shadow_std_db, &mut rng);
    let beta = large_scale_gain(d_g, sh, &mut rng)?;
    let array = if cfg.array_gain { ((n * nr) as f64).sqrt() } else { 1.0 };
    let scale_g = beta * array / (cfg.n_paths_g as f64).sqrt();
    let mut g = CMat::zeros(n, nr);
    let mut g_paths = Vec::with_capacity(cfg.n_paths_g);
    for _ in 0..cfg.n_paths_g {
        let alpha = complex_normal(&mut rng);
        let ap_angle = uniform_angle(&mut rng);
        let a_t = steering_vector(n, ap_angle);
        let (ris_angles, a_r) = ris_response(cfg, &mut rng);
        g += (&a_t * a_r.transpose()) * (alpha * scale_g);
        g_paths.push(PathRecord { gain: alpha, ap_angle: Some(ap_angle), ris_angles: Some(ris_angles) });
    }

    let amp = cfg.tx_power().sqrt();
    let array_h = if cfg.array_gain { (nr as f64).sqrt() } else { 1.0 };
    let mut h = Vec::with_capacity(cfg.n_users);
    let mut h_links = Vec::with_capacity(cfg.n_users);
    for p in positions {
        let d = distance(&cfg.ris_pos, p);
        let sh = shadow(cfg.shadow_std_db, &mut rng);
        let beta_k = large_scale_gain(d, sh, &mut rng)?;
        let scale = beta_k * (amp * array_h / (cfg.n_paths_h as f64).sqrt());
        let mut hk = CVec::zeros(nr);
        let mut paths = Vec::with_capacity(cfg.n_paths_h);
        for _ in 0..cfg.n_paths_h {
            let alpha = complex_normal(&mut rng);
            let (ris_angles, a_r) = ris_response(cfg, &mut rng);
            hk += a_r * (alpha * scale);
            paths.push(PathRecord { gain: alpha, ap_angle: None, ris_angles: Some(ris_angles) });
        }
        h.push(hk);
        h_links.push(LinkRecord { distance_m: d, shadow_db: sh, beta_ls: beta_k, paths });
    }

    Ok(ChannelRealization {
        g,
        h,
        g_link: Some(LinkRecord { distance_m: d_g, shadow_db: sh, beta_ls: beta, paths: g_paths }),
        h_links,
    })
}

/// Direct user→AP channels `n_ap × K` for the no-RIS baseline, drawn from
/// the same geometric model at the user→AP distance plus the configured
/// blockage loss. Uses its own random stream so the RIS channels of the same
/// trial are unaffected.
pub fn draw_direct_channels(cfg: &SystemConfig, positions: &[Point3], seed: TrialSeed) -> Result<CMat> {
    let mut rng = seed.rng(Stream::DirectChannel);
    let n = cfg.n_ap;
    let blockage = 10f64.powf(-cfg.effective_blockage_db() / 20.0);
    let array = if cfg.array_gain { (n as f64).sqrt() } else { 1.0 };
    let amp = cfg.tx_power().sqrt() * blockage * array / (cfg.n_paths_h as f64).sqrt();
    let mut out = CMat::zeros(n, positions.len());
    for (k, p) in positions.iter().enumerate() {
        let d = distance(&cfg.ap_pos, p);
        let sh = shadow(cfg.shadow_std_db, &mut rng);
        let beta = large_scale_gain(d, sh, &mut rng)?;
        let mut col = CVec::zeros(n);
        for _ in 0..cfg.n_paths_h {
            let alpha = complex_normal(&mut rng);
            col += steering_vector(n, uniform_angle(&mut rng)) * (alpha * beta * amp);
        }
        out.set_column(k, &col);
    }
    Ok(out)
}

const DUMP_MAGIC: &str = "risopt-channels 1";

/// Write `G` then `H` (both column-major) as little-endian interleaved
/// `re, im` doubles after a short text header terminated by `end`.
pub fn write_channel_dump(path: impl AsRef<Path>, chan: &ChannelRealization) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{DUMP_MAGIC}")?;
    writeln!(f, "n_ap {}", chan.n_ap())?;
    writeln!(f, "n_ris {}", chan.n_ris())?;
    writeln!(f, "n_users {}", chan.n_users())?;
    writeln!(f, "end")?;
    let mut put = |z: &C64| -> std::io::Result<()> {
        f.write_all(&z.re.to_le_bytes())?;
        f.write_all(&z.im.to_le_bytes())
    };
    for z in chan.g.iter() {
        put(z)?;
    }
    for hk in &chan.h {
        for z in hk.iter() {
            put(z)?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_channel_dump(path: impl AsRef<Path>) -> Result<ChannelRealization> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != DUMP_MAGIC {
        return Err(Error::ChannelDump(format!("bad magic `{}`", line.trim_end())));
    }
    let (mut n_ap, mut n_ris, mut n_users) = (None, None, None);
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::ChannelDump("header not terminated".into()));
        }
        let l = line.trim_end();
        if l == "end" {
            break;
        }
        let (k, v) = l
            .split_once(' ')
            .ok_or_else(|| Error::ChannelDump(format!("bad header line `{l}`")))?;
        let v: usize = v.parse().map_err(|_| Error::ChannelDump(format!("bad value in `{l}`")))?;
        match k {
            "n_ap" => n_ap = Some(v),
            "n_ris" => n_ris = Some(v),
            "n_users" => n_users = Some(v),
            _ => return Err(Error::ChannelDump(format!("unknown header key `{k}`"))),
        }
    }
    let missing = |name: &str| Error::ChannelDump(format!("missing `{name}`"));
    let n_ap = n_ap.ok_or_else(|| missing("n_ap"))?;
    let n_ris = n_ris.ok_or_else(|| missing("n_ris"))?;
    let n_users = n_users.ok_or_else(|| missing("n_users"))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected = 16 * (n_ap * n_ris + n_ris * n_users);
    if payload.len() != expected {
        return Err(Error::ChannelDump(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let vals: Vec<C64> = payload
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect();
    let (g_vals, h_vals) = vals.split_at(n_ap * n_ris);
    let g = DMatrix::from_column_slice(n_ap, n_ris, g_vals);
    let h = h_vals.chunks(n_ris.max(1)).take(n_users).map(DVector::from_column_slice).collect();
    ChannelRealization::from_matrices(g, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::user_positions;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn broadside_steering_is_flat() {
        let a = steering_vector(4, 0.0);
        for z in a.iter() {
            assert!((z - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn endfire_two_elements() {
        let a = steering_vector(2, FRAC_PI_2);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((a[0] - C64::new(s, 0.0)).norm() < 1e-15);
        assert!((a[1] - C64::new(-s, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn steering_has_unit_norm() {
        for n in [1usize, 3, 16, 64] {
            for ang in [-1.3, -0.2, 0.0, 0.7, 1.5] {
                assert!((steering_vector(n, ang).norm() - 1.0).abs() < 1e-12);
            }
        }
        assert!((planar_steering_vector(4, 4, 0.3, 1.1).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn large_scale_variance_values() {
        let v = large_scale_variance(10.0, 0.0).unwrap();
        assert!((v / 10f64.powf(-10.12) - 1.0).abs() < 1e-12);
        assert!((v - 7.586e-11).abs() < 1e-14);
        let v1 = large_scale_variance(1.0, 0.0).unwrap();
        assert!((v1 / 10f64.powf(-7.2) - 1.0).abs() < 1e-12);
        assert!(large_scale_variance(0.0, 0.0).is_err());
        assert!(large_scale_variance(-3.0, 0.0).is_err());
    }

    #[test]
    fn large_scale_sample_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let var = large_scale_variance(25.0, 1.5).unwrap();
        let n = 100_000;
        let mean_sq = (0..n)
            .map(|_| large_scale_gain(25.0, 1.5, &mut rng).unwrap().norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((mean_sq / var - 1.0).abs() < 0.02, "ratio {}", mean_sq / var);
    }

    #[test]
    fn ap_ris_energy_matches_expectation() {
        let cfg = SystemConfig { n_ap: 8, n_ris: 4, n_users: 1, shadow_std_db: 0.0, ..SystemConfig::paper_defaults() };
        // unit-norm steering vectors and independent paths: E‖G‖² = σ²_β N N_r
        let d = distance(&cfg.ap_pos, &cfg.ris_pos);
        let want = large_scale_variance(d, 0.0).unwrap() * (cfg.n_ap * cfg.n_ris) as f64;
        let n = 10_000;
        let pos = [[cfg.ris_pos[0] + 1.0, cfg.ris_pos[1], cfg.ris_pos[2]]];
        let got = (0..n)
            .map(|t| draw_channels(&cfg, &pos, TrialSeed::new(3, t)).unwrap().g.norm_squared())
            .sum::<f64>()
            / n as f64;
        assert!((got / want - 1.0).abs() < 0.03, "ratio {}", got / want);
    }

    #[test]
    fn single_path_g_is_rank_one() {
        let mut cfg = SystemConfig::paper_defaults();
        cfg.n_paths_g = 1;
        let seed = TrialSeed::new(9, 0);
        let chan = draw_channels(&cfg, &user_positions(&cfg, seed), seed).unwrap();
        let sv = chan.g.clone().singular_values();
        assert!(sv[1] / sv[0] < 1e-10, "{sv}");
    }

    #[test]
    fn default_dimensions() {
        let cfg = SystemConfig::paper_defaults();
        let seed = TrialSeed::new(1, 0);
        let chan = draw_channels(&cfg, &user_positions(&cfg, seed), seed).unwrap();
        assert_eq!(chan.g.shape(), (64, 16));
        assert_eq!(chan.h.len(), 10);
        assert!(chan.h.iter().all(|h| h.len() == 16));
        assert!(chan.is_finite());
    }

    #[test]
    fn planar_geometry_draws() {
        let mut cfg = SystemConfig::paper_defaults();
        cfg.ris_geometry = RisGeometry::Planar { rows: 4 };
        let seed = TrialSeed::new(1, 0);
        let chan = draw_channels(&cfg, &user_positions(&cfg, seed), seed).unwrap();
        assert_eq!(chan.g.shape(), (64, 16));
        assert!(chan.is_finite());
    }

    #[test]
    fn dump_roundtrip_and_validation() {
        let mut cfg = SystemConfig::paper_defaults();
        cfg.n_ap = 8;
        cfg.n_beams = 4;
        cfg.n_rf = 2;
        cfg.n_ris = 4;
        cfg.n_users = 3;
        let seed = TrialSeed::new(2, 1);
        let chan = draw_channels(&cfg, &user_positions(&cfg, seed), seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("chan.bin");
        write_channel_dump(&p, &chan).unwrap();
        let back = read_channel_dump(&p).unwrap();
        assert_eq!(back.g, chan.g);
        assert_eq!(back.h, chan.h);

        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 16);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_channel_dump(&p), Err(Error::ChannelDump(_))));
    }

    proptest::proptest! {
        #[test]
        fn steering_vectors_have_unit_norm(n in 1usize..128, angle in -7.0f64..7.0, rows in 1usize..6, elev in 0.0f64..3.2) {
            proptest::prop_assert!((steering_vector(n, angle).norm() - 1.0).abs() < 1e-12);
            proptest::prop_assert!((planar_steering_vector(rows, n % 7 + 1, angle, elev).norm() - 1.0).abs() < 1e-12);
        }
    }
}
