//! Segmented photodetector behind the output mirror.
//!
//! Equal-angle sectors run from the axis out to `r_max`; sector 0 covers
//! `[0, 2 pi / n)` and indices increase counterclockwise. The output flux is
//! `2 kappa |alpha|^2` scaled by a single detection efficiency.

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::modes::SectorOverlaps;
use crate::params::SystemParams;
use crate::steady::FieldState;

/// Orientation convention recorded in output headers.
pub const SECTOR_CONVENTION: &str =
    "sector 0 spans [0, 360/n) degrees from +x, indices increase counterclockwise, pair j = sectors j and j + n/2";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub n_sectors: usize,
    /// integration window in `1/kappa`
    pub window: f64,
    pub efficiency: f64,
    pub pair_sum: bool,
    /// outer radius of the sectors in waists
    pub r_max: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            n_sectors: 16,
            window: 100.0,
            efficiency: 1.0,
            pair_sum: true,
            r_max: crate::modes::DEFAULT_R_MAX,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sectors == 0 {
            return Err(Error::invalid("need at least one detector sector"));
        }
        if self.pair_sum && !self.n_sectors.is_multiple_of(2) {
            return Err(Error::invalid("pair summation needs an even number of sectors"));
        }
        if !(self.window > 0.0) {
            return Err(Error::invalid("integration window must be positive"));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::invalid("efficiency must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Number of values per frame.
    pub fn outputs(&self) -> usize {
        if self.pair_sum {
            self.n_sectors / 2
        } else {
            self.n_sectors
        }
    }
}

/// Counts for one integration window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorFrame {
    pub t_mid: f64,
    pub counts: Vec<u64>,
    /// pre-Poisson means
    pub expected: Vec<f64>,
}

/// Photon flux (per `1/kappa`) reaching each sector.
pub fn sector_rates(field: &FieldState, overlaps: &SectorOverlaps, params: &SystemParams, efficiency: f64) -> Result<Vec<f64>> {
    let scale = 2.0 * params.kappa * efficiency;
    let total: f64 = field.photon_number();
    (0..overlaps.n_sectors)
        .map(|j| {
            let q = overlaps.quadratic_form(j, &field.alpha).re;
            if q < -1e-12 * total.max(1.0) {
                return Err(Error::NegativeRate { sector: j, rate: scale * q });
            }
            Ok(scale * q.max(0.0))
        })
        .collect()
}

/// Add opposing sectors: output `j` is `rates[j] + rates[j + n/2]`.
pub fn pair_sum(rates: &[f64]) -> Vec<f64> {
    let half = rates.len() / 2;
    (0..half).map(|j| rates[j] + rates[j + half]).collect()
}

/// Integral over `[a, b]` of the piecewise-linear interpolant through
/// `(times, values)`.
fn integrate_linear(times: &[f64], values: &[Vec<f64>], a: f64, b: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let start = times.partition_point(|&t| t <= a).saturating_sub(1);
    for i in start..times.len().saturating_sub(1) {
        let (t0, t1) = (times[i], times[i + 1]);
        if t0 >= b {
            break;
        }
        let lo = t0.max(a);
        let hi = t1.min(b);
        if hi <= lo {
            continue;
        }
        let span = t1 - t0;
        for (k, o) in out.iter_mut().enumerate() {
            let (v0, v1) = (values[i][k], values[i + 1][k]);
            let at = |t: f64| v0 + (v1 - v0) * (t - t0) / span;
            *o += 0.5 * (at(lo) + at(hi)) * (hi - lo);
        }
    }
}

/// Counter-based stream per window so results do not depend on evaluation order.
fn window_rng(seed: u64, window: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(window as u64);
    rng
}

/// Poisson draw, with zero for a vanishing mean.
pub fn poisson(rng: &mut impl Rng, mean: f64) -> u64 {
    if mean > 0.0 {
        let d = Poisson::new(mean).expect("positive finite mean");
        rng.sample(d) as u64
    } else {
        0
    }
}

/// Draw per-sector counts from per-sector means and apply pair summation.
pub fn sample_frame(config: &DetectorConfig, window_index: usize, t_mid: f64, sector_means: &[f64]) -> DetectorFrame {
    let mut rng = window_rng(config.seed, window_index);
    let sector_counts: Vec<u64> = sector_means.iter().map(|&m| poisson(&mut rng, m)).collect();
    let (counts, expected) = if config.pair_sum {
        let half = sector_counts.len() / 2;
        (
            (0..half).map(|j| sector_counts[j] + sector_counts[j + half]).collect(),
            pair_sum(sector_means),
        )
    } else {
        (sector_counts, sector_means.to_vec())
    };
    DetectorFrame { t_mid, counts, expected }
}

/// Tile the record with non-overlapping windows from `t = 0` and produce one
/// frame per complete window.
pub fn integrate_windows(
    traj: &TrajectoryRecord,
    config: &DetectorConfig,
    overlaps: &SectorOverlaps,
    params: &SystemParams,
) -> Result<Vec<DetectorFrame>> {
    config.validate()?;
    if overlaps.n_sectors != config.n_sectors {
        return Err(Error::invalid(format!(
            "overlaps have {} sectors, detector has {}",
            overlaps.n_sectors, config.n_sectors
        )));
    }
    let t0 = traj.times.first().copied().unwrap_or(0.0);
    let span = traj.span();
    if traj.len() < 2 || span + 1e-9 * config.window < config.window {
        return Err(Error::TooShort { span, window: config.window });
    }
    let max_gap = traj.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if max_gap > config.window / 10.0 * (1.0 + 1e-9) {
        return Err(Error::invalid(format!(
            "trajectory sampling interval {max_gap} exceeds window/10 = {}",
            config.window / 10.0
        )));
    }
    let rates = traj
        .fields
        .par_iter()
        .map(|f| sector_rates(f, overlaps, params, config.efficiency))
        .collect::<Result<Vec<_>>>()?;
    let n_windows = ((span + 1e-9 * config.window) / config.window).floor() as usize;
    let frames = (0..n_windows)
        .into_par_iter()
        .map(|w| {
            let a = t0 + w as f64 * config.window;
            let b = a + config.window;
            let mut means = vec![0.0; config.n_sectors];
            integrate_linear(&traj.times, &rates, a, b, &mut means);
            sample_frame(config, w, 0.5 * (a + b), &means)
        })
        .collect();
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{AtomState, NoiseConfig};
    use crate::modes::{sector_overlap_matrices, CavityGeometry, LgConvention, ModeSet};
    use crate::params::PhysicalParams;
    use crate::steady::{empty_cavity, stationary_field};
    use crate::modes::Point;
    use num_complex::Complex64 as C64;

    fn setup() -> (SystemParams, ModeSet, SectorOverlaps) {
        let g = CavityGeometry::new(29e-6, 780e-9, 100e-6).unwrap();
        let set = ModeSet::new(ModeSet::default_modes(), g, LgConvention::RootTwo).unwrap();
        let eta = [C64::new(6.4, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
        let p = SystemParams::from_physical(&PhysicalParams::default(), &eta, &g).unwrap();
        let o = sector_overlap_matrices(&set, 16, 5.0).unwrap();
        (p, set, o)
    }

    fn static_record(field: FieldState, span: f64, dt: f64) -> TrajectoryRecord {
        let n = (span / dt).round() as usize + 1;
        TrajectoryRecord {
            times: (0..n).map(|i| i as f64 * dt).collect(),
            states: vec![AtomState::default(); n],
            fields: vec![field; n],
            noise: NoiseConfig::off(),
            escaped: false,
        }
    }

    #[test]
    fn empty_cavity_rates_are_uniform() {
        let (p, set, o) = setup();
        let f = empty_cavity(&p, &set);
        let r = sector_rates(&f, &o, &p, 1.0).unwrap();
        let each = 2.0 * f.photon_number() / 16.0;
        for v in &r {
            assert!((v - each).abs() < 1e-6 * each);
        }
        let zero = sector_rates(&FieldState::zeros(3), &o, &p, 1.0).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn opposing_sectors_equal() {
        let (p, set, o) = setup();
        let s = stationary_field(&p, &set, Point::xy(0.3, 0.45)).unwrap();
        let r = sector_rates(&s.alpha_stat, &o, &p, 1.0).unwrap();
        for j in 0..8 {
            assert_eq!(r[j], r[j + 8]);
        }
        let total: f64 = r.iter().sum();
        assert!((total - 2.0 * s.alpha_stat.photon_number()).abs() < 1e-6 * total);
        assert!(r.iter().any(|&v| (v - total / 16.0).abs() > 1e-3 * total));
    }

    #[test]
    fn window_totals_for_empty_cavity() {
        let (p, set, o) = setup();
        let rec = static_record(empty_cavity(&p, &set), 300.0, 0.1);
        let cfg = DetectorConfig::default();
        let frames = integrate_windows(&rec, &cfg, &o, &p).unwrap();
        assert_eq!(frames.len(), 3);
        assert!((frames[1].t_mid - 150.0).abs() < 1e-9);
        for f in &frames {
            assert_eq!(f.counts.len(), 8);
            for e in &f.expected {
                assert!((e - 140.0).abs() < 0.1, "{e}");
            }
        }
    }

    #[test]
    fn efficiency_is_linear_and_pairs_sum() {
        let (p, set, o) = setup();
        let s = stationary_field(&p, &set, Point::xy(-0.2, 0.5)).unwrap();
        let rec = static_record(s.alpha_stat, 100.0, 0.1);
        let full = integrate_windows(&rec, &DetectorConfig::default(), &o, &p).unwrap();
        let half = integrate_windows(&rec, &DetectorConfig { efficiency: 0.5, ..Default::default() }, &o, &p).unwrap();
        for (a, b) in full[0].expected.iter().zip(&half[0].expected) {
            assert!((0.5 * a - b).abs() < 1e-12 * a);
        }
        let unpaired = integrate_windows(&rec, &DetectorConfig { pair_sum: false, ..Default::default() }, &o, &p).unwrap();
        assert_eq!(unpaired[0].counts.len(), 16);
        assert_eq!(pair_sum(&unpaired[0].expected), full[0].expected);
        let summed: Vec<u64> = (0..8).map(|j| unpaired[0].counts[j] + unpaired[0].counts[j + 8]).collect();
        assert_eq!(summed, full[0].counts);
    }

    #[test]
    fn errors() {
        let (p, set, o) = setup();
        let rec = static_record(empty_cavity(&p, &set), 50.0, 0.1);
        assert!(matches!(
            integrate_windows(&rec, &DetectorConfig::default(), &o, &p),
            Err(Error::TooShort { .. })
        ));
        let coarse = static_record(empty_cavity(&p, &set), 300.0, 20.0);
        assert!(integrate_windows(&coarse, &DetectorConfig::default(), &o, &p).is_err());
        assert!(DetectorConfig { n_sectors: 15, ..Default::default() }.validate().is_err());
        assert!(DetectorConfig { efficiency: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn linear_integration_is_exact_for_linear_data() {
        let times: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let values: Vec<Vec<f64>> = times.iter().map(|t| vec![2.0 * t + 1.0]).collect();
        let mut out = [0.0];
        integrate_linear(&times, &values, 2.5, 7.25, &mut out);
        let exact = |t: f64| t * t + t;
        assert!((out[0] - (exact(7.25) - exact(2.5))).abs() < 1e-12);
    }
}
