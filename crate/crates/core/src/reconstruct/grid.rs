//! Precomputed detector signatures over a transverse grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{pair_sum, poisson, sector_rates, DetectorConfig};
use crate::error::{Error, Result};
use crate::modes::{sector_overlap_matrices, ModeSet, Point};
use crate::params::SystemParams;
use crate::steady::{empty_cavity, stationary_field, FieldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// grid covers `[-half_extent, half_extent]^2`, in waists
    pub half_extent: f64,
    /// in waists
    pub spacing: f64,
    /// quantile of pure shot-noise misfits that separates "empty" from "atom"
    pub detect_quantile: f64,
    pub calibration_samples: usize,
    pub calibration_seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            half_extent: 2.5,
            spacing: 1.0 / 40.0,
            detect_quantile: 0.95,
            calibration_samples: 10_000,
            calibration_seed: 0x5eed,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.half_extent >= self.spacing) {
            return Err(Error::invalid("grid spacing must be positive and below the extent"));
        }
        if !(self.detect_quantile > 0.0 && self.detect_quantile < 1.0) {
            return Err(Error::invalid("detection quantile must lie in (0, 1)"));
        }
        if self.calibration_samples < 100 {
            return Err(Error::invalid("need at least 100 calibration samples"));
        }
        Ok(())
    }

    /// Points per axis; always odd so the origin is a grid point.
    pub fn points_per_axis(&self) -> usize {
        2 * (self.half_extent / self.spacing).round() as usize + 1
    }
}

/// Expected counts per window for every grid point.
///
/// Points are stored row-major with `index = iy * n + ix`; the coordinate of
/// index `i` along an axis is `(i - (n - 1) / 2) * spacing`, so index `i` and
/// `n - 1 - i` are exact negatives of each other.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureGrid {
    pub n: usize,
    pub spacing: f64,
    pub outputs: usize,
    pub window: f64,
    pub signatures: Vec<f64>,
    pub empty: Vec<f64>,
    pub detectable: Vec<bool>,
    /// misfit-to-empty threshold from the shot-noise calibration
    pub threshold: f64,
    pub physics_hash: String,
    pub detector_hash: String,
}

impl SignatureGrid {
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn half_extent(&self) -> f64 {
        self.coord((self.n - 1) as isize)
    }

    fn center(&self) -> isize {
        (self.n as isize - 1) / 2
    }

    pub fn coord(&self, i: isize) -> f64 {
        (i - self.center()) as f64 * self.spacing
    }

    pub fn position(&self, idx: usize) -> [f64; 2] {
        let (iy, ix) = (idx / self.n, idx % self.n);
        [self.coord(ix as isize), self.coord(iy as isize)]
    }

    /// Grid index of the point-reflected position.
    pub fn mirror(&self, idx: usize) -> usize {
        self.len() - 1 - idx
    }

    pub fn signature(&self, idx: usize) -> &[f64] {
        &self.signatures[idx * self.outputs..(idx + 1) * self.outputs]
    }

    /// Nearest grid index to a position, if inside the grid.
    pub fn nearest(&self, pos: [f64; 2]) -> Option<usize> {
        let c = self.center() as f64;
        let ix = (pos[0] / self.spacing + c).round();
        let iy = (pos[1] / self.spacing + c).round();
        let lim = (self.n - 1) as f64;
        if ix < 0.0 || iy < 0.0 || ix > lim || iy > lim {
            return None;
        }
        Some(iy as usize * self.n + ix as usize)
    }

    /// Shot-noise-normalized distance of a count vector from the empty cavity.
    pub fn misfit_to_empty(&self, v: &[f64]) -> f64 {
        chi2(v, &self.empty)
    }

    /// Set the detectability mask from the current threshold.
    pub fn apply_mask(&mut self) {
        let mask: Vec<bool> = (0..self.len())
            .map(|i| self.misfit_to_empty(self.signature(i)) > self.threshold)
            .collect();
        self.detectable = mask;
    }
}

/// `sum (v - e)^2 / max(e, 1)`; the floor keeps unlit outputs finite.
pub fn chi2(v: &[f64], expected: &[f64]) -> f64 {
    v.iter()
        .zip(expected)
        .map(|(a, e)| (a - e).powi(2) / e.max(1.0))
        .sum()
}

/// Expected counts per output for a given field.
pub fn field_signature(
    field: &FieldState,
    overlaps: &crate::modes::SectorOverlaps,
    params: &SystemParams,
    det: &DetectorConfig,
) -> Result<Vec<f64>> {
    let rates = sector_rates(field, overlaps, params, det.efficiency)?;
    let rates = if det.pair_sum { pair_sum(&rates) } else { rates };
    Ok(rates.into_iter().map(|r| r * det.window).collect())
}

/// Quantile of the misfit of pure shot-noise frames around `empty`.
pub fn calibrate_threshold(empty: &[f64], quantile: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats: Vec<f64> = (0..samples)
        .map(|_| {
            let draw: Vec<f64> = empty.iter().map(|&m| poisson(&mut rng, m) as f64).collect();
            chi2(&draw, empty)
        })
        .collect();
    stats.sort_by(|a, b| a.total_cmp(b));
    let k = ((quantile * samples as f64).ceil() as usize).clamp(1, samples) - 1;
    stats[k]
}

pub fn build_grid(
    params: &SystemParams,
    set: &ModeSet,
    det: &DetectorConfig,
    spec: &GridSpec,
    physics_hash: &str,
    detector_hash: &str,
) -> Result<SignatureGrid> {
    spec.validate()?;
    det.validate()?;
    let overlaps = sector_overlap_matrices(set, det.n_sectors, det.r_max)?;
    let n = spec.points_per_axis();
    let outputs = det.outputs();
    let mut grid = SignatureGrid {
        n,
        spacing: spec.spacing,
        outputs,
        window: det.window,
        signatures: vec![0.0; n * n * outputs],
        empty: field_signature(&empty_cavity(params, set), &overlaps, params, det)?,
        detectable: vec![false; n * n],
        threshold: 0.0,
        physics_hash: physics_hash.to_string(),
        detector_hash: detector_hash.to_string(),
    };
    // each point-symmetric pair is computed once
    let half = (n * n - 1) / 2;
    let computed = (0..=half)
        .into_par_iter()
        .map(|idx| {
            let [x, y] = grid.position(idx);
            let s = stationary_field(params, set, Point::xy(x, y))?;
            field_signature(&s.alpha_stat, &overlaps, params, det)
        })
        .collect::<Result<Vec<_>>>()?;
    for (idx, sig) in computed.into_iter().enumerate() {
        let m = grid.mirror(idx);
        grid.signatures[idx * outputs..(idx + 1) * outputs].copy_from_slice(&sig);
        grid.signatures[m * outputs..(m + 1) * outputs].copy_from_slice(&sig);
    }
    grid.threshold = calibrate_threshold(
        &grid.empty,
        spec.detect_quantile,
        spec.calibration_samples,
        spec.calibration_seed,
    );
    grid.apply_mask();
    Ok(grid)
}
