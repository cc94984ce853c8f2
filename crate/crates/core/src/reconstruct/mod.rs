//! Path reconstruction from detector counts.
//!
//! Nothing here reads the simulated trajectory except [`evaluate`]; the
//! inversion sees only detector frames and the signature grid.

pub mod evaluate;
pub mod grid;
pub mod locate;
pub mod path;
pub mod spline;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use evaluate::{evaluate, ErrorReport};
pub use grid::{build_grid, GridSpec, SignatureGrid};
pub use locate::{locate_frame, PositionEstimate};
pub use path::{select_branch, smooth_path, BranchSummary, ReconstructedPath};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconOptions {
    /// known starting position of the atom, in waists
    pub seed_position: Option<[f64; 2]>,
    /// points further than this (waists) from the extrapolated motion are
    /// flagged as discontinuities
    pub gate: f64,
    /// typical acceleration of the atom, waists per window squared; sets how
    /// far a point may stray from the linear extrapolation of the track
    pub acceleration: f64,
    /// cost of leaving a detectable frame out of the track, in units of a
    /// squared standard deviation
    pub outlier_penalty: f64,
    pub smoothing: Smoothing,
}

/// How the smoothing parameter of the path spline is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    /// generalized cross-validation; the propagated spreads only weight
    /// the frames against each other
    CrossValidation,
    /// unbiased risk with the propagated spreads taken as the true noise
    #[default]
    NoiseScale,
}

impl Default for ReconOptions {
    fn default() -> Self {
        Self {
            seed_position: None,
            gate: 0.5,
            acceleration: 0.1,
            outlier_penalty: 16.0,
            smoothing: Smoothing::default(),
        }
    }
}

/// Counts of one frame as read from a detector record.
#[derive(Debug, Clone, PartialEq)]
pub struct CountFrame {
    pub t_mid: f64,
    pub counts: Vec<f64>,
}

/// Locate every frame, choose the continuous branch and smooth.
///
/// With fewer than four located frames no curve is fitted: the smoothed
/// positions are NaN and every frame is marked interpolated.
pub fn reconstruct(frames: &[CountFrame], grid: &SignatureGrid, window: f64, opts: &ReconOptions) -> Result<ReconstructedPath> {
    if frames.windows(2).any(|w| !(w[1].t_mid > w[0].t_mid)) {
        return Err(Error::invalid("frame times must increase"));
    }
    let mut estimates = frames
        .par_iter()
        .map(|f| locate_frame(&f.counts, f.t_mid, grid, window))
        .collect::<Result<Vec<_>>>()?;
    let branch = select_branch(&mut estimates, window, opts);
    let located = estimates.iter().filter(|e| e.chosen.is_some()).count();
    if located < 4 {
        let n = estimates.len();
        return Ok(ReconstructedPath {
            estimates,
            smoothed: vec![[f64::NAN; 2]; n],
            interpolated: vec![true; n],
            lambda: [f64::NAN; 2],
            branch,
        });
    }
    smooth_path(estimates, branch, opts.smoothing)
}
