//! Comparison of a reconstructed path with the simulated ground truth.

use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::reconstruct::path::ReconstructedPath;

/// Frames whose true position is closer to the axis than this are ignored
/// when counting branch flips; there the two branches nearly coincide.
pub const FLIP_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub frames: usize,
    pub detectable: usize,
    pub detectable_fraction: f64,
    /// smoothed path vs truth over detectable frames, in waists
    pub rms: f64,
    pub max: f64,
    /// raw located positions vs truth over detectable frames
    pub raw_rms: f64,
    /// as `rms` but restricted to frames with `|r_true| < inner_radius`
    pub inner_radius: f64,
    pub inner_frames: usize,
    pub rms_inner: f64,
    pub max_inner: f64,
    /// 0: path matches truth; 1: path matches the point-reflected truth
    pub branch: u8,
    pub branch_flips: usize,
}

/// Per-frame truth positions at the frame centres (linear interpolation).
pub fn truth_at(path: &ReconstructedPath, truth: &TrajectoryRecord) -> Vec<Option<[f64; 2]>> {
    path.estimates.iter().map(|e| truth.position_at(e.t_mid)).collect()
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }
}

pub fn evaluate(path: &ReconstructedPath, truth: &TrajectoryRecord, inner_radius: f64) -> Result<ErrorReport> {
    let tpos = truth_at(path, truth);
    let overlap = tpos.iter().filter(|p| p.is_some()).count();
    if overlap == 0 {
        return Err(Error::invalid("reconstructed path and trajectory do not overlap in time"));
    }
    let d = |a: [f64; 2], b: [f64; 2], sign: f64| (a[0] - sign * b[0]).hypot(a[1] - sign * b[1]);

    let mut best: Option<(f64, u8, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    for (branch, sign) in [(0u8, 1.0), (1u8, -1.0)] {
        let mut all = Vec::new();
        let mut inner = Vec::new();
        let mut raw = Vec::new();
        for ((e, s), tp) in path.estimates.iter().zip(&path.smoothed).zip(&tpos) {
            let (Some(c), Some(tp)) = (e.chosen, tp) else { continue };
            let err = d(*s, *tp, sign);
            all.push(err);
            raw.push(d(c, *tp, sign));
            if tp[0].hypot(tp[1]) < inner_radius {
                inner.push(err);
            }
        }
        let r = rms(&all);
        if best.as_ref().is_none_or(|b| r < b.0) {
            best = Some((r, branch, all, inner, raw));
        }
    }
    let (rms_all, branch, all, inner, raw) = best.expect("two branches evaluated");

    let mut flips = 0;
    let mut last: Option<bool> = None;
    for (e, tp) in path.estimates.iter().zip(&tpos) {
        let (Some(c), Some(tp)) = (e.chosen, tp) else { continue };
        if tp[0].hypot(tp[1]) < FLIP_MARGIN {
            continue;
        }
        let same = d(c, *tp, 1.0) <= d(c, *tp, -1.0);
        if let Some(l) = last {
            if l != same {
                flips += 1;
            }
        }
        last = Some(same);
    }

    let frames = overlap;
    let detectable = all.len();
    Ok(ErrorReport {
        frames,
        detectable,
        detectable_fraction: detectable as f64 / frames as f64,
        rms: rms_all,
        max: all.iter().copied().fold(0.0, f64::max),
        raw_rms: rms(&raw),
        inner_radius,
        inner_frames: inner.len(),
        rms_inner: rms(&inner),
        max_inner: inner.iter().copied().fold(0.0, f64::max),
        branch,
        branch_flips: flips,
    })
}
