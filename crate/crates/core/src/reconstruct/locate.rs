//! Least-squares lookup of one detector frame in the signature grid.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstruct::grid::{chi2, SignatureGrid};

/// Position spread assigned when the local signature carries no position
/// information (flat Jacobian), in waists.
pub const UNINFORMATIVE_SIGMA: f64 = 1.0;

/// Other local minima whose shot-noise-weighted misfit is within this much of
/// the best are kept as alternatives.
pub const ALTERNATIVE_CHI2_MARGIN: f64 = 9.0;

/// Alternatives closer than this (waists) to an already kept candidate or
/// its reflection are dropped.
pub const ALTERNATIVE_SEPARATION: f64 = 0.25;

/// At most this many alternative pairs per frame.
pub const MAX_ALTERNATIVES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub t_mid: f64,
    /// the point-symmetric pair `(r, -r)` of the best fit
    pub candidates: Option<[[f64; 2]; 2]>,
    /// other well-separated minima that fit the counts about as well; each
    /// stands for the pair `(a, -a)`
    pub alternatives: Vec<[f64; 2]>,
    /// shot-noise-weighted misfit of each alternative in excess of the best
    pub alternative_excess: Vec<f64>,
    pub chosen: Option<[f64; 2]>,
    /// least-squares misfit at the estimate
    pub residual: f64,
    pub detectable: bool,
    /// counting-noise spread of the position, per coordinate, in waists
    pub sigma: f64,
    /// the chosen point starts a new segment after a step longer than the
    /// continuity gate
    pub jump: bool,
    /// the chosen point stepped beyond the gate and the next detection did
    /// not confirm it; it is left out of the smoothing fit
    pub outlier: bool,
}

impl PositionEstimate {
    pub fn undetectable(t_mid: f64, residual: f64) -> Self {
        Self {
            t_mid,
            candidates: None,
            alternatives: Vec::new(),
            alternative_excess: Vec::new(),
            chosen: None,
            residual,
            detectable: false,
            sigma: f64::INFINITY,
            jump: false,
            outlier: false,
        }
    }

    /// Every position compatible with the frame with its excess misfit: the
    /// best pair first, then the alternative pairs.
    pub fn all_candidates(&self) -> Vec<([f64; 2], f64)> {
        let mut v: Vec<([f64; 2], f64)> = self
            .candidates
            .map(|c| vec![(c[0], 0.0), (c[1], 0.0)])
            .unwrap_or_default();
        for (i, a) in self.alternatives.iter().enumerate() {
            let excess = self.alternative_excess.get(i).copied().unwrap_or(0.0);
            v.push((*a, excess));
            v.push(([-a[0], -a[1]], excess));
        }
        v
    }
}

fn misfit(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Central-difference Jacobian of the signature at a grid index, one-sided
/// at the border. Columns are `d/dx`, `d/dy`.
fn jacobian(grid: &SignatureGrid, idx: usize) -> Vec<[f64; 2]> {
    let n = grid.n;
    let (iy, ix) = (idx / n, idx % n);
    let neighbours = |i: usize| -> (usize, usize, f64) {
        match (i > 0, i + 1 < n) {
            (true, true) => (i - 1, i + 1, 2.0),
            (false, true) => (i, i + 1, 1.0),
            (true, false) => (i - 1, i, 1.0),
            (false, false) => (i, i, 1.0),
        }
    };
    let (xl, xr, dx) = neighbours(ix);
    let (yl, yr, dy) = neighbours(iy);
    let (sxl, sxr) = (grid.signature(iy * n + xl), grid.signature(iy * n + xr));
    let (syl, syr) = (grid.signature(yl * n + ix), grid.signature(yr * n + ix));
    (0..grid.outputs)
        .map(|k| {
            [
                (sxr[k] - sxl[k]) / (dx * grid.spacing),
                (syr[k] - syl[k]) / (dy * grid.spacing),
            ]
        })
        .collect()
}

/// Counting-noise position spread from the local Jacobian: the rms of the
/// two diagonal entries of `(J^T J)^-1 J^T V J (J^T J)^-1`, `V` the Poisson
/// variances.
pub fn position_sigma(jac: &[[f64; 2]], variance: &[f64]) -> f64 {
    let mut jtj = Matrix2::zeros();
    let mut jvj = Matrix2::zeros();
    for (row, &v) in jac.iter().zip(variance) {
        let r = Vector2::new(row[0], row[1]);
        jtj += r * r.transpose();
        jvj += v * r * r.transpose();
    }
    match jtj.try_inverse() {
        Some(inv) if jtj.determinant() > 1e-12 * jtj.norm_squared() => {
            let cov = inv * jvj * inv;
            let s = (0.5 * (cov[(0, 0)] + cov[(1, 1)])).sqrt();
            if s.is_finite() {
                s.min(UNINFORMATIVE_SIGMA)
            } else {
                UNINFORMATIVE_SIGMA
            }
        }
        _ => UNINFORMATIVE_SIGMA,
    }
}

/// One Gauss-Newton step on the linearized signature around a grid point,
/// limited to one grid spacing per axis. Returns the refined position, the
/// misfit of the linear model there and the position spread.
fn refine(counts: &[f64], grid: &SignatureGrid, idx: usize, grid_misfit: f64) -> ([f64; 2], f64, f64) {
    let sig = grid.signature(idx);
    let jac = jacobian(grid, idx);
    let res: Vec<f64> = counts.iter().zip(sig).map(|(c, s)| c - s).collect();
    let mut jtj = Matrix2::zeros();
    let mut jtr = Vector2::zeros();
    for (row, r) in jac.iter().zip(&res) {
        let v = Vector2::new(row[0], row[1]);
        jtj += v * v.transpose();
        jtr += v * *r;
    }
    let mut step = [0.0, 0.0];
    let mut residual = grid_misfit;
    if grid_misfit > 0.0 {
        if let Some(inv) = jtj.try_inverse() {
            let d = inv * jtr;
            step = [
                d[0].clamp(-grid.spacing, grid.spacing),
                d[1].clamp(-grid.spacing, grid.spacing),
            ];
            residual = jac
                .iter()
                .zip(&res)
                .map(|(row, r)| (r - row[0] * step[0] - row[1] * step[1]).powi(2))
                .sum::<f64>()
                .min(grid_misfit);
        }
    }
    let [x, y] = grid.position(idx);
    let variance: Vec<f64> = sig.iter().map(|v| v.max(1.0)).collect();
    ([x + step[0], y + step[1]], residual, position_sigma(&jac, &variance))
}

/// Grid points that are local minima of the misfit among their detectable
/// 8-neighbours.
fn local_minima(grid: &SignatureGrid, misfits: &[f64]) -> Vec<usize> {
    let n = grid.n as isize;
    (0..grid.len())
        .filter(|&i| grid.detectable[i])
        .filter(|&i| {
            let (iy, ix) = ((i as isize) / n, (i as isize) % n);
            (-1..=1).all(|dy| {
                (-1..=1).all(|dx| {
                    let (y, x) = (iy + dy, ix + dx);
                    if (dx, dy) == (0, 0) || x < 0 || y < 0 || x >= n || y >= n {
                        return true;
                    }
                    let j = (y * n + x) as usize;
                    !grid.detectable[j] || misfits[i] < misfits[j] || (misfits[i] == misfits[j] && i < j)
                })
            })
        })
        .collect()
}

fn pair_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1]).min((a[0] + b[0]).hypot(a[1] + b[1]))
}

/// Locate a frame of counts in the grid.
///
/// The best detectable grid point by exhaustive scan is refined by one
/// Gauss-Newton step on the linearized signature (the quadratic model of the
/// misfit surface). Other local minima that explain the counts about as
/// well, judged by the shot-noise-weighted misfit, are returned as
/// alternatives. A frame whose misfit to the empty cavity is within the
/// shot-noise threshold is reported undetectable.
pub fn locate_frame(counts: &[f64], t_mid: f64, grid: &SignatureGrid, window: f64) -> Result<PositionEstimate> {
    if counts.len() != grid.outputs {
        return Err(Error::invalid(format!(
            "frame has {} values, grid expects {}",
            counts.len(),
            grid.outputs
        )));
    }
    if (window - grid.window).abs() > 1e-9 * grid.window {
        return Err(Error::invalid(format!(
            "frame window {window} differs from grid window {}",
            grid.window
        )));
    }
    let to_empty = grid.misfit_to_empty(counts);
    let misfits: Vec<f64> = (0..grid.len())
        .map(|i| {
            if grid.detectable[i] {
                misfit(counts, grid.signature(i))
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let best = (0..grid.len())
        .filter(|&i| grid.detectable[i])
        .min_by(|&a, &b| misfits[a].total_cmp(&misfits[b]).then(a.cmp(&b)));
    let Some(idx) = best else {
        return Ok(PositionEstimate::undetectable(t_mid, to_empty));
    };
    let (r, residual, sigma) = refine(counts, grid, idx, misfits[idx]);

    let chi2_best = chi2(counts, grid.signature(idx));
    let mut minima: Vec<(usize, f64)> = local_minima(grid, &misfits)
        .into_iter()
        .map(|i| (i, (chi2(counts, grid.signature(i)) - chi2_best).max(0.0)))
        .filter(|&(_, excess)| excess <= ALTERNATIVE_CHI2_MARGIN)
        .collect();
    minima.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut kept = vec![r];
    let mut alternatives = Vec::new();
    let mut alternative_excess = Vec::new();
    for (i, excess) in minima {
        if alternatives.len() == MAX_ALTERNATIVES {
            break;
        }
        let p = grid.position(i);
        if kept.iter().all(|k| pair_distance(*k, p) > ALTERNATIVE_SEPARATION) {
            let (a, _, _) = refine(counts, grid, i, misfits[i]);
            kept.push(p);
            alternatives.push(a);
            alternative_excess.push(excess);
        }
    }

    Ok(PositionEstimate {
        t_mid,
        candidates: Some([r, [-r[0], -r[1]]]),
        alternatives,
        alternative_excess,
        chosen: None,
        residual,
        detectable: to_empty > grid.threshold,
        sigma,
        jump: false,
        outlier: false,
    })
}
