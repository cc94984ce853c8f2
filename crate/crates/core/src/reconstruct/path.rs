//! Branch selection across the point-symmetric ambiguity and path smoothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstruct::locate::{PositionEstimate, UNINFORMATIVE_SIGMA};
use crate::reconstruct::{ReconOptions, Smoothing};
use crate::reconstruct::spline::SmoothingSpline;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BranchSummary {
    /// no seed position was given, so the branch is an arbitrary one of the pair
    pub arbitrary: bool,
    /// accepted points further than the gate from the motion extrapolated
    /// from the two before them
    pub jumps: usize,
    /// detectable estimates left out of the track and the smoothing fit
    pub outliers: usize,
}

/// How far back (in detectable frames) the previous accepted point may lie;
/// at most this many minus one consecutive outliers inside the track.
const MAX_STRIDE: usize = 4;

/// Spread of the seed as a prior on the first accepted point, waists. It
/// only has to tell a point from its reflection.
const SEED_SCALE: f64 = 1.0;

struct Frame {
    t: f64,
    sigma: f64,
    candidates: Vec<([f64; 2], f64)>,
}

/// Cost of the second accepted point given the first: a step of up to about
/// `gate` per window is expected.
fn step_cost(a: &Frame, pa: [f64; 2], b: &Frame, pb: [f64; 2], gate: f64, window: f64) -> f64 {
    let g = ((b.t - a.t) / window).max(1.0);
    let var = (gate * g).powi(2) + a.sigma.powi(2) + b.sigma.powi(2);
    dist(pa, pb).powi(2) / var
}

/// Linear extrapolation from `(a, pa)`, `(b, pb)` to the time of `c`, and the
/// variance of the miss: the estimate noise of the three points propagated
/// through the extrapolation plus a constant acceleration of `accel`
/// waists per window squared.
fn extrapolate(a: &Frame, pa: [f64; 2], b: &Frame, pb: [f64; 2], c: &Frame, accel: f64, window: f64) -> ([f64; 2], f64) {
    let w = (c.t - b.t) / (b.t - a.t);
    let pred = [pb[0] + w * (pb[0] - pa[0]), pb[1] + w * (pb[1] - pa[1])];
    let drift = 0.5 * accel * (c.t - b.t) * (c.t - a.t) / (window * window);
    let var = drift * drift + c.sigma.powi(2) + ((1.0 + w) * b.sigma).powi(2) + (w * a.sigma).powi(2);
    (pred, var)
}

/// Choose one candidate per detectable frame, or declare the frame an
/// outlier, so that the whole track is most plausible.
///
/// The candidates are the best-fit pair `(r, -r)` and any alternative pairs.
/// The cost of a track is the sum of
/// - the excess misfit of every chosen candidate over the frame's best fit,
/// - the squared miss of every point from the linear extrapolation of the
///   two accepted points before it, in units of its expected spread
///   (estimate noise plus `opts.acceleration`),
/// - `opts.outlier_penalty` for every detectable frame left out,
/// - the distance of the first point from the seed, which fixes the branch;
///   without a seed the first detection's best candidate stands in for it.
///
/// Following the extrapolated motion rather than the nearest point keeps
/// the branch when the atom crosses the axis, where `r` and `-r` meet, and
/// the global minimum (found by dynamic programming over pairs of
/// consecutive accepted points) is not derailed by a single bad frame.
pub fn select_branch(estimates: &mut [PositionEstimate], window: f64, opts: &ReconOptions) -> BranchSummary {
    let mut summary = BranchSummary {
        arbitrary: opts.seed_position.is_none(),
        ..BranchSummary::default()
    };
    let mut index = Vec::new();
    let mut frames = Vec::new();
    for (i, est) in estimates.iter_mut().enumerate() {
        est.chosen = None;
        est.jump = false;
        est.outlier = false;
        let candidates = est.all_candidates();
        if est.detectable && !candidates.is_empty() {
            index.push(i);
            frames.push(Frame {
                t: est.t_mid,
                sigma: if est.sigma.is_finite() { est.sigma } else { UNINFORMATIVE_SIGMA },
                candidates,
            });
        }
    }
    let m = frames.len();
    if m == 0 {
        return summary;
    }
    let (penalty, gate) = (opts.outlier_penalty, opts.gate);
    // without a seed the first detection is taken as it is listed
    let seed = opts.seed_position.or(Some(frames[0].candidates[0].0));
    let width = frames.iter().map(|f| f.candidates.len()).max().unwrap_or(0);
    // state: (frame a, candidate ca, stride back to the previous accepted
    // frame, 0 for none, candidate there)
    let states = (MAX_STRIDE + 1) * width;
    let at = |a: usize, ca: usize, back: usize, cb: usize| ((a * width + ca) * (MAX_STRIDE + 1) + back) * width + cb;
    let mut cost = vec![f64::INFINITY; m * width * states];
    let mut from = vec![usize::MAX; m * width * states];
    let relax = |cost: &mut [f64], from: &mut [usize], s: usize, c: f64, prev: usize| {
        if c < cost[s] {
            cost[s] = c;
            from[s] = prev;
        }
    };
    for a in 0..m {
        let fa = &frames[a];
        for (ca, &(pa, excess)) in fa.candidates.iter().enumerate() {
            let prior = seed.map_or(0.0, |s| (dist(pa, s) / SEED_SCALE).powi(2));
            relax(&mut cost, &mut from, at(a, ca, 0, 0), penalty * a as f64 + excess + prior, usize::MAX);
        }
        for ca in 0..fa.candidates.len() {
            for back in 0..=MAX_STRIDE.min(a) {
                for cb in 0..width {
                    let s = at(a, ca, back, cb);
                    let here = cost[s];
                    if !here.is_finite() {
                        continue;
                    }
                    let pa = fa.candidates[ca].0;
                    for next in a + 1..m.min(a + MAX_STRIDE + 1) {
                        let fc = &frames[next];
                        let skipped = penalty * (next - a - 1) as f64;
                        for (cc, &(pc, excess)) in fc.candidates.iter().enumerate() {
                            let motion = if back == 0 {
                                step_cost(fa, pa, fc, pc, gate, window)
                            } else {
                                let fb = &frames[a - back];
                                let (pred, var) = extrapolate(fb, fb.candidates[cb].0, fa, pa, fc, opts.acceleration, window);
                                dist(pc, pred).powi(2) / var
                            };
                            relax(&mut cost, &mut from, at(next, cc, next - a, ca), here + skipped + excess + motion, s);
                        }
                    }
                }
            }
        }
    }
    // cheapest end state, trailing frames counted as outliers
    let mut best = (f64::INFINITY, usize::MAX);
    for a in 0..m {
        for s in at(a, 0, 0, 0)..at(a + 1, 0, 0, 0) {
            let c = cost[s] + penalty * (m - 1 - a) as f64;
            if c < best.0 {
                best = (c, s);
            }
        }
    }
    let decode = |s: usize| {
        let cb = s % width;
        let back = (s / width) % (MAX_STRIDE + 1);
        let ca = (s / (width * (MAX_STRIDE + 1))) % width;
        let a = s / (width * (MAX_STRIDE + 1) * width);
        (a, ca, back, cb)
    };
    let mut track = Vec::new();
    let mut s = best.1;
    while s != usize::MAX {
        let (a, ca, _, _) = decode(s);
        track.push((a, frames[a].candidates[ca].0));
        s = from[s];
    }
    track.reverse();
    for &(a, p) in &track {
        estimates[index[a]].chosen = Some(p);
    }
    for (k, &(c, pc)) in track.iter().enumerate() {
        let off = match k {
            0 => false,
            1 => dist(track[0].1, pc) > gate,
            _ => {
                let ((a, pa), (b, pb)) = (track[k - 2], track[k - 1]);
                let (pred, _) = extrapolate(&frames[a], pa, &frames[b], pb, &frames[c], 0.0, window);
                dist(pc, pred) > gate
            }
        };
        if off {
            estimates[index[c]].jump = true;
            summary.jumps += 1;
        }
    }
    for &i in &index {
        if estimates[i].chosen.is_none() {
            estimates[i].outlier = true;
            estimates[i].chosen = estimates[i].candidates.map(|c| c[0]);
            summary.outliers += 1;
        }
    }
    summary
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedPath {
    pub estimates: Vec<PositionEstimate>,
    /// smoothed position at every estimate time
    pub smoothed: Vec<[f64; 2]>,
    /// the smoothed value bridges a frame without a chosen estimate
    pub interpolated: Vec<bool>,
    pub lambda: [f64; 2],
    pub branch: BranchSummary,
}

impl ReconstructedPath {
    /// The same path rotated by 180 degrees; an equally valid solution.
    pub fn point_reflected(&self) -> Self {
        let flip = |p: [f64; 2]| [-p[0], -p[1]];
        let mut out = self.clone();
        for e in &mut out.estimates {
            e.chosen = e.chosen.map(flip);
            e.candidates = e.candidates.map(|[a, b]| [flip(a), flip(b)]);
            e.alternatives = e.alternatives.iter().copied().map(flip).collect();
        }
        out.smoothed = out.smoothed.into_iter().map(flip).collect();
        out
    }
}

/// Tukey bisquare tuning constant, in units of the robust residual scale.
const BISQUARE_C: f64 = 4.685;

/// Reweighting passes of the robust fit.
const ROBUST_PASSES: usize = 6;

/// Weight floor for rejected points, keeps the spline system regular.
const MIN_ROBUST_WEIGHT: f64 = 1e-6;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Common factor by which the propagated spreads understate the scatter of
/// the points, from the pseudo-residuals `y_i - (a y_{i-1} + b y_{i+1})`
/// (linear interpolation from the neighbours), robustly via the median
/// absolute deviation. Never below one.
pub fn spread_scale(t: &[f64], points: &[[f64; 2]], sigma: &[f64]) -> f64 {
    if t.len() < 3 {
        return 1.0;
    }
    let z: Vec<f64> = (1..t.len() - 1)
        .map(|i| {
            let a = (t[i + 1] - t[i]) / (t[i + 1] - t[i - 1]);
            let b = 1.0 - a;
            let miss = [0, 1].map(|k| points[i][k] - a * points[i - 1][k] - b * points[i + 1][k]);
            let spread = ((a * sigma[i - 1]).powi(2) + (b * sigma[i + 1]).powi(2) + sigma[i].powi(2)).sqrt();
            miss[0].hypot(miss[1]) / spread
        })
        .collect();
    // the in-plane miss of a 2-d standard normal has median sqrt(2 ln 2)
    let scale = median(z) / (2.0 * std::f64::consts::LN_2).sqrt();
    if scale.is_finite() {
        scale.max(1.0)
    } else {
        1.0
    }
}

fn fit_coordinate(t: &[f64], y: &[f64], sigma: &[f64], smoothing: Smoothing) -> Result<SmoothingSpline> {
    match smoothing {
        Smoothing::CrossValidation => SmoothingSpline::fit_cross_validated(t, y, sigma),
        Smoothing::NoiseScale => SmoothingSpline::fit_to_noise(t, y, sigma),
    }
}

/// Fit a per-coordinate smoothing spline through the chosen estimates that
/// are not outliers, weighted by their counting-noise spread, with the
/// smoothing parameter set by `smoothing`.
///
/// The fit is made robust by iterative reweighting: the in-plane miss of
/// every point, in units of its spread, is scaled by the median absolute
/// deviation and given a Tukey bisquare weight. Points far off the curve
/// (a misplaced lookup the spread does not account for) thus lose their
/// pull without a hard cut.
pub fn smooth_path(estimates: Vec<PositionEstimate>, branch: BranchSummary, smoothing: Smoothing) -> Result<ReconstructedPath> {
    let chosen: Vec<(f64, [f64; 2], f64)> = estimates
        .iter()
        .filter(|e| !e.outlier)
        .filter_map(|e| e.chosen.map(|c| (e.t_mid, c, e.sigma)))
        .collect();
    if chosen.len() < 4 {
        return Err(Error::invalid(format!(
            "smoothing needs at least 4 located frames, have {}",
            chosen.len()
        )));
    }
    let t: Vec<f64> = chosen.iter().map(|c| c.0).collect();
    let mut sigma: Vec<f64> = chosen.iter().map(|c| c.2.max(1e-6)).collect();
    if smoothing == Smoothing::NoiseScale {
        let points: Vec<[f64; 2]> = chosen.iter().map(|c| c.1).collect();
        let scale = spread_scale(&t, &points, &sigma);
        sigma.iter_mut().for_each(|s| *s *= scale);
    }
    let coords: [Vec<f64>; 2] = [0, 1].map(|k| chosen.iter().map(|c| c.1[k]).collect());
    let mut robust = vec![1.0; chosen.len()];
    let mut splines = Vec::new();
    for pass in 0..=ROBUST_PASSES {
        let eff: Vec<f64> = sigma
            .iter()
            .zip(&robust)
            .map(|(s, r): (&f64, &f64)| s / r.max(MIN_ROBUST_WEIGHT).sqrt())
            .collect();
        splines = coords
            .iter()
            .map(|y| fit_coordinate(&t, y, &eff, smoothing))
            .collect::<Result<Vec<_>>>()?;
        if pass == ROBUST_PASSES {
            break;
        }
        let miss: Vec<f64> = (0..t.len())
            .map(|i| {
                let dx = coords[0][i] - splines[0].knot_values()[i];
                let dy = coords[1][i] - splines[1].knot_values()[i];
                dx.hypot(dy) / sigma[i]
            })
            .collect();
        let scale = 1.4826 * median(miss.clone());
        if !(scale > 0.0) {
            break;
        }
        let next: Vec<f64> = miss
            .iter()
            .map(|m| {
                let u = m / (BISQUARE_C * scale);
                if u < 1.0 {
                    (1.0 - u * u).powi(2)
                } else {
                    0.0
                }
            })
            .collect();
        let settled = next.iter().zip(&robust).all(|(a, b)| (a - b).abs() < 1e-3);
        robust = next;
        if settled {
            break;
        }
    }
    let smoothed = estimates
        .iter()
        .map(|e| [splines[0].eval(e.t_mid), splines[1].eval(e.t_mid)])
        .collect();
    let interpolated = estimates.iter().map(|e| e.chosen.is_none() || e.outlier).collect();
    Ok(ReconstructedPath {
        estimates,
        smoothed,
        interpolated,
        lambda: [splines[0].lambda, splines[1].lambda],
        branch,
    })
}
