//! Weighted cubic smoothing spline (Reinsch form).
//!
//! Minimizes `sum w_i (y_i - g(t_i))^2 + lambda int g''(t)^2 dt` over natural
//! cubic splines with knots at the data times.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// second derivatives at the knots; zero at both ends
    curvature: Vec<f64>,
    pub lambda: f64,
    /// effective degrees of freedom, the trace of the smoother matrix
    pub edf: f64,
}

impl SmoothingSpline {
    /// Fit with a fixed `lambda` (in the units of the supplied times).
    pub fn fit(t: &[f64], y: &[f64], w: &[f64], lambda: f64) -> Result<Self> {
        let n = t.len();
        if n < 3 || y.len() != n || w.len() != n {
            return Err(Error::invalid(format!("smoothing spline needs >= 3 matching points, got {n}")));
        }
        if t.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::invalid("spline times must be strictly increasing"));
        }
        if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("spline weights must be positive"));
        }
        let h: Vec<f64> = t.windows(2).map(|p| p[1] - p[0]).collect();
        let m = n - 2;
        let mut q = DMatrix::<f64>::zeros(n, m);
        let mut r = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            q[(j, j)] = 1.0 / h[j];
            q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
            q[(j + 2, j)] = 1.0 / h[j + 1];
            r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < m {
                r[(j, j + 1)] = h[j + 1] / 6.0;
                r[(j + 1, j)] = h[j + 1] / 6.0;
            }
        }
        let winv = DVector::from_iterator(n, w.iter().map(|v| 1.0 / v));
        let yv = DVector::from_column_slice(y);
        let qt_winv = q.transpose() * DMatrix::from_diagonal(&winv);
        let a = &r + lambda * &qt_winv * &q;
        let rhs = q.transpose() * &yv;
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::invalid("smoothing system is not positive definite"))?;
        let gamma = chol.solve(&rhs);
        let g = &yv - lambda * DMatrix::from_diagonal(&winv) * (&q * &gamma);
        let qa = &q * chol.solve(&q.transpose());
        let edf = n as f64 - lambda * (0..n).map(|i| winv[i] * qa[(i, i)]).sum::<f64>();
        let mut curvature = vec![0.0; n];
        curvature[1..n - 1].copy_from_slice(gamma.as_slice());
        Ok(Self {
            knots: t.to_vec(),
            values: g.iter().copied().collect(),
            curvature,
            lambda,
            edf,
        })
    }

    /// Weighted residual sum `sum w_i (y_i - g_i)^2`.
    pub fn weighted_rss(&self, y: &[f64], w: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(y)
            .zip(w)
            .map(|((g, y), w)| w * (y - g).powi(2))
            .sum()
    }

    /// Fit with `lambda` minimizing the unbiased risk estimate
    /// `sum w_i (y_i - g_i)^2 + 2 edf`, `w_i = 1 / sigma_i^2`; appropriate
    /// when `sigma_i` are the true noise spreads. Data within noise of a
    /// straight line gives the line.
    pub fn fit_to_noise(t: &[f64], y: &[f64], sigma: &[f64]) -> Result<Self> {
        let w = inverse_variance(sigma);
        Self::fit_minimizing(t, y, &w, |s, rss, _| rss + 2.0 * s.edf)
    }

    /// Fit with `lambda` minimizing the generalized cross-validation score
    /// `n rss / (n - edf)^2`. The `sigma_i` only set the relative weights,
    /// so a common misjudgement of their scale does not matter.
    pub fn fit_cross_validated(t: &[f64], y: &[f64], sigma: &[f64]) -> Result<Self> {
        let w = inverse_variance(sigma);
        Self::fit_minimizing(t, y, &w, |s, rss, n| {
            let dof = n - s.edf;
            if dof > 1e-9 {
                n * rss / (dof * dof)
            } else {
                f64::INFINITY
            }
        })
    }

    /// Search `lambda` for the minimum of `score(spline, weighted rss, n)`: a
    /// coarse scan over decades, then golden-section refinement.
    fn fit_minimizing(t: &[f64], y: &[f64], w: &[f64], score: impl Fn(&Self, f64, f64) -> f64) -> Result<Self> {
        let n = t.len() as f64;
        let span = t.last().copied().unwrap_or(1.0) - t.first().copied().unwrap_or(0.0);
        // lambda scales like (time)^3 x weight; search in decades around that
        let base = span.powi(3) / w.iter().sum::<f64>().max(f64::MIN_POSITIVE) * n;
        let eval = |log_l: f64| -> Result<(f64, Self)> {
            let s = Self::fit(t, y, w, base * 10f64.powf(log_l))?;
            Ok((score(&s, s.weighted_rss(y, w), n), s))
        };
        let (lo, hi, steps) = (-14.0f64, 10.0f64, 48);
        let mut best = (f64::INFINITY, lo);
        for k in 0..=steps {
            let l = lo + (hi - lo) * k as f64 / steps as f64;
            let (r, _) = eval(l)?;
            if r < best.0 {
                best = (r, l);
            }
        }
        let step = (hi - lo) / steps as f64;
        let (mut a, mut b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        while b - a > 1e-3 {
            let (c, d) = (b - phi * (b - a), a + phi * (b - a));
            if eval(c)?.0 <= eval(d)?.0 {
                b = d;
            } else {
                a = c;
            }
        }
        let (r_mid, s_mid) = eval(0.5 * (a + b))?;
        let (_, s_best) = eval(best.1)?;
        Ok(if r_mid <= best.0 { s_mid } else { s_best })
    }

    pub fn knot_values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        let n = k.len();
        let (g, c) = (&self.values, &self.curvature);
        if t <= k[0] {
            let h = k[1] - k[0];
            let slope = (g[1] - g[0]) / h - h * c[1] / 6.0;
            return g[0] + slope * (t - k[0]);
        }
        if t >= k[n - 1] {
            let h = k[n - 1] - k[n - 2];
            let slope = (g[n - 1] - g[n - 2]) / h + h * c[n - 2] / 6.0;
            return g[n - 1] + slope * (t - k[n - 1]);
        }
        let i = k.partition_point(|&s| s <= t).min(n - 1) - 1;
        let h = k[i + 1] - k[i];
        let (a, b) = (t - k[i], k[i + 1] - t);
        (a * g[i + 1] + b * g[i]) / h
            - a * b / 6.0 * ((1.0 + a / h) * c[i + 1] + (1.0 + b / h) * c[i])
    }
}

fn inverse_variance(sigma: &[f64]) -> Vec<f64> {
    sigma.iter().map(|s| 1.0 / (s * s)).collect()
}
