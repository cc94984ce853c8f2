//! Laguerre-Gaussian transverse mode basis.
//!
//! All transverse lengths are in units of the waist `w0`. A mode is
//!
//! ```text
//! u_pm(rho, theta, z) = C_pm cos(kz) exp(-rho^2 + i m theta) (-1)^p (sqrt(2) rho)^|m| L_p^|m|(c rho^2)
//! ```
//!
//! with `c = sqrt(2)` for [`LgConvention::RootTwo`] and `c = 2` for
//! [`LgConvention::Standard`]. Writing `(sqrt(2) rho)^|m| e^{i m theta}` as
//! `2^{|m|/2} (x + i sgn(m) y)^|m|` keeps value and gradient free of any
//! on-axis singularity.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laguerre::{laguerre, laguerre_deriv};
use crate::quadrature::{integrate, QuadConfig};

/// Transverse power of a normalized mode, `pi w0^2 / 2`, in waist units.
pub const MODE_POWER: f64 = PI / 2.0;

/// Default outer radius for transverse quadratures.
pub const DEFAULT_R_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeIndex {
    pub p: u32,
    pub m: i32,
}

impl ModeIndex {
    pub const fn new(p: u32, m: i32) -> Self {
        Self { p, m }
    }

    /// Mode order `2p + |m|`; equal orders are frequency degenerate.
    pub fn order(&self) -> u32 {
        2 * self.p + self.m.unsigned_abs()
    }
}

impl std::fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.p, self.m)
    }
}

/// Which scaling of the Laguerre argument to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LgConvention {
    /// `L_p^|m|(sqrt(2) rho^2 / w0^2)`
    #[default]
    RootTwo,
    /// `L_p^|m|(2 rho^2 / w0^2)`, the textbook form.
    Standard,
}

impl LgConvention {
    pub fn argument_scale(self) -> f64 {
        match self {
            LgConvention::RootTwo => std::f64::consts::SQRT_2,
            LgConvention::Standard => 2.0,
        }
    }
}

/// Cavity geometry in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityGeometry {
    /// TEM00 waist [m]
    pub waist: f64,
    /// optical wavelength [m]
    pub wavelength: f64,
    /// mirror separation [m]
    pub length: f64,
}

impl CavityGeometry {
    pub fn new(waist: f64, wavelength: f64, length: f64) -> Result<Self> {
        let g = Self {
            waist,
            wavelength,
            length,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("waist", self.waist),
            ("wavelength", self.wavelength),
            ("length", self.length),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("cavity {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Wavenumber [1/m].
    pub fn k(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// TEM00 mode volume `d w0^2 pi / 4` [m^3].
    pub fn mode_volume(&self) -> f64 {
        self.length * self.waist * self.waist * PI / 4.0
    }
}

/// A point in waist units; `z` only enters through `cos(kz)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point {
    pub const fn xy(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn polar(rho: f64, theta: f64, z: f64) -> Self {
        Self {
            x: rho * theta.cos(),
            y: rho * theta.sin(),
            z,
        }
    }

    pub fn rho(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Mode value and its transverse gradient `(d/dx, d/dy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexField2D {
    pub value: C64,
    pub grad: [C64; 2],
}

impl ComplexField2D {
    pub const ZERO: Self = Self {
        value: C64::new(0.0, 0.0),
        grad: [C64::new(0.0, 0.0); 2],
    };
}

/// An ordered, normalized set of modes. The order of `modes` is the
/// amplitude-vector order used everywhere downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub modes: Vec<ModeIndex>,
    pub norms: Vec<f64>,
    pub geometry: CavityGeometry,
    pub convention: LgConvention,
}

impl ModeSet {
    /// The three-mode family `(1,0), (0,-2), (0,2)`.
    pub fn default_modes() -> Vec<ModeIndex> {
        vec![ModeIndex::new(1, 0), ModeIndex::new(0, -2), ModeIndex::new(0, 2)]
    }

    pub fn new(
        modes: Vec<ModeIndex>,
        geometry: CavityGeometry,
        convention: LgConvention,
    ) -> Result<Self> {
        geometry.validate()?;
        let norms = compute_norms(&modes, convention)?;
        Ok(Self {
            modes,
            norms,
            geometry,
            convention,
        })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// All modes share one order `2p + |m|`.
    pub fn is_degenerate(&self) -> bool {
        self.modes.windows(2).all(|w| w[0].order() == w[1].order())
    }

    /// `k w0`, the longitudinal phase per waist length.
    fn kz_scale(&self) -> f64 {
        self.geometry.k() * self.geometry.waist
    }

    /// Radial factor without normalization: `f(rho)` such that
    /// `u = C cos(kz) f(rho) e^{i m theta}`.
    pub fn radial(&self, mode: ModeIndex, rho: f64) -> f64 {
        radial_profile(mode, self.convention, rho)
    }

    /// Evaluate mode number `idx` of this set.
    pub fn evaluate(&self, idx: usize, pt: Point) -> ComplexField2D {
        eval_cartesian(
            self.modes[idx],
            self.norms[idx],
            self.convention,
            self.kz_scale(),
            pt,
        )
    }

    /// All modes at `pt`, in canonical order.
    pub fn mode_vector(&self, pt: Point) -> Vec<ComplexField2D> {
        (0..self.len()).map(|i| self.evaluate(i, pt)).collect()
    }

    /// Mode values only.
    pub fn values(&self, pt: Point) -> Vec<C64> {
        (0..self.len()).map(|i| self.evaluate(i, pt).value).collect()
    }

    /// Re-derive norms and check they match the stored ones; used when a
    /// basis is loaded from disk.
    pub fn verify(&self) -> Result<()> {
        if self.modes.len() != self.norms.len() {
            return Err(Error::invalid("mode and norm lists differ in length"));
        }
        let fresh = compute_norms(&self.modes, self.convention)?;
        for (i, (a, b)) in fresh.iter().zip(&self.norms).enumerate() {
            if (a - b).abs() > 1e-9 * a {
                return Err(Error::invalid(format!(
                    "stored norm {b} for mode {} disagrees with recomputed {a}",
                    self.modes[i]
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("mode set serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let set: ModeSet = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        set.geometry.validate()?;
        set.verify()?;
        Ok(set)
    }
}

/// Evaluate a single mode at polar coordinates (waist units).
pub fn evaluate_mode(mode: ModeIndex, set: &ModeSet, rho: f64, theta: f64, z: f64) -> ComplexField2D {
    let norm = set
        .modes
        .iter()
        .position(|&m| m == mode)
        .map(|i| set.norms[i])
        .unwrap_or_else(|| compute_norms(&[mode], set.convention).expect("norm")[0]);
    eval_cartesian(mode, norm, set.convention, set.kz_scale(), Point::polar(rho, theta, z))
}

fn radial_profile(mode: ModeIndex, conv: LgConvention, rho: f64) -> f64 {
    let am = mode.m.unsigned_abs() as i32;
    let s = rho * rho;
    let sign = if mode.p.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * (-s).exp()
        * (std::f64::consts::SQRT_2 * rho).powi(am)
        * laguerre(mode.p as usize, am as f64, conv.argument_scale() * s)
}

fn eval_cartesian(
    mode: ModeIndex,
    norm: f64,
    conv: LgConvention,
    kz_scale: f64,
    pt: Point,
) -> ComplexField2D {
    let am = mode.m.unsigned_abs();
    let sgn = if mode.m < 0 { -1.0 } else { 1.0 };
    let c = conv.argument_scale();
    let s = pt.x * pt.x + pt.y * pt.y;

    // g(s) = (-1)^p e^{-s} L(c s)
    let sign = if mode.p.is_multiple_of(2) { 1.0 } else { -1.0 };
    let e = (-s).exp();
    let lag = laguerre(mode.p as usize, am as f64, c * s);
    let dlag = laguerre_deriv(mode.p as usize, am as f64, c * s);
    let g = sign * e * lag;
    let dg = sign * e * (c * dlag - lag);

    let pref = norm * (kz_scale * pt.z).cos() * 2f64.powf(am as f64 / 2.0);
    let w = C64::new(pt.x, sgn * pt.y);
    let w_am = w.powu(am);
    let value = pref * w_am * g;

    let mut grad = [
        pref * w_am * dg * 2.0 * pt.x,
        pref * w_am * dg * 2.0 * pt.y,
    ];
    if am > 0 {
        let w_lo = w.powu(am - 1) * am as f64 * g * pref;
        grad[0] += w_lo;
        grad[1] += w_lo * C64::new(0.0, sgn);
    }
    ComplexField2D { value, grad }
}

/// Normalization constants `C_pm` such that the transverse power of each
/// mode is `pi w0^2 / 2`; with the `d/2` from `cos^2(kz)` this gives the
/// TEM00 mode volume. Radial integral by adaptive quadrature out to
/// [`DEFAULT_R_MAX`] waists.
pub fn compute_norms(modes: &[ModeIndex], conv: LgConvention) -> Result<Vec<f64>> {
    if modes.is_empty() {
        return Err(Error::invalid("mode list is empty"));
    }
    for (i, a) in modes.iter().enumerate() {
        if modes[..i].contains(a) {
            return Err(Error::invalid(format!("duplicate mode {a}")));
        }
    }
    modes
        .iter()
        .map(|&mode| {
            let r_max = DEFAULT_R_MAX + (mode.order() as f64).sqrt();
            let power = 2.0
                * PI
                * integrate(
                    |r| {
                        let f = radial_profile(mode, conv, r);
                        f * f * r
                    },
                    0.0,
                    r_max,
                    QuadConfig::default(),
                )?;
            Ok((MODE_POWER / power).sqrt())
        })
        .collect()
}

/// Angular integral `int_{a}^{b} e^{i dm theta} d theta`.
pub fn angular_factor(dm: i32, a: f64, b: f64) -> C64 {
    if dm == 0 {
        C64::new(b - a, 0.0)
    } else {
        let k = dm as f64;
        (C64::new(0.0, k * b).exp() - C64::new(0.0, k * a).exp()) / C64::new(0.0, k)
    }
}

/// Sector-integrated intensity operators.
///
/// `O[j][(a, b)] = int_sector_j u_a u_b^* dA / (pi w0^2 / 2)` for equal-angle
/// sectors starting at `theta = 0` and running counterclockwise, out to
/// `r_max` waists at `z = 0`. The intensity collected by sector `j` from a
/// field `sum_a alpha_a u_a` is `sum_ab alpha_a O_ab alpha_b^*`.
#[derive(Debug, Clone)]
pub struct SectorOverlaps {
    pub n_sectors: usize,
    pub r_max: f64,
    pub matrices: Vec<DMatrix<C64>>,
}

impl SectorOverlaps {
    /// `sum_ab alpha_a O_ab alpha_b^*` for one sector; real up to rounding.
    pub fn quadratic_form(&self, sector: usize, alpha: &[C64]) -> C64 {
        let o = &self.matrices[sector];
        let mut acc = C64::new(0.0, 0.0);
        for (a, &aa) in alpha.iter().enumerate() {
            for (b, &ab) in alpha.iter().enumerate() {
                acc += aa * o[(a, b)] * ab.conj();
            }
        }
        acc
    }
}

pub fn sector_overlap_matrices(set: &ModeSet, n_sectors: usize, r_max: f64) -> Result<SectorOverlaps> {
    if n_sectors == 0 {
        return Err(Error::invalid("need at least one sector"));
    }
    if r_max < 4.0 {
        return Err(Error::invalid(format!("r_max {r_max} below 4 waists")));
    }
    let n = set.len();
    let mut radial = DMatrix::<f64>::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let (ma, mb) = (set.modes[a], set.modes[b]);
            let v = integrate(
                |r| set.radial(ma, r) * set.radial(mb, r) * r,
                0.0,
                r_max,
                QuadConfig::default(),
            )?;
            let v = v * set.norms[a] * set.norms[b] / MODE_POWER;
            radial[(a, b)] = v;
            radial[(b, a)] = v;
        }
    }
    let width = 2.0 * PI / n_sectors as f64;
    // e^{i dm (theta + pi)} = e^{i dm theta} for even dm: opposing sectors share
    // one matrix, which makes their rates identical rather than merely close
    let even = set
        .modes
        .iter()
        .all(|a| set.modes.iter().all(|b| (a.m - b.m) % 2 == 0));
    let distinct = if even && n_sectors.is_multiple_of(2) { n_sectors / 2 } else { n_sectors };
    let mut matrices: Vec<DMatrix<C64>> = (0..distinct)
        .map(|j| {
            let (lo, hi) = (j as f64 * width, (j + 1) as f64 * width);
            DMatrix::from_fn(n, n, |a, b| {
                let dm = set.modes[a].m - set.modes[b].m;
                angular_factor(dm, lo, hi) * radial[(a, b)]
            })
        })
        .collect();
    for j in distinct..n_sectors {
        matrices.push(matrices[j - distinct].clone());
    }
    Ok(SectorOverlaps {
        n_sectors,
        r_max,
        matrices,
    })
}
