//! Stationary cavity field for an atom held at a fixed position.
//!
//! With the time derivatives and noise removed, the amplitude equation
//!
//! ```text
//! d alpha_m/dt = eta_m + (i Delta - kappa) alpha_m - (i U0 + gamma) u_m sum_n u_n^* alpha_n
//! ```
//!
//! becomes the linear system `[(kappa - i Delta) I + (i U0 + gamma) u u^H] alpha = eta`.
//! That system is solved directly and is the reference.
//!
//! Closed form: projecting onto `u^H` gives
//! `E0 = u^H alpha = u^H eta / (kappa - i Delta + (i U0 + gamma) |u|^2)` and then
//! `alpha = (eta - (i U0 + gamma) u E0) / (kappa - i Delta)`. Written against
//! `(i Delta - kappa)` this is the familiar pair of expressions for the
//! stationary amplitudes and the field at the atom, with the pump entering
//! unconjugated and the mode functions conjugated inside `E0`, as the
//! amplitude equation requires.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::{ModeSet, Point};
use crate::params::{SystemParams, SATURATION_WARN};

/// Complex mode amplitudes; `|alpha_m|^2` is the mean photon number in mode `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub alpha: Vec<C64>,
}

impl FieldState {
    pub fn zeros(n: usize) -> Self {
        Self {
            alpha: vec![C64::new(0.0, 0.0); n],
        }
    }

    pub fn photon_number(&self) -> f64 {
        self.alpha.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Total intensity `|sum_m alpha_m u_m|^2` at a point.
    pub fn intensity_at(&self, set: &ModeSet, pt: Point) -> f64 {
        set.values(pt)
            .iter()
            .zip(&self.alpha)
            .map(|(u, a)| u * a)
            .sum::<C64>()
            .norm_sqr()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarySolution {
    pub alpha_stat: FieldState,
    /// `sum_n u_n^*(r_a) alpha_n`
    pub e0: C64,
    /// `|sum_m alpha_m u_m(r_a)|^2`
    pub intensity_at_atom: f64,
    pub saturation: f64,
}

impl StationarySolution {
    pub fn saturated(&self) -> bool {
        self.saturation > SATURATION_WARN
    }
}

/// Stationary field with no atom: `alpha_m = eta_m / (kappa - i Delta)`.
pub fn empty_cavity(params: &SystemParams, set: &ModeSet) -> FieldState {
    debug_assert_eq!(params.eta.len(), set.len());
    let pole = params.cavity_pole();
    FieldState {
        alpha: params.eta.iter().map(|e| e / pole).collect(),
    }
}

fn check_pump(params: &SystemParams, set: &ModeSet) -> Result<()> {
    if params.eta.len() != set.len() {
        return Err(Error::invalid(format!(
            "{} pump amplitudes for {} modes",
            params.eta.len(),
            set.len()
        )));
    }
    Ok(())
}

/// Closed-form stationary amplitudes and `E0` for mode values `u` at the atom.
pub fn closed_form(params: &SystemParams, u: &[C64]) -> (Vec<C64>, C64) {
    let c = params.coupling();
    let pole = params.cavity_pole();
    let u2: f64 = u.iter().map(|v| v.norm_sqr()).sum();
    let drive: C64 = u.iter().zip(&params.eta).map(|(v, e)| v.conj() * e).sum();
    let e0 = drive / (pole + c * u2);
    let alpha = u
        .iter()
        .zip(&params.eta)
        .map(|(v, e)| (e - c * v * e0) / pole)
        .collect();
    (alpha, e0)
}

/// Solve the stationary amplitude equations for an atom at rest at `pt`.
pub fn stationary_field(params: &SystemParams, set: &ModeSet, pt: Point) -> Result<StationarySolution> {
    check_pump(params, set)?;
    let u = set.values(pt);
    let n = u.len();
    let c = params.coupling();
    let pole = params.cavity_pole();
    let a = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { pole } else { C64::new(0.0, 0.0) };
        diag + c * u[i] * u[j].conj()
    });
    let rhs = DVector::from_column_slice(&params.eta);
    let lu = a.lu();
    let sol = lu.solve(&rhs).ok_or_else(|| Error::SingularSystem {
        x: pt.x,
        y: pt.y,
        detail: "LU factorization has a zero pivot".into(),
    })?;
    let alpha: Vec<C64> = sol.iter().copied().collect();
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem {
            x: pt.x,
            y: pt.y,
            detail: "non-finite amplitudes".into(),
        });
    }

    let (alpha_cf, e0_cf) = closed_form(params, &u);
    let scale = params.eta.iter().map(|e| e.norm()).fold(0.0, f64::max) / params.kappa;
    let scale = scale.max(f64::MIN_POSITIVE);
    let disagreement = alpha
        .iter()
        .zip(&alpha_cf)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    if disagreement > 1e-10 * scale {
        return Err(Error::SingularSystem {
            x: pt.x,
            y: pt.y,
            detail: format!("direct and closed-form solutions differ by {disagreement:e}"),
        });
    }

    let e0: C64 = u.iter().zip(&alpha).map(|(v, a)| v.conj() * a).sum();
    debug_assert!((e0 - e0_cf).norm() <= 1e-9 * scale.max(e0.norm()));
    let intensity_at_atom = u.iter().zip(&alpha).map(|(v, a)| v * a).sum::<C64>().norm_sqr();
    Ok(StationarySolution {
        saturation: params.saturation(e0),
        alpha_stat: FieldState { alpha },
        e0,
        intensity_at_atom,
    })
}

/// Fixed-point residual `|d alpha/dt|` of the noiseless amplitude equation.
pub fn fixed_point_residual(params: &SystemParams, set: &ModeSet, pt: Point, field: &FieldState) -> f64 {
    let u = set.values(pt);
    let c = params.coupling();
    let e0: C64 = u.iter().zip(&field.alpha).map(|(v, a)| v.conj() * a).sum();
    field
        .alpha
        .iter()
        .zip(&u)
        .zip(&params.eta)
        .map(|((a, v), e)| (e - params.cavity_pole() * a - c * v * e0).norm())
        .fold(0.0, f64::max)
}

/// The single effective mode seen by an atom at `pt`.
#[derive(Debug, Clone)]
pub struct EffectiveMode {
    /// `sqrt(sum |u_m|^2)`
    pub u_eff: f64,
    /// Unitary with `rotation * u = (u_eff, 0, ..)`.
    pub rotation: DMatrix<C64>,
}

pub fn effective_mode(set: &ModeSet, pt: Point) -> EffectiveMode {
    let u = set.values(pt);
    let n = u.len();
    let u_eff = u.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if u_eff == 0.0 {
        return EffectiveMode {
            u_eff,
            rotation: DMatrix::identity(n, n),
        };
    }
    // Gram-Schmidt starting from u / |u|, then the unit vectors
    let mut basis: Vec<DVector<C64>> = vec![DVector::from_iterator(n, u.iter().map(|v| v / u_eff))];
    for k in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = DVector::<C64>::zeros(n);
        v[k] = C64::new(1.0, 0.0);
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dotc(&v);
                v -= q * proj;
            }
        }
        let nrm = v.norm();
        if nrm > 1e-8 {
            basis.push(v / C64::new(nrm, 0.0));
        }
    }
    let rotation = DMatrix::from_fn(n, n, |i, j| basis[i][j].conj());
    EffectiveMode { u_eff, rotation }
}

/// Stationary amplitudes via the effective single mode: only the first
/// rotated amplitude couples to the atom.
pub fn stationary_single_mode(params: &SystemParams, set: &ModeSet, pt: Point) -> Result<FieldState> {
    check_pump(params, set)?;
    let eff = effective_mode(set, pt);
    let eta = DVector::from_column_slice(&params.eta);
    let eta_rot = &eff.rotation * eta;
    let pole = params.cavity_pole();
    let mut rot = eta_rot.map(|e| e / pole);
    rot[0] = eta_rot[0] / (pole + params.coupling() * eff.u_eff * eff.u_eff);
    let back = eff.rotation.adjoint() * rot;
    Ok(FieldState {
        alpha: back.iter().copied().collect(),
    })
}

/// A sampled intensity image, row-major with row 0 at `y = +extent`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub resolution: usize,
    pub extent: f64,
    pub data: Vec<f64>,
    pub atom: Option<Point>,
    pub field: FieldState,
}

impl Pattern {
    /// Pixel-centre coordinate along an axis; symmetric about zero.
    pub fn coord(resolution: usize, extent: f64, i: usize) -> f64 {
        let h = 2.0 * extent / (resolution - 1) as f64;
        (i as f64 - (resolution - 1) as f64 / 2.0) * h
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.resolution + col]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Render `|sum alpha_stat u(x, y, 0)|^2` over `[-extent, extent]^2`.
pub fn render_pattern(
    params: &SystemParams,
    set: &ModeSet,
    atom: Option<Point>,
    resolution: usize,
    extent: f64,
) -> Result<Pattern> {
    if resolution < 2 {
        return Err(Error::invalid(format!("resolution {resolution} below 2 pixels")));
    }
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(Error::invalid(format!("extent {extent} must be positive")));
    }
    let field = match atom {
        Some(pt) => stationary_field(params, set, pt)?.alpha_stat,
        None => empty_cavity(params, set),
    };
    let mut data = Vec::with_capacity(resolution * resolution);
    for row in 0..resolution {
        let y = Pattern::coord(resolution, extent, resolution - 1 - row);
        for col in 0..resolution {
            let x = Pattern::coord(resolution, extent, col);
            data.push(field.intensity_at(set, Point::xy(x, y)));
        }
    }
    Ok(Pattern {
        resolution,
        extent,
        data,
        atom,
        field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::{CavityGeometry, LgConvention};
    use crate::params::PhysicalParams;

    fn setup() -> (SystemParams, ModeSet) {
        let g = CavityGeometry::new(29e-6, 780e-9, 100e-6).unwrap();
        let set = ModeSet::new(ModeSet::default_modes(), g, LgConvention::RootTwo).unwrap();
        let eta = [C64::new(6.4, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
        let p = SystemParams::from_physical(&PhysicalParams::default(), &eta, &g).unwrap();
        (p, set)
    }

    #[test]
    fn empty_cavity_photon_number() {
        let (p, set) = setup();
        let f = empty_cavity(&p, &set);
        let expect = 6.4 / (1.5f64.powi(2) + 2.25f64.powi(2)).sqrt();
        assert!((f.alpha[0].norm() - expect).abs() < 1e-12);
        assert!((expect - 2.3667).abs() < 1e-4);
        assert!((f.photon_number() - 5.601).abs() < 1e-3);
        assert_eq!(f.alpha[1], C64::new(0.0, 0.0));
    }

    #[test]
    fn empty_cavity_trivial_cases() {
        let (mut p, set) = setup();
        p.eta = vec![C64::new(0.0, 0.0); 3];
        assert!(empty_cavity(&p, &set).photon_number() == 0.0);
        let (mut p, set) = setup();
        p.delta = 0.0;
        let f = empty_cavity(&p, &set);
        assert!((f.alpha[0] - p.eta[0] / p.kappa).norm() < 1e-15);
        assert_eq!(f.alpha[0].im, 0.0);
    }

    #[test]
    fn dark_ring_atom_is_invisible() {
        let (p, set) = setup();
        let pt = Point::polar(2f64.powf(-0.25), 0.7, 0.0);
        let u = set.values(pt);
        assert!(u[0].norm() < 1e-15);
        assert!(u[1].norm() > 0.1);
        let s = stationary_field(&p, &set, pt).unwrap();
        let e = empty_cavity(&p, &set);
        for (a, b) in s.alpha_stat.alpha.iter().zip(&e.alpha) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn far_atom_sees_empty_cavity() {
        let (p, set) = setup();
        let s = stationary_field(&p, &set, Point::xy(10.0, 0.0)).unwrap();
        let e = empty_cavity(&p, &set);
        for (a, b) in s.alpha_stat.alpha.iter().zip(&e.alpha) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn residual_is_tiny() {
        let (p, set) = setup();
        for &(x, y) in &[(0.0, 0.0), (0.3, 0.2), (-0.5, 0.9), (1.3, -0.1)] {
            let s = stationary_field(&p, &set, Point::xy(x, y)).unwrap();
            let r = fixed_point_residual(&p, &set, Point::xy(x, y), &s.alpha_stat);
            assert!(r < 1e-10 * p.eta[0].norm());
        }
    }

    #[test]
    fn effective_mode_properties() {
        let (p, set) = setup();
        let on_axis = effective_mode(&set, Point::xy(0.0, 0.0));
        assert!((on_axis.u_eff - set.norms[0]).abs() < 1e-14);
        for &(r, t) in &[(0.3, 0.4), (0.9, 2.2), (0.05, 5.0)] {
            let a = effective_mode(&set, Point::polar(r, t, 0.0));
            let b = effective_mode(&set, Point::polar(r, t + std::f64::consts::PI, 0.0));
            assert!((a.u_eff - b.u_eff).abs() < 1e-14);
            let u = DVector::from_vec(set.values(Point::polar(r, t, 0.0)));
            let ru = &a.rotation * u;
            assert!((ru[0] - C64::new(a.u_eff, 0.0)).norm() < 1e-14);
            assert!(ru[1].norm() < 1e-14 && ru[2].norm() < 1e-14);
            let id = &a.rotation * a.rotation.adjoint();
            assert!((id - DMatrix::identity(3, 3)).norm() < 1e-13);
            let single = stationary_single_mode(&p, &set, Point::polar(r, t, 0.0)).unwrap();
            let direct = stationary_field(&p, &set, Point::polar(r, t, 0.0)).unwrap();
            for (x, y) in single.alpha.iter().zip(&direct.alpha_stat.alpha) {
                assert!((x - y).norm() < 1e-10);
            }
        }
        let zero = effective_mode(&set, Point::xy(40.0, 0.0));
        assert_eq!(zero.u_eff, 0.0);
        assert_eq!(zero.rotation, DMatrix::identity(3, 3));
    }

    #[test]
    fn empty_pattern_is_rotationally_symmetric() {
        let (p, set) = setup();
        let pat = render_pattern(&p, &set, None, 41, 1.5).unwrap();
        let f = empty_cavity(&p, &set);
        for row in 0..41 {
            for col in 0..41 {
                let x = Pattern::coord(41, 1.5, col);
                let y = Pattern::coord(41, 1.5, 40 - row);
                let rho = x.hypot(y);
                let on_x = f.intensity_at(&set, Point::xy(rho, 0.0));
                let v = pat.at(row, col);
                assert!((v - on_x).abs() <= 1e-6 * pat.max());
            }
        }
    }

    #[test]
    fn atom_pattern_point_symmetric() {
        let (p, set) = setup();
        let pat = render_pattern(&p, &set, Some(Point::xy(0.4, 0.25)), 33, 1.5).unwrap();
        let n = 33;
        for row in 0..n {
            for col in 0..n {
                assert_eq!(pat.at(row, col), pat.at(n - 1 - row, n - 1 - col));
            }
        }
        let empty = render_pattern(&p, &set, None, 33, 1.5).unwrap();
        assert!(pat.data.iter().zip(&empty.data).any(|(a, b)| (a - b).abs() > 1e-3));
    }

    #[test]
    fn dark_ring_pattern_equals_empty() {
        let (p, set) = setup();
        let pt = Point::polar(2f64.powf(-0.25), 1.1, 0.0);
        let pat = render_pattern(&p, &set, Some(pt), 21, 1.5).unwrap();
        let empty = render_pattern(&p, &set, None, 21, 1.5).unwrap();
        for (a, b) in pat.data.iter().zip(&empty.data) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn invalid_pattern_requests() {
        let (p, set) = setup();
        assert!(render_pattern(&p, &set, None, 1, 1.0).is_err());
        assert!(render_pattern(&p, &set, None, 10, 0.0).is_err());
    }
}
