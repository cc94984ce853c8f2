//! Physical parameters and their dimensionless form.
//!
//! Frequencies are stored in units of `kappa`, lengths in waists, momenta
//! in `M w0 kappa`. Conversion happens once, in [`SystemParams::from_physical`].

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::CavityGeometry;

pub const HBAR: f64 = 1.054_571_817e-34;
/// Mass of a 87Rb atom [kg].
pub const RB87_MASS: f64 = 1.443_160_648e-25;

/// Saturation parameter above which the linear-scatterer model is suspect.
pub const SATURATION_WARN: f64 = 0.1;

/// Primary physical inputs. Every rate is an angular frequency given as
/// `2 pi x (value) MHz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    /// maximum TEM00 coupling g0
    pub g0_mhz: f64,
    /// atomic half width at half maximum
    pub linewidth_mhz: f64,
    /// cavity field decay rate
    pub kappa_mhz: f64,
    /// pump-cavity detuning omega_p - omega
    pub cavity_detuning_mhz: f64,
    /// pump-atom detuning omega_p - omega_a
    pub atom_detuning_mhz: f64,
    /// atomic mass [kg]
    pub mass_kg: f64,
    /// multiplier on g0^2 (longitudinal averaging); 1 at an antinode
    pub coupling_average: f64,
}


impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            g0_mhz: 16.0,
            linewidth_mhz: 3.0,
            kappa_mhz: 1.5,
            cavity_detuning_mhz: -2.25,
            atom_detuning_mhz: -114.0,
            mass_kg: RB87_MASS,
            coupling_average: 1.0,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_mhz > 0.0) {
            return Err(Error::invalid("kappa must be positive"));
        }
        if !(self.linewidth_mhz > 0.0) {
            return Err(Error::invalid("atomic linewidth must be positive"));
        }
        if self.atom_detuning_mhz == 0.0 || !self.atom_detuning_mhz.is_finite() {
            return Err(Error::invalid("pump-atom detuning must be finite and non-zero"));
        }
        if !(self.mass_kg > 0.0) {
            return Err(Error::invalid("mass must be positive"));
        }
        if !(self.coupling_average > 0.0) {
            return Err(Error::invalid("coupling average must be positive"));
        }
        Ok(())
    }

    /// Single-photon light shift `g0^2 / (omega_p - omega_a)` in MHz (x 2 pi).
    pub fn u0_mhz(&self) -> f64 {
        self.coupling_average * self.g0_mhz * self.g0_mhz / self.atom_detuning_mhz
    }

    /// Single-photon scattering rate `Gamma g0^2 / (omega_p - omega_a)^2` in MHz (x 2 pi).
    pub fn gamma_sc_mhz(&self) -> f64 {
        self.coupling_average * self.linewidth_mhz * self.g0_mhz * self.g0_mhz
            / (self.atom_detuning_mhz * self.atom_detuning_mhz)
    }
}

/// Dimensionless parameters used by the integrators and solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    pub g0: f64,
    pub linewidth: f64,
    /// always 1; kept explicit so formulas read like the equations of motion
    pub kappa: f64,
    pub delta: f64,
    pub atom_detuning: f64,
    pub eta: Vec<C64>,
    pub coupling_average: f64,
    /// `kappa` in rad/s
    pub kappa_si: f64,
    /// `hbar / (M w0^2 kappa)`: converts `hbar kappa / w0` forces to internal units
    pub force_scale: f64,
    /// `hbar k / (M w0 kappa)`: one photon recoil in internal momentum units
    pub recoil: f64,
    /// `w0 kappa` in m/s
    pub velocity_unit: f64,
}

impl SystemParams {
    /// `eta_mhz` holds the complex pump amplitudes (2 pi MHz) in mode order.
    pub fn from_physical(
        phys: &PhysicalParams,
        eta_mhz: &[C64],
        geometry: &CavityGeometry,
    ) -> Result<Self> {
        phys.validate()?;
        geometry.validate()?;
        let k = phys.kappa_mhz;
        let kappa_si = 2.0 * PI * phys.kappa_mhz * 1e6;
        let w0 = geometry.waist;
        Ok(Self {
            g0: phys.g0_mhz / k,
            linewidth: phys.linewidth_mhz / k,
            kappa: 1.0,
            delta: phys.cavity_detuning_mhz / k,
            atom_detuning: phys.atom_detuning_mhz / k,
            eta: eta_mhz.iter().map(|e| e / k).collect(),
            coupling_average: phys.coupling_average,
            kappa_si,
            force_scale: HBAR / (phys.mass_kg * w0 * w0 * kappa_si),
            recoil: HBAR * geometry.k() / (phys.mass_kg * w0 * kappa_si),
            velocity_unit: w0 * kappa_si,
        })
    }

    pub fn u0(&self) -> f64 {
        self.coupling_average * self.g0 * self.g0 / self.atom_detuning
    }

    pub fn gamma_sc(&self) -> f64 {
        self.coupling_average * self.linewidth * self.g0 * self.g0
            / (self.atom_detuning * self.atom_detuning)
    }

    /// `i U0 + gamma`, the complex atom-induced shift and loss.
    pub fn coupling(&self) -> C64 {
        C64::new(self.gamma_sc(), self.u0())
    }

    /// `kappa - i Delta`
    pub fn cavity_pole(&self) -> C64 {
        C64::new(self.kappa, -self.delta)
    }

    /// Saturation parameter `g0^2 |E0|^2 / ((omega_p - omega_a)^2 + Gamma^2)`.
    pub fn saturation(&self, e0: C64) -> f64 {
        self.coupling_average * self.g0 * self.g0 * e0.norm_sqr()
            / (self.atom_detuning * self.atom_detuning + self.linewidth * self.linewidth)
    }

    /// Speed in m/s to internal velocity (momentum per unit mass).
    pub fn velocity_from_si(&self, v: f64) -> f64 {
        v / self.velocity_unit
    }

    /// Time in units of `1/kappa` to seconds.
    pub fn time_to_si(&self, t: f64) -> f64 {
        t / self.kappa_si
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> CavityGeometry {
        CavityGeometry::new(29e-6, 780e-9, 100e-6).unwrap()
    }

    #[test]
    fn derived_shifts_from_primaries() {
        let p = PhysicalParams::default();
        assert!((p.u0_mhz() - (-2.2456)).abs() < 1e-3);
        assert!((p.u0_mhz() / p.cavity_detuning_mhz - 1.0).abs() < 0.005);
        assert!((p.gamma_sc_mhz() * 1e3 - 59.1).abs() < 0.05);
        assert!((p.gamma_sc_mhz() * 1e3 / 60.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn dimensionless_forms_agree() {
        let p = PhysicalParams::default();
        let s = SystemParams::from_physical(&p, &[C64::new(6.4, 0.0)], &geom()).unwrap();
        assert!((s.u0() - p.u0_mhz() / 1.5).abs() < 1e-12);
        assert!((s.gamma_sc() - p.gamma_sc_mhz() / 1.5).abs() < 1e-12);
        assert!((s.eta[0].re - 6.4 / 1.5).abs() < 1e-12);
        // 5300 / kappa is about 0.56 ms
        assert!((s.time_to_si(5300.0) * 1e3 - 0.56).abs() < 0.005);
    }

    #[test]
    fn coupling_average_scales_both_shifts() {
        let p = PhysicalParams {
            coupling_average: 0.5,
            ..Default::default()
        };
        let full = PhysicalParams::default();
        assert!((p.u0_mhz() - 0.5 * full.u0_mhz()).abs() < 1e-12);
        assert!((p.gamma_sc_mhz() - 0.5 * full.gamma_sc_mhz()).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        let bad = PhysicalParams {
            atom_detuning_mhz: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PhysicalParams {
            kappa_mhz: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
