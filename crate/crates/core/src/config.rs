//! Run configuration: one TOML file per run, every field defaulted to the
//! reference parameter set, plus the hashes that tie output files to it.

use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::DetectorConfig;
use crate::dynamics::{entry_state, AtomState, NoiseConfig, SimOptions};
use crate::error::{Error, Result};
use crate::modes::{CavityGeometry, LgConvention, ModeIndex, ModeSet};
use crate::params::{PhysicalParams, SystemParams};
use crate::reconstruct::{GridSpec, ReconOptions, Smoothing};

/// Number of hex digits kept from a SHA-256 digest.
const HASH_LEN: usize = 16;

/// Cavity geometry in laboratory units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub waist_um: f64,
    pub wavelength_nm: f64,
    /// enters only the mode volume, which cancels in every output
    pub length_um: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            waist_um: 29.0,
            wavelength_nm: 780.0,
            length_um: 100.0,
        }
    }
}

impl GeometryConfig {
    pub fn to_geometry(&self) -> Result<CavityGeometry> {
        CavityGeometry::new(self.waist_um * 1e-6, self.wavelength_nm * 1e-9, self.length_um * 1e-6)
    }
}

/// One cavity mode and the pump amplitude driving it, `2 pi x MHz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeEntry {
    pub p: u32,
    pub m: i32,
    #[serde(default)]
    pub pump_re_mhz: f64,
    #[serde(default)]
    pub pump_im_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModesConfig {
    pub convention: LgConvention,
    pub mode: Vec<ModeEntry>,
}

impl Default for ModesConfig {
    fn default() -> Self {
        let pumps = [6.4, 0.0, 0.0];
        Self {
            convention: LgConvention::RootTwo,
            mode: ModeSet::default_modes()
                .into_iter()
                .zip(pumps)
                .map(|(idx, re)| ModeEntry {
                    p: idx.p,
                    m: idx.m,
                    pump_re_mhz: re,
                    pump_im_mhz: 0.0,
                })
                .collect(),
        }
    }
}

/// Time integration and the entry condition of the atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub dt: f64,
    pub duration: f64,
    pub record_stride: usize,
    /// half-width of the square the atom must stay in, waists
    pub bounding_box: f64,
    /// entry position, waists
    pub x0: f64,
    pub y0: f64,
    pub speed_cm_s: f64,
    /// direction of motion, degrees counterclockwise from +x
    pub heading_deg: f64,
    pub noise: NoiseConfig,
}

impl DynamicsConfig {
    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            dt: self.dt,
            duration: self.duration,
            record_stride: self.record_stride,
            bounding_box: self.bounding_box,
        }
    }
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        let sim = SimOptions::default();
        Self {
            dt: sim.dt,
            duration: sim.duration,
            record_stride: sim.record_stride,
            bounding_box: sim.bounding_box,
            x0: 0.2,
            y0: -2.0,
            speed_cm_s: 12.0,
            heading_deg: 90.0,
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub grid: GridSpec,
    /// known starting position used to pick the branch, waists
    pub seed_position: Option<[f64; 2]>,
    /// points further than this (waists) from the extrapolated motion are
    /// flagged as discontinuities
    pub gate: f64,
    /// typical acceleration of the atom, waists per detector window squared
    pub acceleration: f64,
    /// cost of leaving a detectable frame out of the track
    pub outlier_penalty: f64,
    /// how the path smoothing parameter is chosen
    pub smoothing: Smoothing,
    /// take the known entry position as the branch seed
    pub seed_from_entry: bool,
    /// radius of the central region reported separately by `evaluate`, waists
    pub inner_radius: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        let o = ReconOptions::default();
        Self {
            grid: GridSpec::default(),
            seed_position: o.seed_position,
            gate: o.gate,
            acceleration: o.acceleration,
            outlier_penalty: o.outlier_penalty,
            smoothing: o.smoothing,
            seed_from_entry: true,
            inner_radius: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternConfig {
    pub resolution: usize,
    /// half-width of the rendered square, waists
    pub extent: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            resolution: 201,
            extent: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// master seed; the stage seeds are derived from it
    pub seed: u64,
    pub output_dir: PathBuf,
    pub physics: PhysicalParams,
    pub geometry: GeometryConfig,
    pub modes: ModesConfig,
    pub dynamics: DynamicsConfig,
    pub detector: DetectorConfig,
    pub reconstruction: ReconstructionConfig,
    pub pattern: PatternConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            physics: PhysicalParams::default(),
            geometry: GeometryConfig::default(),
            modes: ModesConfig::default(),
            dynamics: DynamicsConfig::default(),
            detector: DetectorConfig::default(),
            reconstruction: ReconstructionConfig::default(),
            pattern: PatternConfig::default(),
        }
    }
}

fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())[..HASH_LEN].to_string()
}

fn toml_of<T: Serialize>(v: &T) -> String {
    toml::to_string(v).expect("configuration types serialize to TOML")
}

/// Line number (1-based) of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// The resolved configuration with every default written out.
    pub fn to_toml(&self) -> String {
        toml_of(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        self.geometry.to_geometry()?;
        if self.modes.mode.is_empty() {
            return Err(Error::Config("at least one mode is required".into()));
        }
        let s = &self.dynamics;
        if !(s.duration > 0.0 && s.duration.is_finite()) {
            return Err(Error::Config(format!("dynamics.duration must be positive, got {}", s.duration)));
        }
        if !(s.dt > 0.0 && s.dt <= crate::dynamics::MAX_DT) {
            return Err(Error::StepSize {
                dt: s.dt,
                max: crate::dynamics::MAX_DT,
            });
        }
        if s.record_stride == 0 {
            return Err(Error::Config("dynamics.record_stride must be at least 1".into()));
        }
        if !(s.bounding_box > 0.0) {
            return Err(Error::Config("dynamics.bounding_box must be positive".into()));
        }
        if !(self.dynamics.speed_cm_s >= 0.0 && self.dynamics.speed_cm_s.is_finite()) {
            return Err(Error::Config("dynamics.speed_cm_s must be non-negative".into()));
        }
        self.dynamics.noise.validate()?;
        self.detector.validate()?;
        self.reconstruction.grid.validate()?;
        let o = &self.reconstruction;
        if !(o.gate > 0.0 && o.acceleration > 0.0 && o.outlier_penalty > 0.0) {
            return Err(Error::Config(
                "reconstruction gate, acceleration and outlier_penalty must be positive".into(),
            ));
        }
        if self.pattern.resolution < 2 || !(self.pattern.extent > 0.0) {
            return Err(Error::Config("pattern needs resolution >= 2 and a positive extent".into()));
        }
        Ok(())
    }

    pub fn mode_set(&self) -> Result<ModeSet> {
        let modes = self.modes.mode.iter().map(|e| ModeIndex::new(e.p, e.m)).collect();
        ModeSet::new(modes, self.geometry.to_geometry()?, self.modes.convention)
    }

    pub fn pump_mhz(&self) -> Vec<C64> {
        self.modes
            .mode
            .iter()
            .map(|e| C64::new(e.pump_re_mhz, e.pump_im_mhz))
            .collect()
    }

    pub fn system_params(&self) -> Result<SystemParams> {
        SystemParams::from_physical(&self.physics, &self.pump_mhz(), &self.geometry.to_geometry()?)
    }

    pub fn entry(&self, params: &SystemParams) -> AtomState {
        let d = &self.dynamics;
        entry_state(params, d.x0, d.y0, d.speed_cm_s * 1e-2, d.heading_deg.to_radians())
    }

    /// Seed of one pipeline stage, derived from the master seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        let d = Sha256::digest(format!("{}:{stage}", self.seed).as_bytes());
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            seed: self.stage_seed("dynamics"),
            ..self.dynamics.noise
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            seed: self.stage_seed("detector"),
            ..self.detector
        }
    }

    pub fn recon_options(&self) -> ReconOptions {
        let r = &self.reconstruction;
        let mut o = ReconOptions {
            seed_position: r.seed_position,
            gate: r.gate,
            acceleration: r.acceleration,
            outlier_penalty: r.outlier_penalty,
            smoothing: r.smoothing,
        };
        if r.seed_from_entry && o.seed_position.is_none() {
            o.seed_position = Some([self.dynamics.x0, self.dynamics.y0]);
        }
        o
    }

    /// Everything that determines the stationary field.
    pub fn physics_hash(&self) -> String {
        digest(&[&toml_of(&self.physics), &toml_of(&self.geometry), &toml_of(&self.modes)])
    }

    /// Detector settings, excluding the counting-noise seed.
    pub fn detector_hash(&self) -> String {
        digest(&[&toml_of(&self.detector)])
    }

    /// Inputs of the signature grid.
    pub fn grid_hash(&self) -> String {
        digest(&[&self.physics_hash(), &self.detector_hash(), &toml_of(&self.reconstruction.grid)])
    }

    /// Everything that determines a reconstruction from a detector record.
    pub fn reconstruction_hash(&self) -> String {
        let seed = format!("{:?}", self.recon_options().seed_position);
        digest(&[&self.grid_hash(), &toml_of(&self.reconstruction), &seed])
    }

    /// The resolved configuration without the output location, which does
    /// not influence any result.
    pub fn content_toml(&self) -> String {
        toml_of(&Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        })
    }

    /// The whole resolved configuration except the output location.
    pub fn run_hash(&self) -> String {
        digest(&[&self.content_toml()])
    }
}
