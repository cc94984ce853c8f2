//! The workflow stages as file-producing functions.
//!
//! Each stage takes the resolved configuration and the parsed outputs of
//! earlier stages and returns both its in-memory result and the exact bytes
//! it writes, so the single-process run and the chain of separate commands
//! produce identical files.

use std::path::Path;

use crate::config::RunConfig;
use crate::detector::DetectorFrame;
use crate::dynamics::{simulate, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::io::{self, check_hash, Header, RunFiles};
use crate::modes::{sector_overlap_matrices, ModeSet, Point};
use crate::params::SystemParams;
use crate::reconstruct::{build_grid, evaluate, reconstruct, CountFrame, ErrorReport, ReconstructedPath, SignatureGrid};
use crate::steady::{render_pattern, Pattern};

/// Configuration plus the derived physical quantities every stage needs.
pub struct Context {
    pub config: RunConfig,
    pub params: SystemParams,
    pub set: ModeSet,
}

impl Context {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let params = config.system_params()?;
        let set = config.mode_set()?;
        Ok(Self { config, params, set })
    }

    fn header(&self, kind: &str) -> Header {
        let mut h = Header::new(kind);
        h.set("physics_hash", self.config.physics_hash());
        h
    }

    /// Write the resolved configuration next to the outputs.
    pub fn write_config(&self, files: &RunFiles) -> Result<()> {
        io::write_file(&files.config(), self.resolved_config())
    }

    pub fn resolved_config(&self) -> String {
        format!(
            "# resolved configuration; run_hash {}\n{}",
            self.config.run_hash(),
            self.config.to_toml()
        )
    }
}

pub struct PatternOutput {
    pub pattern: Pattern,
    pub pgm: Vec<u8>,
    pub sidecar: String,
}

pub fn stage_pattern(ctx: &Context, atom: Option<[f64; 2]>) -> Result<PatternOutput> {
    let pc = &ctx.config.pattern;
    let pattern = render_pattern(
        &ctx.params,
        &ctx.set,
        atom.map(|a| Point::xy(a[0], a[1])),
        pc.resolution,
        pc.extent,
    )?;
    let mut h = ctx.header("pattern");
    h.set("run_hash", ctx.config.run_hash());
    Ok(PatternOutput {
        pgm: io::pattern_pgm(&pattern),
        sidecar: io::pattern_sidecar(&pattern, &h),
        pattern,
    })
}

pub struct SimulateOutput {
    pub record: TrajectoryRecord,
    pub csv: String,
}

pub fn stage_simulate(ctx: &Context) -> Result<SimulateOutput> {
    let cfg = &ctx.config;
    let record = simulate(
        cfg.entry(&ctx.params),
        &ctx.params,
        &ctx.set,
        &cfg.dynamics.sim_options(),
        cfg.noise(),
    )?;
    let mut h = ctx.header(io::TRAJECTORY_KIND);
    h.set("run_hash", cfg.run_hash());
    h.config = Some(cfg.content_toml());
    let csv = io::trajectory_csv(&record, &h);
    Ok(SimulateOutput { record, csv })
}

pub struct DetectOutput {
    pub frames: Vec<DetectorFrame>,
    pub csv: String,
}

/// `trajectory_header` is the header of the trajectory file; its physics
/// hash must match the configuration.
pub fn stage_detect(ctx: &Context, record: &TrajectoryRecord, trajectory_header: &Header, with_truth: bool) -> Result<DetectOutput> {
    let cfg = &ctx.config;
    let found = trajectory_header.get("physics_hash").unwrap_or("none");
    check_hash("trajectory physics", &cfg.physics_hash(), found)?;
    let det = cfg.detector_config();
    let overlaps = sector_overlap_matrices(&ctx.set, det.n_sectors, det.r_max)?;
    let frames = crate::detector::integrate_windows(record, &det, &overlaps, &ctx.params)?;
    let mut h = ctx.header(io::DETECTOR_KIND);
    h.set("detector_hash", cfg.detector_hash())
        .set("detector_seed", det.seed)
        .set("window", det.window)
        .set("source_run_hash", trajectory_header.get("run_hash").unwrap_or("none"));
    h.config = Some(format!("[detector]\n{}", toml::to_string(&cfg.detector).expect("detector config serializes")));
    let csv = io::detector_csv(&frames, &h, with_truth);
    Ok(DetectOutput { frames, csv })
}

pub struct GridOutput {
    pub grid: SignatureGrid,
    pub grid_hash: String,
    pub blob: Vec<u8>,
    pub sidecar: String,
}

pub fn stage_grid(ctx: &Context) -> Result<GridOutput> {
    let cfg = &ctx.config;
    let grid = build_grid(
        &ctx.params,
        &ctx.set,
        &cfg.detector,
        &cfg.reconstruction.grid,
        &cfg.physics_hash(),
        &cfg.detector_hash(),
    )?;
    let grid_hash = cfg.grid_hash();
    Ok(GridOutput {
        blob: io::grid_blob(&grid, &grid_hash),
        sidecar: io::grid_sidecar(&grid, &grid_hash),
        grid,
        grid_hash,
    })
}

/// Verify that a stored grid belongs to this configuration.
pub fn check_grid(ctx: &Context, grid: &SignatureGrid, grid_hash: &str) -> Result<()> {
    let cfg = &ctx.config;
    check_hash("grid physics", &cfg.physics_hash(), &grid.physics_hash)?;
    check_hash("grid detector", &cfg.detector_hash(), &grid.detector_hash)?;
    check_hash("grid", &cfg.grid_hash(), grid_hash)
}

pub struct ReconstructOutput {
    pub path: ReconstructedPath,
    pub csv: String,
    /// no frame differed from the empty cavity
    pub nothing_detected: bool,
}

/// Reconstruct from a detector record. Only the detector file and the grid
/// are consulted.
pub fn stage_reconstruct(
    ctx: &Context,
    frames: &[CountFrame],
    detector_header: &Header,
    grid: &SignatureGrid,
    grid_hash: &str,
) -> Result<ReconstructOutput> {
    let cfg = &ctx.config;
    check_grid(ctx, grid, grid_hash)?;
    check_hash(
        "detector record physics",
        &grid.physics_hash,
        detector_header.get("physics_hash").unwrap_or("none"),
    )?;
    check_hash(
        "detector record settings",
        &grid.detector_hash,
        detector_header.get("detector_hash").unwrap_or("none"),
    )?;
    let window = cfg.detector.window;
    let path = reconstruct(frames, grid, window, &cfg.recon_options())?;
    let nothing_detected = path.estimates.iter().all(|e| !e.detectable);
    let mut h = ctx.header(io::PATH_KIND);
    h.set("detector_hash", cfg.detector_hash())
        .set("grid_hash", grid_hash)
        .set("reconstruction_hash", cfg.reconstruction_hash());
    h.config = Some(format!(
        "[reconstruction]\n{}",
        toml::to_string(&cfg.reconstruction).expect("reconstruction config serializes")
    ));
    let csv = io::path_csv(&path, &h);
    Ok(ReconstructOutput {
        path,
        csv,
        nothing_detected,
    })
}

pub struct EvaluateOutput {
    pub report: ErrorReport,
    pub text: String,
}

pub fn stage_evaluate(ctx: &Context, path: &ReconstructedPath, truth: &TrajectoryRecord) -> Result<EvaluateOutput> {
    let report = evaluate(path, truth, ctx.config.reconstruction.inner_radius)?;
    let wavelength = ctx.config.geometry.wavelength_nm * 1e-9 / (ctx.config.geometry.waist_um * 1e-6);
    let text = format!(
        "# evaluation; lengths in waists (wavelength = {wavelength} waists)\n{}",
        toml::to_string(&report).expect("report serializes")
    );
    Ok(EvaluateOutput { report, text })
}

/// Everything the single-process run produced.
pub struct RunOutput {
    pub record: TrajectoryRecord,
    pub frames: Vec<DetectorFrame>,
    pub grid: SignatureGrid,
    pub path: ReconstructedPath,
    pub report: Option<ErrorReport>,
    pub nothing_detected: bool,
}

/// Parse detector frames from in-memory frames exactly as the file reader
/// would see them.
pub fn count_frames(frames: &[DetectorFrame]) -> Vec<CountFrame> {
    frames
        .iter()
        .map(|f| CountFrame {
            t_mid: f.t_mid,
            counts: f.counts.iter().map(|&c| c as f64).collect(),
        })
        .collect()
}

/// Simulate, detect, build the grid, reconstruct and evaluate in one
/// process, writing the same files as the separate commands.
pub fn run_all(ctx: &Context, files: &RunFiles, with_truth: bool) -> Result<RunOutput> {
    ctx.write_config(files)?;
    let sim = stage_simulate(ctx)?;
    io::write_file(&files.trajectory(), &sim.csv)?;
    let mut th = ctx.header(io::TRAJECTORY_KIND);
    th.set("run_hash", ctx.config.run_hash());
    let det = stage_detect(ctx, &sim.record, &th, with_truth)?;
    io::write_file(&files.detector(), &det.csv)?;
    let grid = stage_grid(ctx)?;
    io::write_file(&files.grid(), &grid.blob)?;
    io::write_file(&files.grid_sidecar(), &grid.sidecar)?;
    let mut dh = ctx.header(io::DETECTOR_KIND);
    dh.set("detector_hash", ctx.config.detector_hash());
    let rec = stage_reconstruct(ctx, &count_frames(&det.frames), &dh, &grid.grid, &grid.grid_hash)?;
    io::write_file(&files.path(), &rec.csv)?;
    let report = if rec.nothing_detected {
        None
    } else {
        let ev = stage_evaluate(ctx, &rec.path, &sim.record)?;
        io::write_file(&files.report(), &ev.text)?;
        Some(ev.report)
    };
    Ok(RunOutput {
        record: sim.record,
        frames: det.frames,
        grid: grid.grid,
        path: rec.path,
        report,
        nothing_detected: rec.nothing_detected,
    })
}

pub fn load_grid(path: &Path) -> Result<(SignatureGrid, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    io::parse_grid(&bytes, path)
}
