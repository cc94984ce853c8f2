#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cavitrack::config::RunConfig;
use cavitrack::io::{self, RunFiles};
use cavitrack::pipeline::{self, Context};
use cavitrack::reconstruct::ErrorReport;
use cavitrack::Error;

/// Exit codes.
const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_TOLERANCE: u8 = 3;
const EXIT_NOTHING_DETECTED: u8 = 4;

#[derive(Parser)]
#[command(name = "cavitrack", version, about = "Track a single atom in a multimode cavity from segmented-detector counts")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; missing values take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// master seed (overrides the configuration)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker threads for the parallel stages
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// output directory (overrides the configuration)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the stationary transverse intensity as a 16-bit greymap
    Pattern {
        /// atom position `x,y` in waists; empty cavity when omitted
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        atom: Option<[f64; 2]>,
        /// pixels per side of the square image
        #[arg(long)]
        resolution: Option<usize>,
        /// half-width of the image, waists
        #[arg(long)]
        extent: Option<f64>,
    },
    /// Simulate the atom trajectory and cavity field
    Simulate {
        /// integration time, units of 1/kappa
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Turn a trajectory into photon counts per detector pair and window
    Detect {
        /// trajectory CSV (default: <out>/trajectory.csv)
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// also write the noise-free expected counts
        #[arg(long)]
        with_truth: bool,
    },
    /// Precompute the signature grid
    Grid,
    /// Reconstruct the path from a detector record and a grid
    Reconstruct {
        /// detector CSV (default: <out>/detector.csv)
        #[arg(long)]
        detector: Option<PathBuf>,
        /// signature grid (default: <out>/grid.bin)
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Compare a reconstructed path with the simulated trajectory
    Evaluate {
        /// reconstructed path CSV (default: <out>/path.csv)
        #[arg(long)]
        path: Option<PathBuf>,
        /// trajectory CSV (default: <out>/trajectory.csv)
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// fail (exit 3) when the rms error exceeds this many waists
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// All stages in one process
    Run {
        /// also write the noise-free expected counts
        #[arg(long)]
        with_truth: bool,
        /// fail (exit 3) when the rms error exceeds this many waists
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}"));
    Ok([p(x)?, p(y)?])
}

enum Outcome {
    Done,
    Tolerance,
    NothingDetected,
}

fn load_config(common: &Common, command: &Command) -> cavitrack::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    match command {
        Command::Pattern { resolution, extent, .. } => {
            if let Some(r) = resolution {
                cfg.pattern.resolution = *r;
            }
            if let Some(e) = extent {
                cfg.pattern.extent = *e;
            }
        }
        Command::Simulate { duration: Some(d) } => cfg.dynamics.duration = *d,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(r: &ErrorReport, wavelength: f64) {
    println!(
        "frames {} detectable {} ({:.1}%)",
        r.frames,
        r.detectable,
        100.0 * r.detectable_fraction
    );
    println!(
        "rms {:.5} w0 ({:.2} wavelengths), max {:.5} w0, raw rms {:.5} w0",
        r.rms,
        r.rms / wavelength,
        r.max,
        r.raw_rms
    );
    println!(
        "inside {} w0: {} frames, rms {:.5} w0 ({:.2} wavelengths), max {:.5} w0",
        r.inner_radius,
        r.inner_frames,
        r.rms_inner,
        r.rms_inner / wavelength,
        r.max_inner
    );
    println!("branch {} (1 = point-reflected), branch flips {}", r.branch, r.branch_flips);
}

fn within(report: &ErrorReport, tolerance: Option<f64>) -> Outcome {
    match tolerance {
        Some(t) if !(report.rms <= t) => {
            eprintln!("rms {} exceeds tolerance {t}", report.rms);
            Outcome::Tolerance
        }
        _ => Outcome::Done,
    }
}

fn execute(cfg: RunConfig, command: &Command) -> cavitrack::Result<Outcome> {
    let files = RunFiles::new(cfg.output_dir.clone());
    let ctx = Context::new(cfg)?;
    let wavelength = ctx.config.geometry.wavelength_nm * 1e-3 / ctx.config.geometry.waist_um;
    let input = |given: &Option<PathBuf>, default: PathBuf| given.clone().unwrap_or(default);
    match command {
        Command::Pattern { atom, .. } => {
            let out = pipeline::stage_pattern(&ctx, *atom)?;
            ctx.write_config(&files)?;
            io::write_file(&files.pattern(), &out.pgm)?;
            io::write_file(&files.pattern_sidecar(), &out.sidecar)?;
            println!("wrote {}", files.pattern().display());
        }
        Command::Simulate { .. } => {
            let out = pipeline::stage_simulate(&ctx)?;
            ctx.write_config(&files)?;
            io::write_file(&files.trajectory(), &out.csv)?;
            println!(
                "wrote {} ({} samples{})",
                files.trajectory().display(),
                out.record.len(),
                if out.record.escaped { ", atom escaped early" } else { "" }
            );
        }
        Command::Detect { trajectory, with_truth } => {
            let tpath = input(trajectory, files.trajectory());
            let (rec, header) = io::parse_trajectory(&io::read_text(&tpath)?, &tpath)?;
            let out = pipeline::stage_detect(&ctx, &rec, &header, *with_truth)?;
            ctx.write_config(&files)?;
            io::write_file(&files.detector(), &out.csv)?;
            println!("wrote {} ({} frames)", files.detector().display(), out.frames.len());
        }
        Command::Grid => {
            let out = pipeline::stage_grid(&ctx)?;
            ctx.write_config(&files)?;
            io::write_file(&files.grid(), &out.blob)?;
            io::write_file(&files.grid_sidecar(), &out.sidecar)?;
            let detectable = out.grid.detectable.iter().filter(|&&d| d).count();
            println!(
                "wrote {} ({} points, {} detectable, threshold {:.3})",
                files.grid().display(),
                out.grid.len(),
                detectable,
                out.grid.threshold
            );
        }
        Command::Reconstruct { detector, grid } => {
            let dpath = input(detector, files.detector());
            let gpath = input(grid, files.grid());
            let (frames, header) = io::parse_detector(&io::read_text(&dpath)?, &dpath)?;
            let (grid, grid_hash) = pipeline::load_grid(&gpath)?;
            let out = pipeline::stage_reconstruct(&ctx, &frames, &header, &grid, &grid_hash)?;
            ctx.write_config(&files)?;
            io::write_file(&files.path(), &out.csv)?;
            println!("wrote {}", files.path().display());
            if out.path.branch.jumps > 0 {
                eprintln!("warning: {} discontinuities in the chosen branch", out.path.branch.jumps);
            }
            if out.nothing_detected {
                eprintln!("warning: no frame differs from the empty cavity; the path is empty");
                return Ok(Outcome::NothingDetected);
            }
        }
        Command::Evaluate {
            path,
            trajectory,
            tolerance,
        } => {
            let ppath = input(path, files.path());
            let tpath = input(trajectory, files.trajectory());
            let (p, _) = io::parse_path(&io::read_text(&ppath)?, &ppath)?;
            let (rec, _) = io::parse_trajectory(&io::read_text(&tpath)?, &tpath)?;
            let out = pipeline::stage_evaluate(&ctx, &p, &rec)?;
            io::write_file(&files.report(), &out.text)?;
            print_report(&out.report, wavelength);
            return Ok(within(&out.report, *tolerance));
        }
        Command::Run { with_truth, tolerance } => {
            let out = pipeline::run_all(&ctx, &files, *with_truth)?;
            if out.record.escaped {
                println!("atom escaped early at t = {}", out.record.times.last().copied().unwrap_or(0.0));
            }
            match &out.report {
                None => {
                    eprintln!("warning: no frame differs from the empty cavity; the path is empty");
                    return Ok(Outcome::NothingDetected);
                }
                Some(r) => {
                    print_report(r, wavelength);
                    return Ok(within(r, *tolerance));
                }
            }
        }
    }
    Ok(Outcome::Done)
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

fn run(cli: &Cli) -> cavitrack::Result<Outcome> {
    let cfg = load_config(&cli.common, &cli.command)?;
    match cli.common.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| execute(cfg, &cli.command))
        }
        None => execute(cfg, &cli.command),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Tolerance) => ExitCode::from(EXIT_TOLERANCE),
        Ok(Outcome::NothingDetected) => ExitCode::from(EXIT_NOTHING_DETECTED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
