//! File formats.
//!
//! Every CSV starts with a block of `#` lines: a format tag, `key: value`
//! metadata (hashes, units, settings) and optionally an embedded TOML block
//! between `# config-begin` and `# config-end`. Floats are written with the
//! shortest representation that parses back to the same value, so files
//! round-trip exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;

use crate::detector::{DetectorFrame, SECTOR_CONVENTION};
use crate::dynamics::{AtomState, NoiseConfig, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::reconstruct::{BranchSummary, CountFrame, PositionEstimate, ReconstructedPath, SignatureGrid};
use crate::steady::{FieldState, Pattern};

/// Metadata block at the top of a CSV file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    pub kind: String,
    pub entries: BTreeMap<String, String>,
    pub config: Option<String>,
}

impl Header {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            ..Default::default()
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// A required entry, or a parse error naming the file.
    pub fn require(&self, key: &str, path: &Path) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("header entry '{key}' missing"),
        })
    }

    pub fn render(&self) -> String {
        let mut s = format!("# cavitrack {}\n", self.kind);
        for (k, v) in &self.entries {
            let _ = writeln!(s, "# {k}: {v}");
        }
        if let Some(cfg) = &self.config {
            s.push_str("# config-begin\n");
            for line in cfg.lines() {
                let _ = writeln!(s, "# {line}");
            }
            s.push_str("# config-end\n");
        }
        s
    }
}

/// Fail unless `found` equals `expected`.
pub fn check_hash(what: &'static str, expected: &str, found: &str) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::HashMismatch {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        })
    }
}

/// A parsed CSV: header, column names and rows of raw fields with their
/// 1-based line numbers.
struct Table {
    header: Header,
    columns: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_table(text: &str, path: &Path, kind: &str) -> Result<Table> {
    let mut header = Header::default();
    let mut config: Option<Vec<String>> = None;
    let mut in_config = false;
    let mut columns = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.strip_prefix(' ').unwrap_or(rest);
            if i == 0 {
                header.kind = rest.strip_prefix("cavitrack ").unwrap_or(rest).to_string();
                if header.kind != kind {
                    return Err(parse_err(path, lineno, format!("expected a {kind} file, found '{rest}'")));
                }
            } else if rest == "config-begin" {
                in_config = true;
                config = Some(Vec::new());
            } else if rest == "config-end" {
                in_config = false;
            } else if in_config {
                config.get_or_insert_with(Vec::new).push(rest.to_string());
            } else if let Some((k, v)) = rest.split_once(": ") {
                header.entries.insert(k.to_string(), v.to_string());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        match &columns {
            None => columns = Some(fields),
            Some(c) => {
                if fields.len() != c.len() {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("expected {} fields, found {}", c.len(), fields.len()),
                    ));
                }
                rows.push((lineno, fields));
            }
        }
    }
    if header.kind.is_empty() {
        return Err(parse_err(path, 1, format!("missing '# cavitrack {kind}' header")));
    }
    header.config = config.map(|c| c.join("\n") + "\n");
    let columns = columns.ok_or_else(|| parse_err(path, 0, "no column header line"))?;
    Ok(Table { header, columns, rows })
}

impl Table {
    fn column(&self, name: &str, path: &Path) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| parse_err(path, 0, format!("column '{name}' missing")))
    }
}

fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("'{s}' is not a number")))
}

fn parse_bool(s: &str, path: &Path, line: usize) -> Result<bool> {
    match s {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(parse_err(path, line, format!("'{s}' is not a flag"))),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- trajectory

pub const TRAJECTORY_KIND: &str = "trajectory";

pub fn trajectory_csv(rec: &TrajectoryRecord, header: &Header) -> String {
    let modes = rec.fields.first().map_or(0, |f| f.alpha.len());
    let mut h = header.clone();
    h.kind = TRAJECTORY_KIND.to_string();
    h.set("escaped", rec.escaped)
        .set("noise_enabled", rec.noise.enabled)
        .set("momentum_diffusion_scale", rec.noise.momentum_diffusion_scale)
        .set("field_noise_scale", rec.noise.field_noise_scale)
        .set("noise_seed", rec.noise.seed)
        .set("modes", modes)
        .set(
            "units",
            "t [1/kappa]; x, y [waist]; px, py [mass x waist x kappa]; alpha [sqrt(photons)]",
        );
    let mut s = h.render();
    s.push_str("t,x,y,px,py");
    for k in 0..modes {
        let _ = write!(s, ",re_alpha_{k},im_alpha_{k}");
    }
    s.push('\n');
    for ((t, st), f) in rec.times.iter().zip(&rec.states).zip(&rec.fields) {
        let _ = write!(s, "{t},{},{},{},{}", st.r[0], st.r[1], st.p[0], st.p[1]);
        for a in &f.alpha {
            let _ = write!(s, ",{},{}", a.re, a.im);
        }
        s.push('\n');
    }
    s
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<(TrajectoryRecord, Header)> {
    let table = parse_table(text, path, TRAJECTORY_KIND)?;
    let h = &table.header;
    let modes: usize = h
        .require("modes", path)?
        .parse()
        .map_err(|_| parse_err(path, 0, "bad 'modes' entry"))?;
    if table.columns.len() != 5 + 2 * modes {
        return Err(parse_err(path, 0, "column count does not match the number of modes"));
    }
    let flag = |k: &str| -> Result<bool> { parse_bool(h.require(k, path)?, path, 0) };
    let num = |k: &str| -> Result<f64> { parse_f64(h.require(k, path)?, path, 0) };
    let noise = NoiseConfig {
        enabled: flag("noise_enabled")?,
        momentum_diffusion_scale: num("momentum_diffusion_scale")?,
        field_noise_scale: num("field_noise_scale")?,
        seed: h
            .require("noise_seed", path)?
            .parse()
            .map_err(|_| parse_err(path, 0, "bad 'noise_seed' entry"))?,
    };
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(table.rows.len()),
        states: Vec::with_capacity(table.rows.len()),
        fields: Vec::with_capacity(table.rows.len()),
        noise,
        escaped: flag("escaped")?,
    };
    for (line, row) in &table.rows {
        let v = row
            .iter()
            .map(|f| parse_f64(f, path, *line))
            .collect::<Result<Vec<_>>>()?;
        if rec.times.last().is_some_and(|&t| !(v[0] > t)) {
            return Err(parse_err(path, *line, "times must increase"));
        }
        rec.times.push(v[0]);
        rec.states.push(AtomState {
            r: [v[1], v[2]],
            p: [v[3], v[4]],
        });
        rec.fields.push(FieldState {
            alpha: (0..modes).map(|k| C64::new(v[5 + 2 * k], v[6 + 2 * k])).collect(),
        });
    }
    Ok((rec, table.header))
}

// ------------------------------------------------------------------ detector

pub const DETECTOR_KIND: &str = "detector";

/// Detector record. The `expected_*` columns are written only with
/// `with_truth`; readers ignore them.
pub fn detector_csv(frames: &[DetectorFrame], header: &Header, with_truth: bool) -> String {
    let outputs = frames.first().map_or(0, |f| f.counts.len());
    let mut h = header.clone();
    h.kind = DETECTOR_KIND.to_string();
    h.set("outputs", outputs)
        .set("sector_convention", SECTOR_CONVENTION)
        .set("units", "t_mid [1/kappa]; counts [photons per window]");
    let mut s = h.render();
    s.push_str("t_mid");
    for k in 0..outputs {
        let _ = write!(s, ",counts_{k}");
    }
    if with_truth {
        for k in 0..outputs {
            let _ = write!(s, ",expected_{k}");
        }
    }
    s.push('\n');
    for f in frames {
        let _ = write!(s, "{}", f.t_mid);
        for c in &f.counts {
            let _ = write!(s, ",{c}");
        }
        if with_truth {
            for e in &f.expected {
                let _ = write!(s, ",{e}");
            }
        }
        s.push('\n');
    }
    s
}

/// Count frames of a detector record; expected-value columns are skipped.
pub fn parse_detector(text: &str, path: &Path) -> Result<(Vec<CountFrame>, Header)> {
    let table = parse_table(text, path, DETECTOR_KIND)?;
    let outputs: usize = table
        .header
        .require("outputs", path)?
        .parse()
        .map_err(|_| parse_err(path, 0, "bad 'outputs' entry"))?;
    let t_col = table.column("t_mid", path)?;
    let count_cols = (0..outputs)
        .map(|k| table.column(&format!("counts_{k}"), path))
        .collect::<Result<Vec<_>>>()?;
    let mut frames = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        let counts = count_cols
            .iter()
            .map(|&c| {
                row[c]
                    .parse::<u64>()
                    .map(|v| v as f64)
                    .map_err(|_| parse_err(path, *line, format!("'{}' is not a count", row[c])))
            })
            .collect::<Result<Vec<_>>>()?;
        frames.push(CountFrame {
            t_mid: parse_f64(&row[t_col], path, *line)?,
            counts,
        });
    }
    Ok((frames, table.header))
}

// ---------------------------------------------------------------------- path

pub const PATH_KIND: &str = "path";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

fn branch_flag(e: &PositionEstimate) -> u8 {
    if e.outlier {
        2
    } else {
        u8::from(e.jump)
    }
}

pub fn path_csv(path: &ReconstructedPath, header: &Header) -> String {
    let mut h = header.clone();
    h.kind = PATH_KIND.to_string();
    h.set("lambda_x", path.lambda[0])
        .set("lambda_y", path.lambda[1])
        .set("branch_arbitrary", path.branch.arbitrary)
        .set("jumps", path.branch.jumps)
        .set("outliers", path.branch.outliers)
        .set("branch_flag", "0 continuous, 1 starts a new segment, 2 outlier left out of the fit")
        .set(
            "note",
            "the path rotated by 180 degrees about the axis is an equally valid solution",
        )
        .set(
            "units",
            "t_mid [1/kappa]; positions, residual scale, sigma [waist]; residual [counts^2]",
        );
    let mut s = h.render();
    s.push_str("t_mid,x_hat,y_hat,residual,detectable,branch_flag,sigma,x_smooth,y_smooth,interpolated\n");
    for ((e, sm), interp) in path.estimates.iter().zip(&path.smoothed).zip(&path.interpolated) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            e.t_mid,
            opt(e.chosen.map(|c| c[0])),
            opt(e.chosen.map(|c| c[1])),
            e.residual,
            u8::from(e.detectable),
            branch_flag(e),
            e.sigma,
            sm[0],
            sm[1],
            u8::from(*interp)
        );
    }
    s
}

pub fn parse_path(text: &str, path: &Path) -> Result<(ReconstructedPath, Header)> {
    let table = parse_table(text, path, PATH_KIND)?;
    let col = |n: &str| table.column(n, path);
    let (ct, cx, cy, cr, cd, cb, cs, csx, csy, ci) = (
        col("t_mid")?,
        col("x_hat")?,
        col("y_hat")?,
        col("residual")?,
        col("detectable")?,
        col("branch_flag")?,
        col("sigma")?,
        col("x_smooth")?,
        col("y_smooth")?,
        col("interpolated")?,
    );
    let h = &table.header;
    let mut out = ReconstructedPath {
        estimates: Vec::new(),
        smoothed: Vec::new(),
        interpolated: Vec::new(),
        lambda: [
            parse_f64(h.require("lambda_x", path)?, path, 0)?,
            parse_f64(h.require("lambda_y", path)?, path, 0)?,
        ],
        branch: BranchSummary {
            arbitrary: parse_bool(h.require("branch_arbitrary", path)?, path, 0)?,
            jumps: h
                .require("jumps", path)?
                .parse()
                .map_err(|_| parse_err(path, 0, "bad 'jumps' entry"))?,
            outliers: h
                .require("outliers", path)?
                .parse()
                .map_err(|_| parse_err(path, 0, "bad 'outliers' entry"))?,
        },
    };
    for (line, row) in &table.rows {
        let f = |c: usize| parse_f64(&row[c], path, *line);
        let (x, y) = (f(cx)?, f(cy)?);
        let chosen = (x.is_finite() && y.is_finite()).then_some([x, y]);
        let flag = match row[cb].trim() {
            "0" => 0,
            "1" => 1,
            "2" => 2,
            other => return Err(parse_err(path, *line, format!("bad branch_flag '{other}'"))),
        };
        out.estimates.push(PositionEstimate {
            t_mid: f(ct)?,
            candidates: chosen.map(|c| [c, [-c[0], -c[1]]]),
            alternatives: Vec::new(),
            alternative_excess: Vec::new(),
            chosen,
            residual: f(cr)?,
            detectable: parse_bool(&row[cd], path, *line)?,
            sigma: f(cs)?,
            jump: flag == 1,
            outlier: flag == 2,
        });
        out.smoothed.push([f(csx)?, f(csy)?]);
        out.interpolated.push(parse_bool(&row[ci], path, *line)?);
    }
    Ok((out, table.header))
}

// ---------------------------------------------------------------------- grid

pub const GRID_MAGIC: &[u8; 8] = b"CVTGRID\0";
pub const GRID_VERSION: u32 = 1;

/// Binary grid layout, all integers and floats little-endian:
///
/// | field | type |
/// |---|---|
/// | magic `CVTGRID\0` | 8 bytes |
/// | version | u32 |
/// | points per axis `n`, outputs `k` | u32, u32 |
/// | spacing, window, threshold | f64 x 3 |
/// | physics hash, detector hash, grid hash | u32 length + UTF-8 bytes, each |
/// | empty-cavity signature | f64 x k |
/// | signatures, row-major (`index = iy * n + ix`) | f64 x n*n*k |
/// | detectable mask | u8 x n*n |
pub fn grid_blob(grid: &SignatureGrid, grid_hash: &str) -> Vec<u8> {
    let mut b = Vec::with_capacity(64 + 8 * grid.signatures.len() + grid.len());
    b.extend_from_slice(GRID_MAGIC);
    b.extend_from_slice(&GRID_VERSION.to_le_bytes());
    b.extend_from_slice(&(grid.n as u32).to_le_bytes());
    b.extend_from_slice(&(grid.outputs as u32).to_le_bytes());
    for v in [grid.spacing, grid.window, grid.threshold] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    for s in [grid.physics_hash.as_str(), grid.detector_hash.as_str(), grid_hash] {
        b.extend_from_slice(&(s.len() as u32).to_le_bytes());
        b.extend_from_slice(s.as_bytes());
    }
    for v in grid.empty.iter().chain(&grid.signatures) {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend(grid.detectable.iter().map(|&d| u8::from(d)));
    b
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| parse_err(self.path, 0, "grid file truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| parse_err(self.path, 0, "grid hash is not UTF-8"))
    }
}

/// Returns the grid and its stored grid hash.
pub fn parse_grid(bytes: &[u8], path: &Path) -> Result<(SignatureGrid, String)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != GRID_MAGIC {
        return Err(parse_err(path, 0, "not a signature grid file"));
    }
    let version = r.u32()?;
    if version != GRID_VERSION {
        return Err(parse_err(path, 0, format!("grid format version {version} unsupported")));
    }
    let n = r.u32()? as usize;
    let outputs = r.u32()? as usize;
    let (spacing, window, threshold) = (r.f64()?, r.f64()?, r.f64()?);
    let (physics_hash, detector_hash, grid_hash) = (r.string()?, r.string()?, r.string()?);
    let empty = (0..outputs).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let signatures = (0..n * n * outputs).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let detectable = r.take(n * n)?.iter().map(|&b| b != 0).collect();
    if r.pos != bytes.len() {
        return Err(parse_err(path, 0, "trailing bytes after grid data"));
    }
    Ok((
        SignatureGrid {
            n,
            spacing,
            outputs,
            window,
            signatures,
            empty,
            detectable,
            threshold,
            physics_hash,
            detector_hash,
        },
        grid_hash,
    ))
}

/// Human-readable description of a grid file.
pub fn grid_sidecar(grid: &SignatureGrid, grid_hash: &str) -> String {
    let detectable = grid.detectable.iter().filter(|&&d| d).count();
    let mut s = String::new();
    let _ = writeln!(s, "# signature grid");
    let _ = writeln!(s, "points_per_axis = {}", grid.n);
    let _ = writeln!(s, "half_extent = {}", grid.half_extent());
    let _ = writeln!(s, "spacing = {}", grid.spacing);
    let _ = writeln!(s, "outputs = {}", grid.outputs);
    let _ = writeln!(s, "window = {}", grid.window);
    let _ = writeln!(s, "threshold = {}", grid.threshold);
    let _ = writeln!(s, "detectable_points = {detectable}");
    let _ = writeln!(s, "empty_signature = {:?}", grid.empty);
    let _ = writeln!(s, "physics_hash = \"{}\"", grid.physics_hash);
    let _ = writeln!(s, "detector_hash = \"{}\"", grid.detector_hash);
    let _ = writeln!(s, "grid_hash = \"{grid_hash}\"");
    let _ = writeln!(
        s,
        "layout = \"little-endian; magic, version, n, outputs, spacing, window, threshold, hashes, empty, signatures (iy * n + ix), mask\""
    );
    s
}

// ------------------------------------------------------------------- pattern

/// 16-bit binary greymap (PGM, big-endian samples) scaled to the image
/// maximum; row 0 is the top (`y = +extent`).
pub fn pattern_pgm(p: &Pattern) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", p.resolution, p.resolution).into_bytes();
    let max = p.max();
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    for v in &p.data {
        let q = (v * scale).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn pattern_sidecar(p: &Pattern, header: &Header) -> String {
    let mut h = header.clone();
    h.kind = "pattern".to_string();
    h.set("resolution", p.resolution)
        .set("extent", p.extent)
        .set("max_intensity", p.max())
        .set("white_level", "65535 = max_intensity")
        .set("orientation", "row 0 at y = +extent, column 0 at x = -extent")
        .set(
            "atom",
            p.atom.map_or_else(|| "none".to_string(), |a| format!("({}, {})", a.x, a.y)),
        )
        .set("units", "positions [waist]; intensity [photons / waist^2]");
    for (k, a) in p.field.alpha.iter().enumerate() {
        h.set(&format!("alpha_{k}"), format!("{} {:+}i", a.re, a.im));
    }
    h.render()
}

/// Output file names inside a run directory.
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.resolved.toml")
    }
    pub fn trajectory(&self) -> PathBuf {
        self.dir.join("trajectory.csv")
    }
    pub fn detector(&self) -> PathBuf {
        self.dir.join("detector.csv")
    }
    pub fn grid(&self) -> PathBuf {
        self.dir.join("grid.bin")
    }
    pub fn grid_sidecar(&self) -> PathBuf {
        self.dir.join("grid.txt")
    }
    pub fn path(&self) -> PathBuf {
        self.dir.join("path.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.dir.join("evaluation.toml")
    }
    pub fn pattern(&self) -> PathBuf {
        self.dir.join("pattern.pgm")
    }
    pub fn pattern_sidecar(&self) -> PathBuf {
        self.dir.join("pattern.txt")
    }
}
