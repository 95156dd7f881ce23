//! Text artifact formats: diagnostics CSV, field snapshots, checkpoints, and
//! soliton profile files.  Field values use shortest round-trip decimals so a
//! reload reproduces every bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rymflow_core::soliton::SolitonProfile;
use rymflow_core::{BackgroundGeometry, DiagnosticsRecord, FlowState, SurfaceSpec};

use crate::config::{canonical_text, parse_config, CliConfig};

pub const CSV_HEADER: &str = "t,energy_F,dissipation_pred,dissipation_meas,volume,flux,calabi,gauss_bonnet_residual,volume_ode_residual,lambda,parallel_defect_int,parallel_defect_sup,moser_trudinger,sobolev_proxy";

const SNAPSHOT_MAGIC: &str = "rymflow snapshot";
const CHECKPOINT_MAGIC: &str = "rymflow checkpoint";
const PROFILE_MAGIC: &str = "rymflow soliton profile";
const FORMAT_VERSION: u32 = 1;

pub fn csv_text(records: &[DiagnosticsRecord]) -> String {
    let mut s = String::with_capacity(64 + 340 * records.len());
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in records {
        let cols = [
            r.t,
            r.energy_f,
            r.dissipation_pred,
            r.dissipation_meas,
            r.volume,
            r.flux,
            r.calabi,
            r.gauss_bonnet_residual,
            r.volume_ode_residual,
            r.lambda_schrodinger,
            r.parallel_defect_int,
            r.parallel_defect_sup,
            r.moser_trudinger_k,
            r.sobolev_proxy,
        ];
        for (i, v) in cols.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v:.16e}");
        }
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    fs::write(path, csv_text(records)).with_context(|| format!("writing {}", path.display()))
}

fn surface_header(spec: SurfaceSpec) -> (String, usize, usize) {
    match spec {
        SurfaceSpec::Torus { n } => ("torus".into(), n, n),
        SurfaceSpec::Sphere { n_lat, n_lon } => ("sphere".into(), n_lat, n_lon),
    }
}

pub fn snapshot_text(state: &FlowState) -> String {
    let (kind, rows, cols) = surface_header(state.background().spec());
    let mut s = String::with_capacity(64 + 20 * 2 * rows * cols);
    let _ = writeln!(s, "{SNAPSHOT_MAGIC}");
    let _ = writeln!(s, "format {FORMAT_VERSION}");
    let _ = writeln!(s, "surface {kind}");
    let _ = writeln!(s, "dims {rows} {cols}");
    let _ = writeln!(s, "t {}", state.t());
    for v in state.u().values() {
        let _ = writeln!(s, "{v}");
    }
    for v in state.psi().values() {
        let _ = writeln!(s, "{v}");
    }
    s
}

pub fn write_snapshot(path: &Path, state: &FlowState) -> Result<()> {
    fs::write(path, snapshot_text(state)).with_context(|| format!("writing {}", path.display()))
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    path: &'a Path,
    consumed: usize,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str, path: &'a Path) -> Self {
        LineReader {
            lines: text.lines(),
            path,
            consumed: 0,
        }
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.consumed += 1;
        self.lines
            .next()
            .with_context(|| format!("{}: unexpected end of file, expected {what}", self.path.display()))
    }

    fn tagged(&mut self, tag: &str) -> Result<&'a str> {
        let line = self.next(tag)?;
        line.strip_prefix(tag)
            .and_then(|rest| rest.strip_prefix(' ').or(Some(rest).filter(|r| r.is_empty())))
            .with_context(|| {
                format!(
                    "{} line {}: expected `{tag} ...`, got `{line}`",
                    self.path.display(),
                    self.consumed
                )
            })
    }

    fn value(&mut self, what: &str) -> Result<f64> {
        let line = self.next(what)?;
        line.trim().parse::<f64>().with_context(|| {
            format!(
                "{} line {}: expected a decimal {what}, got `{line}`",
                self.path.display(),
                self.consumed
            )
        })
    }
}

fn check_magic(r: &mut LineReader<'_>, magic: &str) -> Result<()> {
    let line = r.next("a format marker")?;
    if line != magic {
        bail!("{}: not a {magic} file", r.path.display());
    }
    let version: u32 = r
        .tagged("format")?
        .trim()
        .parse()
        .with_context(|| format!("{}: bad format version", r.path.display()))?;
    if version != FORMAT_VERSION {
        bail!("{}: unsupported format version {version}", r.path.display());
    }
    Ok(())
}

fn read_surface(r: &mut LineReader<'_>) -> Result<SurfaceSpec> {
    let kind = r.tagged("surface")?.trim().to_string();
    let dims = r.tagged("dims")?;
    let parts: Vec<usize> = dims
        .split_whitespace()
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("{}: bad dims `{dims}`", r.path.display()))?;
    match (kind.as_str(), parts.as_slice()) {
        ("torus", [rows, cols]) if rows == cols => Ok(SurfaceSpec::Torus { n: *rows }),
        ("sphere", [rows, cols]) => Ok(SurfaceSpec::Sphere {
            n_lat: *rows,
            n_lon: *cols,
        }),
        _ => bail!("{}: inconsistent surface header", r.path.display()),
    }
}

fn read_fields(r: &mut LineReader<'_>, count: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut u = Vec::with_capacity(count);
    for _ in 0..count {
        u.push(r.value("field value")?);
    }
    let mut psi = Vec::with_capacity(count);
    for _ in 0..count {
        psi.push(r.value("field value")?);
    }
    Ok((u, psi))
}

pub fn read_snapshot(path: &Path) -> Result<FlowState> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut r = LineReader::new(&text, path);
    check_magic(&mut r, SNAPSHOT_MAGIC)?;
    let spec = read_surface(&mut r)?;
    let t = r.tagged("t")?.trim().parse::<f64>().with_context(|| {
        format!("{}: bad time value", path.display())
    })?;
    let bg = Arc::new(BackgroundGeometry::build(spec)?);
    let (u, psi) = read_fields(&mut r, bg.node_count())?;
    let u = bg.from_values(u)?;
    let psi = bg.from_values(psi)?;
    Ok(FlowState::new(bg, u, psi, t)?)
}

pub struct Checkpoint {
    pub config: CliConfig,
    pub state: FlowState,
    pub rows: usize,
}

pub fn checkpoint_text(cfg: &CliConfig, state: &FlowState, rows: usize) -> String {
    let echo = canonical_text(cfg);
    let echo_lines = echo.lines().count();
    let mut s = String::new();
    let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(s, "format {FORMAT_VERSION}");
    let _ = writeln!(s, "config_lines {echo_lines}");
    for line in echo.lines() {
        let _ = writeln!(s, "{line}");
    }
    let _ = writeln!(s, "t {}", state.t());
    for v in state.u().values() {
        let _ = writeln!(s, "{v}");
    }
    for v in state.psi().values() {
        let _ = writeln!(s, "{v}");
    }
    let _ = writeln!(s, "rows {rows}");
    s
}

pub fn write_checkpoint(path: &Path, cfg: &CliConfig, state: &FlowState, rows: usize) -> Result<()> {
    fs::write(path, checkpoint_text(cfg, state, rows))
        .with_context(|| format!("writing {}", path.display()))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut r = LineReader::new(&text, path);
    check_magic(&mut r, CHECKPOINT_MAGIC)?;
    let echo_lines: usize = r
        .tagged("config_lines")?
        .trim()
        .parse()
        .with_context(|| format!("{}: bad config_lines count", path.display()))?;
    let mut echo = String::new();
    for _ in 0..echo_lines {
        echo.push_str(r.next("an echoed config line")?);
        echo.push('\n');
    }
    let config = parse_config(&echo)
        .with_context(|| format!("{}: embedded config does not parse", path.display()))?;
    let t = r.tagged("t")?.trim().parse::<f64>().with_context(|| {
        format!("{}: bad time value", path.display())
    })?;
    let bg = Arc::new(BackgroundGeometry::build(config.run.surface)?);
    let (u, psi) = read_fields(&mut r, bg.node_count())?;
    let rows: usize = r
        .tagged("rows")?
        .trim()
        .parse()
        .with_context(|| format!("{}: bad accumulated row count", path.display()))?;
    if rows == 0 {
        bail!("{}: checkpoint carries no diagnostics rows", path.display());
    }
    let u = bg.from_values(u)?;
    let psi = bg.from_values(psi)?;
    let state = FlowState::new(bg, u, psi, t)?;
    Ok(Checkpoint { config, state, rows })
}

pub fn profile_text(profile: &SolitonProfile) -> String {
    let n = profile.phi().len();
    let h = profile.spacing();
    let mut s = String::new();
    let _ = writeln!(s, "{PROFILE_MAGIC}");
    let _ = writeln!(s, "format {FORMAT_VERSION}");
    let _ = writeln!(s, "c {}", profile.c());
    let _ = writeln!(s, "a {}", profile.a());
    let _ = writeln!(s, "A {}", profile.extent());
    let _ = writeln!(s, "nodes {n}");
    let _ = writeln!(s, "columns r phi psi f");
    for j in 0..n {
        let _ = writeln!(
            s,
            "{} {} {} {}",
            j as f64 * h,
            profile.phi()[j],
            profile.psi()[j],
            profile.potential()[j]
        );
    }
    s
}

pub fn write_profile(path: &Path, profile: &SolitonProfile) -> Result<()> {
    fs::write(path, profile_text(profile)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_profile(path: &Path) -> Result<SolitonProfile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut r = LineReader::new(&text, path);
    check_magic(&mut r, PROFILE_MAGIC)?;
    let c = r.tagged("c")?.trim().parse::<f64>().context("bad c value")?;
    let a = r.tagged("a")?.trim().parse::<f64>().context("bad a value")?;
    let extent = r.tagged("A")?.trim().parse::<f64>().context("bad A value")?;
    let nodes: usize = r.tagged("nodes")?.trim().parse().context("bad node count")?;
    let columns = r.tagged("columns")?.trim();
    if columns != "r phi psi f" {
        bail!("{}: unsupported column layout `{columns}`", path.display());
    }
    if nodes < 2 {
        bail!("{}: profile needs at least two nodes", path.display());
    }
    let h = extent / (nodes - 1) as f64;
    let mut phi = Vec::with_capacity(nodes);
    let mut psi = Vec::with_capacity(nodes);
    let mut pot = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let line = r.next("a profile row")?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| {
                format!("{} line {}: bad profile row `{line}`", path.display(), r.consumed)
            })?;
        let [rr, p, ps, f] = vals.as_slice() else {
            bail!(
                "{} line {}: expected `r phi psi f`, got `{line}`",
                path.display(),
                r.consumed
            );
        };
        let expect = j as f64 * h;
        if (rr - expect).abs() > 1e-8 * (1.0 + extent.abs()) {
            bail!(
                "{} line {}: r column is not a uniform grid over [0, A] ({rr} vs {expect})",
                path.display(),
                r.consumed
            );
        }
        phi.push(*p);
        psi.push(*ps);
        pot.push(*f);
    }
    Ok(SolitonProfile::new(extent, phi, psi, pot, c, a)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rymflow_core::init::random_band_limited;
    use rymflow_core::init::RandomFieldSpec;

    fn random_state(spec: SurfaceSpec, seed: u64) -> FlowState {
        let bg = Arc::new(BackgroundGeometry::build(spec).unwrap());
        let u = random_band_limited(
            &bg,
            &RandomFieldSpec { seed, max_wavenumber: 3, amplitude: 0.4 },
        );
        let psi = random_band_limited(
            &bg,
            &RandomFieldSpec { seed: seed + 1, max_wavenumber: 3, amplitude: 0.7 },
        );
        FlowState::new(bg, u, psi, 0.625).unwrap()
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for spec in [
            SurfaceSpec::Torus { n: 16 },
            SurfaceSpec::Sphere { n_lat: 10, n_lon: 20 },
        ] {
            let state = random_state(spec, 41);
            let path = dir.path().join("state.snap");
            write_snapshot(&path, &state).unwrap();
            let back = read_snapshot(&path).unwrap();
            assert_eq!(back.t(), state.t());
            assert_eq!(back.u().values(), state.u().values());
            assert_eq!(back.psi().values(), state.psi().values());
        }
    }

    #[test]
    fn checkpoint_round_trip_recovers_config_and_state() {
        let dir = tempfile::tempdir().unwrap();
        let text = "[surface]\nkind = torus\nn = 16\n[flow]\nvariant = normalized\nt_end = 4\n\
                    [output]\ndiag_cadence = 10\ncheckpoint_cadence = 20\n";
        let cfg = parse_config(text).unwrap();
        let state = random_state(SurfaceSpec::Torus { n: 16 }, 5);
        let path = dir.path().join("run.ckpt");
        write_checkpoint(&path, &cfg, &state, 3).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.rows, 3);
        assert_eq!(canonical_text(&back.config), canonical_text(&cfg));
        assert_eq!(back.state.u().values(), state.u().values());
        assert_eq!(back.state.psi().values(), state.psi().values());
        assert_eq!(back.state.t(), state.t());
    }

    #[test]
    fn profile_round_trip_preserves_columns() {
        let dir = tempfile::tempdir().unwrap();
        let profile = SolitonProfile::round_sphere(256).unwrap();
        let path = dir.path().join("round.prof");
        write_profile(&path, &profile).unwrap();
        let back = read_profile(&path).unwrap();
        assert_eq!(back.phi(), profile.phi());
        assert_eq!(back.psi(), profile.psi());
        assert_eq!(back.extent(), profile.extent());
        assert_eq!(back.c(), profile.c());
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.snap");
        fs::write(&path, "not a snapshot\n").unwrap();
        assert!(read_snapshot(&path).is_err());
        fs::write(&path, "rymflow snapshot\nformat 9\n").unwrap();
        let e = read_snapshot(&path).unwrap_err();
        assert!(e.to_string().contains("version"), "{e}");
    }

    #[test]
    fn csv_has_the_pinned_header_and_full_precision() {
        let rec = DiagnosticsRecord {
            t: 0.1,
            energy_f: 1.0 / 3.0,
            dissipation_pred: -1.0,
            dissipation_meas: -1.0,
            volume: 1.0,
            flux: 2.0f64.sqrt(),
            calabi: 1e-9,
            gauss_bonnet_residual: 0.0,
            volume_ode_residual: 0.0,
            lambda_schrodinger: -0.5,
            parallel_defect_int: 0.0,
            parallel_defect_sup: 0.0,
            moser_trudinger_k: 3.5,
            sobolev_proxy: 0.25,
            min_volume_flag: 0.0,
        };
        let text = csv_text(&[rec]);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let row = lines.next().unwrap();
        let third: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(third, 1.0 / 3.0);
        assert!(row.split(',').nth(5).unwrap().starts_with("1.414213562373095"));
        assert_eq!(csv_text(&[]).lines().count(), 1);
    }
}
