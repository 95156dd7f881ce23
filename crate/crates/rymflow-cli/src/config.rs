//! Strict line-oriented config grammar: `[section]` headers and `key = value`
//! lines, unknown keys rejected, every default materialized on parse.

use std::collections::HashSet;
use std::fmt;

use rymflow_core::{InitialData, RunConfig, SurfaceKind, SurfaceSpec};
use rymflow_core::flow::{FlowVariant, StepScheme};
use rymflow_core::init::{SphereMode, TorusMode};

/// A parsed run description: the core run parameters plus artifact plumbing.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub run: RunConfig,
    pub output_dir: String,
    /// Set when the initial data comes from a snapshot file; the command
    /// layer loads it and replaces the placeholder fields before running.
    pub initial_snapshot: Option<String>,
}

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "config line {n}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line: Some(line),
        message: message.into(),
    })
}

const SECTIONS: [(&str, &[&str]); 6] = [
    ("surface", &["kind", "n", "n_lat", "n_lon"]),
    (
        "flow",
        &[
            "variant",
            "t_end",
            "flux_target",
            "max_steps",
            "stationarity_tol",
            "recenter",
            "recenter_tol",
        ],
    ),
    (
        "initial",
        &[
            "kind",
            "seed",
            "max_wavenumber",
            "amp_u",
            "amp_psi",
            "path",
            "mode_u",
            "mode_psi",
        ],
    ),
    ("stepper", &["scheme", "cfl_safety", "dt_max", "dt_min"]),
    (
        "output",
        &["dir", "diag_cadence", "snapshot_cadence", "checkpoint_cadence"],
    ),
    (
        "diagnostics",
        &["moser_k", "sobolev_trials", "sobolev_max_wavenumber", "sobolev_seed"],
    ),
];

struct Entry {
    section: &'static str,
    key: &'static str,
    value: String,
    line: usize,
}

fn scan(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries = Vec::new();
    let mut section: Option<&'static str> = None;
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return err(line, format!("malformed section header `{trimmed}`"));
            };
            let Some((canon, _)) = SECTIONS.iter().find(|(s, _)| *s == name) else {
                return err(line, format!("unknown section `[{name}]`"));
            };
            section = Some(canon);
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return err(line, format!("expected `key = value`, got `{trimmed}`"));
        };
        let key = key.trim();
        let value = value.trim();
        let Some(section) = section else {
            return err(line, format!("key `{key}` appears before any [section] header"));
        };
        let keys = SECTIONS.iter().find(|(s, _)| *s == section).unwrap().1;
        let Some(canon_key) = keys.iter().find(|k| **k == key) else {
            return err(line, format!("unknown key `{key}` in [{section}]"));
        };
        let repeatable = section == "initial" && (key == "mode_u" || key == "mode_psi");
        if !repeatable && !seen.insert((section, canon_key)) {
            return err(line, format!("duplicate key `{key}` in [{section}]"));
        }
        entries.push(Entry {
            section,
            key: canon_key,
            value: value.to_string(),
            line,
        });
    }
    Ok(entries)
}

struct Fields<'a> {
    entries: &'a [Entry],
}

impl<'a> Fields<'a> {
    fn get(&self, section: &str, key: &str) -> Option<&'a Entry> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.key == key)
    }

    fn forbid(&self, section: &str, key: &str, reason: &str) -> Result<(), ConfigError> {
        match self.get(section, key) {
            Some(e) => err(e.line, format!("key `{key}` {reason}")),
            None => Ok(()),
        }
    }

    fn parse<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
        what: &str,
    ) -> Result<Option<T>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => match e.value.parse::<T>() {
                Ok(v) => Ok(Some(v)),
                Err(_) => err(
                    e.line,
                    format!("key `{key}` expects {what}, got `{}`", e.value),
                ),
            },
        }
    }

    fn require<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
        what: &str,
    ) -> Result<(T, usize), ConfigError> {
        match self.get(section, key) {
            None => Err(ConfigError {
                line: None,
                message: format!("missing required key `{key}` in [{section}]"),
            }),
            Some(e) => match e.value.parse::<T>() {
                Ok(v) => Ok((v, e.line)),
                Err(_) => err(
                    e.line,
                    format!("key `{key}` expects {what}, got `{}`", e.value),
                ),
            },
        }
    }
}

pub fn parse_config(text: &str) -> Result<CliConfig, ConfigError> {
    let entries = scan(text)?;
    let f = Fields { entries: &entries };

    let (kind, kind_line): (String, usize) = f.require("surface", "kind", "torus or sphere")?;
    let surface = match kind.as_str() {
        "torus" => {
            f.forbid("surface", "n_lat", "is only valid for kind = sphere")?;
            f.forbid("surface", "n_lon", "is only valid for kind = sphere")?;
            let (n, _) = f.require::<usize>("surface", "n", "a grid size")?;
            SurfaceSpec::Torus { n }
        }
        "sphere" => {
            f.forbid("surface", "n", "is only valid for kind = torus")?;
            let (n_lat, _) = f.require::<usize>("surface", "n_lat", "a ring count")?;
            let (n_lon, _) = f.require::<usize>("surface", "n_lon", "a node count")?;
            SurfaceSpec::Sphere { n_lat, n_lon }
        }
        other => return err(kind_line, format!("unknown surface kind `{other}`")),
    };
    let surface_kind = match surface {
        SurfaceSpec::Torus { .. } => SurfaceKind::Torus,
        SurfaceSpec::Sphere { .. } => SurfaceKind::Sphere,
    };

    let (variant, _): (FlowVariant, usize) =
        f.require("flow", "variant", "unnormalized or normalized")?;
    let (t_end, _) = f.require::<f64>("flow", "t_end", "a positive time")?;

    let initial = parse_initial(&f, surface_kind)?;
    let initial_snapshot = match &initial {
        ParsedInitial::Snapshot(path) => Some(path.clone()),
        ParsedInitial::Inline(_) => None,
    };
    let initial = match initial {
        ParsedInitial::Inline(data) => data,
        ParsedInitial::Snapshot(_) => InitialData::Fields {
            u: Vec::new(),
            psi: Vec::new(),
            t: 0.0,
        },
    };

    let mut run = RunConfig::new(surface, variant, initial, t_end);
    if let Some(v) = f.parse::<f64>("flow", "flux_target", "a real number")? {
        run.flux_target = Some(v);
    }
    if let Some(v) = f.parse("flow", "max_steps", "a step count")? {
        run.max_steps = v;
    }
    if let Some(v) = f.parse("flow", "stationarity_tol", "a tolerance")? {
        run.stationarity_tol = v;
    }
    if let Some(v) = f.parse("flow", "recenter", "true or false")? {
        run.recenter = v;
    }
    if let Some(v) = f.parse("flow", "recenter_tol", "a tolerance")? {
        run.recenter_tol = v;
    }
    if let Some(v) = f.parse::<StepScheme>("stepper", "scheme", "rk4 or semi-implicit")? {
        run.stepper.scheme = v;
    }
    if let Some(v) = f.parse("stepper", "cfl_safety", "a safety factor")? {
        run.stepper.cfl_safety = v;
    }
    if let Some(v) = f.parse("stepper", "dt_max", "a step size")? {
        run.stepper.dt_max = v;
    }
    if let Some(v) = f.parse("stepper", "dt_min", "a step size")? {
        run.stepper.dt_min = v;
    }
    if let Some(v) = f.parse("output", "diag_cadence", "a step count")? {
        run.diag_cadence = v;
    }
    if let Some(v) = f.parse("output", "snapshot_cadence", "a step count")? {
        run.snapshot_cadence = v;
    }
    if let Some(v) = f.parse("output", "checkpoint_cadence", "a step count")? {
        run.checkpoint_cadence = v;
    }
    if let Some(v) = f.parse("diagnostics", "moser_k", "a positive real")? {
        run.moser_k = v;
    }
    if let Some(v) = f.parse("diagnostics", "sobolev_trials", "a trial count")? {
        run.sobolev_trials = v;
    }
    if let Some(v) = f.parse("diagnostics", "sobolev_max_wavenumber", "a wavenumber")? {
        run.sobolev_max_wavenumber = v;
    }
    if let Some(v) = f.parse("diagnostics", "sobolev_seed", "a seed")? {
        run.sobolev_seed = v;
    }
    let output_dir = match f.get("output", "dir") {
        Some(e) => e.value.clone(),
        None => "out".to_string(),
    };

    run.validate().map_err(|e| ConfigError {
        line: None,
        message: e.to_string(),
    })?;
    Ok(CliConfig {
        run,
        output_dir,
        initial_snapshot,
    })
}

enum ParsedInitial {
    Inline(InitialData),
    Snapshot(String),
}

fn parse_initial(f: &Fields<'_>, surface: SurfaceKind) -> Result<ParsedInitial, ConfigError> {
    let kind = match f.get("initial", "kind") {
        Some(e) => e.value.as_str(),
        None => "random",
    };
    let kind_line = f.get("initial", "kind").map(|e| e.line).unwrap_or(0);
    match kind {
        "random" => {
            for key in ["path", "mode_u", "mode_psi"] {
                f.forbid("initial", key, "is not valid with kind = random")?;
            }
            Ok(ParsedInitial::Inline(InitialData::Random {
                seed: f.parse("initial", "seed", "an integer seed")?.unwrap_or(1),
                max_wavenumber: f
                    .parse("initial", "max_wavenumber", "a wavenumber")?
                    .unwrap_or(4),
                amp_u: f.parse("initial", "amp_u", "an amplitude")?.unwrap_or(0.1),
                amp_psi: f.parse("initial", "amp_psi", "an amplitude")?.unwrap_or(0.1),
            }))
        }
        "modes" => {
            for key in ["path", "seed", "max_wavenumber", "amp_u", "amp_psi"] {
                f.forbid("initial", key, "is not valid with kind = modes")?;
            }
            let u = collect_modes(f, "mode_u", surface)?;
            let psi = collect_modes(f, "mode_psi", surface)?;
            Ok(ParsedInitial::Inline(match (u, psi) {
                (ModeList::Torus(u), ModeList::Torus(psi)) => InitialData::TorusModes { u, psi },
                (ModeList::Sphere(u), ModeList::Sphere(psi)) => InitialData::SphereModes { u, psi },
                _ => unreachable!("mode lists follow the surface kind"),
            }))
        }
        "snapshot" => {
            for key in ["seed", "max_wavenumber", "amp_u", "amp_psi", "mode_u", "mode_psi"] {
                f.forbid("initial", key, "is not valid with kind = snapshot")?;
            }
            let Some(e) = f.get("initial", "path") else {
                return Err(ConfigError {
                    line: None,
                    message: "initial kind = snapshot requires `path`".into(),
                });
            };
            Ok(ParsedInitial::Snapshot(e.value.clone()))
        }
        other => err(kind_line, format!("unknown initial kind `{other}`")),
    }
}

enum ModeList {
    Torus(Vec<TorusMode>),
    Sphere(Vec<SphereMode>),
}

fn collect_modes(
    f: &Fields<'_>,
    key: &str,
    surface: SurfaceKind,
) -> Result<ModeList, ConfigError> {
    let lines = f
        .entries
        .iter()
        .filter(|e| e.section == "initial" && e.key == key);
    match surface {
        SurfaceKind::Torus => {
            let mut modes = Vec::new();
            for e in lines {
                let tok: Vec<&str> = e.value.split_whitespace().collect();
                let parsed = (tok.len() == 4)
                    .then(|| {
                        Some(TorusMode {
                            kx: tok[0].parse().ok()?,
                            ky: tok[1].parse().ok()?,
                            cos_amp: tok[2].parse().ok()?,
                            sin_amp: tok[3].parse().ok()?,
                        })
                    })
                    .flatten();
                match parsed {
                    Some(m) => modes.push(m),
                    None => {
                        return err(
                            e.line,
                            format!("key `{key}` expects `kx ky cos_amp sin_amp`, got `{}`", e.value),
                        )
                    }
                }
            }
            Ok(ModeList::Torus(modes))
        }
        SurfaceKind::Sphere => {
            let mut modes = Vec::new();
            for e in lines {
                let tok: Vec<&str> = e.value.split_whitespace().collect();
                let parsed = (tok.len() == 3)
                    .then(|| {
                        Some(SphereMode {
                            l: tok[0].parse().ok()?,
                            m: tok[1].parse().ok()?,
                            amp: tok[2].parse().ok()?,
                        })
                    })
                    .flatten();
                match parsed {
                    Some(m) => modes.push(m),
                    None => {
                        return err(
                            e.line,
                            format!("key `{key}` expects `l m amp`, got `{}`", e.value),
                        )
                    }
                }
            }
            Ok(ModeList::Sphere(modes))
        }
    }
}

/// Serializes a config with every value explicit; `parse_config` on the
/// result reproduces the input structure exactly.
pub fn canonical_text(cfg: &CliConfig) -> String {
    let mut s = String::new();
    let run = &cfg.run;
    s.push_str("[surface]\n");
    match run.surface {
        SurfaceSpec::Torus { n } => {
            s.push_str("kind = torus\n");
            s.push_str(&format!("n = {n}\n"));
        }
        SurfaceSpec::Sphere { n_lat, n_lon } => {
            s.push_str("kind = sphere\n");
            s.push_str(&format!("n_lat = {n_lat}\n"));
            s.push_str(&format!("n_lon = {n_lon}\n"));
        }
    }
    s.push_str("\n[flow]\n");
    s.push_str(&format!("variant = {}\n", run.variant));
    s.push_str(&format!("t_end = {}\n", run.t_end));
    if let Some(v) = run.flux_target {
        s.push_str(&format!("flux_target = {v}\n"));
    }
    s.push_str(&format!("max_steps = {}\n", run.max_steps));
    s.push_str(&format!("stationarity_tol = {}\n", run.stationarity_tol));
    s.push_str(&format!("recenter = {}\n", run.recenter));
    s.push_str(&format!("recenter_tol = {}\n", run.recenter_tol));
    s.push_str("\n[initial]\n");
    match (&cfg.initial_snapshot, &run.initial) {
        (Some(path), _) => {
            s.push_str("kind = snapshot\n");
            s.push_str(&format!("path = {path}\n"));
        }
        (None, InitialData::Random { seed, max_wavenumber, amp_u, amp_psi }) => {
            s.push_str("kind = random\n");
            s.push_str(&format!("seed = {seed}\n"));
            s.push_str(&format!("max_wavenumber = {max_wavenumber}\n"));
            s.push_str(&format!("amp_u = {amp_u}\n"));
            s.push_str(&format!("amp_psi = {amp_psi}\n"));
        }
        (None, InitialData::TorusModes { u, psi }) => {
            s.push_str("kind = modes\n");
            for m in u {
                s.push_str(&format!("mode_u = {} {} {} {}\n", m.kx, m.ky, m.cos_amp, m.sin_amp));
            }
            for m in psi {
                s.push_str(&format!("mode_psi = {} {} {} {}\n", m.kx, m.ky, m.cos_amp, m.sin_amp));
            }
        }
        (None, InitialData::SphereModes { u, psi }) => {
            s.push_str("kind = modes\n");
            for m in u {
                s.push_str(&format!("mode_u = {} {} {}\n", m.l, m.m, m.amp));
            }
            for m in psi {
                s.push_str(&format!("mode_psi = {} {} {}\n", m.l, m.m, m.amp));
            }
        }
        (None, InitialData::Fields { .. }) => {
            unreachable!("inline field data never round-trips through config text")
        }
    }
    s.push_str("\n[stepper]\n");
    s.push_str(&format!("scheme = {}\n", run.stepper.scheme));
    s.push_str(&format!("cfl_safety = {}\n", run.stepper.cfl_safety));
    s.push_str(&format!("dt_max = {}\n", run.stepper.dt_max));
    s.push_str(&format!("dt_min = {}\n", run.stepper.dt_min));
    s.push_str("\n[output]\n");
    s.push_str(&format!("dir = {}\n", cfg.output_dir));
    s.push_str(&format!("diag_cadence = {}\n", run.diag_cadence));
    s.push_str(&format!("snapshot_cadence = {}\n", run.snapshot_cadence));
    s.push_str(&format!("checkpoint_cadence = {}\n", run.checkpoint_cadence));
    s.push_str("\n[diagnostics]\n");
    s.push_str(&format!("moser_k = {}\n", run.moser_k));
    s.push_str(&format!("sobolev_trials = {}\n", run.sobolev_trials));
    s.push_str(&format!("sobolev_max_wavenumber = {}\n", run.sobolev_max_wavenumber));
    s.push_str(&format!("sobolev_seed = {}\n", run.sobolev_seed));
    s
}
