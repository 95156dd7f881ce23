//! Subcommand implementations; `main` only parses argv and maps errors to
//! exit codes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rymflow_core::diagnostics::SobolevFamily;
use rymflow_core::flow::FlowVariant;
use rymflow_core::soliton::SolitonVerdict;
use rymflow_core::{
    lowest_eigenvalue, run_from, snapshot_record, FlowError, FlowState, InitialData, StopReason,
    SurfaceSpec, Trajectory,
};

use crate::config::{canonical_text, parse_config, CliConfig};
use crate::io;
use crate::plots;

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_VAR: &str = "RYMFLOW_OUT";

/// Marker for failures that should exit with code 2.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn is_numerical(e: &FlowError) -> bool {
    matches!(
        e,
        FlowError::BlowUp { .. }
            | FlowError::NoConvergence { .. }
            | FlowError::Overflow(_)
            | FlowError::StepRejected { .. }
            | FlowError::VolumeGuard { .. }
            | FlowError::DegenerateProfile(_)
    )
}

fn mark(e: FlowError) -> anyhow::Error {
    if is_numerical(&e) {
        anyhow::Error::new(NumericalFailure(e.to_string()))
    } else {
        anyhow::Error::new(e)
    }
}

fn output_dir(configured: &str) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_VAR) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(configured),
    }
}

fn surface_label(spec: SurfaceSpec) -> String {
    match spec {
        SurfaceSpec::Torus { n } => format!("torus {n}x{n}"),
        SurfaceSpec::Sphere { n_lat, n_lon } => format!("sphere {n_lat}x{n_lon}"),
    }
}

pub fn flow_run(config_path: &Path) -> Result<()> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let mut cfg = parse_config(&text)?;
    if let Some(ref snap) = cfg.initial_snapshot {
        let snap_path = resolve_relative(config_path, snap);
        let state = io::read_snapshot(&snap_path)?;
        if state.background().spec() != cfg.run.surface {
            bail!(
                "initial snapshot {} is a {} state, config wants {}",
                snap_path.display(),
                surface_label(state.background().spec()),
                surface_label(cfg.run.surface)
            );
        }
        cfg.run.initial = InitialData::Fields {
            u: state.u().values().to_vec(),
            psi: state.psi().values().to_vec(),
            t: state.t(),
        };
    }
    let start = cfg.run.initial_state().map_err(mark)?;
    let traj = run_from(&cfg.run, start, 0).map_err(mark)?;
    finish(&cfg, &traj)
}

pub fn flow_resume(checkpoint: &Path, t_end: Option<f64>) -> Result<()> {
    let ck = io::read_checkpoint(checkpoint)?;
    let mut cfg = ck.config;
    if let Some(t) = t_end {
        cfg.run.t_end = t;
    }
    let start_step = (ck.rows - 1) * cfg.run.diag_cadence;
    let traj = run_from(&cfg.run, ck.state, start_step).map_err(mark)?;
    finish(&cfg, &traj)
}

/// Writes every artifact for a finished trajectory and prints the summary.
/// A failed stop still gets its artifacts before the error surfaces.
fn finish(cfg: &CliConfig, traj: &Trajectory) -> Result<()> {
    let dir = output_dir(&cfg.output_dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.echo"), canonical_text(cfg))
        .with_context(|| format!("writing {}", dir.join("config.echo").display()))?;
    io::write_csv(&dir.join("diagnostics.csv"), &traj.records)?;
    plots::emit_plots(&dir, &traj.records)?;
    for (step, state) in &traj.snapshots {
        io::write_snapshot(&dir.join(format!("snapshot_{step:08}.snap")), state)?;
    }
    for (step, state) in &traj.checkpoints {
        let rows = step / cfg.run.diag_cadence + 1;
        io::write_checkpoint(&dir.join(format!("checkpoint_{step:08}.ckpt")), cfg, state, rows)?;
    }
    io::write_snapshot(&dir.join("final.snap"), &traj.final_state)?;

    println!("surface: {}", surface_label(cfg.run.surface));
    println!("variant: {}", cfg.run.variant);
    println!("stop: {}", traj.stop);
    println!("steps: {}", traj.final_step);
    println!("t: {}", traj.final_state.t());
    println!("rows: {}", traj.records.len());
    if let Some(last) = traj.records.last() {
        println!("final energy: {:.16e}", last.energy_f);
        println!("final calabi: {:.16e}", last.calabi);
        println!("final volume: {:.16e}", last.volume);
        println!("final flux: {:.16e}", last.flux);
    }
    let mv = &traj.min_volume;
    println!("min volume: {:.16e}", mv.min_volume);
    println!(
        "volume threshold (2 R0 convention, active): {:.16e} entered: {}",
        mv.threshold_consistent, mv.entered_consistent
    );
    println!(
        "volume threshold (fixed 8 pi convention): {:.16e} entered: {}",
        mv.threshold_eight_pi, mv.entered_eight_pi
    );
    println!("output: {}", dir.display());

    if let StopReason::Failed(msg) = &traj.stop {
        return Err(anyhow::Error::new(NumericalFailure(msg.clone())));
    }
    Ok(())
}

/// Paths inside a config file resolve against the config file's directory.
fn resolve_relative(config_path: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn diag(snapshot: &Path, variant: FlowVariant, moser_k: f64) -> Result<()> {
    let state = io::read_snapshot(snapshot)?;
    let family = SobolevFamily::new(state.background(), 32, 8, 97).map_err(mark)?;
    let rec = snapshot_record(&state, variant, moser_k, &family).map_err(mark)?;
    println!("t = {:.16e}", rec.t);
    println!("energy_F = {:.16e}", rec.energy_f);
    println!("dissipation_pred = {:.16e}", rec.dissipation_pred);
    println!("dissipation_meas = {:.16e}", rec.dissipation_meas);
    println!("volume = {:.16e}", rec.volume);
    println!("flux = {:.16e}", rec.flux);
    println!("calabi = {:.16e}", rec.calabi);
    println!("gauss_bonnet_residual = {:.16e}", rec.gauss_bonnet_residual);
    println!("volume_ode_residual = {:.16e}", rec.volume_ode_residual);
    println!("lambda = {:.16e}", rec.lambda_schrodinger);
    println!("parallel_defect_int = {:.16e}", rec.parallel_defect_int);
    println!("parallel_defect_sup = {:.16e}", rec.parallel_defect_sup);
    println!("moser_trudinger = {:.16e}", rec.moser_trudinger_k);
    println!("sobolev_proxy = {:.16e}", rec.sobolev_proxy);
    println!("min_volume_flag = {}", rec.min_volume_flag);
    Ok(())
}

pub fn soliton_check(profile_path: &Path, tol: f64) -> Result<()> {
    let profile = io::read_profile(profile_path)?;
    let verdict = profile.classify(tol).map_err(mark)?;
    let report = verdict.report();
    match &verdict {
        SolitonVerdict::Soliton(_) => println!("verdict: soliton"),
        SolitonVerdict::NotSoliton { violated, sup, .. } => {
            println!("verdict: not a soliton (violated: {violated}, sup = {sup:.16e})")
        }
    }
    println!("a = {:.16e}", report.a);
    println!("sup metric radial = {:.16e}", report.sup_metric_radial);
    println!("sup metric angular = {:.16e}", report.sup_metric_angular);
    println!("sup flux alignment = {:.16e}", report.sup_flux_alignment);
    println!("sup flux transport = {:.16e}", report.sup_flux_transport);
    println!(
        "sup reduced equation, squared-ratio reading = {:.16e}",
        report.sup_reduced_squared
    );
    println!(
        "sup reduced equation, bare-flux reading = {:.16e}",
        report.sup_reduced_bare
    );
    println!("potential linearity defect = {:.16e}", report.potential_defect);
    println!("flux derivative sup = {:.16e}", report.flux_derivative_sup);
    println!("curvature mean = {:.16e}", report.curvature_mean);
    println!("curvature spread = {:.16e}", report.curvature_spread);
    println!("zero flux defect = {:.16e}", report.zero_flux_defect);
    println!("parallel flux ratio = {:.16e}", report.parallel_ratio);
    println!("parallel fit defect = {:.16e}", report.parallel_fit_defect);
    Ok(())
}

pub fn spectrum(snapshot: &Path) -> Result<()> {
    let state = io::read_snapshot(snapshot)?;
    let (lambda, field) = lowest_eigenvalue(&state).map_err(mark)?;
    let bg = state.background().clone();
    let zeros = bg.zeros();
    let eigenstate = FlowState::new(bg, field, zeros, state.t()).map_err(mark)?;
    let dir = match std::env::var_os(OUTPUT_DIR_VAR) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => snapshot.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = snapshot
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "state".into());
    let out = dir.join(format!("{stem}.eigenfield.snap"));
    io::write_snapshot(&out, &eigenstate)?;
    println!("lambda = {lambda:.16e}");
    println!("eigenfield: {}", out.display());
    Ok(())
}
