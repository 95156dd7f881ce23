//! Run loop: time stepping under the configured stop rules, with per-step
//! unit-volume projection for the normalized variant and gauge recentering
//! on the sphere.

use crate::config::RunConfig;
use crate::diagnostics::{
    conservation_residuals, energy_functional, min_volume_tracker, snapshot_record,
    DiagnosticsRecord, MinVolumeReport, SobolevFamily,
};
use crate::error::Result;
use crate::field::FlowState;
use crate::flow::{choose_dt, rhs, step, FlowVariant};
use crate::grid::SurfaceKind;
use crate::mobius::{center_of_mass, recenter_with, RecenterOptions};

/// Why a run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    ReachedEnd,
    Stationary { sup_du: f64, sup_dpsi: f64 },
    MaxSteps,
    Failed(String),
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::ReachedEnd => write!(f, "reached t_end"),
            StopReason::Stationary { sup_du, sup_dpsi } => write!(
                f,
                "stationary: |du/dt| = {sup_du:.3e}, |dpsi/dt| = {sup_dpsi:.3e}"
            ),
            StopReason::MaxSteps => write!(f, "step budget exhausted"),
            StopReason::Failed(msg) => write!(f, "failed: {msg}"),
        }
    }
}

/// Everything a finished run hands back.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<DiagnosticsRecord>,
    pub snapshots: Vec<(usize, FlowState)>,
    pub checkpoints: Vec<(usize, FlowState)>,
    pub final_state: FlowState,
    pub final_step: usize,
    pub stop: StopReason,
    pub min_volume: MinVolumeReport,
}

impl Trajectory {
    pub fn is_failure(&self) -> bool {
        matches!(self.stop, StopReason::Failed(_))
    }
}

pub fn run(config: &RunConfig) -> Result<Trajectory> {
    let state = config.initial_state()?;
    run_from(config, state, 0)
}

/// Continues a run from `start` taken to be the state after `start_step`
/// accepted steps.  When `start_step` sits on a diagnostics boundary the
/// measured columns of later rows match the uninterrupted run exactly.
pub fn run_from(config: &RunConfig, start: FlowState, start_step: usize) -> Result<Trajectory> {
    config.validate()?;
    let bg = start.background().clone();
    let family = SobolevFamily::new(
        &bg,
        config.sobolev_trials,
        config.sobolev_max_wavenumber,
        config.sobolev_seed,
    )?;
    let on_sphere = bg.kind() == SurfaceKind::Sphere;
    let recenter_opts = RecenterOptions {
        tol: config.recenter_tol,
        ..RecenterOptions::default()
    };
    let t_eps = 1e-12 * (1.0 + config.t_end);

    let mut state = start;
    let mut records: Vec<DiagnosticsRecord> = Vec::new();
    let mut snapshots: Vec<(usize, FlowState)> = Vec::new();
    let mut checkpoints: Vec<(usize, FlowState)> = Vec::new();
    let mut volumes: Vec<f64> = Vec::new();
    let mut step_idx = start_step;
    let mut last_row_step: Option<usize> = None;
    let mut prev_row: Option<(FlowState, f64)> = None;
    if start_step > 0 && start_step % config.diag_cadence == 0 {
        prev_row = Some((state.clone(), energy_functional(&state)?));
        last_row_step = Some(start_step);
    }

    let stop = loop {
        volumes.push(state.volume()?);

        let sup_u = state.u().max_abs();
        if !state.u().is_finite() || !state.psi().is_finite() || sup_u > 50.0 {
            break StopReason::Failed(format!(
                "blow-up at t = {}: max |u| = {sup_u}",
                state.t()
            ));
        }

        if step_idx % config.diag_cadence == 0 && last_row_step != Some(step_idx) {
            let (rec, energy) = make_row(&state, config, &family, prev_row.as_ref())?;
            records.push(rec);
            prev_row = Some((state.clone(), energy));
            last_row_step = Some(step_idx);
        }
        if due(step_idx, config.snapshot_cadence) && step_idx != start_step {
            snapshots.push((step_idx, state.clone()));
        }
        if due(step_idx, config.checkpoint_cadence) && step_idx != start_step {
            checkpoints.push((step_idx, state.clone()));
        }

        let (du, dpsi) = match rhs(&state, config.variant) {
            Ok(pair) => pair,
            Err(e) => break StopReason::Failed(e.to_string()),
        };
        let sup_du = du.max_abs();
        let sup_dpsi = dpsi.max_abs();
        if config.stationarity_tol > 0.0
            && sup_du < config.stationarity_tol
            && sup_dpsi < config.stationarity_tol
        {
            break StopReason::Stationary { sup_du, sup_dpsi };
        }
        if state.t() >= config.t_end - t_eps {
            break StopReason::ReachedEnd;
        }
        if step_idx - start_step >= config.max_steps {
            break StopReason::MaxSteps;
        }

        let dt = match choose_dt(&state, config.variant, &config.stepper) {
            Ok(dt) => dt.min(config.t_end - state.t()),
            Err(e) => break StopReason::Failed(e.to_string()),
        };
        let mut next = match step(&state, dt, config.variant, &config.stepper) {
            Ok(next) => next,
            Err(e) => break StopReason::Failed(e.to_string()),
        };
        if config.recenter && on_sphere {
            match apply_recentering(&next, &recenter_opts) {
                Ok(centered) => next = centered,
                Err(e) => break StopReason::Failed(e.to_string()),
            }
        }
        if config.variant == FlowVariant::VolumeNormalized {
            let vol = next.volume()?;
            next = next.shift_u(-vol.ln());
        }
        state = next;
        step_idx += 1;
    };

    if !matches!(stop, StopReason::Failed(_)) && last_row_step != Some(step_idx) {
        let (rec, energy) = make_row(&state, config, &family, prev_row.as_ref())?;
        records.push(rec);
        prev_row = Some((state.clone(), energy));
    }
    let _ = prev_row;

    let report = min_volume_tracker(&volumes, state.flux(), bg.scalar_curvature0());
    Ok(Trajectory {
        records,
        snapshots,
        checkpoints,
        final_state: state,
        final_step: step_idx,
        stop,
        min_volume: report,
    })
}

fn due(idx: usize, cadence: usize) -> bool {
    cadence > 0 && idx % cadence == 0
}

/// Recenters only when the center of mass has drifted past tolerance, so a
/// centered trajectory is not resampled every step.
fn apply_recentering(state: &FlowState, opts: &RecenterOptions) -> Result<FlowState> {
    let com = center_of_mass(state)?;
    let norm = (com[0] * com[0] + com[1] * com[1] + com[2] * com[2]).sqrt();
    if norm <= opts.tol {
        return Ok(state.clone());
    }
    let (centered, _) = recenter_with(state, opts)?;
    Ok(centered)
}

fn make_row(
    state: &FlowState,
    config: &RunConfig,
    family: &SobolevFamily,
    prev: Option<&(FlowState, f64)>,
) -> Result<(DiagnosticsRecord, f64)> {
    let mut rec = snapshot_record(state, config.variant, config.moser_k, family)?;
    if let Some((prev_state, prev_energy)) = prev {
        let span = state.t() - prev_state.t();
        if span > 0.0 {
            rec.dissipation_meas = (rec.energy_f - prev_energy) / span;
            let cons = conservation_residuals(prev_state, state, span, config.variant)?;
            rec.volume_ode_residual = cons.volume_ode_residual;
        }
    }
    Ok((rec, rec.energy_f))
}
