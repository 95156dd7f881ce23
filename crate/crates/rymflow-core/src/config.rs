//! Typed run configuration and construction of the initial state.

use std::sync::Arc;

use crate::error::{FlowError, Result};
use crate::field::FlowState;
use crate::flow::{FlowVariant, StepperConfig};
use crate::grid::{BackgroundGeometry, SurfaceKind, SurfaceSpec};
use crate::init::{
    random_band_limited, sphere_modes_field, torus_modes_field, RandomFieldSpec, SphereMode,
    TorusMode,
};

/// How the starting pair (u, psi) is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// Seeded band-limited random fields; psi draws from seed + 1.
    Random {
        seed: u64,
        max_wavenumber: usize,
        amp_u: f64,
        amp_psi: f64,
    },
    TorusModes {
        u: Vec<TorusMode>,
        psi: Vec<TorusMode>,
    },
    SphereModes {
        u: Vec<SphereMode>,
        psi: Vec<SphereMode>,
    },
    /// Raw node values, row-major, as loaded from a snapshot file.
    Fields { u: Vec<f64>, psi: Vec<f64>, t: f64 },
}

/// Complete description of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub surface: SurfaceSpec,
    pub variant: FlowVariant,
    pub initial: InitialData,
    /// Shift the initial psi by a constant so the flux equals this value.
    pub flux_target: Option<f64>,
    pub t_end: f64,
    pub stepper: StepperConfig,
    pub recenter: bool,
    pub recenter_tol: f64,
    /// Stop when both rhs components fall strictly below this max norm;
    /// zero disables the rule.
    pub stationarity_tol: f64,
    pub diag_cadence: usize,
    pub snapshot_cadence: usize,
    pub checkpoint_cadence: usize,
    pub max_steps: usize,
    pub moser_k: f64,
    pub sobolev_trials: usize,
    pub sobolev_max_wavenumber: usize,
    pub sobolev_seed: u64,
}

impl RunConfig {
    pub fn new(
        surface: SurfaceSpec,
        variant: FlowVariant,
        initial: InitialData,
        t_end: f64,
    ) -> RunConfig {
        RunConfig {
            surface,
            variant,
            initial,
            flux_target: None,
            t_end,
            stepper: StepperConfig::default(),
            recenter: false,
            recenter_tol: 1e-10,
            stationarity_tol: 1e-9,
            diag_cadence: 50,
            snapshot_cadence: 0,
            checkpoint_cadence: 0,
            max_steps: 2_000_000,
            moser_k: 1.0,
            sobolev_trials: 32,
            sobolev_max_wavenumber: 8,
            sobolev_seed: 97,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stepper.validate()?;
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(FlowError::InvalidArgument(format!(
                "t_end must be positive and finite, got {}",
                self.t_end
            )));
        }
        if self.recenter && matches!(self.surface, SurfaceSpec::Torus { .. }) {
            return Err(FlowError::InvalidArgument(
                "recenter requires a sphere surface".into(),
            ));
        }
        if !(self.recenter_tol > 0.0 && self.recenter_tol.is_finite()) {
            return Err(FlowError::InvalidArgument(format!(
                "recenter_tol must be positive, got {}",
                self.recenter_tol
            )));
        }
        if !(self.stationarity_tol >= 0.0 && self.stationarity_tol.is_finite()) {
            return Err(FlowError::InvalidArgument(format!(
                "stationarity_tol must be nonnegative, got {}",
                self.stationarity_tol
            )));
        }
        if self.diag_cadence == 0 {
            return Err(FlowError::InvalidArgument(
                "diag_cadence must be at least 1".into(),
            ));
        }
        if self.checkpoint_cadence > 0 && self.checkpoint_cadence % self.diag_cadence != 0 {
            return Err(FlowError::InvalidArgument(format!(
                "checkpoint_cadence ({}) must be a multiple of diag_cadence ({}) so a resumed \
                 run sees the same preceding diagnostics row",
                self.checkpoint_cadence, self.diag_cadence
            )));
        }
        if self.max_steps == 0 {
            return Err(FlowError::InvalidArgument(
                "max_steps must be at least 1".into(),
            ));
        }
        if !(self.moser_k > 0.0 && self.moser_k.is_finite()) {
            return Err(FlowError::InvalidArgument(format!(
                "moser_k must be positive, got {}",
                self.moser_k
            )));
        }
        if self.sobolev_trials == 0 {
            return Err(FlowError::InvalidArgument(
                "sobolev_trials must be at least 1".into(),
            ));
        }
        if let Some(target) = self.flux_target {
            if !target.is_finite() {
                return Err(FlowError::InvalidArgument(format!(
                    "flux_target must be finite, got {target}"
                )));
            }
        }
        match (&self.initial, self.surface) {
            (InitialData::TorusModes { .. }, SurfaceSpec::Sphere { .. }) => {
                return Err(FlowError::InvalidArgument(
                    "torus mode list given for a sphere surface".into(),
                ));
            }
            (InitialData::SphereModes { .. }, SurfaceSpec::Torus { .. }) => {
                return Err(FlowError::InvalidArgument(
                    "sphere mode list given for a torus surface".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Builds the starting state: initial fields, then the flux-target shift,
    /// then the one-time unit-volume shift for the normalized variant.
    pub fn initial_state(&self) -> Result<FlowState> {
        self.validate()?;
        let bg = Arc::new(BackgroundGeometry::build(self.surface)?);
        let (u, psi, t) = match &self.initial {
            InitialData::Random {
                seed,
                max_wavenumber,
                amp_u,
                amp_psi,
            } => {
                let u = random_band_limited(
                    &bg,
                    &RandomFieldSpec {
                        seed: *seed,
                        max_wavenumber: *max_wavenumber,
                        amplitude: *amp_u,
                    },
                );
                let psi = random_band_limited(
                    &bg,
                    &RandomFieldSpec {
                        seed: seed.wrapping_add(1),
                        max_wavenumber: *max_wavenumber,
                        amplitude: *amp_psi,
                    },
                );
                (u, psi, 0.0)
            }
            InitialData::TorusModes { u, psi } => (
                torus_modes_field(&bg, u)?,
                torus_modes_field(&bg, psi)?,
                0.0,
            ),
            InitialData::SphereModes { u, psi } => (
                sphere_modes_field(&bg, u)?,
                sphere_modes_field(&bg, psi)?,
                0.0,
            ),
            InitialData::Fields { u, psi, t } => (
                bg.from_values(u.clone())?,
                bg.from_values(psi.clone())?,
                *t,
            ),
        };
        let mut state = FlowState::new(bg, u, psi, t)?;
        if let Some(target) = self.flux_target {
            let shift = target - state.flux();
            let psi = state.psi().map(|v| v + shift);
            state = FlowState::new(state.background().clone(), state.u().clone(), psi, t)?;
        }
        if self.variant == FlowVariant::VolumeNormalized {
            let vol = state.volume()?;
            if !(vol > 0.0) {
                return Err(FlowError::InvalidState(format!(
                    "initial volume {vol} is not positive"
                )));
            }
            state = state.shift_u(-vol.ln());
        }
        Ok(state)
    }

    pub fn surface_kind(&self) -> SurfaceKind {
        match self.surface {
            SurfaceSpec::Torus { .. } => SurfaceKind::Torus,
            SurfaceSpec::Sphere { .. } => SurfaceKind::Sphere,
        }
    }
}
