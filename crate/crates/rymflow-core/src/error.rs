//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlowError>;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field is bound to {field_tag} but the operation targets {geometry_tag}")]
    GeometryMismatch {
        field_tag: String,
        geometry_tag: String,
    },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("volume guard violated for the normalized flow: volume = {volume}")]
    VolumeGuard { volume: f64 },

    #[error("step rejected: dt = {dt:e} exceeds the stability bound; suggested dt <= {suggested:e}")]
    StepRejected { dt: f64, suggested: f64 },

    #[error("blow-up at t = {t}: max |u| = {max_abs_u}")]
    BlowUp { t: f64, max_abs_u: f64 },

    #[error("{what} failed to converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence {
        what: String,
        residual: f64,
        iterations: usize,
    },

    #[error("overflow guard: {0}")]
    Overflow(String),

    #[error("operation requires a sphere background, got {0}")]
    SphereOnly(String),

    #[error("dilation parameter outside the open unit ball: |b| = {norm}")]
    ParameterDomain { norm: f64 },

    #[error("degenerate soliton profile: {0}")]
    DegenerateProfile(String),

    #[error("invalid soliton profile: {0}")]
    InvalidProfile(String),
}
