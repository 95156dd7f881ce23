//! Conformal Ricci Yang-Mills flow on closed surfaces.
//!
//! The crate simulates the coupled evolution of a conformal factor and a
//! Yang-Mills curvature density on the flat torus and the round sphere, with
//! structure-preserving discretizations: exact discrete flux conservation,
//! a discretely exact energy dissipation identity, and a spectral gauge
//! resampler on the sphere.

pub mod config;
pub mod diagnostics;
pub mod driver;
pub mod eigen;
pub mod error;
pub mod field;
pub mod flow;
pub mod grid;
pub mod init;
pub mod mobius;
pub mod soliton;

pub use config::{InitialData, RunConfig};
pub use diagnostics::{
    conservation_residuals, energy_functional, min_volume_tracker, snapshot_record,
    ConservationRecord, DiagnosticsRecord, DissipationParts, MinVolumeReport, SobolevFamily,
};
pub use driver::{run, run_from, StopReason, Trajectory};
pub use eigen::{lowest_eigenvalue, lowest_eigenvalue_with, EigenOptions};
pub use error::{FlowError, Result};
pub use field::{FlowState, GeometryCache, NormKind};
pub use flow::{FlowVariant, StepScheme, StepperConfig};
pub use grid::{BackgroundGeometry, GeometryTag, ScalarField, SurfaceKind, SurfaceSpec};
pub use mobius::{center_of_mass, pullback, recenter, recenter_with, MoebiusParam, RecenterOptions};
pub use soliton::{SolitonProfile, SolitonReport, SolitonResiduals, SolitonVerdict};
