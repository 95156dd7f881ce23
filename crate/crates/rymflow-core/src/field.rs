//! Evolving state (u, psi) and pointwise quantities of the metric e^u g0.
//!
//! The conformal factor u and the curvature density psi (the background Hodge
//! dual of the bundle curvature two-form, F = psi dV0) together determine
//! every geometric quantity of the evolving metric.  All derived fields are
//! computed against the fixed background operators.

use std::sync::Arc;

use crate::error::{FlowError, Result};
use crate::grid::{BackgroundGeometry, ScalarField, SurfaceKind};

/// Which metric the curvature norm |F|^2 refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Background,
    Evolving,
}

/// Snapshot of the evolving pair at one instant.
#[derive(Debug, Clone)]
pub struct FlowState {
    bg: Arc<BackgroundGeometry>,
    u: ScalarField,
    psi: ScalarField,
    t: f64,
}

impl FlowState {
    pub fn new(
        bg: Arc<BackgroundGeometry>,
        u: ScalarField,
        psi: ScalarField,
        t: f64,
    ) -> Result<FlowState> {
        bg.check_binding(&u)?;
        bg.check_binding(&psi)?;
        if !u.is_finite() || !psi.is_finite() {
            return Err(FlowError::InvalidState(
                "non-finite value in state fields".into(),
            ));
        }
        if !t.is_finite() {
            return Err(FlowError::InvalidState(format!("non-finite time {t}")));
        }
        Ok(FlowState { bg, u, psi, t })
    }

    pub fn background(&self) -> &Arc<BackgroundGeometry> {
        &self.bg
    }

    pub fn u(&self) -> &ScalarField {
        &self.u
    }

    pub fn psi(&self) -> &ScalarField {
        &self.psi
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn with_time(mut self, t: f64) -> FlowState {
        self.t = t;
        self
    }

    /// Replaces u by u + c, rescaling the volume by e^c.
    pub fn shift_u(&self, c: f64) -> FlowState {
        FlowState {
            bg: Arc::clone(&self.bg),
            u: self.u.map(|v| v + c),
            psi: self.psi.clone(),
            t: self.t,
        }
    }

    /// Total area of the evolving metric.
    pub fn volume(&self) -> Result<f64> {
        let max_u = self.u.values().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if max_u > 700.0 {
            return Err(FlowError::InvalidState(format!(
                "e^u overflows: max(u) = {max_u}"
            )));
        }
        let eu = self.u.map(f64::exp);
        self.bg.integrate0(&eu)
    }

    /// De Rham pairing of F; constant along any trajectory.
    pub fn flux(&self) -> f64 {
        self.bg
            .integrate0(&self.psi)
            .expect("state fields are bound to their background")
    }

    /// Scalar curvature of the evolving metric.
    pub fn scalar_curvature(&self) -> Result<ScalarField> {
        let r0 = self.bg.scalar_curvature0();
        let lap_u = self.bg.laplacian0(&self.u)?;
        self.u.zip(&lap_u, |u, l| (-u).exp() * (r0 - l))
    }

    /// Pointwise squared norm of F in the chosen metric.
    pub fn f_norm_sq(&self, which: NormKind) -> ScalarField {
        match which {
            NormKind::Background => self.psi.map(|p| 2.0 * p * p),
            NormKind::Evolving => self
                .psi
                .zip(&self.u, |p, u| 2.0 * p * p * (-2.0 * u).exp())
                .expect("state fields share a background"),
        }
    }

    /// Bundles the derived pointwise quantities used by diagnostics.
    pub fn geometry_cache(&self) -> Result<GeometryCache> {
        let r = self.scalar_curvature()?;
        let norm_f2_bg = self.f_norm_sq(NormKind::Background);
        let norm_f2_g = self.f_norm_sq(NormKind::Evolving);
        let mut dvg_weights = Vec::with_capacity(self.u.len());
        for (&u, &w) in self.u.values().iter().zip(self.bg.quad_weights()) {
            dvg_weights.push(u.exp() * w);
        }
        let vol = self.volume()?;
        Ok(GeometryCache {
            r,
            norm_f2_bg,
            norm_f2_g,
            dvg_weights,
            vol,
        })
    }

    /// Max-norm deviation of g^{kl} F_ik F_jl from (|F|^2_g / 2) g_ij,
    /// assembled entry by entry in coordinates at every node.
    pub fn stress_identity_residual(&self) -> f64 {
        let n = self.u.len();
        let coords = self.bg.node_coords();
        let r0 = self.bg.r0();
        let mut worst = 0.0f64;
        for idx in 0..n {
            // Diagonal background metric in local coordinates.
            let (a0, b0) = match self.bg.kind() {
                SurfaceKind::Torus => (1.0, 1.0),
                SurfaceKind::Sphere => {
                    let st = coords[idx][0].sin();
                    (r0 * r0, r0 * r0 * st * st)
                }
            };
            let u = self.u.values()[idx];
            let psi = self.psi.values()[idx];
            let eu = u.exp();
            let g = [[eu * a0, 0.0], [0.0, eu * b0]];
            let ginv = [[1.0 / g[0][0], 0.0], [0.0, 1.0 / g[1][1]]];
            let sqrt_det0 = (a0 * b0).sqrt();
            let f12 = psi * sqrt_det0;
            let f = [[0.0, f12], [-f12, 0.0]];

            let mut norm_f2 = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        for l in 0..2 {
                            norm_f2 += ginv[i][k] * ginv[j][l] * f[i][j] * f[k][l];
                        }
                    }
                }
            }

            for i in 0..2 {
                for j in 0..2 {
                    let mut lhs = 0.0;
                    for k in 0..2 {
                        for l in 0..2 {
                            lhs += ginv[k][l] * f[i][k] * f[j][l];
                        }
                    }
                    let rhs = 0.5 * norm_f2 * g[i][j];
                    worst = worst.max((lhs - rhs).abs());
                }
            }
        }
        worst
    }
}

/// Derived pointwise quantities of one snapshot.
pub struct GeometryCache {
    /// Scalar curvature of g.
    pub r: ScalarField,
    /// |F|^2 against the background metric (2 psi^2).
    pub norm_f2_bg: ScalarField,
    /// |F|^2 against the evolving metric.
    pub norm_f2_g: ScalarField,
    /// Per-node area weights of g.
    pub dvg_weights: Vec<f64>,
    pub vol: f64,
}

impl GeometryCache {
    /// Quadrature against the evolving area measure.
    pub fn integrate_g(&self, f: &ScalarField) -> f64 {
        crate::grid::compensated_sum(
            f.values()
                .iter()
                .zip(&self.dvg_weights)
                .map(|(&v, &w)| v * w),
        )
    }
}
