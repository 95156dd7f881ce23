//! Time integration of the conformal Ricci Yang-Mills flow.
//!
//! Two flow variants (unnormalized and volume-normalized) and two steppers: a
//! classic RK4 step guarded by an explicit stability bound, and a
//! semi-implicit scheme that treats the stiff diffusion with an integrating
//! factor in Fourier space on the torus and with per-mode tridiagonal solves
//! on the sphere.  The coefficient `e^{-u}` in front of the Laplacian is
//! frozen at its max (per latitude ring on the sphere) so the implicit part
//! over-damps and the remainder stays bounded by the conformal spread.

use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex;

use crate::error::{FlowError, Result};
use crate::field::FlowState;
use crate::grid::{BackgroundGeometry, ScalarField, SurfaceKind};

/// Which right-hand side drives the evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowVariant {
    Unnormalized,
    VolumeNormalized,
}

impl std::fmt::Display for FlowVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlowVariant::Unnormalized => write!(f, "unnormalized"),
            FlowVariant::VolumeNormalized => write!(f, "normalized"),
        }
    }
}

impl FromStr for FlowVariant {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<FlowVariant> {
        match s {
            "unnormalized" => Ok(FlowVariant::Unnormalized),
            "normalized" => Ok(FlowVariant::VolumeNormalized),
            other => Err(FlowError::InvalidArgument(format!(
                "unknown flow variant '{other}' (expected 'unnormalized' or 'normalized')"
            ))),
        }
    }
}

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepScheme {
    Rk4Explicit,
    SemiImplicitSpectral,
}

impl std::fmt::Display for StepScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepScheme::Rk4Explicit => write!(f, "rk4"),
            StepScheme::SemiImplicitSpectral => write!(f, "semi-implicit"),
        }
    }
}

impl FromStr for StepScheme {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<StepScheme> {
        match s {
            "rk4" => Ok(StepScheme::Rk4Explicit),
            "semi-implicit" => Ok(StepScheme::SemiImplicitSpectral),
            other => Err(FlowError::InvalidArgument(format!(
                "unknown step scheme '{other}' (expected 'rk4' or 'semi-implicit')"
            ))),
        }
    }
}

/// Stepper knobs shared by both schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub scheme: StepScheme,
    pub cfl_safety: f64,
    pub dt_max: f64,
    pub dt_min: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            scheme: StepScheme::SemiImplicitSpectral,
            cfl_safety: 0.4,
            dt_max: 2e-3,
            dt_min: 1e-12,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(FlowError::InvalidArgument(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if !(self.dt_min > 0.0 && self.dt_min.is_finite()) {
            return Err(FlowError::InvalidArgument(format!(
                "dt_min must be positive, got {}",
                self.dt_min
            )));
        }
        if !(self.dt_max >= self.dt_min && self.dt_max.is_finite()) {
            return Err(FlowError::InvalidArgument(format!(
                "dt_max must be finite and at least dt_min, got {}",
                self.dt_max
            )));
        }
        Ok(())
    }
}

/// Evaluates both evolution equations at the current state.
///
/// Returns `(du_dt, dpsi_dt)` as fields on the background grid.  The
/// normalized variant refuses states whose volume has drifted outside
/// `[0.99, 1.01]`, since the projection step is supposed to keep it pinned.
pub fn rhs(state: &FlowState, variant: FlowVariant) -> Result<(ScalarField, ScalarField)> {
    let bg = state.background();
    let emu = state.u().map(|v| (-v).exp());
    let lap_u = bg.laplacian0(state.u())?;
    let du = assemble_rhs_u(state, variant, &emu, &lap_u)?;
    let emu_psi = state.psi().zip(&emu, |p, e| p * e)?;
    let dpsi = bg.laplacian0(&emu_psi)?;
    Ok((du, dpsi))
}

fn assemble_rhs_u(
    state: &FlowState,
    variant: FlowVariant,
    emu: &ScalarField,
    lap_u: &ScalarField,
) -> Result<ScalarField> {
    let bg = state.background();
    let r0 = bg.scalar_curvature0();
    let psi = state.psi();
    match variant {
        FlowVariant::Unnormalized => {
            let mut out = lap_u.map(|v| v - r0);
            out = out.zip(emu, |a, e| a * e)?;
            let reaction = psi.zip(emu, |p, e| p * p * e * e)?;
            out.axpy(1.0, &reaction)?;
            Ok(out)
        }
        FlowVariant::VolumeNormalized => {
            let vol = state.volume()?;
            if !(0.99..=1.01).contains(&vol) {
                return Err(FlowError::VolumeGuard { volume: vol });
            }
            let mut out = lap_u.zip(emu, |l, e| l * e)?;
            let reaction = emu.zip(psi, |e, p| r0 * (1.0 - e) + e * e * p * p)?;
            out.axpy(1.0, &reaction)?;
            let weighted = out.zip(emu, |v, e| v / e)?;
            let mean_term = bg.integrate0(&weighted)? / vol;
            Ok(out.map(|v| v - mean_term))
        }
    }
}

/// Largest RK4 step the explicit stability bound allows at this state.
pub fn rk4_dt_bound(state: &FlowState, cfl_safety: f64) -> f64 {
    let h = state.background().min_spacing();
    let mu_max = (-state.u().values().iter().cloned().fold(f64::INFINITY, f64::min)).exp();
    cfl_safety * h * h / (4.0 * mu_max)
}

/// Picks a time step for the configured scheme from the current state.
///
/// The choice is a pure function of the state, which keeps resumed runs on
/// the same step sequence as uninterrupted ones.
pub fn choose_dt(state: &FlowState, variant: FlowVariant, cfg: &StepperConfig) -> Result<f64> {
    cfg.validate()?;
    let dt = match cfg.scheme {
        StepScheme::Rk4Explicit => rk4_dt_bound(state, cfg.cfl_safety).min(cfg.dt_max),
        StepScheme::SemiImplicitSpectral => {
            let rho = stiffness_remainder(state, variant)?;
            if rho <= 0.0 {
                cfg.dt_max
            } else {
                (cfg.cfl_safety * 2.0 / rho).min(cfg.dt_max)
            }
        }
    };
    Ok(dt.max(cfg.dt_min))
}

/// Spectral-radius style bound on the part of the dynamics the implicit
/// solve does not absorb: conformal spread times the grid Laplacian scale,
/// plus the reaction terms.
fn stiffness_remainder(state: &FlowState, variant: FlowVariant) -> Result<f64> {
    let bg = state.background();
    let u = state.u().values();
    let psi = state.psi().values();
    let r0 = bg.scalar_curvature0();
    let (rows, cols) = bg.shape();
    let diff = match bg.kind() {
        SurfaceKind::Torus => {
            let n = rows as f64;
            let lam = 2.0 * std::f64::consts::PI * std::f64::consts::PI * n * n;
            let min_u = u.iter().cloned().fold(f64::INFINITY, f64::min);
            let max_u = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ((-min_u).exp() - (-max_u).exp()) * lam
        }
        SurfaceKind::Sphere => {
            let ops = bg.sphere_ops().expect("sphere background has sphere ops");
            let kmax2 = (ops.n_lat * ops.n_lat) as f64;
            let mmax2 = (ops.n_lon * ops.n_lon) as f64 / 4.0;
            let mut worst: f64 = 0.0;
            for i in 0..rows {
                let ring = &u[i * cols..(i + 1) * cols];
                let min_u = ring.iter().cloned().fold(f64::INFINITY, f64::min);
                let max_u = ring.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let spread = (-min_u).exp() - (-max_u).exp();
                let st = ops.sin_theta[i];
                let lam = ops.inv_r0_sq * (kmax2 + mmax2 / (st * st));
                worst = worst.max(spread * lam);
            }
            worst
        }
    };
    let mu_max = (-u.iter().cloned().fold(f64::INFINITY, f64::min)).exp();
    let mut react_max: f64 = 0.0;
    for (uv, pv) in u.iter().zip(psi) {
        let e = (-uv).exp();
        react_max = react_max.max(e * e * pv * pv);
    }
    let _ = variant;
    Ok(diff + r0 * mu_max + 2.0 * react_max)
}

/// Advances the state by one time step.
///
/// RK4 rejects steps beyond its stability bound with a suggested size; the
/// semi-implicit scheme accepts any positive step.  Non-finite values coming
/// out of a step surface as a blow-up error stamped with the failure time.
pub fn step(
    state: &FlowState,
    dt: f64,
    variant: FlowVariant,
    cfg: &StepperConfig,
) -> Result<FlowState> {
    cfg.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FlowError::InvalidArgument(format!(
            "step size must be positive and finite, got {dt}"
        )));
    }
    match cfg.scheme {
        StepScheme::Rk4Explicit => {
            let bound = rk4_dt_bound(state, cfg.cfl_safety);
            if dt > bound * (1.0 + 1e-9) {
                return Err(FlowError::StepRejected {
                    dt,
                    suggested: bound,
                });
            }
            rk4_step(state, dt, variant)
        }
        StepScheme::SemiImplicitSpectral => match state.background().kind() {
            SurfaceKind::Torus => torus_semi_implicit_step(state, dt, variant),
            SurfaceKind::Sphere => sphere_semi_implicit_step(state, dt, variant),
        },
    }
}

fn rk4_step(state: &FlowState, dt: f64, variant: FlowVariant) -> Result<FlowState> {
    let t_next = state.t() + dt;
    let stage = |cu: f64, ku: &ScalarField, kp: &ScalarField| -> Result<FlowState> {
        let mut u = state.u().clone();
        u.axpy(cu, ku)?;
        let mut psi = state.psi().clone();
        psi.axpy(cu, kp)?;
        finish_step(state.background(), u.into_values(), psi.into_values(), t_next, state.t())
    };
    let (k1u, k1p) = rhs(state, variant)?;
    let s1 = stage(0.5 * dt, &k1u, &k1p)?;
    let (k2u, k2p) = rhs(&s1, variant)?;
    let s2 = stage(0.5 * dt, &k2u, &k2p)?;
    let (k3u, k3p) = rhs(&s2, variant)?;
    let s3 = stage(dt, &k3u, &k3p)?;
    let (k4u, k4p) = rhs(&s3, variant)?;
    let sixth = dt / 6.0;
    let mut u = state.u().clone();
    u.axpy(sixth, &k1u)?;
    u.axpy(2.0 * sixth, &k2u)?;
    u.axpy(2.0 * sixth, &k3u)?;
    u.axpy(sixth, &k4u)?;
    let mut psi = state.psi().clone();
    psi.axpy(sixth, &k1p)?;
    psi.axpy(2.0 * sixth, &k2p)?;
    psi.axpy(2.0 * sixth, &k3p)?;
    psi.axpy(sixth, &k4p)?;
    finish_step(state.background(), u.into_values(), psi.into_values(), t_next, state.t())
}

fn finish_step(
    bg: &Arc<BackgroundGeometry>,
    u: Vec<f64>,
    psi: Vec<f64>,
    t_next: f64,
    t_fail: f64,
) -> Result<FlowState> {
    let finite = u.iter().chain(psi.iter()).all(|v| v.is_finite());
    if !finite {
        let max_abs_u = u
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        return Err(FlowError::BlowUp {
            t: t_fail,
            max_abs_u: if max_abs_u == 0.0 {
                f64::INFINITY
            } else {
                max_abs_u
            },
        });
    }
    let state = FlowState::new(
        bg.clone(),
        bg.from_values(u)?,
        bg.from_values(psi)?,
        t_next,
    )?;
    Ok(state)
}

fn torus_semi_implicit_step(state: &FlowState, dt: f64, variant: FlowVariant) -> Result<FlowState> {
    let bg = state.background();
    let spectral = bg.torus_spectral().expect("torus background has spectral ops");
    let n = spectral.n;
    let emu = state.u().map(|v| (-v).exp());
    let lap_u = bg.laplacian0(state.u())?;
    let du_phys = assemble_rhs_u(state, variant, &emu, &lap_u)?;
    let emu_psi = state.psi().zip(&emu, |p, e| p * e)?;
    let mu = emu.values().iter().cloned().fold(0.0f64, f64::max);

    let u_hat = spectral.forward2(state.u().values());
    let p_hat = spectral.forward2(state.psi().values());
    let w_hat = spectral.forward2(emu_psi.values());
    let d_hat = spectral.forward2(du_phys.values());

    let mut u_next = vec![Complex::new(0.0, 0.0); n * n];
    let mut p_next = vec![Complex::new(0.0, 0.0); n * n];
    for r in 0..n {
        let kr = spectral.wavenumber[r];
        for c in 0..n {
            let kc = spectral.wavenumber[c];
            let k2 = kr * kr + kc * kc;
            let decay = (-dt * mu * k2).exp();
            let idx = r * n + c;
            let nu = d_hat[idx] + u_hat[idx] * (mu * k2);
            u_next[idx] = (u_hat[idx] + nu * dt) * decay;
            let np = w_hat[idx] * (-k2) + p_hat[idx] * (mu * k2);
            p_next[idx] = (p_hat[idx] + np * dt) * decay;
        }
    }
    let u_vals = spectral.inverse2_real(u_next);
    let p_vals = spectral.inverse2_real(p_next);
    finish_step(bg, u_vals, p_vals, state.t() + dt, state.t())
}

fn sphere_semi_implicit_step(state: &FlowState, dt: f64, variant: FlowVariant) -> Result<FlowState> {
    let bg = state.background();
    let ops = bg.sphere_ops().expect("sphere background has sphere ops");
    let (n_lat, n_lon) = (ops.n_lat, ops.n_lon);
    let dth2 = ops.dtheta * ops.dtheta;

    let u = state.u().values();
    let psi = state.psi().values();
    let mut mu = vec![0.0f64; n_lat];
    for i in 0..n_lat {
        mu[i] = u[i * n_lon..(i + 1) * n_lon]
            .iter()
            .fold(0.0f64, |m, v| m.max((-v).exp()));
    }
    let mu_field = bg.from_fn(|_| 0.0);
    let mut mu_vals = mu_field.into_values();
    for i in 0..n_lat {
        for j in 0..n_lon {
            mu_vals[i * n_lon + j] = mu[i];
        }
    }
    let mu_field = bg.from_values(mu_vals)?;

    let emu = state.u().map(|v| (-v).exp());
    let lap_u = bg.laplacian0(state.u())?;
    let lap_u_stab = bg.fd_laplacian0(state.u())?;
    let du_phys = assemble_rhs_u(state, variant, &emu, &lap_u)?;
    let emu_psi = state.psi().zip(&emu, |p, e| p * e)?;
    let dpsi_phys = bg.laplacian0(&emu_psi)?;
    let mu_psi = state.psi().zip(&mu_field, |p, m| p * m)?;
    let lap_mu_psi = bg.fd_laplacian0(&mu_psi)?;

    let mut b_u = vec![0.0f64; n_lat * n_lon];
    let mut b_p = vec![0.0f64; n_lat * n_lon];
    for i in 0..n_lat {
        for j in 0..n_lon {
            let idx = i * n_lon + j;
            b_u[idx] = u[idx] + dt * (du_phys.values()[idx] - mu[i] * lap_u_stab.values()[idx]);
            b_p[idx] = psi[idx] + dt * (dpsi_phys.values()[idx] - lap_mu_psi.values()[idx]);
        }
    }

    let hat_u = rows_to_modes(&b_u, n_lat, n_lon, ops.fft_phi_fwd);
    let hat_p = rows_to_modes(&b_p, n_lat, n_lon, ops.fft_phi_fwd);

    let mut sol_u = vec![Complex::new(0.0, 0.0); n_lat * n_lon];
    let mut sol_p = vec![Complex::new(0.0, 0.0); n_lat * n_lon];
    for m in 0..n_lon {
        let nu_m = ops.nu[m];
        let mut dl_u = vec![0.0f64; n_lat - 1];
        let mut d_u = vec![0.0f64; n_lat];
        let mut du_u = vec![0.0f64; n_lat - 1];
        let mut dl_p = vec![0.0f64; n_lat - 1];
        let mut d_p = vec![0.0f64; n_lat];
        let mut du_p = vec![0.0f64; n_lat - 1];
        for i in 0..n_lat {
            let st = ops.sin_theta[i];
            let theta_scale = 1.0 / (st * dth2);
            let ring_op = (ops.sin_face[i] + ops.sin_face[i + 1]) * theta_scale + nu_m / (st * st);
            d_u[i] = 1.0 + dt * mu[i] * ops.inv_r0_sq * ring_op;
            d_p[i] = 1.0 + dt * mu[i] * ops.inv_r0_sq * ring_op;
            if i > 0 {
                dl_u[i - 1] = -dt * mu[i] * ops.inv_r0_sq * ops.sin_face[i] * theta_scale;
                dl_p[i - 1] = -dt * ops.inv_r0_sq * ops.sin_face[i] * mu[i - 1] * theta_scale;
            }
            if i + 1 < n_lat {
                du_u[i] = -dt * mu[i] * ops.inv_r0_sq * ops.sin_face[i + 1] * theta_scale;
                du_p[i] = -dt * ops.inv_r0_sq * ops.sin_face[i + 1] * mu[i + 1] * theta_scale;
            }
        }
        let lu_u = TriLu::factor(dl_u, d_u, du_u)?;
        let lu_p = TriLu::factor(dl_p, d_p, du_p)?;
        let mut col_u: Vec<Complex<f64>> = (0..n_lat).map(|i| hat_u[i * n_lon + m]).collect();
        let mut col_p: Vec<Complex<f64>> = (0..n_lat).map(|i| hat_p[i * n_lon + m]).collect();
        lu_u.solve(&mut col_u);
        lu_p.solve(&mut col_p);
        for i in 0..n_lat {
            sol_u[i * n_lon + m] = col_u[i];
            sol_p[i * n_lon + m] = col_p[i];
        }
    }

    let u_vals = modes_to_rows(&sol_u, n_lat, n_lon, ops.fft_phi_inv);
    let mut p_vals = modes_to_rows(&sol_p, n_lat, n_lon, ops.fft_phi_inv);
    let flux_before = bg.integrate0(state.psi())?;
    let psi_step = bg.from_values(p_vals)?;
    let shift = flux_before - bg.integrate0(&psi_step)?;
    p_vals = psi_step.into_values();
    for v in p_vals.iter_mut() {
        *v += shift;
    }
    finish_step(bg, u_vals, p_vals, state.t() + dt, state.t())
}

pub(crate) fn rows_to_modes(
    values: &[f64],
    n_lat: usize,
    n_lon: usize,
    fft: &Arc<dyn rustfft::Fft<f64>>,
) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); n_lat * n_lon];
    let mut buf = vec![Complex::new(0.0, 0.0); n_lon];
    for i in 0..n_lat {
        for j in 0..n_lon {
            buf[j] = Complex::new(values[i * n_lon + j], 0.0);
        }
        fft.process(&mut buf);
        out[i * n_lon..(i + 1) * n_lon].copy_from_slice(&buf);
    }
    out
}

pub(crate) fn modes_to_rows(
    modes: &[Complex<f64>],
    n_lat: usize,
    n_lon: usize,
    fft: &Arc<dyn rustfft::Fft<f64>>,
) -> Vec<f64> {
    let mut out = vec![0.0f64; n_lat * n_lon];
    let mut buf = vec![Complex::new(0.0, 0.0); n_lon];
    let scale = 1.0 / n_lon as f64;
    for i in 0..n_lat {
        buf.copy_from_slice(&modes[i * n_lon..(i + 1) * n_lon]);
        fft.process(&mut buf);
        for j in 0..n_lon {
            out[i * n_lon + j] = buf[j].re * scale;
        }
    }
    out
}

/// Tridiagonal LU factorization with partial pivoting, after LAPACK's gttrf.
pub(crate) struct TriLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl TriLu {
    pub(crate) fn factor(mut dl: Vec<f64>, mut d: Vec<f64>, mut du: Vec<f64>) -> Result<TriLu> {
        let n = d.len();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    return Err(FlowError::InvalidState(
                        "implicit step matrix is singular".into(),
                    ));
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        if d[n - 1] == 0.0 {
            return Err(FlowError::InvalidState(
                "implicit step matrix is singular".into(),
            ));
        }
        Ok(TriLu {
            dl,
            d,
            du,
            du2,
            swapped,
        })
    }

    pub(crate) fn solve(&self, b: &mut [Complex<f64>]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if !self.swapped[i] {
                let t = b[i];
                b[i + 1] -= t * self.dl[i];
            } else {
                let t = b[i];
                b[i] = b[i + 1];
                b[i + 1] = t - b[i + 1] * self.dl[i];
            }
        }
        b[n - 1] = b[n - 1] / self.d[n - 1];
        if n >= 2 {
            b[n - 2] = (b[n - 2] - b[n - 1] * self.du[n - 2]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - b[i + 1] * self.du[i] - b[i + 2] * self.du2[i]) / self.d[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{random_band_limited, torus_modes_field, RandomFieldSpec, TorusMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn torus_state(n: usize, seed: u64, amp_u: f64, amp_psi: f64, kmax: usize) -> FlowState {
        let bg = Arc::new(BackgroundGeometry::torus(n).unwrap());
        let u = random_band_limited(
            &bg,
            &RandomFieldSpec {
                seed,
                max_wavenumber: kmax,
                amplitude: amp_u,
            },
        );
        let psi = random_band_limited(
            &bg,
            &RandomFieldSpec {
                seed: seed.wrapping_add(101),
                max_wavenumber: kmax,
                amplitude: amp_psi,
            },
        );
        FlowState::new(bg, u, psi, 0.0).unwrap()
    }

    fn sphere_state(n_lat: usize, n_lon: usize, seed: u64, amp: f64) -> FlowState {
        let bg = Arc::new(BackgroundGeometry::sphere(n_lat, n_lon).unwrap());
        let u = random_band_limited(
            &bg,
            &RandomFieldSpec {
                seed,
                max_wavenumber: 3,
                amplitude: amp,
            },
        );
        let psi = random_band_limited(
            &bg,
            &RandomFieldSpec {
                seed: seed.wrapping_add(7),
                max_wavenumber: 3,
                amplitude: amp,
            },
        );
        FlowState::new(bg, u, psi, 0.0).unwrap()
    }

    fn max_diff(a: &FlowState, b: &FlowState) -> f64 {
        let du = a
            .u()
            .values()
            .iter()
            .zip(b.u().values())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let dp = a
            .psi()
            .values()
            .iter()
            .zip(b.psi().values())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        du.max(dp)
    }

    #[test]
    fn flat_torus_is_stationary() {
        let bg = Arc::new(BackgroundGeometry::torus(16).unwrap());
        let state = FlowState::new(bg.clone(), bg.zeros(), bg.zeros(), 0.0).unwrap();
        for variant in [FlowVariant::Unnormalized, FlowVariant::VolumeNormalized] {
            let (du, dp) = rhs(&state, variant).unwrap();
            assert_eq!(du.max_abs(), 0.0);
            assert_eq!(dp.max_abs(), 0.0);
        }
        for scheme in [StepScheme::Rk4Explicit, StepScheme::SemiImplicitSpectral] {
            let cfg = StepperConfig {
                scheme,
                ..StepperConfig::default()
            };
            let dt = choose_dt(&state, FlowVariant::Unnormalized, &cfg)
                .unwrap()
                .min(rk4_dt_bound(&state, cfg.cfl_safety));
            let next = step(&state, dt, FlowVariant::Unnormalized, &cfg).unwrap();
            assert!(next.u().max_abs() < 1e-15);
            assert!(next.psi().max_abs() < 1e-15);
            assert!((next.t() - dt).abs() < 1e-18);
        }
    }

    #[test]
    fn round_sphere_with_matching_flux_is_stationary() {
        let bg = Arc::new(BackgroundGeometry::sphere(16, 32).unwrap());
        let psi0 = (8.0 * PI).sqrt();
        let state = FlowState::new(bg.clone(), bg.zeros(), bg.constant(psi0), 0.0).unwrap();
        let (du, dp) = rhs(&state, FlowVariant::Unnormalized).unwrap();
        assert!(du.max_abs() < 1e-12, "du sup {}", du.max_abs());
        assert_eq!(dp.max_abs(), 0.0);
        let cfg = StepperConfig::default();
        let mut s = state;
        for _ in 0..20 {
            s = step(&s, 1e-4, FlowVariant::Unnormalized, &cfg).unwrap();
        }
        assert!(s.u().max_abs() < 1e-12);
        assert!((s.psi().max_abs() - psi0).abs() < 1e-12);
    }

    #[test]
    fn uniform_torus_flux_expands_metric() {
        let bg = Arc::new(BackgroundGeometry::torus(16).unwrap());
        let c = 0.7;
        let state = FlowState::new(bg.clone(), bg.zeros(), bg.constant(c), 0.0).unwrap();
        let (du, dp) = rhs(&state, FlowVariant::Unnormalized).unwrap();
        for v in du.values() {
            assert!((v - c * c).abs() < 1e-14);
        }
        assert_eq!(dp.max_abs(), 0.0);
    }

    #[test]
    fn heat_limit_matches_linear_decay() {
        // Tiny data on the torus decays mode by mode like the heat equation;
        // the nonlinear coupling enters only at second order in the size.
        let n = 32;
        let eps = 1e-3;
        let bg = Arc::new(BackgroundGeometry::torus(n).unwrap());
        let mode = |amp: f64| {
            torus_modes_field(
                &bg,
                &[TorusMode {
                    kx: 1,
                    ky: 0,
                    cos_amp: amp,
                    sin_amp: 0.0,
                }],
            )
            .unwrap()
        };
        let state = FlowState::new(bg.clone(), mode(eps), mode(0.5 * eps), 0.0).unwrap();
        let t_end: f64 = 0.05;
        let k2 = 4.0 * PI * PI;

        for (scheme, dt) in [
            (StepScheme::Rk4Explicit, 2e-5),
            (StepScheme::SemiImplicitSpectral, 1e-4),
        ] {
            let cfg = StepperConfig {
                scheme,
                ..StepperConfig::default()
            };
            let mut s = state.clone();
            let steps = (t_end / dt).round() as usize;
            for _ in 0..steps {
                s = step(&s, dt, FlowVariant::Unnormalized, &cfg).unwrap();
            }
            let decay = (-k2 * t_end).exp();
            let exact_u = mode(eps * decay);
            let exact_p = mode(0.5 * eps * decay);
            let eu = s
                .u()
                .values()
                .iter()
                .zip(exact_u.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let ep = s
                .psi()
                .values()
                .iter()
                .zip(exact_p.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(eu < 2e-5, "{scheme:?}: u deviates from heat decay by {eu}");
            assert!(ep < 2e-5, "{scheme:?}: psi deviates from heat decay by {ep}");
        }
    }

    #[test]
    fn rk4_self_convergence_is_fourth_order() {
        let state = torus_state(16, 5, 0.1, 0.1, 2);
        let cfg = StepperConfig {
            scheme: StepScheme::Rk4Explicit,
            ..StepperConfig::default()
        };
        let run = |dt: f64, steps: usize| {
            let mut s = state.clone();
            for _ in 0..steps {
                s = step(&s, dt, FlowVariant::Unnormalized, &cfg).unwrap();
            }
            s
        };
        let dt = 2e-4;
        let reference = run(dt / 16.0, 256);
        let coarse = max_diff(&run(dt, 16), &reference);
        let fine = max_diff(&run(dt / 2.0, 32), &reference);
        let ratio = coarse / fine;
        assert!(
            (10.0..26.0).contains(&ratio),
            "expected ~16x error drop per halving, got {ratio} (coarse {coarse}, fine {fine})"
        );
    }

    #[test]
    fn semi_implicit_agrees_with_rk4_on_torus() {
        let state = torus_state(32, 11, 0.1, 0.1, 3);
        let t_end: f64 = 1e-3;
        let run = |scheme: StepScheme, dt: f64| {
            let cfg = StepperConfig {
                scheme,
                ..StepperConfig::default()
            };
            let mut s = state.clone();
            let steps = (t_end / dt).round() as usize;
            for _ in 0..steps {
                s = step(&s, dt, FlowVariant::VolumeNormalized, &cfg).unwrap();
            }
            s
        };
        let reference = run(StepScheme::Rk4Explicit, 1e-5);
        let d_coarse = max_diff(&run(StepScheme::SemiImplicitSpectral, 2e-5), &reference);
        let d_fine = max_diff(&run(StepScheme::SemiImplicitSpectral, 1e-5), &reference);
        assert!(d_coarse < 1e-3, "coarse mismatch {d_coarse}");
        assert!(
            d_coarse / d_fine > 1.6,
            "first-order convergence to the RK4 limit: {d_coarse} vs {d_fine}"
        );
    }

    #[test]
    fn semi_implicit_agrees_with_rk4_on_sphere() {
        let state = sphere_state(16, 32, 3, 0.05);
        let dt = 2e-6;
        let steps = 50;
        let run = |scheme: StepScheme| {
            let cfg = StepperConfig {
                scheme,
                ..StepperConfig::default()
            };
            let mut s = state.clone();
            for _ in 0..steps {
                s = step(&s, dt, FlowVariant::Unnormalized, &cfg).unwrap();
            }
            s
        };
        let d = max_diff(
            &run(StepScheme::Rk4Explicit),
            &run(StepScheme::SemiImplicitSpectral),
        );
        assert!(d < 1e-6, "schemes diverge by {d}");
    }

    #[test]
    fn normalized_rhs_preserves_volume_and_flux() {
        for state in [torus_state(32, 17, 0.2, 0.3, 3), sphere_state(16, 32, 9, 0.15)] {
            let vol = state.volume().unwrap();
            let state = state.shift_u(-vol.ln());
            let (du, dp) = rhs(&state, FlowVariant::VolumeNormalized).unwrap();
            let bg = state.background();
            let weighted = du.zip(&state.u().map(|v| v.exp()), |a, e| a * e).unwrap();
            let vol_rate = bg.integrate0(&weighted).unwrap();
            assert!(vol_rate.abs() < 1e-12, "volume rate {vol_rate}");
            let flux_rate = bg.integrate0(&dp).unwrap();
            assert!(flux_rate.abs() < 1e-12, "flux rate {flux_rate}");
        }
    }

    #[test]
    fn normalized_rhs_guards_volume_window() {
        let bg = Arc::new(BackgroundGeometry::torus(16).unwrap());
        let state = FlowState::new(bg.clone(), bg.constant(0.05), bg.zeros(), 0.0).unwrap();
        match rhs(&state, FlowVariant::VolumeNormalized) {
            Err(FlowError::VolumeGuard { volume }) => assert!(volume > 1.01),
            other => panic!("expected volume guard, got {other:?}"),
        }
    }

    #[test]
    fn rk4_rejects_unstable_step() {
        let state = torus_state(32, 2, 0.1, 0.1, 2);
        let cfg = StepperConfig {
            scheme: StepScheme::Rk4Explicit,
            ..StepperConfig::default()
        };
        let bound = rk4_dt_bound(&state, cfg.cfl_safety);
        match step(&state, 10.0 * bound, FlowVariant::Unnormalized, &cfg) {
            Err(FlowError::StepRejected { dt, suggested }) => {
                assert!((dt - 10.0 * bound).abs() < 1e-18);
                assert!(suggested <= bound * (1.0 + 1e-12));
            }
            other => panic!("expected step rejection, got {other:?}"),
        }
    }

    #[test]
    fn flow_variants_are_not_reparametrizations() {
        // With strong flux the normalized flow is not just the unnormalized
        // one shifted by a constant: the unnormalized volume growth slows its
        // shape relaxation, so the centered conformal factors still disagree
        // at t = 1 while the normalized run has flattened out.
        let bg = Arc::new(BackgroundGeometry::torus(16).unwrap());
        let u = random_band_limited(
            &bg,
            &RandomFieldSpec {
                seed: 23,
                max_wavenumber: 3,
                amplitude: 0.3,
            },
        );
        let pert = random_band_limited(
            &bg,
            &RandomFieldSpec {
                seed: 24,
                max_wavenumber: 3,
                amplitude: 0.3,
            },
        );
        let psi = pert.map(|v| v + 4.0);
        let state = FlowState::new(bg.clone(), u, psi, 0.0).unwrap();
        let state = state.shift_u(-state.volume().unwrap().ln());
        let cfg = StepperConfig::default();
        let run = |variant: FlowVariant| {
            let mut s = state.clone();
            while s.t() < 1.0 - 1e-12 {
                let dt = choose_dt(&s, variant, &cfg)
                    .unwrap()
                    .min(1.0 - s.t())
                    .max(cfg.dt_min);
                s = step(&s, dt, variant, &cfg).unwrap();
                if variant == FlowVariant::VolumeNormalized {
                    let vol = s.volume().unwrap();
                    s = s.shift_u(-vol.ln());
                }
            }
            s
        };
        let a = run(FlowVariant::Unnormalized);
        let b = run(FlowVariant::VolumeNormalized);
        let mean = |s: &FlowState| bg.integrate0(s.u()).unwrap();
        let ma = mean(&a);
        let mb = mean(&b);
        let centered_gap = a
            .u()
            .values()
            .iter()
            .zip(b.u().values())
            .fold(0.0f64, |m, (x, y)| m.max(((x - ma) - (y - mb)).abs()));
        assert!(
            centered_gap > 1e-6,
            "centered profiles coincide to {centered_gap}"
        );
    }

    #[test]
    fn torus_semi_implicit_conserves_flux_to_rounding() {
        let state = torus_state(32, 31, 0.2, 0.3, 4);
        let cfg = StepperConfig::default();
        let flux0 = state.flux();
        let mut s = state;
        for _ in 0..2000 {
            s = step(&s, 1e-4, FlowVariant::Unnormalized, &cfg).unwrap();
        }
        assert!(
            (s.flux() - flux0).abs() < 1e-12,
            "flux drifted by {}",
            (s.flux() - flux0).abs()
        );
    }

    #[test]
    fn sphere_semi_implicit_conserves_flux() {
        let state = sphere_state(16, 32, 41, 0.2);
        let cfg = StepperConfig::default();
        let flux0 = state.flux();
        let mut s = state;
        for _ in 0..500 {
            let dt = choose_dt(&s, FlowVariant::Unnormalized, &cfg).unwrap();
            s = step(&s, dt, FlowVariant::Unnormalized, &cfg).unwrap();
        }
        assert!(s.t() > 1e-3, "adaptive steps stalled at t = {}", s.t());
        assert!(
            (s.flux() - flux0).abs() < 1e-10,
            "flux drifted by {}",
            (s.flux() - flux0).abs()
        );
    }

    #[test]
    fn chosen_steps_are_deterministic_and_positive() {
        let state = sphere_state(16, 32, 8, 0.3);
        for scheme in [StepScheme::Rk4Explicit, StepScheme::SemiImplicitSpectral] {
            let cfg = StepperConfig {
                scheme,
                ..StepperConfig::default()
            };
            let a = choose_dt(&state, FlowVariant::Unnormalized, &cfg).unwrap();
            let b = choose_dt(&state, FlowVariant::Unnormalized, &cfg).unwrap();
            assert_eq!(a, b);
            assert!(a > 0.0 && a <= cfg.dt_max);
        }
    }

    #[test]
    fn tridiagonal_solver_handles_pivoting() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let n = rng.gen_range(3..40);
            let dl: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let du: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-2.0..2.0)).collect();
            // Occasionally weak diagonals force row interchanges.
            let d: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.3) {
                        rng.gen_range(-0.1..0.1)
                    } else {
                        rng.gen_range(1.5..4.0)
                    }
                })
                .collect();
            let x: Vec<Complex<f64>> = (0..n)
                .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let mut b = vec![Complex::new(0.0, 0.0); n];
            for i in 0..n {
                b[i] = x[i] * d[i];
                if i > 0 {
                    b[i] += x[i - 1] * dl[i - 1];
                }
                if i + 1 < n {
                    b[i] += x[i + 1] * du[i];
                }
            }
            let lu = match TriLu::factor(dl, d, du) {
                Ok(lu) => lu,
                Err(_) => continue,
            };
            lu.solve(&mut b);
            for i in 0..n {
                assert!(
                    (b[i] - x[i]).norm() < 1e-9,
                    "row {i}: {} vs {}",
                    b[i],
                    x[i]
                );
            }
        }
    }
}
