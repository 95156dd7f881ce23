//! Lowest eigenvalue of the stability operator around a flow state.
//!
//! The generalized flat form is solved: minimize the Rayleigh quotient of
//! `H v = -4 lap0 v + V v` against the conformal mass `e^u`, where
//! `V = R0 - lap0 u - e^{-u} psi^2 / 2`.  A preconditioned steepest descent
//! with an exact two-dimensional line search starts from the constant field,
//! so results are reproducible across resumed runs.

use rustfft::num_complex::Complex;

use crate::error::{FlowError, Result};
use crate::field::FlowState;
use crate::flow::{modes_to_rows, rows_to_modes, TriLu};
use crate::grid::{compensated_sum, BackgroundGeometry, ScalarField, SurfaceKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-9,
            max_iter: 5000,
        }
    }
}

/// Normalized node weights of the inner product in which the flux-form
/// operator is symmetric: ring-area weights on the sphere, uniform on the
/// torus.
pub(crate) fn flux_form_weights(bg: &BackgroundGeometry, n_nodes: usize) -> Vec<f64> {
    match bg.sphere_ops() {
        None => vec![1.0 / n_nodes as f64; n_nodes],
        Some(ops) => {
            let mut w = Vec::with_capacity(n_nodes);
            for i in 0..ops.n_lat {
                for _ in 0..ops.n_lon {
                    w.push(ops.sin_theta[i]);
                }
            }
            let total = compensated_sum(w.iter().copied());
            for v in w.iter_mut() {
                *v /= total;
            }
            w
        }
    }
}

/// Ground state of the stability operator with default options.
pub fn lowest_eigenvalue(state: &FlowState) -> Result<(f64, ScalarField)> {
    lowest_eigenvalue_with(state, &EigenOptions::default())
}

/// Ground state of the stability operator.
///
/// Returns the eigenvalue and the eigenfield normalized to unit evolving-metric
/// mass with nonnegative mean.  Convergence is declared when the weighted
/// operator residual drops below `opts.tol`.
pub fn lowest_eigenvalue_with(
    state: &FlowState,
    opts: &EigenOptions,
) -> Result<(f64, ScalarField)> {
    if !(opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(FlowError::InvalidArgument(format!(
            "eigen tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let bg = state.background();
    let lap_u = bg.fd_laplacian0(state.u())?;
    let r0 = bg.scalar_curvature0();
    let v_pot = state
        .u()
        .zip(state.psi(), |uv, pv| (-uv).exp() * pv * pv)?
        .zip(&lap_u, |fp, lu| r0 - lu - 0.5 * fp)?;
    let eu = state.u().map(f64::exp);
    let emu = state.u().map(|v| (-v).exp());

    // The flux-form operator is exactly self-adjoint in the ring-weighted
    // inner product it was built on, so the whole iteration runs in that
    // product; mixing in the reporting quadrature would leave a residual
    // floor at its weight mismatch instead of converging to tolerance.
    let weights = flux_form_weights(bg, state.u().values().len());
    let inner0 = |a: &ScalarField, b: &ScalarField| -> Result<f64> {
        let av = a.values();
        let bv = b.values();
        Ok(compensated_sum(
            av.iter()
                .zip(bv)
                .zip(&weights)
                .map(|((&x, &y), &w)| x * y * w),
        ))
    };
    let apply = |f: &ScalarField| -> Result<ScalarField> {
        let lap = bg.fd_laplacian0(f)?;
        f.zip(&v_pot, |fv, vv| fv * vv)?.zip(&lap, |a, l| a - 4.0 * l)
    };
    let b_norm = |f: &ScalarField| -> Result<f64> {
        Ok(inner0(&f.zip(&eu, |x, e| x * e)?, f)?.sqrt())
    };

    let mut v = bg.constant(1.0);
    let nv = b_norm(&v)?;
    v = v.map(|x| x / nv);

    let mut res = f64::INFINITY;
    for iter in 0..opts.max_iter {
        let w = apply(&v)?;
        let rho = inner0(&v, &w)?;
        let bv = v.zip(&eu, |x, e| x * e)?;
        let r = w.zip(&bv, |wv, bvv| wv - rho * bvv)?;
        res = inner0(&r.zip(&emu, |x, e| x * e)?, &r)?.sqrt();
        if res <= opts.tol {
            let mean = inner0(&v, &eu)?;
            if mean < 0.0 {
                v = v.map(|x| -x);
            }
            return Ok((rho, v));
        }
        let mut z = precondition(bg, &r, 1.0 + rho.abs())?;
        let zb = inner0(&z.zip(&eu, |x, e| x * e)?, &v)?;
        z.axpy(-zb, &v)?;
        let hz = apply(&z)?;
        let a0 = rho;
        let a1 = inner0(&z, &w)?;
        let a2 = inner0(&z, &hz)?;
        let b1 = inner0(&z.zip(&eu, |x, e| x * e)?, &v)?;
        let b2 = inner0(&z.zip(&eu, |x, e| x * e)?, &z)?;
        if b2 <= 0.0 || !b2.is_finite() {
            break;
        }
        let qa = a2 * b1 - a1 * b2;
        let qb = a2 - a0 * b2;
        let qc = a1 - a0 * b1;
        let quotient = |alpha: f64| -> f64 {
            (a0 + 2.0 * a1 * alpha + a2 * alpha * alpha)
                / (1.0 + 2.0 * b1 * alpha + b2 * alpha * alpha)
        };
        let scale = qa.abs().max(qb.abs()).max(qc.abs());
        let alpha = if scale == 0.0 {
            0.0
        } else if qa.abs() < 1e-14 * scale {
            if qb == 0.0 {
                0.0
            } else {
                -qc / qb
            }
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                -qc / qb.max(1e-300)
            } else {
                let sq = disc.sqrt();
                let r1 = (-qb + sq) / (2.0 * qa);
                let r2 = (-qb - sq) / (2.0 * qa);
                if quotient(r1) <= quotient(r2) {
                    r1
                } else {
                    r2
                }
            }
        };
        if !alpha.is_finite() || alpha == 0.0 {
            break;
        }
        v.axpy(alpha, &z)?;
        let nv = b_norm(&v)?;
        if nv == 0.0 || !nv.is_finite() {
            break;
        }
        v = v.map(|x| x / nv);
        let _ = iter;
    }
    Err(FlowError::NoConvergence {
        what: "eigenvalue iteration".into(),
        residual: res,
        iterations: opts.max_iter,
    })
}

/// Applies `(-4 lap0 + c)^{-1}`: exact in Fourier space on the torus, one
/// tridiagonal solve per azimuthal mode on the sphere.
fn precondition(bg: &BackgroundGeometry, r: &ScalarField, c: f64) -> Result<ScalarField> {
    match bg.kind() {
        SurfaceKind::Torus => {
            let spectral = bg.torus_spectral().expect("torus background");
            let n = spectral.n;
            let mut hat = spectral.forward2(r.values());
            for row in 0..n {
                let kr = spectral.wavenumber[row];
                for col in 0..n {
                    let kc = spectral.wavenumber[col];
                    let k2 = kr * kr + kc * kc;
                    hat[row * n + col] = hat[row * n + col] / (4.0 * k2 + c);
                }
            }
            bg.from_values(spectral.inverse2_real(hat))
        }
        SurfaceKind::Sphere => {
            let ops = bg.sphere_ops().expect("sphere background");
            let (n_lat, n_lon) = (ops.n_lat, ops.n_lon);
            let dth2 = ops.dtheta * ops.dtheta;
            let hat = rows_to_modes(r.values(), n_lat, n_lon, ops.fft_phi_fwd);
            let mut sol = vec![Complex::new(0.0, 0.0); n_lat * n_lon];
            for m in 0..n_lon {
                let nu_m = ops.nu[m];
                let mut dl = vec![0.0f64; n_lat - 1];
                let mut d = vec![0.0f64; n_lat];
                let mut du = vec![0.0f64; n_lat - 1];
                for i in 0..n_lat {
                    let st = ops.sin_theta[i];
                    let theta_scale = 1.0 / (st * dth2);
                    d[i] = c
                        + 4.0
                            * ops.inv_r0_sq
                            * ((ops.sin_face[i] + ops.sin_face[i + 1]) * theta_scale
                                + nu_m / (st * st));
                    if i > 0 {
                        dl[i - 1] = -4.0 * ops.inv_r0_sq * ops.sin_face[i] * theta_scale;
                    }
                    if i + 1 < n_lat {
                        du[i] = -4.0 * ops.inv_r0_sq * ops.sin_face[i + 1] * theta_scale;
                    }
                }
                let lu = TriLu::factor(dl, d, du)?;
                let mut col: Vec<Complex<f64>> = (0..n_lat).map(|i| hat[i * n_lon + m]).collect();
                lu.solve(&mut col);
                for i in 0..n_lat {
                    sol[i * n_lon + m] = col[i];
                }
            }
            bg.from_values(modes_to_rows(&sol, n_lat, n_lon, ops.fft_phi_inv))
        }
    }
}
