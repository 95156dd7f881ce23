//! Band-limited initial data: seeded random fields and explicit mode lists.
//!
//! Torus fields are real trigonometric polynomials up to a maximum
//! wavenumber; sphere fields are real spherical-harmonic combinations up to a
//! maximum degree, built from a stable normalized associated-Legendre
//! recurrence.  Random coefficients decay with frequency so the fields stay
//! smooth, and the result is rescaled to hit the requested max norm exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FlowError, Result};
use crate::grid::{BackgroundGeometry, ScalarField, SurfaceKind};

/// Recipe for one seeded random band-limited field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomFieldSpec {
    pub seed: u64,
    pub max_wavenumber: usize,
    pub amplitude: f64,
}

/// One torus Fourier mode: amplitude of cos and sin of 2 pi (kx x + ky y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusMode {
    pub kx: i32,
    pub ky: i32,
    pub cos_amp: f64,
    pub sin_amp: f64,
}

/// One real spherical-harmonic mode of degree l; m < 0 selects the
/// sin(|m| phi) branch, m >= 0 the cos branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereMode {
    pub l: u32,
    pub m: i32,
    pub amp: f64,
}

/// Draws a seeded band-limited field on `bg` and rescales it so its max norm
/// equals `spec.amplitude` (zero amplitude or an empty band gives zeros).
pub fn random_band_limited(bg: &BackgroundGeometry, spec: &RandomFieldSpec) -> ScalarField {
    if spec.amplitude == 0.0 || spec.max_wavenumber == 0 {
        return bg.zeros();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let raw = match bg.kind() {
        SurfaceKind::Torus => {
            let nyquist = (bg.shape().0 / 2) as i32;
            let kmax = (spec.max_wavenumber as i32).min(nyquist);
            let mut modes = Vec::new();
            for kx in 0..=kmax {
                for ky in -kmax..=kmax {
                    if kx == 0 && ky <= 0 {
                        continue;
                    }
                    let decay = 1.0 / (kx * kx + ky * ky) as f64;
                    let c: f64 = rng.gen_range(-1.0..1.0);
                    let s: f64 = rng.gen_range(-1.0..1.0);
                    modes.push(TorusMode {
                        kx,
                        ky,
                        cos_amp: c * decay,
                        sin_amp: s * decay,
                    });
                }
            }
            torus_modes_field(bg, &modes).expect("generated modes are valid")
        }
        SurfaceKind::Sphere => {
            let lmax = spec.max_wavenumber as u32;
            let mut modes = Vec::new();
            for l in 1..=lmax {
                let decay = 1.0 / (l * (l + 1)) as f64;
                for m in -(l as i32)..=(l as i32) {
                    let a: f64 = rng.gen_range(-1.0..1.0);
                    modes.push(SphereMode {
                        l,
                        m,
                        amp: a * decay,
                    });
                }
            }
            sphere_modes_field(bg, &modes).expect("generated modes are valid")
        }
    };
    let max = raw.max_abs();
    if max == 0.0 {
        return raw;
    }
    let scale = spec.amplitude / max;
    raw.map(|v| v * scale)
}

/// Sums explicit torus Fourier modes into a nodal field.
pub fn torus_modes_field(bg: &BackgroundGeometry, modes: &[TorusMode]) -> Result<ScalarField> {
    if bg.kind() != SurfaceKind::Torus {
        return Err(FlowError::InvalidArgument(
            "torus mode list applied to a sphere background".into(),
        ));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let (n, _) = bg.shape();
    let nyquist = (n / 2) as i32;
    for m in modes {
        if m.kx.abs() > nyquist || m.ky.abs() > nyquist {
            return Err(FlowError::InvalidArgument(format!(
                "mode ({}, {}) exceeds the grid Nyquist wavenumber {nyquist}",
                m.kx, m.ky
            )));
        }
    }
    Ok(bg.from_fn(|c| {
        let mut v = 0.0;
        for m in modes {
            let phase = two_pi * (m.kx as f64 * c[0] + m.ky as f64 * c[1]);
            v += m.cos_amp * phase.cos() + m.sin_amp * phase.sin();
        }
        v
    }))
}

/// Sums explicit real spherical-harmonic modes into a nodal field.
pub fn sphere_modes_field(bg: &BackgroundGeometry, modes: &[SphereMode]) -> Result<ScalarField> {
    if bg.kind() != SurfaceKind::Sphere {
        return Err(FlowError::InvalidArgument(
            "sphere mode list applied to a torus background".into(),
        ));
    }
    for m in modes {
        if m.m.unsigned_abs() > m.l {
            return Err(FlowError::InvalidArgument(format!(
                "harmonic order |{}| exceeds degree {}",
                m.m, m.l
            )));
        }
    }
    Ok(bg.from_fn(|c| {
        let (theta, phi) = (c[0], c[1]);
        let ct = theta.cos();
        let st = theta.sin();
        let mut v = 0.0;
        for mode in modes {
            let p = normalized_legendre(mode.l, mode.m.unsigned_abs(), ct, st);
            let ang = if mode.m < 0 {
                ((-mode.m) as f64 * phi).sin()
            } else {
                (mode.m as f64 * phi).cos()
            };
            v += mode.amp * p * ang;
        }
        v
    }))
}

/// Normalized associated Legendre value \bar P_l^m(cos theta) via the
/// standard stable three-term recurrence.
fn normalized_legendre(l: u32, m: u32, ct: f64, st: f64) -> f64 {
    let four_pi = 4.0 * std::f64::consts::PI;
    let mut pmm = (1.0 / four_pi).sqrt();
    for k in 1..=m {
        pmm *= -((2 * k + 1) as f64 / (2 * k) as f64).sqrt() * st;
    }
    if l == m {
        return pmm;
    }
    let mut pm1 = pmm;
    let mut pl = ((2 * m + 3) as f64).sqrt() * ct * pmm;
    if l == m + 1 {
        return pl;
    }
    for cur in (m + 2)..=l {
        let lf = cur as f64;
        let mf = m as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
            .sqrt();
        let next = a * (ct * pl - b * pm1);
        pm1 = pl;
        pl = next;
    }
    pl
}
