//! Background geometry on the two closed model surfaces.
//!
//! Both backgrounds are normalized to unit volume: the flat torus is the unit
//! square with periodic identifications, the round sphere has radius
//! r0 = 1/sqrt(4 pi) so that 4 pi r0^2 = 1.  Derivative operators act on the
//! fixed background metric and are spectral on both surfaces: the torus uses
//! plane Fourier differentiation, the sphere differentiates along doubled
//! colatitude circles through opposite meridians, with rings offset from the
//! poles by half a spacing.  Ring quadrature weights are of Fejer type and
//! integrate the even cosine cover exactly up to the grid bandwidth.  A
//! second-order flux-form stencil with vanishing pole faces is kept alongside
//! and serves as the time stepper's implicit stabilizer.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{FlowError, Result};

/// Compensated (Neumaier) summation over an iterator of terms.
pub fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    Torus,
    Sphere,
}

impl fmt::Display for SurfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurfaceKind::Torus => write!(f, "torus"),
            SurfaceKind::Sphere => write!(f, "sphere"),
        }
    }
}

/// Surface selector with its grid resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceSpec {
    Torus { n: usize },
    Sphere { n_lat: usize, n_lon: usize },
}

/// Identity of a grid; scalar fields carry one so mixing grids is an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeometryTag {
    kind: SurfaceKind,
    rows: u32,
    cols: u32,
}

impl fmt::Display for GeometryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}x{}", self.kind, self.rows, self.cols)
    }
}

/// Nodal values of a scalar on one grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    values: Vec<f64>,
    tag: GeometryTag,
}

impl ScalarField {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn tag(&self) -> GeometryTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Pointwise map, keeping the grid binding.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            values: self.values.iter().map(|&v| f(v)).collect(),
            tag: self.tag,
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        if self.tag != other.tag {
            return Err(FlowError::GeometryMismatch {
                field_tag: other.tag.to_string(),
                geometry_tag: self.tag.to_string(),
            });
        }
        Ok(ScalarField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            tag: self.tag,
        })
    }

    /// In-place `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &ScalarField) -> Result<()> {
        if self.tag != other.tag {
            return Err(FlowError::GeometryMismatch {
                field_tag: other.tag.to_string(),
                geometry_tag: self.tag.to_string(),
            });
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }
}

/// Fourier machinery for the torus: plans plus per-index wavenumbers.
struct TorusSpectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// 2 pi k with the signed wavenumber convention k in (-n/2, n/2].
    wavenumber: Vec<f64>,
    /// Same, but with the Nyquist mode zeroed for odd-order derivatives.
    wavenumber_d1: Vec<f64>,
}

impl TorusSpectral {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut wavenumber = Vec::with_capacity(n);
        let mut wavenumber_d1 = Vec::with_capacity(n);
        for j in 0..n {
            let k = if j <= n / 2 { j as i64 } else { j as i64 - n as i64 };
            wavenumber.push(two_pi * k as f64);
            let kd = if j == n / 2 { 0 } else { k };
            wavenumber_d1.push(two_pi * kd as f64);
        }
        TorusSpectral {
            n,
            fwd,
            inv,
            wavenumber,
            wavenumber_d1,
        }
    }

    fn forward2(&self, real: &[f64]) -> Vec<Complex<f64>> {
        let n = self.n;
        let mut buf: Vec<Complex<f64>> = real.iter().map(|&v| Complex::new(v, 0.0)).collect();
        for row in buf.chunks_exact_mut(n) {
            self.fwd.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for c in 0..n {
            for r in 0..n {
                col[r] = buf[r * n + c];
            }
            self.fwd.process(&mut col);
            for r in 0..n {
                buf[r * n + c] = col[r];
            }
        }
        buf
    }

    fn inverse2_real(&self, mut spec: Vec<Complex<f64>>) -> Vec<f64> {
        let n = self.n;
        for row in spec.chunks_exact_mut(n) {
            self.inv.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for c in 0..n {
            for r in 0..n {
                col[r] = spec[r * n + c];
            }
            self.inv.process(&mut col);
            for r in 0..n {
                spec[r * n + c] = col[r];
            }
        }
        let scale = 1.0 / (n * n) as f64;
        spec.iter().map(|z| z.re * scale).collect()
    }
}

/// Stencil data for the sphere grid.
struct SphereOps {
    n_lat: usize,
    n_lon: usize,
    dtheta: f64,
    dphi: f64,
    /// Ring colatitudes theta_i = (i + 1/2) dtheta.
    theta: Vec<f64>,
    sin_theta: Vec<f64>,
    /// sin at the n_lat + 1 ring faces; both pole faces are exactly zero.
    sin_face: Vec<f64>,
    /// 1 / r0^2 = 4 pi.
    inv_r0_sq: f64,
    /// Symbol of the periodic second difference in longitude, per azimuthal index.
    nu: Vec<f64>,
    /// sin of the doubled-grid colatitudes (r + 1/2) dtheta, r < 2 n_lat;
    /// negative on the second half of the cover.
    sin_ext: Vec<f64>,
    /// Signed wavenumbers for the doubled colatitude circle, Nyquist zeroed.
    k_theta: Vec<f64>,
    /// Signed azimuthal wavenumbers, Nyquist zeroed.
    m_phi: Vec<f64>,
    /// Squared azimuthal wavenumbers for the second derivative.
    m2_phi: Vec<f64>,
    fft_phi_fwd: Arc<dyn Fft<f64>>,
    fft_phi_inv: Arc<dyn Fft<f64>>,
    fft_theta_fwd: Arc<dyn Fft<f64>>,
    fft_theta_inv: Arc<dyn Fft<f64>>,
}

enum Ops {
    Torus(TorusSpectral),
    Sphere(SphereOps),
}

/// A fixed constant-curvature unit-volume background with its grid,
/// quadrature weights, and derivative operators.
pub struct BackgroundGeometry {
    kind: SurfaceKind,
    tag: GeometryTag,
    rows: usize,
    cols: usize,
    r0: f64,
    node_coords: Vec<[f64; 2]>,
    /// Unit positions in R^3 for sphere nodes; empty on the torus.
    positions: Vec<[f64; 3]>,
    quad_weights: Vec<f64>,
    ops: Ops,
}

impl fmt::Debug for BackgroundGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BackgroundGeometry({})", self.tag)
    }
}

impl BackgroundGeometry {
    /// Builds the background for `spec`.  Torus grids must be even and at
    /// least 8x8; sphere grids need n_lat >= 8 and an even n_lon >= 8 (the
    /// through-pole continuation pairs longitudes half a turn apart).
    pub fn build(spec: SurfaceSpec) -> Result<BackgroundGeometry> {
        match spec {
            SurfaceSpec::Torus { n } => {
                if n < 8 || n % 2 != 0 {
                    return Err(FlowError::InvalidArgument(format!(
                        "torus resolution must be even and >= 8, got {n}"
                    )));
                }
                let h = 1.0 / n as f64;
                let mut node_coords = Vec::with_capacity(n * n);
                for r in 0..n {
                    for c in 0..n {
                        node_coords.push([c as f64 * h, r as f64 * h]);
                    }
                }
                let w = 1.0 / (n * n) as f64;
                let tag = GeometryTag {
                    kind: SurfaceKind::Torus,
                    rows: n as u32,
                    cols: n as u32,
                };
                Ok(BackgroundGeometry {
                    kind: SurfaceKind::Torus,
                    tag,
                    rows: n,
                    cols: n,
                    r0: 0.0,
                    node_coords,
                    positions: Vec::new(),
                    quad_weights: vec![w; n * n],
                    ops: Ops::Torus(TorusSpectral::new(n)),
                })
            }
            SurfaceSpec::Sphere { n_lat, n_lon } => {
                if n_lat < 8 || n_lon < 8 || n_lon % 2 != 0 {
                    return Err(FlowError::InvalidArgument(format!(
                        "sphere resolution must have n_lat >= 8 and even n_lon >= 8, got {n_lat}x{n_lon}"
                    )));
                }
                let pi = std::f64::consts::PI;
                let dtheta = pi / n_lat as f64;
                let dphi = 2.0 * pi / n_lon as f64;
                let theta: Vec<f64> = (0..n_lat).map(|i| (i as f64 + 0.5) * dtheta).collect();
                let sin_theta: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
                let mut sin_face: Vec<f64> = (0..=n_lat).map(|i| (i as f64 * dtheta).sin()).collect();
                // The analytic face values at both poles are exactly zero;
                // sin(pi) rounds to ~1e-16 and would leak flux through the pole.
                sin_face[0] = 0.0;
                sin_face[n_lat] = 0.0;

                let mut node_coords = Vec::with_capacity(n_lat * n_lon);
                let mut positions = Vec::with_capacity(n_lat * n_lon);
                for i in 0..n_lat {
                    let st = sin_theta[i];
                    let ct = theta[i].cos();
                    for j in 0..n_lon {
                        let phi = j as f64 * dphi;
                        node_coords.push([theta[i], phi]);
                        positions.push([st * phi.cos(), st * phi.sin(), ct]);
                    }
                }

                // Latitude quadrature weights of Fejer type at the midpoint
                // colatitudes: exact on the even trigonometric double cover
                // up to the grid bandwidth, hence spectrally accurate for
                // integrands smooth on the sphere.
                let mut theta_weight = vec![0.0f64; n_lat];
                for (i, w) in theta_weight.iter_mut().enumerate() {
                    let mut acc = 4.0;
                    let mut k = 2usize;
                    while k < n_lat {
                        let kk = (k * k) as f64;
                        acc += 2.0 * (4.0 / (1.0 - kk)) * (k as f64 * theta[i]).cos();
                        k += 2;
                    }
                    if n_lat % 2 == 0 {
                        let kk = (n_lat * n_lat) as f64;
                        acc += (4.0 / (1.0 - kk)) * (n_lat as f64 * theta[i]).cos();
                    }
                    *w = acc / (2.0 * n_lat as f64);
                }

                let raw: Vec<f64> = (0..n_lat * n_lon)
                    .map(|idx| theta_weight[idx / n_lon] * dphi)
                    .collect();
                let total = compensated_sum(raw.iter().copied());
                let quad_weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

                let mut nu = Vec::with_capacity(n_lon);
                for m in 0..n_lon {
                    let ang = m as f64 * dphi;
                    nu.push((2.0 / (dphi * dphi)) * (1.0 - ang.cos()));
                }
                let mut planner = FftPlanner::new();
                let fft_phi_fwd = planner.plan_fft_forward(n_lon);
                let fft_phi_inv = planner.plan_fft_inverse(n_lon);

                let n2 = 2 * n_lat;
                let sin_ext: Vec<f64> = (0..n2).map(|r| ((r as f64 + 0.5) * dtheta).sin()).collect();
                let mut k_theta: Vec<f64> = (0..n2)
                    .map(|k| if k <= n_lat { k as f64 } else { k as f64 - n2 as f64 })
                    .collect();
                k_theta[n_lat] = 0.0;
                let mut m_phi: Vec<f64> = (0..n_lon)
                    .map(|m| {
                        if 2 * m <= n_lon {
                            m as f64
                        } else {
                            m as f64 - n_lon as f64
                        }
                    })
                    .collect();
                m_phi[n_lon / 2] = 0.0;
                let m2_phi: Vec<f64> = (0..n_lon)
                    .map(|m| {
                        let ms = m.min(n_lon - m) as f64;
                        ms * ms
                    })
                    .collect();
                let fft_theta_fwd = planner.plan_fft_forward(n2);
                let fft_theta_inv = planner.plan_fft_inverse(n2);

                let tag = GeometryTag {
                    kind: SurfaceKind::Sphere,
                    rows: n_lat as u32,
                    cols: n_lon as u32,
                };
                let four_pi = 4.0 * pi;
                Ok(BackgroundGeometry {
                    kind: SurfaceKind::Sphere,
                    tag,
                    rows: n_lat,
                    cols: n_lon,
                    r0: four_pi.sqrt().recip(),
                    node_coords,
                    positions,
                    quad_weights,
                    ops: Ops::Sphere(SphereOps {
                        n_lat,
                        n_lon,
                        dtheta,
                        dphi,
                        theta,
                        sin_theta,
                        sin_face,
                        inv_r0_sq: four_pi,
                        nu,
                        sin_ext,
                        k_theta,
                        m_phi,
                        m2_phi,
                        fft_phi_fwd,
                        fft_phi_inv,
                        fft_theta_fwd,
                        fft_theta_inv,
                    }),
                })
            }
        }
    }

    pub fn torus(n: usize) -> Result<BackgroundGeometry> {
        Self::build(SurfaceSpec::Torus { n })
    }

    pub fn sphere(n_lat: usize, n_lon: usize) -> Result<BackgroundGeometry> {
        Self::build(SurfaceSpec::Sphere { n_lat, n_lon })
    }

    pub fn kind(&self) -> SurfaceKind {
        self.kind
    }

    pub fn spec(&self) -> SurfaceSpec {
        match self.kind {
            SurfaceKind::Torus => SurfaceSpec::Torus { n: self.rows },
            SurfaceKind::Sphere => SurfaceSpec::Sphere {
                n_lat: self.rows,
                n_lon: self.cols,
            },
        }
    }

    pub fn tag(&self) -> GeometryTag {
        self.tag
    }

    /// Grid shape as (rows, cols): (n, n) on the torus, (n_lat, n_lon) on the sphere.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn node_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Background scalar curvature: 0 on the torus, 8 pi on the unit-volume sphere.
    pub fn scalar_curvature0(&self) -> f64 {
        match self.kind {
            SurfaceKind::Torus => 0.0,
            SurfaceKind::Sphere => 8.0 * std::f64::consts::PI,
        }
    }

    /// Sphere radius; zero on the torus where no radius is involved.
    pub fn r0(&self) -> f64 {
        self.r0
    }

    /// Intrinsic coordinates per node: (x, y) on the torus, (theta, phi) on the sphere.
    pub fn node_coords(&self) -> &[[f64; 2]] {
        &self.node_coords
    }

    /// Unit embedding positions of sphere nodes.
    pub fn positions(&self) -> Result<&[[f64; 3]]> {
        match self.kind {
            SurfaceKind::Sphere => Ok(&self.positions),
            SurfaceKind::Torus => Err(FlowError::SphereOnly("positions".into())),
        }
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    /// Smallest grid spacing, used by the explicit stability bound.
    pub fn min_spacing(&self) -> f64 {
        match &self.ops {
            Ops::Torus(_) => 1.0 / self.rows as f64,
            Ops::Sphere(s) => {
                let polar_circ = self.r0 * s.sin_theta[0] * s.dphi;
                (self.r0 * s.dtheta).min(polar_circ)
            }
        }
    }

    pub fn zeros(&self) -> ScalarField {
        ScalarField {
            values: vec![0.0; self.node_count()],
            tag: self.tag,
        }
    }

    pub fn constant(&self, c: f64) -> ScalarField {
        ScalarField {
            values: vec![c; self.node_count()],
            tag: self.tag,
        }
    }

    pub fn from_fn(&self, f: impl Fn(&[f64; 2]) -> f64) -> ScalarField {
        ScalarField {
            values: self.node_coords.iter().map(f).collect(),
            tag: self.tag,
        }
    }

    pub fn from_values(&self, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != self.node_count() {
            return Err(FlowError::InvalidArgument(format!(
                "expected {} nodal values for {}, got {}",
                self.node_count(),
                self.tag,
                values.len()
            )));
        }
        Ok(ScalarField {
            values,
            tag: self.tag,
        })
    }

    pub fn check_binding(&self, f: &ScalarField) -> Result<()> {
        if f.tag != self.tag {
            return Err(FlowError::GeometryMismatch {
                field_tag: f.tag.to_string(),
                geometry_tag: self.tag.to_string(),
            });
        }
        Ok(())
    }

    /// Background quadrature of `f` against the unit-volume measure,
    /// accumulated with compensated summation.
    pub fn integrate0(&self, f: &ScalarField) -> Result<f64> {
        self.check_binding(f)?;
        Ok(compensated_sum(
            f.values.iter().zip(&self.quad_weights).map(|(&v, &w)| v * w),
        ))
    }

    /// Background Laplace-Beltrami operator applied to `f`.
    ///
    /// Spectral on both surfaces; the sphere form differentiates on the
    /// doubled colatitude circle, so smooth fields see super-algebraic
    /// accuracy while the midpoint rings keep every node away from the poles.
    pub fn laplacian0(&self, f: &ScalarField) -> Result<ScalarField> {
        self.check_binding(f)?;
        let values = match &self.ops {
            Ops::Torus(t) => {
                let mut spec = t.forward2(&f.values);
                let n = t.n;
                for r in 0..n {
                    let kr = t.wavenumber[r];
                    for c in 0..n {
                        let kc = t.wavenumber[c];
                        spec[r * n + c] *= -(kr * kr + kc * kc);
                    }
                }
                t.inverse2_real(spec)
            }
            Ops::Sphere(s) => sphere_laplacian_spectral(s, &f.values),
        };
        Ok(ScalarField {
            values,
            tag: self.tag,
        })
    }

    /// Second-order flux-form Laplacian on the sphere.  The time stepper uses
    /// it as the implicit stabilizer because it matches the tridiagonal
    /// factorization applied per azimuthal mode; on the torus it coincides
    /// with `laplacian0`.
    pub(crate) fn fd_laplacian0(&self, f: &ScalarField) -> Result<ScalarField> {
        self.check_binding(f)?;
        match &self.ops {
            Ops::Torus(_) => self.laplacian0(f),
            Ops::Sphere(s) => Ok(ScalarField {
                values: sphere_laplacian_fd(s, &f.values),
                tag: self.tag,
            }),
        }
    }

    /// Squared background gradient norm |df|^2_0 as a nodal field.
    ///
    /// Spectral on both surfaces: the torus uses the plane Fourier
    /// derivatives, the sphere differentiates along the doubled colatitude
    /// circle and per ring in longitude.
    pub fn grad_norm_sq0(&self, f: &ScalarField) -> Result<ScalarField> {
        self.check_binding(f)?;
        let values = match &self.ops {
            Ops::Torus(t) => {
                let dx = torus_derivative(t, &f.values, true);
                let dy = torus_derivative(t, &f.values, false);
                dx.iter().zip(&dy).map(|(&a, &b)| a * a + b * b).collect()
            }
            Ops::Sphere(s) => sphere_grad_norm_sq_spectral(s, &f.values),
        };
        Ok(ScalarField {
            values,
            tag: self.tag,
        })
    }

    /// Partial derivatives on the torus (spectral); used by tests and plots.
    pub fn torus_gradient(&self, f: &ScalarField) -> Result<(ScalarField, ScalarField)> {
        self.check_binding(f)?;
        match &self.ops {
            Ops::Torus(t) => {
                let dx = torus_derivative(t, &f.values, true);
                let dy = torus_derivative(t, &f.values, false);
                Ok((
                    ScalarField {
                        values: dx,
                        tag: self.tag,
                    },
                    ScalarField {
                        values: dy,
                        tag: self.tag,
                    },
                ))
            }
            Ops::Sphere(_) => Err(FlowError::InvalidArgument(
                "torus_gradient called on a sphere background".into(),
            )),
        }
    }
}

fn torus_derivative(t: &TorusSpectral, values: &[f64], along_x: bool) -> Vec<f64> {
    let n = t.n;
    let mut spec = t.forward2(values);
    for r in 0..n {
        for c in 0..n {
            let k = if along_x {
                t.wavenumber_d1[c]
            } else {
                t.wavenumber_d1[r]
            };
            spec[r * n + c] *= Complex::new(0.0, k);
        }
    }
    t.inverse2_real(spec)
}

/// Builds the doubled-colatitude column through (j, j + n_lon/2), leaving the
/// theta derivative of `f` on the cover in `cover`.
fn cover_theta_derivative(s: &SphereOps, f: &[f64], j: usize, cover: &mut [Complex<f64>]) {
    let (n_lat, n_lon) = (s.n_lat, s.n_lon);
    let n2 = 2 * n_lat;
    let j2 = j + n_lon / 2;
    for r in 0..n_lat {
        cover[r] = Complex::new(f[r * n_lon + j], 0.0);
        cover[n_lat + r] = Complex::new(f[(n_lat - 1 - r) * n_lon + j2], 0.0);
    }
    s.fft_theta_fwd.process(cover);
    let scale = 1.0 / n2 as f64;
    for (c, &k) in cover.iter_mut().zip(&s.k_theta) {
        *c *= Complex::new(0.0, k * scale);
    }
    s.fft_theta_inv.process(cover);
}

fn sphere_laplacian_spectral(s: &SphereOps, f: &[f64]) -> Vec<f64> {
    let (n_lat, n_lon) = (s.n_lat, s.n_lon);
    let n2 = 2 * n_lat;
    let mut out = vec![0.0; n_lat * n_lon];
    let mut cover = vec![Complex::new(0.0, 0.0); n2];
    let scale = 1.0 / n2 as f64;
    for j in 0..n_lon / 2 {
        let j2 = j + n_lon / 2;
        cover_theta_derivative(s, f, j, &mut cover);
        for (c, &se) in cover.iter_mut().zip(&s.sin_ext) {
            *c = Complex::new(c.re * se, 0.0);
        }
        s.fft_theta_fwd.process(&mut cover);
        for (c, &k) in cover.iter_mut().zip(&s.k_theta) {
            *c *= Complex::new(0.0, k * scale);
        }
        s.fft_theta_inv.process(&mut cover);
        for r in 0..n_lat {
            out[r * n_lon + j] = cover[r].re / s.sin_ext[r];
        }
        for r in n_lat..n2 {
            out[(n2 - 1 - r) * n_lon + j2] = cover[r].re / s.sin_ext[r];
        }
    }
    let mut ring = vec![Complex::new(0.0, 0.0); n_lon];
    let phi_scale = 1.0 / n_lon as f64;
    for i in 0..n_lat {
        let st2 = s.sin_theta[i] * s.sin_theta[i];
        for (r, &v) in ring.iter_mut().zip(&f[i * n_lon..(i + 1) * n_lon]) {
            *r = Complex::new(v, 0.0);
        }
        s.fft_phi_fwd.process(&mut ring);
        for (r, &m2) in ring.iter_mut().zip(&s.m2_phi) {
            *r *= -m2 * phi_scale;
        }
        s.fft_phi_inv.process(&mut ring);
        for (o, r) in out[i * n_lon..(i + 1) * n_lon].iter_mut().zip(&ring) {
            *o += r.re / st2;
        }
    }
    for v in out.iter_mut() {
        *v *= s.inv_r0_sq;
    }
    out
}

fn sphere_grad_norm_sq_spectral(s: &SphereOps, f: &[f64]) -> Vec<f64> {
    let (n_lat, n_lon) = (s.n_lat, s.n_lon);
    let n2 = 2 * n_lat;
    let mut out = vec![0.0; n_lat * n_lon];
    let mut cover = vec![Complex::new(0.0, 0.0); n2];
    for j in 0..n_lon / 2 {
        let j2 = j + n_lon / 2;
        cover_theta_derivative(s, f, j, &mut cover);
        for r in 0..n_lat {
            let v = cover[r].re;
            out[r * n_lon + j] = v * v;
        }
        for r in n_lat..n2 {
            let v = cover[r].re;
            out[(n2 - 1 - r) * n_lon + j2] = v * v;
        }
    }
    let mut ring = vec![Complex::new(0.0, 0.0); n_lon];
    let phi_scale = 1.0 / n_lon as f64;
    for i in 0..n_lat {
        let st2 = s.sin_theta[i] * s.sin_theta[i];
        for (r, &v) in ring.iter_mut().zip(&f[i * n_lon..(i + 1) * n_lon]) {
            *r = Complex::new(v, 0.0);
        }
        s.fft_phi_fwd.process(&mut ring);
        for (r, &m) in ring.iter_mut().zip(&s.m_phi) {
            *r *= Complex::new(0.0, m * phi_scale);
        }
        s.fft_phi_inv.process(&mut ring);
        for (o, r) in out[i * n_lon..(i + 1) * n_lon].iter_mut().zip(&ring) {
            let v = r.re;
            *o += v * v / st2;
        }
    }
    for v in out.iter_mut() {
        *v *= s.inv_r0_sq;
    }
    out
}

fn sphere_laplacian_fd(s: &SphereOps, f: &[f64]) -> Vec<f64> {
    let (n_lat, n_lon) = (s.n_lat, s.n_lon);
    let dth2 = s.dtheta * s.dtheta;
    let dph2 = s.dphi * s.dphi;
    let mut out = vec![0.0; n_lat * n_lon];
    for i in 0..n_lat {
        let st = s.sin_theta[i];
        let st2 = st * st;
        let up_face = s.sin_face[i + 1];
        let down_face = s.sin_face[i];
        for j in 0..n_lon {
            let idx = i * n_lon + j;
            let here = f[idx];
            let up = if i + 1 < n_lat {
                up_face * (f[(i + 1) * n_lon + j] - here)
            } else {
                0.0
            };
            let down = if i > 0 {
                down_face * (here - f[(i - 1) * n_lon + j])
            } else {
                0.0
            };
            let jp = if j + 1 == n_lon { 0 } else { j + 1 };
            let jm = if j == 0 { n_lon - 1 } else { j - 1 };
            let theta_part = (up - down) / (st * dth2);
            let phi_part = (f[i * n_lon + jp] - 2.0 * here + f[i * n_lon + jm]) / (st2 * dph2);
            out[idx] = s.inv_r0_sq * (theta_part + phi_part);
        }
    }
    out
}

// Internal hooks used by the time stepper, the eigensolver and the gauge
// module; not part of the public operator surface.
pub(crate) struct TorusSpectralView<'a> {
    pub n: usize,
    pub wavenumber: &'a [f64],
    spectral: &'a TorusSpectral,
}

impl<'a> TorusSpectralView<'a> {
    pub fn forward2(&self, real: &[f64]) -> Vec<Complex<f64>> {
        self.spectral.forward2(real)
    }

    pub fn inverse2_real(&self, spec: Vec<Complex<f64>>) -> Vec<f64> {
        self.spectral.inverse2_real(spec)
    }
}

pub(crate) struct SphereOpsView<'a> {
    pub n_lat: usize,
    pub n_lon: usize,
    pub dtheta: f64,
    pub dphi: f64,
    pub theta: &'a [f64],
    pub sin_theta: &'a [f64],
    pub sin_face: &'a [f64],
    pub inv_r0_sq: f64,
    pub nu: &'a [f64],
    pub fft_phi_fwd: &'a Arc<dyn Fft<f64>>,
    pub fft_phi_inv: &'a Arc<dyn Fft<f64>>,
}

impl BackgroundGeometry {
    pub(crate) fn torus_spectral(&self) -> Option<TorusSpectralView<'_>> {
        match &self.ops {
            Ops::Torus(t) => Some(TorusSpectralView {
                n: t.n,
                wavenumber: &t.wavenumber,
                spectral: t,
            }),
            Ops::Sphere(_) => None,
        }
    }

    pub(crate) fn sphere_ops(&self) -> Option<SphereOpsView<'_>> {
        match &self.ops {
            Ops::Sphere(s) => Some(SphereOpsView {
                n_lat: s.n_lat,
                n_lon: s.n_lon,
                dtheta: s.dtheta,
                dphi: s.dphi,
                theta: &s.theta,
                sin_theta: &s.sin_theta,
                sin_face: &s.sin_face,
                inv_r0_sq: s.inv_r0_sq,
                nu: &s.nu,
                fft_phi_fwd: &s.fft_phi_fwd,
                fft_phi_inv: &s.fft_phi_inv,
            }),
            Ops::Torus(_) => None,
        }
    }
}
