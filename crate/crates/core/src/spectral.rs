//! Fourier machinery on the periodic box `[0, 2π)³`.
//!
//! Coefficients follow the convention
//!
//! ```text
//! ĉ(k) = N⁻³ Σ_x f(x) e^{-ik·x},        f(x) = Σ_k ĉ(k) e^{ik·x},
//! ```
//!
//! so a constant field `c` has `ĉ(0) = c` and the transforms are exact inverses.
//! Continuous norms carry the box volume: `‖f‖²_{L²} = (2π)³ Σ_k |ĉ(k)|²`, which
//! coincides with the collocation quadrature `(2π/N)³ Σ_x |f(x)|²`.
//!
//! Arrays are stored row-major as `[i0][i1][i2]`, where axis `i0` carries `x₁`.
//! Index `i` maps to the integer wavenumber `i` for `i ≤ N/2` and `i − N` above,
//! so each axis covers `{−N/2+1, …, N/2}`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::par_sum;

/// Volume of the periodic box, `(2π)³`.
pub const VOLUME: f64 = 8.0 * PI * PI * PI;

/// Relative tolerance for the Hermitian-symmetry check in [`Transform::inverse`].
pub const HERMITIAN_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Discretization of the periodic cube.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRepr", into = "GridSpecRepr")]
pub struct GridSpec {
    n_modes: usize,
    truncation_radius: f64,
    dealias_fraction: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpecRepr {
    n_modes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truncation_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dealias_fraction: Option<f64>,
}

impl TryFrom<GridSpecRepr> for GridSpec {
    type Error = Error;

    fn try_from(r: GridSpecRepr) -> Result<Self> {
        let fraction = r.dealias_fraction.unwrap_or(2.0 / 3.0);
        let radius = r
            .truncation_radius
            .unwrap_or(fraction * r.n_modes as f64 / 2.0);
        GridSpec::with_parameters(r.n_modes, radius, fraction)
    }
}

impl From<GridSpec> for GridSpecRepr {
    fn from(g: GridSpec) -> Self {
        GridSpecRepr {
            n_modes: g.n_modes,
            truncation_radius: Some(g.truncation_radius),
            dealias_fraction: Some(g.dealias_fraction),
        }
    }
}

impl GridSpec {
    /// Grid with the default cutoffs: 2/3 dealiasing and `R = N/3`.
    pub fn new(n_modes: usize) -> Result<Self> {
        Self::with_parameters(n_modes, n_modes as f64 / 3.0, 2.0 / 3.0)
    }

    pub fn with_parameters(
        n_modes: usize,
        truncation_radius: f64,
        dealias_fraction: f64,
    ) -> Result<Self> {
        let g = GridSpec {
            n_modes,
            truncation_radius,
            dealias_fraction,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_truncation_radius(self, radius: f64) -> Result<Self> {
        Self::with_parameters(self.n_modes, radius, self.dealias_fraction)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_modes;
        if n < 8 || !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "n_modes must be even and at least 8, got {n}"
            )));
        }
        let r = self.truncation_radius;
        if !(r > 0.0 && r <= n as f64 / 2.0) {
            return Err(Error::InvalidGrid(format!(
                "truncation radius must lie in (0, N/2] = (0, {}], got {r}",
                n / 2
            )));
        }
        let d = self.dealias_fraction;
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "dealias fraction must lie in (0, 1], got {d}"
            )));
        }
        Ok(())
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn truncation_radius(&self) -> f64 {
        self.truncation_radius
    }

    pub fn dealias_fraction(&self) -> f64 {
        self.dealias_fraction
    }

    /// Radius of the spherical dealias mask, `fraction · N/2`.
    pub fn dealias_radius(&self) -> f64 {
        self.dealias_fraction * self.n_modes as f64 / 2.0
    }

    /// Number of collocation points (and of coefficients), `N³`.
    pub fn len(&self) -> usize {
        self.n_modes * self.n_modes * self.n_modes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of one collocation cell, `(2π/N)³`.
    pub fn cell_volume(&self) -> f64 {
        VOLUME / self.len() as f64
    }

    /// Largest wavenumber magnitude surviving the Friedrichs cutoff.
    pub fn k_max(&self) -> f64 {
        self.truncation_radius
    }

    /// Signed wavenumber of array index `i` along one axis.
    #[inline]
    pub fn wavenumber(&self, i: usize) -> i64 {
        let n = self.n_modes;
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    #[inline]
    pub fn index(&self, i0: usize, i1: usize, i2: usize) -> usize {
        (i0 * self.n_modes + i1) * self.n_modes + i2
    }

    #[inline]
    pub fn split_index(&self, idx: usize) -> [usize; 3] {
        let n = self.n_modes;
        if n.is_power_of_two() {
            let (s, m) = (n.trailing_zeros(), n - 1);
            return [idx >> (2 * s), (idx >> s) & m, idx & m];
        }
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    /// Array index holding wavenumber `k`, if it is representable.
    pub fn mode_index(&self, k: [i64; 3]) -> Option<usize> {
        let n = self.n_modes as i64;
        let mut ix = [0usize; 3];
        for a in 0..3 {
            if k[a] <= -n / 2 || k[a] > n / 2 {
                return None;
            }
            ix[a] = k[a].rem_euclid(n) as usize;
        }
        Some(self.index(ix[0], ix[1], ix[2]))
    }

    /// Index of the wavenumber `−k`.
    #[inline]
    pub fn conj_index(&self, idx: usize) -> usize {
        let n = self.n_modes;
        let [a, b, c] = self.split_index(idx);
        let neg = |i: usize| if i == 0 { 0 } else { n - i };
        self.index(neg(a), neg(b), neg(c))
    }

    /// Integer wavevector of a coefficient index (Nyquist taken as `+N/2`).
    #[inline]
    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let [a, b, c] = self.split_index(idx);
        [
            self.wavenumber(a) as f64,
            self.wavenumber(b) as f64,
            self.wavenumber(c) as f64,
        ]
    }

    /// Wavevector used for odd-order derivatives: Nyquist components are
    /// zeroed so that real fields stay real under differentiation.
    #[inline]
    pub fn derivative_wavevector(&self, idx: usize) -> [f64; 3] {
        let half = self.n_modes / 2;
        let [a, b, c] = self.split_index(idx);
        let d = |i: usize| {
            if i == half {
                0.0
            } else {
                self.wavenumber(i) as f64
            }
        };
        [d(a), d(b), d(c)]
    }

    #[inline]
    pub fn k_squared(&self, idx: usize) -> f64 {
        let k = self.wavevector(idx);
        k[0] * k[0] + k[1] * k[1] + k[2] * k[2]
    }

    /// Collocation point `x = 2π (i0, i1, i2) / N`.
    #[inline]
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let h = 2.0 * PI / self.n_modes as f64;
        let [a, b, c] = self.split_index(idx);
        [a as f64 * h, b as f64 * h, c as f64 * h]
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self} vs {other}")));
        }
        Ok(())
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "N={} R={} dealias={}",
            self.n_modes, self.truncation_radius, self.dealias_fraction
        )
    }
}

/// Scalar field in coefficient form.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralScalar {
    grid: GridSpec,
    coeffs: Vec<Complex64>,
}

impl SpectralScalar {
    pub fn zeros(grid: GridSpec) -> Self {
        SpectralScalar {
            grid,
            coeffs: vec![ZERO; grid.len()],
        }
    }

    pub fn from_coeffs(grid: GridSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        Ok(SpectralScalar { grid, coeffs })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn l2_norm_sq(&self) -> f64 {
        VOLUME * par_sum(self.coeffs.len(), |i| self.coeffs[i].norm_sqr())
    }

    /// `∇q` as a vector field, `i k q̂(k)`.
    pub fn gradient(&self) -> SpectralVectorField {
        let g = self.grid;
        let comps = std::array::from_fn(|a| {
            self.coeffs
                .par_iter()
                .enumerate()
                .map(|(idx, &c)| I * g.derivative_wavevector(idx)[a] * c)
                .collect()
        });
        SpectralVectorField { grid: g, comps }
    }
}

/// Three-component field in coefficient form (velocity, magnetic field or tendency).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralVectorField {
    grid: GridSpec,
    comps: [Vec<Complex64>; 3],
}

/// Spectral velocity gradient, `comps[i][j] = ∂_j s_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralTensor {
    grid: GridSpec,
    comps: [[Vec<Complex64>; 3]; 3],
}

impl SpectralTensor {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Coefficients of `∂_j s_i`.
    pub fn entry(&self, i: usize, j: usize) -> &[Complex64] {
        &self.comps[i][j]
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flatten()
            .flatten()
            .fold(0.0, |m, c| m.max(c.norm()))
    }
}

impl SpectralVectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        SpectralVectorField {
            grid,
            comps: std::array::from_fn(|_| vec![ZERO; grid.len()]),
        }
    }

    pub fn from_components(grid: GridSpec, comps: [Vec<Complex64>; 3]) -> Result<Self> {
        if comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::GridMismatch(format!(
                "each component must hold {} coefficients",
                grid.len()
            )));
        }
        Ok(SpectralVectorField { grid, comps })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn component(&self, a: usize) -> &[Complex64] {
        &self.comps[a]
    }

    pub fn component_mut(&mut self, a: usize) -> &mut [Complex64] {
        &mut self.comps[a]
    }

    pub fn components(&self) -> &[Vec<Complex64>; 3] {
        &self.comps
    }

    pub fn into_components(self) -> [Vec<Complex64>; 3] {
        self.comps
    }

    /// Coefficient vector at wavenumber `k` (zero if `k` is off the grid).
    pub fn mode(&self, k: [i64; 3]) -> [Complex64; 3] {
        match self.grid.mode_index(k) {
            Some(idx) => std::array::from_fn(|a| self.comps[a][idx]),
            None => [ZERO; 3],
        }
    }

    /// Sets `ĉ(k) = value` and `ĉ(−k) = conj(value)`, so the field stays real.
    pub fn set_real_mode(&mut self, k: [i64; 3], value: [Complex64; 3]) -> Result<()> {
        let idx = self
            .grid
            .mode_index(k)
            .ok_or_else(|| Error::InvalidParameter(format!("wavenumber {k:?} is off the grid")))?;
        let cdx = self.grid.conj_index(idx);
        for a in 0..3 {
            if idx == cdx {
                self.comps[a][idx] = Complex64::new(value[a].re, 0.0);
            } else {
                self.comps[a][idx] = value[a];
                self.comps[a][cdx] = value[a].conj();
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.comps
            .iter()
            .all(|c| c.par_iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flatten()
            .fold(0.0, |m, c| m.max(c.norm()))
    }

    /// Largest `|ĉ(k) − conj ĉ(−k)|` relative to the largest coefficient.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let g = self.grid;
        let worst = self
            .comps
            .iter()
            .map(|c| {
                c.par_iter()
                    .enumerate()
                    .map(|(idx, z)| (z - c[g.conj_index(idx)].conj()).norm())
                    .reduce(|| 0.0, f64::max)
            })
            .fold(0.0, f64::max);
        worst / scale
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.comps {
            c.par_iter_mut().for_each(|z| *z *= factor);
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    /// `self += factor · other`.
    pub fn axpy(&mut self, factor: f64, other: &SpectralVectorField) {
        debug_assert_eq!(self.grid, other.grid);
        for (dst, src) in self.comps.iter_mut().zip(&other.comps) {
            dst.par_iter_mut()
                .zip(src.par_iter())
                .for_each(|(d, s)| *d += factor * s);
        }
    }

    pub fn sub(&self, other: &SpectralVectorField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add(&self, other: &SpectralVectorField) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    /// Multiplies every coefficient by a real symbol `m(k)`.
    pub(crate) fn apply_symbol(&mut self, symbol: impl Fn(usize) -> f64 + Sync) {
        for c in &mut self.comps {
            c.par_iter_mut()
                .enumerate()
                .for_each(|(idx, z)| *z *= symbol(idx));
        }
    }

    /// Friedrichs operator `J_R`: keeps only modes with `|k| < R`.
    pub fn friedrichs_truncate(&self, radius: f64) -> Self {
        let mut out = self.clone();
        out.truncate_in_place(radius);
        out
    }

    pub fn truncate_in_place(&mut self, radius: f64) {
        let g = self.grid;
        let r2 = radius * radius;
        self.apply_symbol(|idx| if g.k_squared(idx) < r2 { 1.0 } else { 0.0 });
    }

    /// Zeroes modes outside the 2/3-rule dealias sphere.
    pub fn dealias_in_place(&mut self) {
        let r = self.grid.dealias_radius();
        self.truncate_in_place(r);
    }

    /// `J_R` with the grid's own radius.
    pub fn truncate_to_grid(&mut self) {
        let r = self.grid.truncation_radius();
        self.truncate_in_place(r);
    }

    /// Spectral interpolation onto `grid`: modes with every `|k_j|` below both
    /// Nyquist limits are copied, all others are zero.
    pub fn resampled(&self, grid: GridSpec) -> Self {
        let src = self.grid;
        let lim = (src.n_modes().min(grid.n_modes()) / 2) as i64;
        let mut out = SpectralVectorField::zeros(grid);
        for (a, c) in out.comps.iter_mut().enumerate() {
            c.par_iter_mut().enumerate().for_each(|(idx, z)| {
                let [i0, i1, i2] = grid.split_index(idx);
                let k = [grid.wavenumber(i0), grid.wavenumber(i1), grid.wavenumber(i2)];
                if k.iter().all(|kj| kj.abs() < lim) {
                    if let Some(j) = src.mode_index(k) {
                        *z = self.comps[a][j];
                    }
                }
            });
        }
        out
    }

    /// Largest coefficient magnitude among modes with `|k| ≥ radius`.
    pub fn max_abs_outside(&self, radius: f64) -> f64 {
        let g = self.grid;
        let r2 = radius * radius;
        self.comps
            .iter()
            .map(|c| {
                c.par_iter()
                    .enumerate()
                    .filter(|(idx, _)| g.k_squared(*idx) >= r2)
                    .map(|(_, z)| z.norm())
                    .reduce(|| 0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Leray projector `M(k) = I − k kᵀ/|k|²`; the mean mode passes through.
    pub fn leray_project(&self) -> Self {
        let mut out = self.clone();
        out.leray_project_in_place();
        out
    }

    pub fn leray_project_in_place(&mut self) {
        let g = self.grid;
        let [c0, c1, c2] = &mut self.comps;
        c0.par_iter_mut()
            .zip(c1.par_iter_mut())
            .zip(c2.par_iter_mut())
            .enumerate()
            .for_each(|(idx, ((a, b), c))| {
                let k = g.derivative_wavevector(idx);
                let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
                if k2 == 0.0 {
                    return;
                }
                let kdotv = (k[0] * *a + k[1] * *b + k[2] * *c) / k2;
                *a -= k[0] * kdotv;
                *b -= k[1] * kdotv;
                *c -= k[2] * kdotv;
            });
    }

    pub fn divergence(&self) -> SpectralScalar {
        let g = self.grid;
        let coeffs = (0..g.len())
            .into_par_iter()
            .map(|idx| {
                let k = g.derivative_wavevector(idx);
                I * (k[0] * self.comps[0][idx] + k[1] * self.comps[1][idx] + k[2] * self.comps[2][idx])
            })
            .collect();
        SpectralScalar { grid: g, coeffs }
    }

    pub fn gradient(&self) -> SpectralTensor {
        let g = self.grid;
        let comps = std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                self.comps[i]
                    .par_iter()
                    .enumerate()
                    .map(|(idx, &c)| I * g.derivative_wavevector(idx)[j] * c)
                    .collect()
            })
        });
        SpectralTensor { grid: g, comps }
    }

    /// `ν_h Δ_h s + ν_v ∂₃² s`, i.e. multiplication by `−(ν_h(k₁²+k₂²) + ν_v k₃²)`.
    pub fn laplacian(&self, nu_h: f64, nu_v: f64) -> Self {
        let g = self.grid;
        let mut out = self.clone();
        out.apply_symbol(|idx| -viscous_symbol(&g, idx, nu_h, nu_v));
        out
    }

    /// Discrete `L²` inner product `(2π)³ Σ_k Re(f̂·conj ĝ)`.
    pub fn inner(&self, other: &SpectralVectorField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let n = self.grid.len();
        VOLUME
            * par_sum(n, |idx| {
                (0..3)
                    .map(|a| {
                        let (x, y) = (self.comps[a][idx], other.comps[a][idx]);
                        x.re * y.re + x.im * y.im
                    })
                    .sum()
            })
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.weighted_norm_sq(|_| 1.0)
    }

    /// `(2π)³ Σ_k w(k) |ĉ(k)|²`.
    pub fn weighted_norm_sq(&self, weight: impl Fn(usize) -> f64 + Sync) -> f64 {
        VOLUME
            * par_sum(self.grid.len(), |idx| {
                let w = weight(idx);
                if w == 0.0 {
                    return 0.0;
                }
                w * (self.comps[0][idx].norm_sqr()
                    + self.comps[1][idx].norm_sqr()
                    + self.comps[2][idx].norm_sqr())
            })
    }

    /// `‖∇s‖²_{L²}`.
    pub fn h1dot_norm_sq(&self) -> f64 {
        let g = self.grid;
        self.weighted_norm_sq(|idx| g.k_squared(idx))
    }

    /// `‖Δs‖²_{L²}`.
    pub fn h2dot_norm_sq(&self) -> f64 {
        let g = self.grid;
        self.weighted_norm_sq(|idx| {
            let k2 = g.k_squared(idx);
            k2 * k2
        })
    }

    /// Sobolev norm of order `s`: weight `(1+|k|²)^s`, or `|k|^{2s}` without
    /// the mean mode when `homogeneous` is set.
    pub fn sobolev_norm(&self, order: f64, homogeneous: bool) -> Result<f64> {
        let g = self.grid;
        if homogeneous && order < 0.0 {
            let mean = self.mode([0, 0, 0]);
            if mean.iter().any(|z| z.norm() != 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "homogeneous norm of negative order {order} needs a mean-free field"
                )));
            }
        }
        let sq = if homogeneous {
            self.weighted_norm_sq(|idx| {
                let k2 = g.k_squared(idx);
                if k2 == 0.0 {
                    0.0
                } else {
                    k2.powf(order)
                }
            })
        } else {
            self.weighted_norm_sq(|idx| (1.0 + g.k_squared(idx)).powf(order))
        };
        Ok(sq.sqrt())
    }

    /// Root-mean-square divergence in `L²`, `‖div s‖_{L²}`.
    pub fn divergence_l2(&self) -> f64 {
        self.divergence().l2_norm_sq().sqrt()
    }
}

/// `ν_h(k₁²+k₂²) + ν_v k₃²` at a coefficient index.
#[inline]
pub fn viscous_symbol(g: &GridSpec, idx: usize, nu_h: f64, nu_v: f64) -> f64 {
    let k = g.wavevector(idx);
    nu_h * (k[0] * k[0] + k[1] * k[1]) + nu_v * k[2] * k[2]
}

/// Real three-component field sampled on the `N³` collocation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalVectorField {
    grid: GridSpec,
    comps: [Vec<f64>; 3],
}

impl PhysicalVectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        PhysicalVectorField {
            grid,
            comps: std::array::from_fn(|_| vec![0.0; grid.len()]),
        }
    }

    pub fn new(grid: GridSpec, comps: [Vec<f64>; 3]) -> Result<Self> {
        if comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::GridMismatch(format!(
                "each component must hold {} values",
                grid.len()
            )));
        }
        let field = PhysicalVectorField { grid, comps };
        if !field.is_finite() {
            return Err(Error::NonFinite("physical field"));
        }
        Ok(field)
    }

    /// Samples `f` at every collocation point.
    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> [f64; 3] + Sync) -> Self {
        let vals: Vec<[f64; 3]> = (0..grid.len())
            .into_par_iter()
            .map(|idx| f(grid.point(idx)))
            .collect();
        let comps = std::array::from_fn(|a| vals.iter().map(|v| v[a]).collect());
        PhysicalVectorField { grid, comps }
    }

    pub(crate) fn from_raw(grid: GridSpec, comps: [Vec<f64>; 3]) -> Self {
        debug_assert!(comps.iter().all(|c| c.len() == grid.len()));
        PhysicalVectorField { grid, comps }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn component(&self, a: usize) -> &[f64] {
        &self.comps[a]
    }

    pub fn components(&self) -> &[Vec<f64>; 3] {
        &self.comps
    }

    pub fn into_components(self) -> [Vec<f64>; 3] {
        self.comps
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [f64; 3] {
        [self.comps[0][idx], self.comps[1][idx], self.comps[2][idx]]
    }

    pub fn is_finite(&self) -> bool {
        self.comps
            .iter()
            .all(|c| c.par_iter().all(|v| v.is_finite()))
    }

    /// Largest pointwise Euclidean magnitude `max_x |v(x)|`.
    pub fn max_magnitude(&self) -> f64 {
        (0..self.grid.len())
            .into_par_iter()
            .map(|idx| {
                let v = self.at(idx);
                (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Quadrature `(2π/N)³ Σ_x v(x)·w(x)`.
    pub fn inner(&self, other: &PhysicalVectorField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.grid.cell_volume()
            * par_sum(self.grid.len(), |idx| {
                (0..3).map(|a| self.comps[a][idx] * other.comps[a][idx]).sum()
            })
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.inner(self)
    }
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Inverse,
}

/// Planned 3-D transforms for one grid.
///
/// Plans are immutable and scratch space is allocated per call, so a single
/// `Transform` may be shared across threads.
#[derive(Clone)]
pub struct Transform {
    grid: GridSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Transform").field("grid", &self.grid).finish()
    }
}

impl Transform {
    pub fn new(grid: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let n = grid.n_modes();
        Transform {
            grid,
            forward: planner.plan_fft(n, FftDirection::Forward),
            inverse: planner.plan_fft(n, FftDirection::Inverse),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Physical samples to coefficients.
    pub fn forward(&self, p: &PhysicalVectorField) -> Result<SpectralVectorField> {
        self.grid.ensure_same(p.grid())?;
        if !p.is_finite() {
            return Err(Error::NonFinite("forward transform input"));
        }
        let [a, b, c] = p.components();
        let mut out = self.forward_reals(&[a, b, c]).into_iter();
        let comps = std::array::from_fn(|_| out.next().unwrap());
        Ok(SpectralVectorField {
            grid: self.grid,
            comps,
        })
    }

    /// Coefficients to physical samples; rejects fields that are not the
    /// spectrum of a real field.
    pub fn inverse(&self, s: &SpectralVectorField) -> Result<PhysicalVectorField> {
        self.grid.ensure_same(s.grid())?;
        if !s.is_finite() {
            return Err(Error::NonFinite("inverse transform input"));
        }
        let defect = s.hermitian_defect();
        if defect > HERMITIAN_TOL {
            return Err(Error::NotHermitian { defect });
        }
        Ok(self.inverse_unchecked(s))
    }

    pub(crate) fn inverse_unchecked(&self, s: &SpectralVectorField) -> PhysicalVectorField {
        let [a, b, c] = s.components();
        let mut out = self.inverse_reals(&[a, b, c]).into_iter();
        let comps = std::array::from_fn(|_| out.next().unwrap());
        PhysicalVectorField {
            grid: self.grid,
            comps,
        }
    }

    /// Inverse transforms of several Hermitian spectra, two per complex FFT.
    pub(crate) fn inverse_reals(&self, specs: &[&[Complex64]]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(specs.len());
        for pair in specs.chunks(2) {
            let mut buf: Vec<Complex64> = match pair {
                [a, b] => a.par_iter().zip(b.par_iter()).map(|(x, y)| x + I * y).collect(),
                [a] => a.to_vec(),
                _ => unreachable!(),
            };
            self.fft3(&mut buf, Direction::Inverse);
            out.push(buf.par_iter().map(|z| z.re).collect());
            if pair.len() == 2 {
                out.push(buf.par_iter().map(|z| z.im).collect());
            }
        }
        out
    }

    /// Forward transforms of several real fields, two per complex FFT.
    pub(crate) fn forward_reals(&self, reals: &[&[f64]]) -> Vec<Vec<Complex64>> {
        let g = self.grid;
        let norm = 1.0 / g.len() as f64;
        let mut out = Vec::with_capacity(reals.len());
        for pair in reals.chunks(2) {
            let mut buf: Vec<Complex64> = match pair {
                [a, b] => a
                    .par_iter()
                    .zip(b.par_iter())
                    .map(|(&x, &y)| Complex64::new(x, y))
                    .collect(),
                [a] => a.par_iter().map(|&x| Complex64::new(x, 0.0)).collect(),
                _ => unreachable!(),
            };
            self.fft3(&mut buf, Direction::Forward);
            if pair.len() == 2 {
                // Z = A + iB with A, B Hermitian: A = (Z + conj Z(−k))/2, B = (Z − conj Z(−k))/(2i).
                let (a, b): (Vec<_>, Vec<_>) = (0..g.len())
                    .into_par_iter()
                    .map(|idx| {
                        let z = buf[idx];
                        let zc = buf[g.conj_index(idx)].conj();
                        ((z + zc) * (0.5 * norm), (z - zc) * Complex64::new(0.0, -0.5 * norm))
                    })
                    .unzip();
                out.push(a);
                out.push(b);
            } else {
                buf.par_iter_mut().for_each(|z| *z *= norm);
                out.push(buf);
            }
        }
        out
    }

    /// Unnormalized 3-D FFT: transform along the contiguous axis, then rotate
    /// the axes `[i0][i1][i2] → [i2][i0][i1]`; three rounds restore the layout.
    fn fft3(&self, data: &mut Vec<Complex64>, dir: Direction) {
        let n = self.grid.n_modes();
        let plane = n * n;
        let fft = match dir {
            Direction::Forward => &self.forward,
            Direction::Inverse => &self.inverse,
        };
        let scratch_len = fft.get_inplace_scratch_len();
        let mut rotated = vec![ZERO; data.len()];
        for _ in 0..3 {
            data.par_chunks_mut(plane).for_each_init(
                || vec![ZERO; scratch_len],
                |scratch, chunk| fft.process_with_scratch(chunk, scratch),
            );
            let src = &*data;
            rotated
                .par_chunks_mut(plane)
                .enumerate()
                .for_each(|(i2, out)| {
                    for i0 in 0..n {
                        for i1 in 0..n {
                            out[i0 * n + i1] = src[(i0 * n + i1) * n + i2];
                        }
                    }
                });
            std::mem::swap(data, &mut rotated);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    fn random_physical(g: GridSpec, seed: u64) -> PhysicalVectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let comps = std::array::from_fn(|_| (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        PhysicalVectorField::new(g, comps).unwrap()
    }

    fn rel_diff(a: &SpectralVectorField, b: &SpectralVectorField) -> f64 {
        a.sub(b).max_abs() / a.max_abs().max(b.max_abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(6).is_err());
        assert!(GridSpec::new(9).is_err());
        assert!(GridSpec::new(8).is_ok());
        assert!(grid(8).with_truncation_radius(4.5).is_err());
        assert!(grid(8).with_truncation_radius(4.0).is_ok());
        assert!(GridSpec::with_parameters(8, 2.0, 0.0).is_err());
        let g = grid(8);
        assert_eq!(g.wavenumber(4), 4);
        assert_eq!(g.wavenumber(5), -3);
        assert_eq!(g.mode_index([-4, 0, 0]), None);
        let idx = g.mode_index([1, -2, 3]).unwrap();
        assert_eq!(g.wavevector(idx), [1.0, -2.0, 3.0]);
        assert_eq!(g.wavevector(g.conj_index(idx)), [-1.0, 2.0, -3.0]);
    }

    #[test]
    fn grid_serde_defaults() {
        let g: GridSpec = serde_json::from_str(r#"{"n_modes": 12}"#).unwrap();
        assert_eq!(g, grid(12));
        assert!(serde_json::from_str::<GridSpec>(r#"{"n_modes": 7}"#).is_err());
        let back: GridSpec = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn constant_field_has_only_mean_mode() {
        let g = grid(8);
        let t = Transform::new(g);
        let p = PhysicalVectorField::from_fn(g, |_| [1.0, 0.0, -2.5]);
        let s = t.forward(&p).unwrap();
        assert!((s.mode([0, 0, 0])[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((s.mode([0, 0, 0])[2] - Complex64::new(-2.5, 0.0)).norm() < 1e-15);
        let mut rest = s.clone();
        rest.set_real_mode([0, 0, 0], [ZERO; 3]).unwrap();
        assert!(rest.max_abs() < 1e-15);
    }

    #[test]
    fn sine_matches_direct_dft() {
        let g = grid(8);
        let t = Transform::new(g);
        let p = PhysicalVectorField::from_fn(g, |x| [x[0].sin(), 0.0, 0.0]);
        let s = t.forward(&p).unwrap();
        // direct O(N⁶) DFT as the oracle
        let n = g.n_modes();
        for idx in 0..g.len() {
            let k = g.wavevector(idx);
            let mut acc = ZERO;
            for j in 0..g.len() {
                let x = g.point(j);
                let phase = -(k[0] * x[0] + k[1] * x[1] + k[2] * x[2]);
                acc += p.component(0)[j] * Complex64::new(phase.cos(), phase.sin());
            }
            acc /= (n * n * n) as f64;
            assert!((acc - s.component(0)[idx]).norm() < 1e-14);
        }
        assert!((s.mode([1, 0, 0])[0] - Complex64::new(0.0, -0.5)).norm() < 1e-15);
        assert!((s.mode([-1, 0, 0])[0] - Complex64::new(0.0, 0.5)).norm() < 1e-15);
        let mut rest = s.clone();
        rest.set_real_mode([1, 0, 0], [ZERO; 3]).unwrap();
        assert!(rest.max_abs() < 1e-15);
    }

    #[test]
    fn inverse_of_sine_pair() {
        let g = grid(8);
        let t = Transform::new(g);
        let mut s = SpectralVectorField::zeros(g);
        s.set_real_mode([1, 0, 0], [Complex64::new(0.0, -0.5), ZERO, ZERO])
            .unwrap();
        let p = t.inverse(&s).unwrap();
        for idx in 0..g.len() {
            let x = g.point(idx);
            assert!((p.component(0)[idx] - x[0].sin()).abs() <= 1e-12);
        }
        assert_eq!(t.inverse(&SpectralVectorField::zeros(g)).unwrap(), PhysicalVectorField::zeros(g));
    }

    #[test]
    fn round_trips() {
        for n in [8, 16] {
            let g = grid(n);
            let t = Transform::new(g);
            let p = random_physical(g, 7);
            let back = t.inverse(&t.forward(&p).unwrap()).unwrap();
            for a in 0..3 {
                let err = p.component(a)
                    .iter()
                    .zip(back.component(a))
                    .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                assert!(err <= 1e-12, "round trip error {err}");
            }
            let s = t.forward(&p).unwrap().friedrichs_truncate(g.truncation_radius());
            let s2 = t.forward(&t.inverse(&s).unwrap()).unwrap();
            assert!(rel_diff(&s, &s2) <= 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let g = grid(8);
        let t = Transform::new(g);
        let mut comps: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; g.len()]);
        comps[1][3] = f64::NAN;
        assert!(PhysicalVectorField::new(g, comps).is_err());
        let mut s = SpectralVectorField::zeros(g);
        let idx = g.mode_index([1, 2, 0]).unwrap();
        s.component_mut(0)[idx] = Complex64::new(1.0, 0.0);
        assert!(matches!(t.inverse(&s), Err(Error::NotHermitian { .. })));
        let other = GridSpec::new(10).unwrap();
        assert!(t.inverse(&SpectralVectorField::zeros(other)).is_err());
    }

    #[test]
    fn truncation() {
        let g = grid(16);
        let t = Transform::new(g);
        let s = t.forward(&random_physical(g, 3)).unwrap();
        assert_eq!(s.friedrichs_truncate(9.0 * 3f64.sqrt()), s);
        let mut single = SpectralVectorField::zeros(g);
        single
            .set_real_mode([3, 4, 0], [Complex64::new(1.0, 0.5); 3])
            .unwrap();
        assert!(single.friedrichs_truncate(4.0).max_abs() == 0.0);
        assert_eq!(single.friedrichs_truncate(5.0).max_abs(), 0.0);
        assert!(single.friedrichs_truncate(5.01).max_abs() > 0.0);
        let j = s.friedrichs_truncate(4.0);
        assert!(j.l2_norm_sq() <= s.l2_norm_sq());
        assert_eq!(j.friedrichs_truncate(4.0), j);
        assert_eq!(j.max_abs_outside(4.0), 0.0);
    }

    #[test]
    fn leray_annihilates_gradients_and_fixes_solenoidal() {
        let g = grid(16);
        let t = Transform::new(g);
        let q = t.forward(&random_physical(g, 11)).unwrap();
        let mut q0 = SpectralScalar::from_coeffs(g, q.component(0).to_vec()).unwrap();
        q0.coeffs_mut()[0] = ZERO;
        let grad = q0.gradient();
        assert!(grad.leray_project().max_abs() <= 1e-12 * grad.max_abs());

        let s = q.leray_project();
        assert!(s.divergence_l2() <= 1e-10);
        assert!(rel_diff(&s, &s.leray_project()) <= 1e-12);
    }

    #[test]
    fn spectral_derivatives_of_trig_polynomials() {
        let g = grid(16);
        let t = Transform::new(g);
        let u = PhysicalVectorField::from_fn(g, |x| {
            [
                (2.0 * x[1]).sin() * x[2].cos(),
                (x[0] + 3.0 * x[2]).cos(),
                (x[0] - x[1]).sin(),
            ]
        });
        let s = t.forward(&u).unwrap();
        let grad = t.inverse_unchecked(&SpectralVectorField::from_components(
            g,
            [
                s.gradient().entry(0, 1).to_vec(),
                s.gradient().entry(1, 2).to_vec(),
                s.gradient().entry(2, 0).to_vec(),
            ],
        )
        .unwrap());
        let lap = t.inverse(&s.laplacian(1.0, 1.0)).unwrap();
        for idx in 0..g.len() {
            let x = g.point(idx);
            let d01 = 2.0 * (2.0 * x[1]).cos() * x[2].cos();
            let d12 = -3.0 * (x[0] + 3.0 * x[2]).sin();
            let d20 = (x[0] - x[1]).cos();
            assert!((grad.component(0)[idx] - d01).abs() <= 1e-12);
            assert!((grad.component(1)[idx] - d12).abs() <= 1e-12);
            assert!((grad.component(2)[idx] - d20).abs() <= 1e-12);
            let l0 = -5.0 * (2.0 * x[1]).sin() * x[2].cos();
            assert!((lap.component(0)[idx] - l0).abs() <= 1e-12);
        }
    }

    #[test]
    fn divergence_and_gradient_edge_cases() {
        let g = grid(8);
        let t = Transform::new(g);
        let s = t
            .forward(&PhysicalVectorField::from_fn(g, |x| [0.0, x[0].sin(), 0.0]))
            .unwrap();
        assert!(s.divergence().coeffs().iter().all(|z| z.norm() < 1e-15));
        let c = t
            .forward(&PhysicalVectorField::from_fn(g, |_| [1.0, 2.0, 3.0]))
            .unwrap();
        assert_eq!(c.gradient().max_abs(), 0.0);
    }

    #[test]
    fn laplacian_matches_finite_differences() {
        let g = grid(16);
        let t = Transform::new(g);
        let s = t
            .forward(&PhysicalVectorField::from_fn(g, |x| [x[0].sin(), 0.0, 0.0]))
            .unwrap();
        let lap = t.inverse(&s.laplacian(1.0, 1.0)).unwrap();
        let h = 1e-3;
        for idx in 0..g.len() {
            let x = g.point(idx)[0];
            let fd = ((x + h).sin() - 2.0 * x.sin() + (x - h).sin()) / (h * h);
            assert!((lap.component(0)[idx] - fd).abs() < 1e-6);
            assert!((lap.component(0)[idx] + x.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn sobolev_norms() {
        let g = grid(8);
        let t = Transform::new(g);
        let s = t
            .forward(&PhysicalVectorField::from_fn(g, |x| [x[0].sin(), 0.0, 0.0]))
            .unwrap();
        let l2 = s.sobolev_norm(0.0, false).unwrap();
        assert!((l2 * l2 - VOLUME / 2.0).abs() < 1e-12 * VOLUME);
        let h1 = s.sobolev_norm(1.0, true).unwrap();
        assert!((h1 - l2).abs() < 1e-13);
        let zero = SpectralVectorField::zeros(g);
        for order in [-1.0, 0.0, 0.5, 2.0] {
            assert_eq!(zero.sobolev_norm(order, false).unwrap(), 0.0);
            assert_eq!(zero.sobolev_norm(order, true).unwrap(), 0.0);
        }
        let mean = t
            .forward(&PhysicalVectorField::from_fn(g, |_| [1.0, 0.0, 0.0]))
            .unwrap();
        assert!(mean.sobolev_norm(-1.0, true).is_err());
        assert!(mean.sobolev_norm(-1.0, false).is_ok());
    }
}
