//! Axisymmetric target surfaces, their least-squares surface-harmonic
//! projection, and truncation-error metrics.
//!
//! A profile is a half-height `h(ρ)` on `0 ≤ ρ ≤ ρ_max`. The closed surface is
//! `z = ±h(ρ)` revolved about the `z` (polar) axis, so the rim `ρ = ρ_max`
//! lies on the equator.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{report_for_state, EnergyParams};
use crate::geometry::{CoefficientArray, GeometryError, HarmonicGrid, SurfaceState};
use crate::quadrature::{gauss_legendre, CompensatedSum, SphereGrid};
use crate::shbasis::mode_count;

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("profile is not star-shaped: the ray at θ = {theta} meets it {crossings} times")]
    NotStarShaped { theta: f64, crossings: usize },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("least-squares system is rank deficient for degree {degree}")]
    RankDeficient { degree: usize },
    #[error("profile file: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile file: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Half-height of an axisymmetric body as a function of distance from the axis.
pub trait Profile: Send + Sync {
    /// Equatorial radius; `h(extent) = 0`.
    fn extent(&self) -> f64;
    /// `[h, h', h'']` at `0 ≤ rho ≤ extent`.
    fn height(&self, rho: f64) -> [f64; 3];
}

/// Biconcave red-blood-cell profile coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbcShapeParams {
    pub r0: f64,
    pub c0: f64,
    pub c2: f64,
    pub c4: f64,
}

impl RbcShapeParams {
    /// Average cell at 300 mOsm.
    pub const TONICITY_300: Self = Self {
        r0: 3.91,
        c0: 0.81,
        c2: 7.83,
        c4: -4.39,
    };
    /// Average cell at 217 mOsm.
    pub const TONICITY_217: Self = Self {
        r0: 3.80,
        c0: 2.10,
        c2: 7.58,
        c4: -5.59,
    };

    /// Coefficient-wise `(1 - w)·a + w·b`.
    pub fn blend(a: Self, b: Self, w: f64) -> Self {
        let mix = |x: f64, y: f64| (1.0 - w) * x + w * y;
        Self {
            r0: mix(a.r0, b.r0),
            c0: mix(a.c0, b.c0),
            c2: mix(a.c2, b.c2),
            c4: mix(a.c4, b.c4),
        }
    }

    /// Blend with weight `w` on the 217 mOsm row.
    pub fn tonicity_blend(w: f64) -> Self {
        Self::blend(Self::TONICITY_300, Self::TONICITY_217, w)
    }
}

/// `h = (0.5 / r0)(1 - x²)(c0 + c2 x² + c4 x⁴)`.
pub fn rbc_profile(params: &RbcShapeParams, x: f64) -> f64 {
    let x2 = x * x;
    0.5 / params.r0 * (1.0 - x2) * (params.c0 + params.c2 * x2 + params.c4 * x2 * x2)
}

/// `h = (0.5 / r0)·sqrt(1 - x²)(c0 + c2 x² + c4 x⁴)`, the rounded-rim form.
pub fn rbc_profile_rounded(params: &RbcShapeParams, x: f64) -> f64 {
    let x2 = x * x;
    0.5 / params.r0 * (1.0 - x2).max(0.0).sqrt() * (params.c0 + params.c2 * x2 + params.c4 * x2 * x2)
}

/// How the two halves of the cell profile meet at the rim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RimShape {
    /// Factor `sqrt(1 - x²)`: vertical tangent, smooth closed surface.
    #[default]
    Rounded,
    /// Factor `1 - x²`: the halves meet at a ridge.
    Ridge,
}

impl std::str::FromStr for RimShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rounded" => Ok(Self::Rounded),
            "ridge" => Ok(Self::Ridge),
            other => Err(format!("unknown rim shape {other:?} (expected rounded or ridge)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbcProfile {
    pub params: RbcShapeParams,
    pub rim: RimShape,
}

impl Profile for RbcProfile {
    fn extent(&self) -> f64 {
        1.0
    }

    fn height(&self, x: f64) -> [f64; 3] {
        let p = &self.params;
        let k = 0.5 / p.r0;
        let x2 = x * x;
        let poly = [
            p.c0 + x2 * (p.c2 + x2 * p.c4),
            x * (2.0 * p.c2 + 4.0 * p.c4 * x2),
            2.0 * p.c2 + 12.0 * p.c4 * x2,
        ];
        let g = match self.rim {
            RimShape::Ridge => [1.0 - x2, -2.0 * x, -2.0],
            RimShape::Rounded => {
                let g = (1.0 - x2).max(0.0).sqrt();
                [g, -x / g, -1.0 / (g * g * g)]
            }
        };
        [
            k * g[0] * poly[0],
            k * (g[1] * poly[0] + g[0] * poly[1]),
            k * (g[2] * poly[0] + 2.0 * g[1] * poly[1] + g[0] * poly[2]),
        ]
    }
}

/// Ellipse with equatorial semi-axis `a` and polar semi-axis `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseProfile {
    pub a: f64,
    pub c: f64,
}

impl Profile for EllipseProfile {
    fn extent(&self) -> f64 {
        self.a
    }

    fn height(&self, rho: f64) -> [f64; 3] {
        let u = (1.0 - (rho / self.a).powi(2)).max(0.0);
        let s = u.sqrt();
        let h = self.c * s;
        let dh = -self.c * rho / (self.a * self.a * s);
        let d2h = -self.c / (self.a * self.a * s * u);
        [h, dh, d2h]
    }
}

/// Natural cubic spline through `(x, h)` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineProfile {
    xs: Vec<f64>,
    hs: Vec<f64>,
    /// Second derivatives at the knots.
    ms: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct ProfileRecord {
    x: f64,
    h: f64,
}

impl SplineProfile {
    /// Fits all samples; only the `x ≥ 0` part is used as the profile.
    pub fn new(xs: &[f64], hs: &[f64]) -> Result<Self, ReconstructError> {
        if xs.len() != hs.len() {
            return Err(ReconstructError::InvalidProfile("x and h lengths differ".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ReconstructError::InvalidProfile("x must be strictly increasing".into()));
        }
        if xs.iter().any(|x| x.abs() > 1.0) {
            return Err(ReconstructError::InvalidProfile("x must lie in [-1, 1]".into()));
        }
        if xs.len() < 3 || xs[xs.len() - 1] <= 0.0 {
            return Err(ReconstructError::InvalidProfile(
                "need at least three samples reaching x > 0".into(),
            ));
        }
        let (xs, hs) = (xs.to_vec(), hs.to_vec());
        let n = xs.len();
        // tridiagonal system for interior second derivatives, natural ends
        let mut ms = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            let (h0, h1) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
            diag[i] = 2.0 * (h0 + h1);
            rhs[i] = 6.0 * ((hs[i + 1] - hs[i]) / h1 - (hs[i] - hs[i - 1]) / h0);
        }
        for i in 2..n - 1 {
            let lower = xs[i] - xs[i - 1];
            let factor = lower / diag[i - 1];
            diag[i] -= factor * lower;
            rhs[i] -= factor * rhs[i - 1];
        }
        for i in (1..n - 1).rev() {
            let upper = if i + 1 < n - 1 {
                (xs[i + 1] - xs[i]) * ms[i + 1]
            } else {
                0.0
            };
            ms[i] = (rhs[i] - upper) / diag[i];
        }
        Ok(Self { xs, hs, ms })
    }

    /// Reads a CSV file with header `x,h`.
    pub fn from_csv(path: &Path) -> Result<Self, ReconstructError> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut xs = Vec::new();
        let mut hs = Vec::new();
        for rec in reader.deserialize() {
            let rec: ProfileRecord = rec?;
            xs.push(rec.x);
            hs.push(rec.h);
        }
        Self::new(&xs, &hs)
    }
}

impl Profile for SplineProfile {
    fn extent(&self) -> f64 {
        *self.xs.last().expect("non-empty")
    }

    fn height(&self, x: f64) -> [f64; 3] {
        let n = self.xs.len();
        let i = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let (m0, m1) = (self.ms[i], self.ms[i + 1]);
        let step = x1 - x0;
        let (a, b) = (x1 - x, x - x0);
        let h = m0 * a.powi(3) / (6.0 * step)
            + m1 * b.powi(3) / (6.0 * step)
            + (self.hs[i] / step - m0 * step / 6.0) * a
            + (self.hs[i + 1] / step - m1 * step / 6.0) * b;
        let dh = -m0 * a * a / (2.0 * step) + m1 * b * b / (2.0 * step) + (self.hs[i + 1] - self.hs[i]) / step
            - (m1 - m0) * step / 6.0;
        let d2h = (m0 * a + m1 * b) / step;
        [h, dh, d2h]
    }
}

const STAR_SAMPLES: usize = 2000;

/// `(ρ, z)` where the ray at polar angle `theta` leaves the revolved profile.
fn ray_intersection(profile: &dyn Profile, theta: f64) -> Result<(f64, f64), ReconstructError> {
    let rho_max = profile.extent();
    let (s, c) = theta.sin_cos();
    let c = c.abs();
    // the ray hits z = h(ρ) where ρ cos θ = h(ρ) sin θ
    let f = |rho: f64| rho * c - profile.height(rho)[0] * s;
    let mut crossings = 0;
    let mut bracket = None;
    let mut prev = (0.0, f(0.0));
    for k in 1..=STAR_SAMPLES {
        let rho = rho_max * k as f64 / STAR_SAMPLES as f64;
        let cur = (rho, f(rho));
        if (prev.1 < 0.0) != (cur.1 < 0.0) {
            crossings += 1;
            bracket.get_or_insert((prev, cur));
        }
        prev = cur;
    }
    let Some(((mut lo, mut f_lo), (mut hi, _))) = bracket else {
        return Err(ReconstructError::InvalidProfile(format!(
            "no intersection at θ = {theta}"
        )));
    };
    if crossings > 1 {
        return Err(ReconstructError::NotStarShaped { theta, crossings });
    }
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let rho = 0.5 * (lo + hi);
    Ok((rho, profile.height(rho)[0]))
}

/// Distance from the origin to the revolved profile along polar angle `theta`.
pub fn profile_to_radius(profile: &dyn Profile, theta: f64) -> Result<f64, ReconstructError> {
    if (theta - PI / 2.0).abs() < 1e-15 {
        return Ok(profile.extent());
    }
    let (rho, z) = ray_intersection(profile, theta)?;
    Ok(rho.hypot(z))
}

/// Area, volume and bending energy of a target, integrated along the profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetProperties {
    pub s_area: f64,
    pub volume: f64,
    pub e_bend: f64,
}

/// A revolved profile with a label for output.
pub struct TargetSurface {
    pub profile: Box<dyn Profile>,
    pub label: String,
}

impl std::fmt::Debug for TargetSurface {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TargetSurface").field("label", &self.label).finish()
    }
}

impl TargetSurface {
    pub fn new(profile: impl Profile + 'static, label: impl Into<String>) -> Self {
        Self {
            profile: Box::new(profile),
            label: label.into(),
        }
    }

    /// Red-blood-cell target with weight `w` on the 217 mOsm row.
    pub fn rbc_blend(w: f64, rim: RimShape) -> Self {
        let profile = RbcProfile {
            params: RbcShapeParams::tonicity_blend(w),
            rim,
        };
        Self::new(profile, format!("rbc-blend-{w}"))
    }

    pub fn radius(&self, theta: f64) -> Result<f64, ReconstructError> {
        profile_to_radius(self.profile.as_ref(), theta)
    }

    /// Radius at every node of `grid`, node order.
    pub fn sample(&self, grid: &SphereGrid) -> Result<Vec<f64>, ReconstructError> {
        let mut out = Vec::with_capacity(grid.len());
        for &theta in grid.thetas() {
            let r = self.radius(theta)?;
            out.extend(std::iter::repeat_n(r, grid.n_phi()));
        }
        Ok(out)
    }

    /// Integrates both halves along the profile with an `n`-point Gauss rule
    /// in `t`, `ρ = ρ_max sin t`; the rim itself is never sampled.
    pub fn properties(&self, kappa_c: f64, c0: f64, n: usize) -> TargetProperties {
        let rho_max = self.profile.extent();
        let (nodes, weights) = gauss_legendre(n);
        let (mut s_area, mut volume, mut curv) = (0.0, 0.0, 0.0);
        for (u, w) in nodes.iter().zip(&weights) {
            let t = PI / 4.0 * (u + 1.0);
            let rho = rho_max * t.sin();
            let w = PI / 4.0 * w * rho_max * t.cos();
            let [h, dh, d2h] = self.profile.height(rho);
            let q = (1.0 + dh * dh).sqrt();
            let k_meridian = d2h / (q * q * q);
            let k_parallel = dh / (rho * q);
            let da = 2.0 * PI * rho * q * w;
            s_area += da;
            volume += 2.0 * PI * rho * h * w;
            curv += (k_meridian + k_parallel - c0).powi(2) * da;
        }
        TargetProperties {
            s_area: 2.0 * s_area,
            volume: 2.0 * volume,
            e_bend: 2.0 * 0.5 * kappa_c * curv,
        }
    }
}

/// Weighted least-squares fit of `values` (one per node) by all modes of
/// degree `≤ hg.degree()`.
pub fn project_values(values: &[f64], hg: &HarmonicGrid) -> Result<CoefficientArray, ReconstructError> {
    let grid = hg.grid();
    let table = hg.table();
    let degree = hg.degree();
    let modes = mode_count(degree);
    let (n_t, n_p) = (grid.n_theta(), grid.n_phi());
    if values.len() != grid.len() {
        return Err(GeometryError::FieldSize {
            expected: grid.len(),
            got: values.len(),
        }
        .into());
    }
    let trig = |l: usize, i: usize| {
        let mode = table.modes()[i];
        let (c, s) = table.trig(l, mode.order());
        if mode.is_cosine() {
            c
        } else {
            s
        }
    };
    // φ-sums of trig products and of trig times values, per θ row
    let mut phi_gram = DMatrix::<f64>::zeros(modes, modes);
    for l in 0..n_p {
        for i in 0..modes {
            for j in i..modes {
                phi_gram[(i, j)] += trig(l, i) * trig(l, j);
            }
        }
    }
    let mut gram = DMatrix::<f64>::zeros(modes, modes);
    let mut rhs = DVector::<f64>::zeros(modes);
    for k in 0..n_t {
        let w = grid.weight(k, 0);
        let row = &values[k * n_p..(k + 1) * n_p];
        for i in 0..modes {
            let p_i = table.legendre(k, i)[0];
            let fourier: f64 = row.iter().enumerate().map(|(l, v)| v * trig(l, i)).sum();
            rhs[i] += w * p_i * fourier;
            for j in i..modes {
                gram[(i, j)] += w * p_i * table.legendre(k, j)[0] * phi_gram[(i, j)];
            }
        }
    }
    for i in 0..modes {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let chol = gram.cholesky().ok_or(ReconstructError::RankDeficient { degree })?;
    let a = chol.solve(&rhs);
    Ok(CoefficientArray::from_values(degree, a.iter().copied().collect())?)
}

/// Least-squares surface-harmonic coefficients of `target` up to `hg.degree()`.
pub fn project_coefficients(target: &TargetSurface, hg: &HarmonicGrid) -> Result<CoefficientArray, ReconstructError> {
    project_values(&target.sample(hg.grid())?, hg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionErrors {
    /// Root-mean-square radius misfit over the fitting nodes, solid-angle
    /// weighted.
    pub e_rms: f64,
    /// The same mean of squares without the root.
    pub mean_square: f64,
    pub e_vol: f64,
    pub e_sa: f64,
    pub e_eng: f64,
    pub target: TargetProperties,
    pub reconstructed: TargetProperties,
}

/// θ-node count of the grid that integrates reconstructed surfaces.
pub const DENSE_N_T: usize = 200;
/// Gauss nodes per half-profile for target integrals.
pub const PROFILE_NODES: usize = 400;

/// Solid-angle mean over the nodes of `hg` of the squared difference between
/// `values` and the expansion `coeffs`; this is the quantity the projection
/// minimizes.
pub fn mean_square_misfit(values: &[f64], coeffs: &CoefficientArray, hg: &HarmonicGrid) -> f64 {
    let grid = hg.grid();
    let table = hg.table();
    let mut sum = CompensatedSum::default();
    let mut total = CompensatedSum::default();
    for (node, v) in values.iter().enumerate() {
        let (k, l) = grid.split(node);
        let r: f64 = coeffs
            .values()
            .iter()
            .enumerate()
            .map(|(i, a)| a * table.sample(i, k, l).s)
            .sum();
        let w = grid.node_weight(node);
        sum.add(w * (v - r).powi(2));
        total.add(w);
    }
    sum.value() / total.value()
}

/// Pointwise misfit on `hg` and relative area, volume and energy errors.
pub fn reconstruction_errors(
    target: &TargetSurface,
    coeffs: &CoefficientArray,
    hg: &HarmonicGrid,
    params: &EnergyParams,
) -> Result<ReconstructionErrors, ReconstructError> {
    let samples = target.sample(hg.grid())?;
    let mean_square = mean_square_misfit(&samples, coeffs, hg);
    let dense = HarmonicGrid::build(coeffs.degree(), DENSE_N_T, 2 * DENSE_N_T)?;
    let rec_state = SurfaceState::evaluate(coeffs, &dense)?;
    let rep = report_for_state(&rec_state, dense.grid(), params);
    let reconstructed = TargetProperties {
        s_area: rep.s_area,
        volume: rep.volume,
        e_bend: rep.e_bend - 4.0 * PI * params.kappa_g,
    };
    let t = target.properties(params.kappa_c, params.c0, PROFILE_NODES);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    Ok(ReconstructionErrors {
        e_rms: mean_square.sqrt(),
        mean_square,
        e_vol: rel(reconstructed.volume, t.volume),
        e_sa: rel(reconstructed.s_area, t.s_area),
        e_eng: rel(reconstructed.e_bend, t.e_bend),
        target: t,
        reconstructed,
    })
}
