//! Radius expansion, fundamental forms, curvatures, area and volume of a
//! star-shaped surface `r(θ, φ)` sampled on a [`SphereGrid`].
//!
//! Orientation: the normal is `x_θ × x_φ / |x_θ × x_φ|`, which points outward,
//! and the second fundamental form is `L = x_θθ·n` etc. With this convention a
//! sphere of radius `a` has `H = -1/a` and `K = 1/a²`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::CompensatedSum;
use crate::quadrature::{QuadratureError, SphereGrid};
use crate::shbasis::{mode_count, normalization_factor, BasisError, BasisSample, LegendreColumn, ModeIndex};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("radius is not positive at {} node(s), first at node {}", .nodes.len(), .nodes[0])]
    NonPositiveRadius { nodes: Vec<usize> },
    #[error("degenerate metric (EG - F² = {det:e}) at node {node}")]
    DegenerateMetric { node: usize, det: f64 },
    #[error("coefficient array has {got} entries, degree {degree} needs {expected}")]
    MalformedCoefficients { degree: usize, expected: usize, got: usize },
    #[error("coefficients of degree {coeffs} exceed the basis table degree {table}")]
    DegreeMismatch { coeffs: usize, table: usize },
    #[error("field has {got} nodes, grid has {expected}")]
    FieldSize { expected: usize, got: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Surface-harmonic coefficients in flat order
/// `[A_0^0, A_1^0, A_1^1, B_1^1, A_2^0, ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientArray {
    degree: usize,
    values: Vec<f64>,
}

impl CoefficientArray {
    pub fn zeros(degree: usize) -> Self {
        Self {
            degree,
            values: vec![0.0; mode_count(degree)],
        }
    }

    pub fn from_values(degree: usize, values: Vec<f64>) -> Result<Self, GeometryError> {
        let expected = mode_count(degree);
        if values.len() != expected {
            return Err(GeometryError::MalformedCoefficients {
                degree,
                expected,
                got: values.len(),
            });
        }
        Ok(Self { degree, values })
    }

    /// Sphere of the given radius: only `A_0^0 = radius·sqrt(4π)` is set.
    pub fn sphere(radius: f64, degree: usize) -> Self {
        let mut c = Self::zeros(degree);
        c.values[0] = radius * (4.0 * PI).sqrt();
        c
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, mode: ModeIndex) -> f64 {
        self.values.get(mode.flat()).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, mode: ModeIndex, value: f64) {
        self.values[mode.flat()] = value;
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            degree: self.degree,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Copy truncated or zero-padded to another degree.
    pub fn with_degree(&self, degree: usize) -> Self {
        let mut values = vec![0.0; mode_count(degree)];
        let n = values.len().min(self.values.len());
        values[..n].copy_from_slice(&self.values[..n]);
        Self { degree, values }
    }
}

/// Normalized Legendre parts per `(θ-row, mode)` and azimuthal factors per
/// `(φ-column, order)`, cached for one grid and truncation degree.
#[derive(Debug, Clone)]
pub struct BasisTable {
    degree: usize,
    modes: Vec<ModeIndex>,
    legendre: Vec<[f64; 3]>,
    trig: Vec<(f64, f64)>,
}

impl BasisTable {
    pub fn new(grid: &SphereGrid, degree: usize) -> Result<Self, BasisError> {
        let n_modes = mode_count(degree);
        let modes: Vec<ModeIndex> = (0..n_modes).map(ModeIndex::from_flat).collect();
        let mut norm = vec![0.0; (degree + 1) * (degree + 1)];
        for n in 0..=degree {
            for m in 0..=n {
                norm[n * (degree + 1) + m] = normalization_factor(n, m);
            }
        }
        let mut legendre = Vec::with_capacity(grid.n_theta() * n_modes);
        for &theta in grid.thetas() {
            let col = LegendreColumn::new(degree, theta)?;
            for mode in &modes {
                let (n, m) = (mode.n, mode.order());
                let f = norm[n * (degree + 1) + m];
                legendre.push([f * col.value(n, m), f * col.dtheta(n, m), f * col.d2theta(n, m)]);
            }
        }
        let mut trig = Vec::with_capacity(grid.n_phi() * (degree + 1));
        for &phi in grid.phis() {
            for m in 0..=degree {
                let (s, c) = (m as f64 * phi).sin_cos();
                trig.push((c, s));
            }
        }
        Ok(Self {
            degree,
            modes,
            legendre,
            trig,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn modes(&self) -> &[ModeIndex] {
        &self.modes
    }

    /// `(f P, f ∂θP, f ∂²θP)` for mode `i` on θ-row `k`.
    pub fn legendre(&self, k: usize, i: usize) -> [f64; 3] {
        self.legendre[k * self.modes.len() + i]
    }

    /// `(cos mφ_l, sin mφ_l)`.
    pub fn trig(&self, l: usize, m: usize) -> (f64, f64) {
        self.trig[l * (self.degree + 1) + m]
    }

    pub fn sample(&self, i: usize, k: usize, l: usize) -> BasisSample {
        let mode = self.modes[i];
        let (c, s) = self.trig(l, mode.order());
        BasisSample::assemble(mode, self.legendre(k, i), c, s)
    }
}

/// A quadrature grid together with the basis table for one truncation degree.
#[derive(Debug, Clone)]
pub struct HarmonicGrid {
    grid: SphereGrid,
    table: BasisTable,
}

impl HarmonicGrid {
    pub fn new(grid: SphereGrid, degree: usize) -> Result<Self, GeometryError> {
        let table = BasisTable::new(&grid, degree)?;
        Ok(Self { grid, table })
    }

    /// Product grid with `n_t` polar and `n_p` azimuthal nodes.
    pub fn build(degree: usize, n_t: usize, n_p: usize) -> Result<Self, GeometryError> {
        Self::new(SphereGrid::new(n_t, n_p)?, degree)
    }

    pub fn grid(&self) -> &SphereGrid {
        &self.grid
    }

    pub fn table(&self) -> &BasisTable {
        &self.table
    }

    pub fn degree(&self) -> usize {
        self.table.degree
    }

    pub fn mode_count(&self) -> usize {
        self.table.modes.len()
    }

    /// Basis sample of mode `i` at flat node `node`.
    pub fn sample(&self, i: usize, node: usize) -> BasisSample {
        let (k, l) = self.grid.split(node);
        self.table.sample(i, k, l)
    }
}

/// `r` and its first and second partial derivatives at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RadiusJet {
    pub r: f64,
    pub r_theta: f64,
    pub r_phi: f64,
    pub r_thetatheta: f64,
    pub r_phiphi: f64,
    pub r_thetaphi: f64,
}

impl RadiusJet {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.r,
            self.r_theta,
            self.r_phi,
            self.r_thetatheta,
            self.r_phiphi,
            self.r_thetaphi,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            r: a[0],
            r_theta: a[1],
            r_phi: a[2],
            r_thetatheta: a[3],
            r_phiphi: a[4],
            r_thetaphi: a[5],
        }
    }

    /// Unit jet along component `j` of [`RadiusJet::as_array`].
    pub fn unit(j: usize) -> Self {
        let mut a = [0.0; 6];
        a[j] = 1.0;
        Self::from_array(a)
    }
}

impl From<BasisSample> for RadiusJet {
    fn from(b: BasisSample) -> Self {
        Self {
            r: b.s,
            r_theta: b.s_theta,
            r_phi: b.s_phi,
            r_thetatheta: b.s_thetatheta,
            r_phiphi: b.s_phiphi,
            r_thetaphi: b.s_thetaphi,
        }
    }
}

/// Radius jets at every grid node, θ-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusField {
    pub jets: Vec<RadiusJet>,
}

impl RadiusField {
    pub fn len(&self) -> usize {
        self.jets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jets.is_empty()
    }

    pub fn radii(&self) -> Vec<f64> {
        self.jets.iter().map(|j| j.r).collect()
    }

    fn check_positive(self) -> Result<Self, GeometryError> {
        let nodes: Vec<usize> = self
            .jets
            .iter()
            .enumerate()
            .filter(|(_, j)| !(j.r > 0.0))
            .map(|(i, _)| i)
            .collect();
        if nodes.is_empty() {
            Ok(self)
        } else {
            Err(GeometryError::NonPositiveRadius { nodes })
        }
    }

    /// Builds a field from externally supplied jets (e.g. a target surface).
    pub fn from_jets(jets: Vec<RadiusJet>) -> Result<Self, GeometryError> {
        Self { jets }.check_positive()
    }
}

/// Sums the expansion and its derivatives at every node.
pub fn eval_radius_field(coeffs: &CoefficientArray, hg: &HarmonicGrid) -> Result<RadiusField, GeometryError> {
    let expected = mode_count(coeffs.degree());
    if coeffs.len() != expected {
        return Err(GeometryError::MalformedCoefficients {
            degree: coeffs.degree(),
            expected,
            got: coeffs.len(),
        });
    }
    if coeffs.degree() > hg.degree() {
        return Err(GeometryError::DegreeMismatch {
            coeffs: coeffs.degree(),
            table: hg.degree(),
        });
    }
    let table = hg.table();
    let grid = hg.grid();
    let orders = coeffs.degree() + 1;
    let mut jets = Vec::with_capacity(grid.len());
    // per-order partial sums over degree: cosine and sine parts of (P, ∂θP, ∂²θP)
    let mut cos_part = vec![[0.0; 3]; orders];
    let mut sin_part = vec![[0.0; 3]; orders];
    for k in 0..grid.n_theta() {
        cos_part.iter_mut().for_each(|v| *v = [0.0; 3]);
        sin_part.iter_mut().for_each(|v| *v = [0.0; 3]);
        for (i, &a) in coeffs.values().iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let mode = table.modes()[i];
            let leg = table.legendre(k, i);
            let slot = if mode.is_cosine() {
                &mut cos_part[mode.order()]
            } else {
                &mut sin_part[mode.order()]
            };
            for d in 0..3 {
                slot[d] += a * leg[d];
            }
        }
        for l in 0..grid.n_phi() {
            let mut jet = RadiusJet::default();
            for m in 0..orders {
                let (c, s) = table.trig(l, m);
                let (a, b) = (cos_part[m], sin_part[m]);
                let mf = m as f64;
                let t = [a[0] * c + b[0] * s, a[1] * c + b[1] * s, a[2] * c + b[2] * s];
                let dt0 = mf * (b[0] * c - a[0] * s);
                let dt1 = mf * (b[1] * c - a[1] * s);
                jet.r += t[0];
                jet.r_theta += t[1];
                jet.r_thetatheta += t[2];
                jet.r_phi += dt0;
                jet.r_thetaphi += dt1;
                jet.r_phiphi -= mf * mf * t[0];
            }
            jets.push(jet);
        }
    }
    RadiusField { jets }.check_positive()
}

/// Fundamental forms and curvatures at one node.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurfacePoint {
    /// `r [r_φ² + r_θ² sin²θ + r² sin²θ]^{1/2}`, the area element against `dθ dφ`.
    pub omega: f64,
    /// `omega / sin θ`, the area element against solid angle.
    pub area_density: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub l: f64,
    pub m: f64,
    pub n: f64,
    /// `|x_θ × x_φ|`.
    pub cross_norm: f64,
    pub h: f64,
    pub k: f64,
}

/// Fundamental forms of the surface at a point with polar angle `(sin θ, cos θ)`.
pub fn surface_point(jet: &RadiusJet, sin_t: f64, cos_t: f64) -> Option<SurfacePoint> {
    let RadiusJet {
        r,
        r_theta: rt,
        r_phi: rp,
        r_thetatheta: rtt,
        r_phiphi: rpp,
        r_thetaphi: rtp,
    } = *jet;
    let (s, c) = (sin_t, cos_t);
    let q = rp * rp + rt * rt * s * s + r * r * s * s;
    let cross_norm = r * q.sqrt();
    let area_density = r * (rp * rp / (s * s) + rt * rt + r * r).sqrt();
    let e = rt * rt + r * r;
    let f = rt * rp;
    let g = rp * rp + r * r * s * s;
    let det = e * g - f * f;
    if !(det > 0.0) || !(cross_norm > 0.0) {
        return None;
    }
    let l = s * (-2.0 * r * rt * rt + r * r * rtt - r * r * r) / cross_norm;
    let m = (-2.0 * r * rp * rt * s + r * r * rtp * s - r * r * rp * c) / cross_norm;
    let n = (-r * r * r * s * s * s + r * r * rpp * s + r * r * rt * c * s * s - 2.0 * r * rp * rp * s) / cross_norm;
    let h = (e * n + g * l - 2.0 * f * m) / (2.0 * det);
    let k = (l * n - m * m) / det;
    Some(SurfacePoint {
        omega: cross_norm,
        area_density,
        e,
        f,
        g,
        l,
        m,
        n,
        cross_norm,
        h,
        k,
    })
}

/// Mean curvature written directly in `r` and its derivatives, independent of
/// the fundamental-form route.
pub fn mean_curvature_direct(jet: &RadiusJet, sin_t: f64, cos_t: f64) -> f64 {
    let RadiusJet {
        r,
        r_theta: rt,
        r_phi: rp,
        r_thetatheta: rtt,
        r_phiphi: rpp,
        r_thetaphi: rtp,
    } = *jet;
    let (s, c) = (sin_t, cos_t);
    let (s2, s3) = (s * s, s * s * s);
    let cross = r * (rp * rp + rt * rt * s2 + r * r * s2).sqrt();
    let bracket = 3.0 * rt * rt * r * r * s3 - rt * rt * r * rpp * s - rt.powi(3) * r * c * s2 + 2.0 * r.powi(4) * s3
        - r.powi(3) * rpp * s
        - r.powi(3) * rt * c * s2
        + 3.0 * r * r * rp * rp * s
        - rp * rp * r * rtt * s
        - r.powi(3) * rtt * s3
        + 2.0 * rp * rt * r * rtp * s
        - 2.0 * rp * rp * rt * r * c;
    let denom = -r.powi(3) * s2 - r * rt * rt * s2 - r * rp * rp;
    0.5 * bracket / (cross * denom)
}

/// Per-node fundamental forms and curvatures.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryField {
    pub points: Vec<SurfacePoint>,
}

impl GeometryField {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean_curvatures(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.h).collect()
    }

    pub fn gaussian_curvatures(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.k).collect()
    }
}

pub fn eval_geometry_field(rf: &RadiusField, grid: &SphereGrid) -> Result<GeometryField, GeometryError> {
    if rf.len() != grid.len() {
        return Err(GeometryError::FieldSize {
            expected: grid.len(),
            got: rf.len(),
        });
    }
    let n_p = grid.n_phi();
    let mut points = Vec::with_capacity(rf.len());
    for (node, jet) in rf.jets.iter().enumerate() {
        let k = node / n_p;
        let p = surface_point(jet, grid.sin_theta(k), grid.cos_theta(k)).ok_or_else(|| {
            let e = jet.r_theta * jet.r_theta + jet.r * jet.r;
            let g = jet.r_phi * jet.r_phi + jet.r * jet.r * grid.sin_theta(k).powi(2);
            let f = jet.r_theta * jet.r_phi;
            GeometryError::DegenerateMetric {
                node,
                det: e * g - f * f,
            }
        })?;
        points.push(p);
    }
    Ok(GeometryField { points })
}

/// `∫ ω dθ dφ`.
pub fn surface_area(gf: &GeometryField, grid: &SphereGrid) -> f64 {
    weighted_sum(grid, gf.points.iter().map(|p| p.area_density))
}

/// `(1/3) ∫ r³ sin θ dθ dφ`.
pub fn enclosed_volume(rf: &RadiusField, grid: &SphereGrid) -> f64 {
    weighted_sum(grid, rf.jets.iter().map(|j| j.r * j.r * j.r)) / 3.0
}

/// `∫ K dS`; `4π` for any closed genus-0 surface.
pub fn gaussian_curvature_integral(gf: &GeometryField, grid: &SphereGrid) -> f64 {
    weighted_sum(grid, gf.points.iter().map(|p| p.k * p.area_density))
}

/// `v = 6 sqrt(π) V / S_A^{3/2}`.
pub fn reduced_volume(area: f64, volume: f64) -> f64 {
    6.0 * PI.sqrt() * volume / area.powf(1.5)
}

/// Ordered quadrature sum of per-node values.
pub(crate) fn weighted_sum(grid: &SphereGrid, values: impl Iterator<Item = f64>) -> f64 {
    let n_p = grid.n_phi();
    let mut total = CompensatedSum::default();
    for (node, v) in values.enumerate() {
        total.add(grid.weight(node / n_p, 0) * v);
    }
    total.value()
}

/// Radius and geometry fields of one coefficient array.
#[derive(Debug, Clone)]
pub struct SurfaceState {
    pub radius: RadiusField,
    pub geometry: GeometryField,
}

impl SurfaceState {
    pub fn evaluate(coeffs: &CoefficientArray, hg: &HarmonicGrid) -> Result<Self, GeometryError> {
        let radius = eval_radius_field(coeffs, hg)?;
        let geometry = eval_geometry_field(&radius, hg.grid())?;
        Ok(Self { radius, geometry })
    }

    pub fn area(&self, grid: &SphereGrid) -> f64 {
        surface_area(&self.geometry, grid)
    }

    pub fn volume(&self, grid: &SphereGrid) -> f64 {
        enclosed_volume(&self.radius, grid)
    }
}
