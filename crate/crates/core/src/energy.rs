//! Helfrich bending energy with area and volume penalties, and its exact
//! gradient with respect to every surface-harmonic coefficient.
//!
//! ```text
//! I = (κ_C/2) ∫ (2H - C_0)² dS + κ_G ∫ K dS + (k_S/2)(S_A - S̄)² + (k_V/2)(V - V̄)²
//! ```
//!
//! The Gaussian term is the topological constant `4π κ_G` for a closed genus-0
//! surface and never enters the gradient.
//!
//! The variation of the mean curvature is assembled with the product and
//! quotient rules through the variations of `E, F, G`, `|x_θ × x_φ|` and the
//! numerators of `L, M, N`. Because `δH` and `δω` are linear in the variation
//! of the radius jet, the gradient contracts a per-node sensitivity vector
//! against the basis samples of each mode.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    weighted_sum, CoefficientArray, GeometryError, GeometryField, HarmonicGrid, RadiusField, RadiusJet, SurfacePoint,
    SurfaceState,
};
use crate::quadrature::SphereGrid;
use crate::shbasis::ModeIndex;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("invalid energy parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Moduli, spontaneous curvature, penalty weights and constraint targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub kappa_c: f64,
    pub kappa_g: f64,
    pub c0: f64,
    pub k_s: f64,
    pub k_v: f64,
    pub s_bar: f64,
    pub v_bar: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            kappa_c: 1.0,
            kappa_g: 0.0,
            c0: 0.0,
            k_s: 1000.0,
            k_v: 1000.0,
            s_bar: 4.0 * PI,
            v_bar: 4.0 * PI / 3.0,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<(), EnergyError> {
        let all = [
            self.kappa_c,
            self.kappa_g,
            self.c0,
            self.k_s,
            self.k_v,
            self.s_bar,
            self.v_bar,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(EnergyError::InvalidParams("all parameters must be finite".into()));
        }
        if self.kappa_c <= 0.0 {
            return Err(EnergyError::InvalidParams(format!(
                "kappa_c must be positive, got {}",
                self.kappa_c
            )));
        }
        if self.k_s < 0.0 || self.k_v < 0.0 {
            return Err(EnergyError::InvalidParams(
                "penalty weights must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Energy of a sphere with `C_0 = 0`: `8π κ_C`.
    pub fn sphere_energy(&self) -> f64 {
        8.0 * PI * self.kappa_c
    }
}

/// Energies and constraint quantities of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_bend: f64,
    pub e_total: f64,
    pub s_area: f64,
    pub volume: f64,
    pub reduced_v: f64,
    pub grad_norm: Option<f64>,
}

/// Gradient of the total energy, ordered like [`CoefficientArray`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientArray(pub Vec<f64>);

impl GradientArray {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// `(κ_C/2) ∫ (2H - C_0)² dS + 4π κ_G`.
pub fn bending_energy(gf: &GeometryField, grid: &SphereGrid, params: &EnergyParams) -> f64 {
    let c0 = params.c0;
    let curvature = weighted_sum(
        grid,
        gf.points.iter().map(|p| {
            let psi = 2.0 * p.h - c0;
            psi * psi * p.area_density
        }),
    );
    0.5 * params.kappa_c * curvature + 4.0 * PI * params.kappa_g
}

/// Energy report of an already evaluated surface.
pub fn report_for_state(state: &SurfaceState, grid: &SphereGrid, params: &EnergyParams) -> EnergyReport {
    let e_bend = bending_energy(&state.geometry, grid, params);
    let s_area = state.area(grid);
    let volume = state.volume(grid);
    let ds = s_area - params.s_bar;
    let dv = volume - params.v_bar;
    EnergyReport {
        e_bend,
        e_total: e_bend + 0.5 * params.k_s * ds * ds + 0.5 * params.k_v * dv * dv,
        s_area,
        volume,
        reduced_v: crate::geometry::reduced_volume(s_area, volume),
        grad_norm: None,
    }
}

/// Total penalized energy of a coefficient array.
pub fn total_energy(
    coeffs: &CoefficientArray,
    hg: &HarmonicGrid,
    params: &EnergyParams,
) -> Result<EnergyReport, GeometryError> {
    let state = SurfaceState::evaluate(coeffs, hg)?;
    Ok(report_for_state(&state, hg.grid(), params))
}

/// `δω` for a variation `var` of the radius jet (`ω` against `dθ dφ`).
pub fn omega_variation(jet: &RadiusJet, sin_t: f64, var: &RadiusJet) -> f64 {
    let s2 = sin_t * sin_t;
    let (r, rt, rp) = (jet.r, jet.r_theta, jet.r_phi);
    let root = (rp * rp + rt * rt * s2 + r * r * s2).sqrt();
    var.r * root + r * (rp * var.r_phi + rt * var.r_theta * s2 + r * var.r * s2) / root
}

/// `δω / sin θ`, the variation of the area element against solid angle.
pub fn area_density_variation(jet: &RadiusJet, sin_t: f64, var: &RadiusJet) -> f64 {
    let s2 = sin_t * sin_t;
    let (r, rt, rp) = (jet.r, jet.r_theta, jet.r_phi);
    let root = (rp * rp / s2 + rt * rt + r * r).sqrt();
    var.r * root + r * (rp * var.r_phi / s2 + rt * var.r_theta + r * var.r) / root
}

/// `δH` for a variation `var` of the radius jet at a point with fundamental
/// forms `p`.
pub fn mean_curvature_tangent(jet: &RadiusJet, p: &SurfacePoint, sin_t: f64, cos_t: f64, var: &RadiusJet) -> f64 {
    let RadiusJet {
        r,
        r_theta: rt,
        r_phi: rp,
        r_thetatheta: rtt,
        r_phiphi: rpp,
        r_thetaphi: rtp,
    } = *jet;
    let RadiusJet {
        r: dr,
        r_theta: drt,
        r_phi: drp,
        r_thetatheta: drtt,
        r_phiphi: drpp,
        r_thetaphi: drtp,
    } = *var;
    let (s, c) = (sin_t, cos_t);
    let big_r = p.cross_norm;

    let de = 2.0 * rt * drt + 2.0 * r * dr;
    let df = drt * rp + rt * drp;
    let dg = 2.0 * rp * drp + 2.0 * r * dr * s * s;
    let d_cross = omega_variation(jet, s, var);

    // variations of R·L, R·M, R·N
    let dl_num = s * (-2.0 * dr * rt * rt - 4.0 * r * rt * drt + 2.0 * r * dr * rtt + r * r * drtt - 3.0 * r * r * dr);
    let dm_num = s * (-2.0 * (dr * rp * rt + r * drp * rt + r * rp * drt) + 2.0 * r * dr * rtp + r * r * drtp)
        - c * (2.0 * r * dr * rp + r * r * drp);
    let dn_num = -3.0 * r * r * dr * s * s * s
        + s * (2.0 * r * dr * rpp + r * r * drpp)
        + c * s * s * (2.0 * r * dr * rt + r * r * drt)
        - 2.0 * s * (dr * rp * rp + 2.0 * r * rp * drp);

    let dl = (dl_num - p.l * d_cross) / big_r;
    let dm = (dm_num - p.m * d_cross) / big_r;
    let dn = (dn_num - p.n * d_cross) / big_r;

    let det = p.e * p.g - p.f * p.f;
    let numer = p.e * p.n + p.g * p.l - 2.0 * p.f * p.m;
    let d_numer = de * p.n + p.e * dn + dg * p.l + p.g * dl - 2.0 * (df * p.m + p.f * dm);
    let d_det = de * p.g + p.e * dg - 2.0 * p.f * df;
    d_numer / (2.0 * det) - numer * d_det / (2.0 * det * det)
}

/// Variation of the radius jet and of `ω` for one mode at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationField {
    pub jets: Vec<RadiusJet>,
    pub d_omega: Vec<f64>,
}

/// `δr = S_n^m` and its derivatives, plus `δω`, for `mode` at every node.
pub fn variation_fields(mode: ModeIndex, hg: &HarmonicGrid, rf: &RadiusField) -> VariationField {
    let i = mode.flat();
    let grid = hg.grid();
    let mut jets = Vec::with_capacity(grid.len());
    let mut d_omega = Vec::with_capacity(grid.len());
    for (node, jet) in rf.jets.iter().enumerate() {
        let var = RadiusJet::from(hg.sample(i, node));
        let (k, _) = grid.split(node);
        d_omega.push(omega_variation(jet, grid.sin_theta(k), &var));
        jets.push(var);
    }
    VariationField { jets, d_omega }
}

/// `δH` for `mode` at every node.
pub fn mean_curvature_variation(mode: ModeIndex, rf: &RadiusField, gf: &GeometryField, hg: &HarmonicGrid) -> Vec<f64> {
    let i = mode.flat();
    let grid = hg.grid();
    rf.jets
        .iter()
        .zip(&gf.points)
        .enumerate()
        .map(|(node, (jet, p))| {
            let (k, _) = grid.split(node);
            let var = RadiusJet::from(hg.sample(i, node));
            mean_curvature_tangent(jet, p, grid.sin_theta(k), grid.cos_theta(k), &var)
        })
        .collect()
}

/// Per-node linear functional `C` such that the integrand of `g_i` is
/// `C · (δr, δr_θ, δr_φ, δr_θθ, δr_φφ, δr_θφ)`.
fn sensitivities(
    state: &SurfaceState,
    grid: &SphereGrid,
    params: &EnergyParams,
    report: &EnergyReport,
) -> Vec<[f64; 6]> {
    let area_force = params.k_s * (report.s_area - params.s_bar);
    let volume_force = params.k_v * (report.volume - params.v_bar);
    let n_p = grid.n_phi();
    state
        .radius
        .jets
        .iter()
        .zip(&state.geometry.points)
        .enumerate()
        .map(|(node, (jet, p))| {
            let k = node / n_p;
            let (s, c) = (grid.sin_theta(k), grid.cos_theta(k));
            let psi = 2.0 * p.h - params.c0;
            let h_weight = 2.0 * params.kappa_c * psi * p.area_density;
            let a_weight = 0.5 * params.kappa_c * psi * psi + area_force;
            let mut out = [0.0; 6];
            for (j, slot) in out.iter_mut().enumerate() {
                let unit = RadiusJet::unit(j);
                *slot = h_weight * mean_curvature_tangent(jet, p, s, c, &unit)
                    + a_weight * area_density_variation(jet, s, &unit);
            }
            out[0] += volume_force * jet.r * jet.r;
            out
        })
        .collect()
}

fn gradient_for_state(
    coeffs: &CoefficientArray,
    state: &SurfaceState,
    hg: &HarmonicGrid,
    params: &EnergyParams,
    report: &EnergyReport,
) -> GradientArray {
    let grid = hg.grid();
    let sens = sensitivities(state, grid, params, report);
    let weights = grid.weights();
    let g = (0..coeffs.len())
        .map(|i| {
            sens.iter()
                .zip(&weights)
                .enumerate()
                .map(|(node, (cvec, w))| {
                    let b = RadiusJet::from(hg.sample(i, node)).as_array();
                    let mut acc = 0.0;
                    for j in 0..6 {
                        acc += cvec[j] * b[j];
                    }
                    w * acc
                })
                .sum::<f64>()
        })
        .collect();
    GradientArray(g)
}

/// Gradient of the total energy with respect to every coefficient.
pub fn energy_gradient(
    coeffs: &CoefficientArray,
    hg: &HarmonicGrid,
    params: &EnergyParams,
) -> Result<GradientArray, GeometryError> {
    Ok(energy_and_gradient(coeffs, hg, params)?.1)
}

/// Energy report (with gradient norm) and gradient from one surface evaluation.
pub fn energy_and_gradient(
    coeffs: &CoefficientArray,
    hg: &HarmonicGrid,
    params: &EnergyParams,
) -> Result<(EnergyReport, GradientArray), GeometryError> {
    let state = SurfaceState::evaluate(coeffs, hg)?;
    let mut report = report_for_state(&state, hg.grid(), params);
    let g = gradient_for_state(coeffs, &state, hg, params, &report);
    report.grad_norm = Some(g.norm());
    Ok((report, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::eval_radius_field;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_surface(seed: u64, degree: usize, amp: f64) -> CoefficientArray {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = CoefficientArray::sphere(1.0, degree);
        for v in c.values_mut().iter_mut() {
            *v += rng.gen_range(-amp..amp);
        }
        c
    }

    fn bending_only() -> EnergyParams {
        EnergyParams {
            k_s: 0.0,
            k_v: 0.0,
            ..EnergyParams::default()
        }
    }

    #[test]
    fn unit_sphere_bending_energy() {
        let hg = HarmonicGrid::build(4, 12, 24).unwrap();
        let rep = total_energy(&CoefficientArray::sphere(1.0, 4), &hg, &EnergyParams::default()).unwrap();
        assert_relative_eq!(rep.e_bend, 8.0 * PI, max_relative = 1e-13);
        assert_relative_eq!(rep.e_total, 8.0 * PI, max_relative = 1e-13);
        assert_relative_eq!(rep.reduced_v, 1.0, max_relative = 1e-13);
    }

    #[test]
    fn spontaneous_curvature_matching_sphere() {
        let hg = HarmonicGrid::build(2, 8, 16).unwrap();
        let params = EnergyParams {
            c0: -2.0,
            ..bending_only()
        };
        let rep = total_energy(&CoefficientArray::sphere(1.0, 2), &hg, &params).unwrap();
        assert!(rep.e_bend.abs() < 1e-12);
    }

    #[test]
    fn gaussian_modulus_is_a_constant() {
        let hg = HarmonicGrid::build(3, 10, 20).unwrap();
        let c = random_surface(4, 3, 0.05);
        let p0 = EnergyParams::default();
        let p1 = EnergyParams { kappa_g: 0.7, ..p0 };
        let (r0, g0) = energy_and_gradient(&c, &hg, &p0).unwrap();
        let (r1, g1) = energy_and_gradient(&c, &hg, &p1).unwrap();
        assert_relative_eq!(r1.e_bend - r0.e_bend, 4.0 * PI * 0.7, max_relative = 1e-12);
        assert_eq!(g0, g1);
    }

    #[test]
    fn volume_penalty_substitution() {
        let hg = HarmonicGrid::build(2, 8, 16).unwrap();
        let params = EnergyParams {
            v_bar: 0.9 * 4.0 * PI / 3.0,
            k_v: 100.0,
            ..EnergyParams::default()
        };
        let rep = total_energy(&CoefficientArray::sphere(1.0, 2), &hg, &params).unwrap();
        let expected = 8.0 * PI + 50.0 * (4.0 * PI / 3.0 * 0.1).powi(2);
        assert_relative_eq!(rep.e_total, expected, max_relative = 1e-12);
    }

    #[test]
    fn penalties_never_lower_the_energy() {
        let hg = HarmonicGrid::build(4, 12, 24).unwrap();
        for seed in 0..5 {
            let rep = total_energy(&random_surface(seed, 4, 0.1), &hg, &EnergyParams::default()).unwrap();
            assert!(rep.e_total >= rep.e_bend);
            assert!(rep.e_bend >= 0.0);
        }
    }

    #[test]
    fn penalty_weight_derivative() {
        let hg = HarmonicGrid::build(3, 10, 20).unwrap();
        let c = random_surface(8, 3, 0.1);
        let p = EnergyParams::default();
        let h = 1e-3;
        let up = total_energy(&c, &hg, &EnergyParams { k_s: p.k_s + h, ..p }).unwrap();
        let dn = total_energy(&c, &hg, &EnergyParams { k_s: p.k_s - h, ..p }).unwrap();
        let fd = (up.e_total - dn.e_total) / (2.0 * h);
        assert_relative_eq!(fd, 0.5 * (up.s_area - p.s_bar).powi(2), max_relative = 1e-6);
    }

    #[test]
    fn scale_invariance_of_bending_energy() {
        let hg = HarmonicGrid::build(4, 16, 32).unwrap();
        let c = random_surface(9, 4, 0.1);
        let base = total_energy(&c, &hg, &bending_only()).unwrap().e_bend;
        for lambda in [0.5, 2.0, 10.0] {
            let e = total_energy(&c.scaled(lambda), &hg, &bending_only()).unwrap().e_bend;
            assert_relative_eq!(e, base, max_relative = 1e-10);
        }
    }

    #[test]
    fn variation_of_omega_on_unit_sphere() {
        let hg = HarmonicGrid::build(2, 8, 16).unwrap();
        let rf = eval_radius_field(&CoefficientArray::sphere(1.0, 2), &hg).unwrap();
        let v = variation_fields(ModeIndex::new(0, 0).unwrap(), &hg, &rf);
        for (node, (jet, dw)) in v.jets.iter().zip(&v.d_omega).enumerate() {
            let s = hg.grid().sin_theta(node / 16);
            assert_relative_eq!(jet.r, 0.282_094_791_773_878_1, max_relative = 1e-14);
            assert_relative_eq!(*dw, 2.0 * s * 0.282_094_791_773_878_1, max_relative = 1e-12);
        }
    }

    #[test]
    fn phi_phi_variation_identity() {
        let hg = HarmonicGrid::build(3, 6, 12).unwrap();
        let rf = eval_radius_field(&random_surface(1, 3, 0.05), &hg).unwrap();
        for i in 0..16 {
            let mode = ModeIndex::from_flat(i);
            let m2 = (mode.order() * mode.order()) as f64;
            for j in variation_fields(mode, &hg, &rf).jets {
                assert!((j.r_phiphi + m2 * j.r).abs() < 1e-13);
            }
        }
    }

    fn bumped_state(c: &CoefficientArray, i: usize, eps: f64, hg: &HarmonicGrid) -> SurfaceState {
        let mut b = c.clone();
        b.values_mut()[i] += eps;
        SurfaceState::evaluate(&b, hg).unwrap()
    }

    #[test]
    fn omega_variation_matches_finite_difference() {
        let hg = HarmonicGrid::build(4, 10, 20).unwrap();
        let c = random_surface(12, 4, 0.1);
        let state = SurfaceState::evaluate(&c, &hg).unwrap();
        let eps = 1e-6;
        for i in [0, 3, 7, 13, 24] {
            let v = variation_fields(ModeIndex::from_flat(i), &hg, &state.radius);
            let (up, dn) = (bumped_state(&c, i, eps, &hg), bumped_state(&c, i, -eps, &hg));
            for node in (0..hg.grid().len()).step_by(7) {
                let fd = (up.geometry.points[node].omega - dn.geometry.points[node].omega) / (2.0 * eps);
                let exact = v.d_omega[node];
                assert!(
                    (fd - exact).abs() <= 1e-6 * exact.abs().max(1e-2),
                    "mode {i} node {node}"
                );
            }
        }
    }

    #[test]
    fn mean_curvature_variation_on_unit_sphere() {
        let hg = HarmonicGrid::build(2, 8, 16).unwrap();
        let st = SurfaceState::evaluate(&CoefficientArray::sphere(1.0, 2), &hg).unwrap();
        let dh = mean_curvature_variation(ModeIndex::new(0, 0).unwrap(), &st.radius, &st.geometry, &hg);
        for v in dh {
            assert_relative_eq!(v, 0.282_094_791_773_878_1, max_relative = 1e-12);
        }
    }

    #[test]
    fn sine_mode_variation_vanishes_at_phi_zero_on_axisymmetric_surface() {
        let hg = HarmonicGrid::build(3, 8, 16).unwrap();
        let mut c = CoefficientArray::sphere(1.0, 3);
        c.set(ModeIndex::new(2, 0).unwrap(), 0.1);
        let st = SurfaceState::evaluate(&c, &hg).unwrap();
        let dh = mean_curvature_variation(ModeIndex::new(2, -1).unwrap(), &st.radius, &st.geometry, &hg);
        for k in 0..hg.grid().n_theta() {
            assert!(dh[k * 16].abs() < 1e-14);
        }
    }

    #[test]
    fn mean_curvature_variation_matches_finite_difference() {
        let hg = HarmonicGrid::build(4, 12, 24).unwrap();
        let c = random_surface(31, 4, 0.1);
        let st = SurfaceState::evaluate(&c, &hg).unwrap();
        let eps = 1e-6;
        for i in 0..25 {
            let dh = mean_curvature_variation(ModeIndex::from_flat(i), &st.radius, &st.geometry, &hg);
            let (up, dn) = (bumped_state(&c, i, eps, &hg), bumped_state(&c, i, -eps, &hg));
            for node in (0..hg.grid().len()).step_by(5) {
                let fd = (up.geometry.points[node].h - dn.geometry.points[node].h) / (2.0 * eps);
                assert!(
                    (fd - dh[node]).abs() <= 1e-6 * dh[node].abs().max(1e-2),
                    "mode {i} node {node}: {} vs {fd}",
                    dh[node]
                );
            }
        }
    }

    #[test]
    fn sphere_gradient_vanishes_with_matching_targets() {
        let hg = HarmonicGrid::build(4, 12, 24).unwrap();
        let g = energy_gradient(&CoefficientArray::sphere(1.0, 4), &hg, &EnergyParams::default()).unwrap();
        assert!(g.norm() < 1e-8, "{}", g.norm());
    }

    #[test]
    fn volume_term_for_constant_mode() {
        // only the volume penalty: g_0 = k_V (V - V̄) ∫ r² S_0^0 dΩ, and the
        // integral is sqrt(4π) on the unit sphere
        let hg = HarmonicGrid::build(2, 8, 16).unwrap();
        let params = EnergyParams {
            kappa_c: 1e-300,
            k_s: 0.0,
            k_v: 1.0,
            v_bar: 0.0,
            ..EnergyParams::default()
        };
        let g = energy_gradient(&CoefficientArray::sphere(1.0, 2), &hg, &params).unwrap();
        assert_relative_eq!(g.values()[0], 4.0 * PI / 3.0 * (4.0 * PI).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let hg = HarmonicGrid::build(4, 16, 32).unwrap();
        let params = EnergyParams::default();
        for seed in 0..3 {
            let c = random_surface(50 + seed, 4, 0.1);
            let g = energy_gradient(&c, &hg, &params).unwrap();
            let h = 1e-6;
            for i in 0..c.len() {
                let mut up = c.clone();
                up.values_mut()[i] += h;
                let mut dn = c.clone();
                dn.values_mut()[i] -= h;
                let fd = (total_energy(&up, &hg, &params).unwrap().e_total
                    - total_energy(&dn, &hg, &params).unwrap().e_total)
                    / (2.0 * h);
                let gi = g.values()[i];
                assert!(
                    (gi - fd).abs() <= 1e-5 * gi.abs().max(1e-2),
                    "seed {seed} mode {i}: {gi} vs {fd}"
                );
            }
        }
    }
}
