//! Nonlinear conjugate gradient (Hestenes–Stiefel) with a bisection line
//! search driven by the sign of the directional derivative.
//!
//! The minimizer works on any [`Objective`]; [`EnergyObjective`] adapts the
//! penalized bending energy of a coefficient array.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{energy_and_gradient, energy_gradient, total_energy, EnergyParams, EnergyReport};
use crate::geometry::{CoefficientArray, GeometryError, HarmonicGrid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("line search found no decrease along the direction")]
    NoDecrease,
    #[error("starting point is not admissible: {0}")]
    InadmissibleStart(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcgConfig {
    pub eps_g: f64,
    pub eps_a: f64,
    pub max_iters: usize,
    pub ls_max_iters: usize,
    pub ls_eps: f64,
    /// Clamp β to `max(β, 0)`. Off runs the unmodified Hestenes–Stiefel update.
    pub beta_floor_at_zero: bool,
}

impl Default for NcgConfig {
    fn default() -> Self {
        Self {
            eps_g: 1e-6,
            eps_a: 1e-6,
            max_iters: 5000,
            ls_max_iters: 60,
            ls_eps: 1e-10,
            beta_floor_at_zero: true,
        }
    }
}

impl NcgConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let tolerances = [self.eps_g, self.eps_a, self.ls_eps];
        if tolerances.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(OptimizeError::InvalidConfig(
                "tolerances must be positive and finite".into(),
            ));
        }
        if self.ls_max_iters == 0 {
            return Err(OptimizeError::InvalidConfig("ls_max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// A point evaluation: value, gradient, and optional `(S_A, V, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub constraints: Option<(f64, f64, f64)>,
}

/// Smooth function of a real vector. `None` marks an inadmissible point,
/// which the line search treats as infinitely high.
pub trait Objective {
    fn value(&self, x: &[f64]) -> Option<f64>;
    fn evaluate(&self, x: &[f64]) -> Option<Evaluation>;
}

/// Penalized energy of a degree-`N` coefficient array on a fixed grid.
pub struct EnergyObjective<'a> {
    pub hg: &'a HarmonicGrid,
    pub params: &'a EnergyParams,
    pub degree: usize,
}

impl EnergyObjective<'_> {
    fn coeffs(&self, x: &[f64]) -> Option<CoefficientArray> {
        CoefficientArray::from_values(self.degree, x.to_vec()).ok()
    }
}

impl Objective for EnergyObjective<'_> {
    fn value(&self, x: &[f64]) -> Option<f64> {
        let c = self.coeffs(x)?;
        total_energy(&c, self.hg, self.params)
            .ok()
            .map(|r| r.e_total)
            .filter(|v| v.is_finite())
    }

    fn evaluate(&self, x: &[f64]) -> Option<Evaluation> {
        let c = self.coeffs(x)?;
        let (rep, g) = energy_and_gradient(&c, self.hg, self.params).ok()?;
        if !rep.e_total.is_finite() {
            return None;
        }
        Some(Evaluation {
            value: rep.e_total,
            gradient: g.0,
            constraints: Some((rep.s_area, rep.volume, rep.reduced_v)),
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(x, d)| x + alpha * d).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Bracketing bisection on `α ∈ [0, 1]`.
///
/// The bracket keeps `α_l` at the lowest energy seen. A trial point that is
/// not higher replaces `α_l`; the sign of `∇I·d` there decides whether the old
/// `α_l` becomes the other end. The returned step is `α_l`, so the accepted
/// energy never exceeds `I(x)`.
pub fn line_search_with<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    fx: f64,
    d: &[f64],
    cfg: &NcgConfig,
) -> Result<LineSearchResult, OptimizeError> {
    let value_at = |alpha: f64| obj.value(&axpy(x, alpha, d)).unwrap_or(f64::INFINITY);
    let (e_m, e_big) = (fx, value_at(1.0));
    let mut evaluations = 1;
    let (mut a_l, mut a_u, mut e_l) = if e_m < e_big {
        (0.0, 1.0, e_m)
    } else {
        (1.0, 0.0, e_big)
    };
    for _ in 0..cfg.ls_max_iters {
        let a_t = 0.5 * (a_l + a_u);
        let e_t = value_at(a_t);
        evaluations += 1;
        if e_t > e_l || !e_t.is_finite() {
            a_u = a_t;
        } else {
            let slope = match obj.evaluate(&axpy(x, a_t, d)) {
                Some(ev) => dot(&ev.gradient, d),
                None => f64::NAN,
            };
            evaluations += 1;
            if slope * (a_l - a_t) > 0.0 {
                a_l = a_t;
            } else {
                a_u = a_l;
                a_l = a_t;
            }
            e_l = e_t;
        }
        if (a_u - a_l).abs() < cfg.ls_eps {
            break;
        }
    }
    if e_l < fx && a_l != 0.0 {
        Ok(LineSearchResult {
            alpha: a_l,
            value: e_l,
            evaluations,
        })
    } else {
        Err(OptimizeError::NoDecrease)
    }
}

/// Step length along `direction` for the penalized energy.
pub fn line_search(
    coeffs: &CoefficientArray,
    direction: &[f64],
    hg: &HarmonicGrid,
    params: &EnergyParams,
    cfg: &NcgConfig,
) -> Result<f64, OptimizeError> {
    let obj = EnergyObjective {
        hg,
        params,
        degree: coeffs.degree(),
    };
    let fx = total_energy(coeffs, hg, params)?.e_total;
    Ok(line_search_with(&obj, coeffs.values(), fx, direction, cfg)?.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Penalty stage the row belongs to.
    pub stage: usize,
    pub k: usize,
    pub energy: f64,
    pub grad_norm: f64,
    pub alpha: f64,
    pub beta: f64,
    pub s_area: f64,
    pub volume: f64,
    pub reduced_v: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub rows: Vec<TraceRow>,
}

impl IterationTrace {
    pub fn energies(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.energy)
    }

    /// Energies never rise within a penalty stage.
    pub fn is_monotone(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].stage != w[0].stage || w[1].energy <= w[0].energy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The starting gradient is already below `eps_g`.
    Stationary,
    GradientChange,
    StepSize,
    MaxIterations,
    /// Neither the conjugate nor the steepest-descent direction decreases the energy.
    NoDescent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcgOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub trace: IterationTrace,
    pub stop_reason: StopReason,
    pub iterations: usize,
}

fn trace_row(k: usize, ev: &Evaluation, alpha: f64, beta: f64) -> TraceRow {
    let (s_area, volume, reduced_v) = ev.constraints.unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    TraceRow {
        stage: 0,
        k,
        energy: ev.value,
        grad_norm: norm(&ev.gradient),
        alpha,
        beta,
        s_area,
        volume,
        reduced_v,
    }
}

/// Minimizes `obj` from `x0`.
pub fn ncg_minimize_with<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    cfg: &NcgConfig,
) -> Result<NcgOutcome, OptimizeError> {
    cfg.validate()?;
    let mut cur = obj
        .evaluate(x0)
        .ok_or_else(|| OptimizeError::InadmissibleStart("energy is undefined at the start".into()))?;
    let mut x = x0.to_vec();
    let mut trace = IterationTrace {
        rows: vec![trace_row(0, &cur, 0.0, 0.0)],
    };
    if norm(&cur.gradient) < cfg.eps_g {
        return Ok(NcgOutcome {
            x,
            value: cur.value,
            trace,
            stop_reason: StopReason::Stationary,
            iterations: 0,
        });
    }
    let mut d: Vec<f64> = cur.gradient.iter().map(|g| -g).collect();
    let mut stop_reason = StopReason::MaxIterations;
    let mut iterations = 0;
    for k in 1..=cfg.max_iters {
        if dot(&d, &cur.gradient) >= 0.0 {
            d = cur.gradient.iter().map(|g| -g).collect();
        }
        let step = match line_search_with(obj, &x, cur.value, &d, cfg) {
            Ok(s) => s,
            Err(OptimizeError::NoDecrease) => {
                let steepest: Vec<f64> = cur.gradient.iter().map(|g| -g).collect();
                if steepest == d {
                    stop_reason = StopReason::NoDescent;
                    break;
                }
                d = steepest;
                match line_search_with(obj, &x, cur.value, &d, cfg) {
                    Ok(s) => s,
                    Err(OptimizeError::NoDecrease) => {
                        stop_reason = StopReason::NoDescent;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(e) => return Err(e),
        };
        let x_new = axpy(&x, step.alpha, &d);
        let Some(next) = obj.evaluate(&x_new) else {
            stop_reason = StopReason::NoDescent;
            break;
        };
        iterations = k;
        let dg: Vec<f64> = next.gradient.iter().zip(&cur.gradient).map(|(a, b)| a - b).collect();
        let step_norm = step.alpha * norm(&d);
        let mut beta = dot(&next.gradient, &dg) / dot(&dg, &d);
        if !beta.is_finite() {
            beta = 0.0;
        }
        if cfg.beta_floor_at_zero {
            beta = beta.max(0.0);
        }
        trace.rows.push(trace_row(k, &next, step.alpha, beta));
        let grad_change = norm(&dg);
        x = x_new;
        d = next.gradient.iter().zip(&d).map(|(g, d)| -g + beta * d).collect();
        cur = next;
        if grad_change < cfg.eps_g {
            stop_reason = StopReason::GradientChange;
            break;
        }
        if step_norm < cfg.eps_a {
            stop_reason = StopReason::StepSize;
            break;
        }
    }
    Ok(NcgOutcome {
        x,
        value: cur.value,
        trace,
        stop_reason,
        iterations,
    })
}

/// Result of [`ncg_minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minimized {
    pub coeffs: CoefficientArray,
    pub report: EnergyReport,
    pub trace: IterationTrace,
    pub stop_reason: StopReason,
    pub iterations: usize,
}

/// Minimizes the penalized energy starting from `coeffs0`.
pub fn ncg_minimize(
    coeffs0: &CoefficientArray,
    hg: &HarmonicGrid,
    params: &EnergyParams,
    cfg: &NcgConfig,
) -> Result<Minimized, OptimizeError> {
    let obj = EnergyObjective {
        hg,
        params,
        degree: coeffs0.degree(),
    };
    let out = ncg_minimize_with(&obj, coeffs0.values(), cfg)?;
    let coeffs = CoefficientArray::from_values(coeffs0.degree(), out.x)?;
    let (report, _) = energy_and_gradient(&coeffs, hg, params)?;
    Ok(Minimized {
        coeffs,
        report,
        trace: out.trace,
        stop_reason: out.stop_reason,
        iterations: out.iterations,
    })
}

/// Analytic against central-difference gradient, per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|Δ| / |g|`, or `|Δ| / 1e-2` where both gradients are below `1e-4`,
    /// so that a component passes at `1e-6` under either rule.
    pub errors: Vec<f64>,
    pub max_error: f64,
}

/// Below this magnitude a component is judged by its absolute error.
pub const SMALL_GRADIENT: f64 = 1e-4;

pub fn scaled_gradient_error(analytic: f64, numeric: f64) -> f64 {
    let mag = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if mag < SMALL_GRADIENT {
        diff / 1e-2
    } else {
        diff / mag
    }
}

pub fn fd_gradient_check(
    coeffs: &CoefficientArray,
    hg: &HarmonicGrid,
    params: &EnergyParams,
    step: f64,
) -> Result<GradientCheck, OptimizeError> {
    if !(step > 0.0) {
        return Err(OptimizeError::InvalidConfig(
            "finite-difference step must be positive".into(),
        ));
    }
    let analytic = energy_gradient(coeffs, hg, params)?.0;
    let energy_at = |i: usize, offset: f64| -> Result<f64, GeometryError> {
        let mut c = coeffs.clone();
        c.values_mut()[i] += offset;
        Ok(total_energy(&c, hg, params)?.e_total)
    };
    let mut numeric = Vec::with_capacity(coeffs.len());
    for i in 0..coeffs.len() {
        // fourth-order central stencil: the penalty terms make the third
        // derivative large enough to matter at the two-point level
        let near = energy_at(i, step)? - energy_at(i, -step)?;
        let far = energy_at(i, 2.0 * step)? - energy_at(i, -2.0 * step)?;
        numeric.push((8.0 * near - far) / (12.0 * step));
    }
    let errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| scaled_gradient_error(*a, *n))
        .collect();
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(GradientCheck {
        analytic,
        numeric,
        errors,
        max_error,
    })
}

/// Truncation degree and θ-node count used for a target reduced volume.
pub fn resolution_for(v: f64) -> (usize, usize) {
    if v >= 0.75 {
        (4, 20)
    } else if v >= 0.65 {
        (6, 30)
    } else {
        (8, 40)
    }
}

/// Setup of one reduced-volume minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedVolumeRun {
    pub v: f64,
    pub degree: usize,
    pub n_t: usize,
    pub n_p: usize,
    pub kappa_c: f64,
    pub kappa_g: f64,
    pub c0: f64,
    /// Penalty weights applied in turn, each stage starting from the last
    /// minimizer. One entry gives a single plain minimization.
    pub penalty_stages: Vec<f64>,
    /// Flat index and amplitude added to the unit sphere.
    pub perturb_mode: usize,
    pub perturb_amplitude: f64,
    /// Extra random perturbation of every non-constant mode (`0` disables it).
    pub noise_amplitude: f64,
    pub seed: u64,
    /// θ-node count of the final re-evaluation.
    pub fine_n_t: usize,
    pub ncg: NcgConfig,
}

impl ReducedVolumeRun {
    /// Defaults for target `v`, with the resolution from [`resolution_for`].
    pub fn new(v: f64) -> Self {
        let (degree, n_t) = resolution_for(v);
        Self {
            v,
            degree,
            n_t,
            n_p: 2 * n_t,
            kappa_c: 1.0,
            kappa_g: 0.0,
            c0: 0.0,
            penalty_stages: vec![1000.0, 10000.0],
            perturb_mode: 4,
            perturb_amplitude: 0.05,
            noise_amplitude: 0.0,
            seed: 0,
            fine_n_t: 64,
            ncg: NcgConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        self.ncg.validate()?;
        if !(self.v > 0.0 && self.v <= 1.0) {
            return Err(OptimizeError::InvalidConfig(format!(
                "reduced volume must lie in (0, 1], got {}",
                self.v
            )));
        }
        if self.penalty_stages.is_empty() || self.penalty_stages.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(OptimizeError::InvalidConfig(
                "penalty stages must be non-empty and non-negative".into(),
            ));
        }
        if self.perturb_mode >= crate::shbasis::mode_count(self.degree) {
            return Err(OptimizeError::InvalidConfig(format!(
                "perturbation mode {} exceeds degree {}",
                self.perturb_mode, self.degree
            )));
        }
        if self.n_t <= self.degree || self.fine_n_t <= self.degree {
            return Err(OptimizeError::InvalidConfig(
                "grid must have more θ nodes than the degree".into(),
            ));
        }
        Ok(())
    }

    /// Perturbed unit sphere the run starts from.
    pub fn initial_shape(&self) -> CoefficientArray {
        use rand::{Rng, SeedableRng};
        let mut c = CoefficientArray::sphere(1.0, self.degree);
        c.values_mut()[self.perturb_mode] += self.perturb_amplitude;
        if self.noise_amplitude > 0.0 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
            for a in c.values_mut().iter_mut().skip(1) {
                *a += rng.gen_range(-self.noise_amplitude..self.noise_amplitude);
            }
        }
        c
    }

    /// Energy parameters with area target `S_A(initial)` and the volume
    /// that gives reduced volume `v` at that area.
    pub fn energy_params(&self, s_bar: f64, k: f64) -> EnergyParams {
        use std::f64::consts::PI;
        EnergyParams {
            kappa_c: self.kappa_c,
            kappa_g: self.kappa_g,
            c0: self.c0,
            k_s: k,
            k_v: k,
            s_bar,
            v_bar: self.v * 4.0 * PI / 3.0 * (s_bar / (4.0 * PI)).powf(1.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedVolumeResult {
    pub coeffs: CoefficientArray,
    pub params: EnergyParams,
    /// Report on the working grid.
    pub report: EnergyReport,
    /// Report on the fine re-evaluation grid.
    pub fine: EnergyReport,
    /// Traces of all stages, concatenated with a continuing iteration count.
    pub trace: IterationTrace,
    pub stop_reasons: Vec<StopReason>,
    pub iterations: usize,
}

impl ReducedVolumeResult {
    pub fn energy_ratio(&self) -> f64 {
        self.fine.e_bend / self.params.sphere_energy()
    }

    /// Largest relative area or volume residual on the working grid.
    pub fn constraint_residual(&self) -> f64 {
        let ds = (self.report.s_area - self.params.s_bar).abs() / self.params.s_bar;
        let dv = (self.report.volume - self.params.v_bar).abs() / self.params.v_bar;
        ds.max(dv)
    }
}

/// Minimizes toward reduced volume `run.v` and re-evaluates on the fine grid.
pub fn minimize_reduced_volume(run: &ReducedVolumeRun) -> Result<ReducedVolumeResult, OptimizeError> {
    run.validate()?;
    let hg = HarmonicGrid::build(run.degree, run.n_t, run.n_p)?;
    let mut coeffs = run.initial_shape();
    let s_bar = total_energy(&coeffs, &hg, &EnergyParams::default())?.s_area;
    let mut trace = IterationTrace::default();
    let mut stop_reasons = Vec::new();
    let mut iterations = 0;
    let mut last = None;
    for (stage, &k) in run.penalty_stages.iter().enumerate() {
        let params = run.energy_params(s_bar, k);
        let out = ncg_minimize(&coeffs, &hg, &params, &run.ncg)?;
        // the first row of a later stage repeats the previous minimizer
        let skip = usize::from(!trace.rows.is_empty());
        for row in out.trace.rows.iter().skip(skip) {
            trace.rows.push(TraceRow {
                stage,
                k: iterations + row.k,
                ..*row
            });
        }
        iterations += out.iterations;
        stop_reasons.push(out.stop_reason);
        coeffs = out.coeffs;
        last = Some((params, out.report));
    }
    let (params, report) = last.expect("at least one stage");
    let fine_grid = HarmonicGrid::build(run.degree, run.fine_n_t, 2 * run.fine_n_t)?;
    let fine = total_energy(&coeffs, &fine_grid, &params)?;
    Ok(ReducedVolumeResult {
        coeffs,
        params,
        report,
        fine,
        trace,
        stop_reasons,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    struct Quadratic {
        center: Vec<f64>,
        scales: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn value(&self, x: &[f64]) -> Option<f64> {
            Some(
                x.iter()
                    .zip(&self.center)
                    .zip(&self.scales)
                    .map(|((x, c), s)| s * (x - c) * (x - c))
                    .sum(),
            )
        }

        fn evaluate(&self, x: &[f64]) -> Option<Evaluation> {
            let gradient = x
                .iter()
                .zip(&self.center)
                .zip(&self.scales)
                .map(|((x, c), s)| 2.0 * s * (x - c))
                .collect();
            Some(Evaluation {
                value: self.value(x)?,
                gradient,
                constraints: None,
            })
        }
    }

    struct Linear;

    impl Objective for Linear {
        fn value(&self, x: &[f64]) -> Option<f64> {
            Some(-x[0])
        }

        fn evaluate(&self, x: &[f64]) -> Option<Evaluation> {
            Some(Evaluation {
                value: -x[0],
                gradient: vec![-1.0],
                constraints: None,
            })
        }
    }

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn value(&self, x: &[f64]) -> Option<f64> {
            Some((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        }

        fn evaluate(&self, x: &[f64]) -> Option<Evaluation> {
            let g0 = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
            let g1 = 200.0 * (x[1] - x[0] * x[0]);
            Some(Evaluation {
                value: self.value(x)?,
                gradient: vec![g0, g1],
                constraints: None,
            })
        }
    }

    #[test]
    fn parabola_step() {
        let obj = Quadratic {
            center: vec![0.3],
            scales: vec![1.0],
        };
        let cfg = NcgConfig::default();
        let r = line_search_with(&obj, &[0.0], 0.09, &[1.0], &cfg).unwrap();
        assert!((r.alpha - 0.3).abs() < 1e-9, "{}", r.alpha);
        assert!(r.value < 0.09);
    }

    #[test]
    fn monotone_surrogate_goes_to_the_far_end() {
        let r = line_search_with(&Linear, &[0.0], 0.0, &[1.0], &NcgConfig::default()).unwrap();
        assert_eq!(r.alpha, 1.0);
        assert_eq!(r.value, -1.0);
    }

    #[test]
    fn minimum_beyond_the_unit_bracket() {
        let obj = Quadratic {
            center: vec![3.0],
            scales: vec![1.0],
        };
        let r = line_search_with(&obj, &[0.0], 9.0, &[1.0], &NcgConfig::default()).unwrap();
        assert_eq!(r.alpha, 1.0);
    }

    #[test]
    fn stationary_point_yields_no_decrease() {
        let obj = Quadratic {
            center: vec![0.0, 0.0],
            scales: vec![1.0, 2.0],
        };
        let res = line_search_with(&obj, &[0.0, 0.0], 0.0, &[1.0, -1.0], &NcgConfig::default());
        assert_eq!(res, Err(OptimizeError::NoDecrease));
    }

    #[test]
    fn accepted_energy_never_exceeds_the_start() {
        let obj = Quadratic {
            center: vec![0.01, -0.02],
            scales: vec![1.0, 50.0],
        };
        let x = [0.5, 0.5];
        let fx = obj.value(&x).unwrap();
        let g = obj.evaluate(&x).unwrap().gradient;
        let d: Vec<f64> = g.iter().map(|g| -g).collect();
        let r = line_search_with(&obj, &x, fx, &d, &NcgConfig::default()).unwrap();
        assert!(r.value < fx);
        assert_eq!(r.value, obj.value(&axpy(&x, r.alpha, &d)).unwrap());
    }

    #[test]
    fn ncg_solves_an_ill_conditioned_quadratic() {
        let obj = Quadratic {
            center: vec![1.0, -2.0, 0.5, 3.0],
            scales: vec![1.0, 10.0, 100.0, 0.1],
        };
        let out = ncg_minimize_with(&obj, &[0.0; 4], &NcgConfig::default()).unwrap();
        for (x, c) in out.x.iter().zip(&obj.center) {
            assert!((x - c).abs() < 1e-5);
        }
        assert!(out.trace.is_monotone());
    }

    #[test]
    fn ncg_on_rosenbrock() {
        let cfg = NcgConfig {
            eps_g: 1e-10,
            eps_a: 1e-12,
            ..NcgConfig::default()
        };
        let out = ncg_minimize_with(&Rosenbrock, &[-0.5, 0.5], &cfg).unwrap();
        assert!(out.value < 1e-8, "{out:?}");
        assert!(out.trace.is_monotone());
        assert!(out.trace.rows.windows(2).all(|w| w[1].k > w[0].k));
    }

    #[test]
    fn verbatim_beta_also_converges() {
        let cfg = NcgConfig {
            beta_floor_at_zero: false,
            ..NcgConfig::default()
        };
        let obj = Quadratic {
            center: vec![1.0, 2.0],
            scales: vec![1.0, 3.0],
        };
        let out = ncg_minimize_with(&obj, &[0.0, 0.0], &cfg).unwrap();
        assert!(out.value < 1e-10);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = NcgConfig {
            ls_eps: 0.0,
            ..NcgConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(NcgConfig::default().validate().is_ok());
    }

    #[test]
    fn sphere_is_already_stationary() {
        let hg = HarmonicGrid::build(4, 20, 40).unwrap();
        let params = EnergyParams::default();
        let out = ncg_minimize(&CoefficientArray::sphere(1.0, 4), &hg, &params, &NcgConfig::default()).unwrap();
        assert!(out.iterations <= 1);
        assert!((out.report.e_total - 8.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn sphere_gradient_check() {
        let hg = HarmonicGrid::build(4, 20, 40).unwrap();
        let chk = fd_gradient_check(&CoefficientArray::sphere(1.0, 4), &hg, &EnergyParams::default(), 1e-6).unwrap();
        assert!(chk.max_error < 1e-6, "{}", chk.max_error);
    }

    #[test]
    fn scaled_error_rules() {
        assert!(scaled_gradient_error(1.0, 1.0 + 5e-7) < 1e-6);
        assert!(scaled_gradient_error(1.0, 1.0 + 2e-6) > 1e-6);
        assert!(scaled_gradient_error(1e-6, 1e-6 + 5e-9) < 1e-6);
        assert!(scaled_gradient_error(1e-6, 1e-6 + 2e-8) > 1e-6);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let hg = HarmonicGrid::build(2, 8, 16).unwrap();
        let c = CoefficientArray::sphere(1.0, 2);
        assert!(fd_gradient_check(&c, &hg, &EnergyParams::default(), 0.0).is_err());
    }

    #[test]
    fn resolution_policy() {
        assert_eq!(resolution_for(1.0), (4, 20));
        assert_eq!(resolution_for(0.76), (4, 20));
        assert_eq!(resolution_for(0.70), (6, 30));
        assert_eq!(resolution_for(0.65), (6, 30));
        assert_eq!(resolution_for(0.6), (8, 40));
    }

    #[test]
    fn volume_target_has_requested_reduced_volume() {
        let run = ReducedVolumeRun::new(0.81);
        let p = run.energy_params(13.0, 1000.0);
        assert!((crate::geometry::reduced_volume(p.s_bar, p.v_bar) - 0.81).abs() < 1e-14);
        assert_eq!(p.k_s, 1000.0);
        assert_eq!(p.k_v, 1000.0);
    }

    #[test]
    fn run_validation() {
        let mut run = ReducedVolumeRun::new(0.9);
        assert!(run.validate().is_ok());
        run.v = 1.2;
        assert!(run.validate().is_err());
        let mut run = ReducedVolumeRun::new(0.9);
        run.penalty_stages.clear();
        assert!(run.validate().is_err());
        let mut run = ReducedVolumeRun::new(0.9);
        run.perturb_mode = 25;
        assert!(run.validate().is_err());
        let mut run = ReducedVolumeRun::new(0.9);
        run.n_t = 4;
        assert!(run.validate().is_err());
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let mut run = ReducedVolumeRun::new(0.9);
        assert_eq!(run.initial_shape().values()[4], 0.05);
        run.noise_amplitude = 1e-3;
        run.seed = 7;
        let a = run.initial_shape();
        assert_eq!(a, run.initial_shape());
        run.seed = 8;
        assert_ne!(a, run.initial_shape());
    }

    #[test]
    fn unit_reduced_volume_returns_to_the_sphere() {
        let run = ReducedVolumeRun::new(1.0);
        let res = minimize_reduced_volume(&run).unwrap();
        assert!((res.energy_ratio() - 1.0).abs() < 1e-3, "{}", res.energy_ratio());
        assert!(res.constraint_residual() < 2e-3);
    }

    #[test]
    fn continuation_run_is_deterministic_and_monotone() {
        let mut run = ReducedVolumeRun::new(0.9);
        run.ncg.max_iters = 200;
        let a = minimize_reduced_volume(&run).unwrap();
        let b = minimize_reduced_volume(&run).unwrap();
        assert_eq!(a.coeffs, b.coeffs);
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.is_monotone());
        assert_eq!(a.stop_reasons.len(), 2);
        assert!(a.trace.rows.iter().any(|r| r.stage == 1));
        assert!(a.trace.rows.windows(2).all(|w| w[1].k > w[0].k));
        assert!((a.fine.reduced_v - 0.9).abs() < 5e-3, "{}", a.fine.reduced_v);
        assert!(a.energy_ratio() > 1.1);
    }
}
