//! Real surface harmonics: associated Legendre functions, their polar-angle
//! derivatives, normalization factors, and the flat mode ordering.
//!
//! The associated Legendre functions carry the Condon–Shortley phase,
//! `P_n^m(x) = (-1)^m (1-x^2)^{m/2} d^m/dx^m P_n(x)`, and are evaluated by the
//! usual diagonal seed followed by upward recurrence in degree.
//!
//! Surface harmonics are
//!
//! ```text
//! S_n^m(θ,φ) = f_n^m P_n^m(cos θ) cos(mφ)        m >= 0
//! S_n^m(θ,φ) = f_n^|m| P_n^|m|(cos θ) sin(|m|φ)  m <  0
//! ```
//!
//! and the coefficient vector is ordered
//! `[A_0^0, A_1^0, A_1^1, B_1^1, A_2^0, A_2^1, A_2^2, B_2^1, B_2^2, ...]`.

use std::f64::consts::PI;

use thiserror::Error;

/// Smallest `sin θ` accepted by the θ-derivative evaluators.
pub const POLE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum BasisError {
    #[error("polar angle {theta} is too close to a pole (sin θ = {sin_theta:e})")]
    DegenerateNode { theta: f64, sin_theta: f64 },
    #[error("order {m} is out of range for degree {n}")]
    InvalidMode { n: usize, m: i64 },
}

/// A surface-harmonic mode: degree `n` and signed order `m`, `-n <= m <= n`.
///
/// `m >= 0` addresses a cosine (`A`) coefficient, `m < 0` a sine (`B`) one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeIndex {
    pub n: usize,
    pub m: i64,
}

impl ModeIndex {
    pub fn new(n: usize, m: i64) -> Result<Self, BasisError> {
        if m.unsigned_abs() as usize > n {
            return Err(BasisError::InvalidMode { n, m });
        }
        Ok(Self { n, m })
    }

    /// Mode at flat position `i` of the coefficient vector.
    pub fn from_flat(i: usize) -> Self {
        let (n, m) = index_to_nm(i);
        Self { n, m }
    }

    /// Flat position of this mode in the coefficient vector.
    pub fn flat(&self) -> usize {
        let n = self.n;
        if self.m >= 0 {
            n * n + self.m as usize
        } else {
            n * n + n + self.m.unsigned_abs() as usize
        }
    }

    /// `|m|`.
    pub fn order(&self) -> usize {
        self.m.unsigned_abs() as usize
    }

    pub fn is_cosine(&self) -> bool {
        self.m >= 0
    }
}

/// Number of modes for truncation degree `degree`: `(N+1)^2`.
pub fn mode_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Maps a flat coefficient index to `(n, m)`.
pub fn index_to_nm(i: usize) -> (usize, i64) {
    let mut n = (i as f64).sqrt() as usize;
    // guard against rounding in the float square root
    while n * n > i {
        n -= 1;
    }
    while (n + 1) * (n + 1) <= i {
        n += 1;
    }
    let offset = i - n * n;
    let m = if offset <= n {
        offset as i64
    } else {
        (n * n + n) as i64 - i as i64
    };
    (n, m)
}

/// `f_n^m = sqrt((2n+1)(n-m)! / (4π (n+m)!))`, with the factorial ratio
/// accumulated in log space.
pub fn normalization_factor(n: usize, m: usize) -> f64 {
    assert!(m <= n, "normalization_factor: m = {m} > n = {n}");
    let log_ratio: f64 = ((n - m + 1)..=(n + m)).map(|k| (k as f64).ln()).sum();
    ((2 * n + 1) as f64 / (4.0 * PI)).sqrt() * (-0.5 * log_ratio).exp()
}

/// `P_n^m(mu)` for a single `(n, m)`.
pub fn assoc_legendre(n: usize, m: usize, mu: f64) -> f64 {
    assert!(m <= n, "assoc_legendre: m = {m} > n = {n}");
    let s = (1.0 - mu * mu).max(0.0).sqrt();
    let mut pmm = 1.0;
    // P_m^m = (-1)^m (2m-1)!! (1-x^2)^{m/2}
    for k in 0..m {
        pmm *= -((2 * k + 1) as f64) * s;
    }
    if n == m {
        return pmm;
    }
    let mut p_prev = pmm;
    let mut p = mu * (2 * m + 1) as f64 * pmm;
    for l in (m + 2)..=n {
        let next = ((2 * l - 1) as f64 * mu * p - (l + m - 1) as f64 * p_prev) / (l - m) as f64;
        p_prev = p;
        p = next;
    }
    p
}

fn checked_sin(theta: f64) -> Result<f64, BasisError> {
    let s = theta.sin();
    if s.abs() < POLE_FLOOR {
        return Err(BasisError::DegenerateNode { theta, sin_theta: s });
    }
    Ok(s)
}

fn d_theta_from(n: usize, m: usize, c: f64, s: f64, p_n: f64, p_n1: f64) -> f64 {
    -((n + 1) as f64 * c * p_n - (n - m + 1) as f64 * p_n1) / s
}

fn d2_theta_from(n: usize, m: usize, c: f64, s: f64, p_n: f64, p_n1: f64, p_n2: f64) -> f64 {
    let nf = n as f64;
    let k1 = (n - m + 1) as f64;
    let k2 = (n - m + 2) as f64;
    ((nf + 1.0 + (nf + 1.0) * (nf + 1.0) * c * c) * p_n - 2.0 * c * k1 * (nf + 2.0) * p_n1 + k1 * k2 * p_n2) / (s * s)
}

/// `∂/∂θ P_n^m(cos θ)` from the degree-raising derivative recurrence.
pub fn assoc_legendre_dtheta(n: usize, m: usize, theta: f64) -> Result<f64, BasisError> {
    let s = checked_sin(theta)?;
    let c = theta.cos();
    Ok(d_theta_from(
        n,
        m,
        c,
        s,
        assoc_legendre(n, m, c),
        assoc_legendre(n + 1, m, c),
    ))
}

/// `∂²/∂θ² P_n^m(cos θ)`; needs degrees up to `n + 2`.
pub fn assoc_legendre_d2theta(n: usize, m: usize, theta: f64) -> Result<f64, BasisError> {
    let s = checked_sin(theta)?;
    let c = theta.cos();
    Ok(d2_theta_from(
        n,
        m,
        c,
        s,
        assoc_legendre(n, m, c),
        assoc_legendre(n + 1, m, c),
        assoc_legendre(n + 2, m, c),
    ))
}

/// All `P_n^m(cos θ)` for `0 <= m <= n <= degree + 2` at a fixed polar angle,
/// plus the first two θ-derivatives for `n <= degree`.
#[derive(Debug, Clone)]
pub struct LegendreColumn {
    degree: usize,
    values: Vec<f64>,
    dtheta: Vec<f64>,
    d2theta: Vec<f64>,
}

fn tri(n: usize, m: usize) -> usize {
    n * (n + 1) / 2 + m
}

impl LegendreColumn {
    pub fn new(degree: usize, theta: f64) -> Result<Self, BasisError> {
        let s = checked_sin(theta)?;
        let c = theta.cos();
        let top = degree + 2;
        let mut values = vec![0.0; tri(top, top) + 1];
        let mut pmm = 1.0;
        for m in 0..=top {
            if m > 0 {
                pmm *= -((2 * m - 1) as f64) * s;
            }
            values[tri(m, m)] = pmm;
            if m < top {
                values[tri(m + 1, m)] = c * (2 * m + 1) as f64 * pmm;
            }
            for l in (m + 2)..=top {
                values[tri(l, m)] = ((2 * l - 1) as f64 * c * values[tri(l - 1, m)]
                    - (l + m - 1) as f64 * values[tri(l - 2, m)])
                    / (l - m) as f64;
            }
        }
        let len = tri(degree, degree) + 1;
        let mut dtheta = vec![0.0; len];
        let mut d2theta = vec![0.0; len];
        for n in 0..=degree {
            for m in 0..=n {
                let (p0, p1, p2) = (values[tri(n, m)], values[tri(n + 1, m)], values[tri(n + 2, m)]);
                dtheta[tri(n, m)] = d_theta_from(n, m, c, s, p0, p1);
                d2theta[tri(n, m)] = d2_theta_from(n, m, c, s, p0, p1, p2);
            }
        }
        Ok(Self {
            degree,
            values,
            dtheta,
            d2theta,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn value(&self, n: usize, m: usize) -> f64 {
        self.values[tri(n, m)]
    }

    pub fn dtheta(&self, n: usize, m: usize) -> f64 {
        self.dtheta[tri(n, m)]
    }

    pub fn d2theta(&self, n: usize, m: usize) -> f64 {
        self.d2theta[tri(n, m)]
    }
}

/// A surface harmonic and its first and second partial derivatives at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BasisSample {
    pub s: f64,
    pub s_theta: f64,
    pub s_phi: f64,
    pub s_thetatheta: f64,
    pub s_phiphi: f64,
    pub s_thetaphi: f64,
}

impl BasisSample {
    /// Combines the normalized Legendre parts `(fP, f∂θP, f∂²θP)` with the
    /// azimuthal factor of `mode` at `(cos mφ, sin mφ)`.
    pub fn assemble(mode: ModeIndex, legendre: [f64; 3], cos_mphi: f64, sin_mphi: f64) -> Self {
        let [p, dp, d2p] = legendre;
        let m = mode.order() as f64;
        // (trig, d/dφ trig / m)
        let (t, dt) = if mode.is_cosine() {
            (cos_mphi, -sin_mphi)
        } else {
            (sin_mphi, cos_mphi)
        };
        Self {
            s: p * t,
            s_theta: dp * t,
            s_phi: m * p * dt,
            s_thetatheta: d2p * t,
            s_phiphi: -m * m * p * t,
            s_thetaphi: m * dp * dt,
        }
    }
}

/// Evaluates `S_n^m` and its partials at `(θ, φ)`.
pub fn basis_sample(mode: ModeIndex, theta: f64, phi: f64) -> Result<BasisSample, BasisError> {
    let col = LegendreColumn::new(mode.n, theta)?;
    let order = mode.order();
    let f = normalization_factor(mode.n, order);
    let legendre = [
        f * col.value(mode.n, order),
        f * col.dtheta(mode.n, order),
        f * col.d2theta(mode.n, order),
    ];
    let mphi = order as f64 * phi;
    Ok(BasisSample::assemble(mode, legendre, mphi.cos(), mphi.sin()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn flat_index_examples() {
        assert_eq!(index_to_nm(0), (0, 0));
        assert_eq!(index_to_nm(7), (2, -1));
        assert_eq!(index_to_nm(24), (4, -4));
        assert_eq!(index_to_nm(3), (1, -1));
        assert_eq!(index_to_nm(6), (2, 2));
    }

    #[test]
    fn flat_index_bijection() {
        for i in 0..mode_count(30) {
            let mode = ModeIndex::from_flat(i);
            assert!(mode.order() <= mode.n);
            assert_eq!(mode.flat(), i);
        }
    }

    #[test]
    fn invalid_mode_rejected() {
        assert!(ModeIndex::new(2, 3).is_err());
        assert!(ModeIndex::new(2, -2).is_ok());
    }

    #[test]
    fn normalization_examples() {
        assert_relative_eq!(normalization_factor(0, 0), 0.282_094_791_773_878_1, epsilon = 1e-15);
        assert_relative_eq!(normalization_factor(1, 1), (3.0 / (8.0 * PI)).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(normalization_factor(2, 1), (5.0 / (24.0 * PI)).sqrt(), epsilon = 1e-15);
        // large degree stays finite
        assert!(normalization_factor(150, 150).is_finite());
        assert!(normalization_factor(150, 150) > 0.0);
    }

    #[test]
    fn legendre_examples() {
        assert_relative_eq!(assoc_legendre(2, 0, 1.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(assoc_legendre(1, 1, 0.5), -0.866_025_403_784_438_6, epsilon = 1e-15);
        assert_relative_eq!(assoc_legendre(2, 2, 0.0), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn legendre_matches_closed_forms() {
        type ClosedForm = (usize, usize, fn(f64) -> f64);
        let closed: [ClosedForm; 10] = [
            (0, 0, |_| 1.0),
            (1, 0, |x| x),
            (1, 1, |x| -(1.0 - x * x).sqrt()),
            (2, 0, |x| 0.5 * (3.0 * x * x - 1.0)),
            (2, 1, |x| -3.0 * x * (1.0 - x * x).sqrt()),
            (2, 2, |x| 3.0 * (1.0 - x * x)),
            (3, 0, |x| 0.5 * (5.0 * x * x * x - 3.0 * x)),
            (3, 3, |x| -15.0 * (1.0 - x * x).powf(1.5)),
            (4, 0, |x| (35.0 * x.powi(4) - 30.0 * x * x + 3.0) / 8.0),
            (4, 2, |x| 7.5 * (7.0 * x * x - 1.0) * (1.0 - x * x)),
        ];
        for k in 0..=40 {
            let x = -1.0 + k as f64 * 0.05;
            for (n, m, f) in closed {
                assert!((assoc_legendre(n, m, x) - f(x)).abs() < 1e-13, "P_{n}^{m}({x})");
            }
        }
    }

    #[test]
    fn dtheta_examples() {
        assert_relative_eq!(assoc_legendre_dtheta(1, 0, FRAC_PI_2).unwrap(), -1.0, epsilon = 1e-14);
        assert!(assoc_legendre_dtheta(1, 1, FRAC_PI_2).unwrap().abs() < 1e-14);
        // central difference of P_2^0(cos θ) at π/3, step 1e-6: -1.2990381
        assert_relative_eq!(
            assoc_legendre_dtheta(2, 0, PI / 3.0).unwrap(),
            -1.299_038_1,
            epsilon = 1e-7
        );
    }

    #[test]
    fn d2theta_examples() {
        assert!(assoc_legendre_d2theta(1, 0, FRAC_PI_2).unwrap().abs() < 1e-14);
        assert_relative_eq!(
            assoc_legendre_d2theta(1, 1, PI / 4.0).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert_relative_eq!(assoc_legendre_d2theta(2, 0, FRAC_PI_2).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn pole_guard() {
        assert!(matches!(
            assoc_legendre_dtheta(2, 0, 0.0),
            Err(BasisError::DegenerateNode { .. })
        ));
        assert!(assoc_legendre_d2theta(2, 1, PI).is_err());
        assert!(LegendreColumn::new(3, 0.0).is_err());
    }

    #[test]
    fn column_agrees_with_pointwise() {
        let theta = 0.83;
        let col = LegendreColumn::new(6, theta).unwrap();
        for n in 0..=6 {
            for m in 0..=n {
                assert_relative_eq!(col.value(n, m), assoc_legendre(n, m, theta.cos()), epsilon = 1e-12);
                assert_relative_eq!(
                    col.dtheta(n, m),
                    assoc_legendre_dtheta(n, m, theta).unwrap(),
                    epsilon = 1e-12
                );
                assert_relative_eq!(
                    col.d2theta(n, m),
                    assoc_legendre_d2theta(n, m, theta).unwrap(),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn sample_examples() {
        let s00 = basis_sample(ModeIndex::new(0, 0).unwrap(), 1.1, 2.3).unwrap();
        assert_relative_eq!(s00.s, 0.282_094_8, epsilon = 1e-7);
        assert_eq!(
            [s00.s_theta, s00.s_phi, s00.s_thetatheta, s00.s_phiphi, s00.s_thetaphi],
            [0.0; 5]
        );

        let s10 = basis_sample(ModeIndex::new(1, 0).unwrap(), 1e-7, 0.4).unwrap();
        assert_relative_eq!(s10.s, 0.488_602_5, epsilon = 1e-7);

        let s21 = basis_sample(ModeIndex::new(2, -1).unwrap(), FRAC_PI_2, FRAC_PI_2).unwrap();
        assert!(s21.s.abs() < 1e-15);
    }

    #[test]
    fn phi_second_derivative_identity() {
        for i in 0..mode_count(6) {
            let mode = ModeIndex::from_flat(i);
            let b = basis_sample(mode, 0.7, 1.9).unwrap();
            let m2 = (mode.order() * mode.order()) as f64;
            assert_relative_eq!(b.s_phiphi, -m2 * b.s, epsilon = 1e-13);
        }
    }

    #[test]
    fn phi_derivatives_match_finite_differences() {
        let h = 1e-6;
        for i in 0..mode_count(5) {
            let mode = ModeIndex::from_flat(i);
            let (t, p) = (1.234, 0.567);
            let b = basis_sample(mode, t, p).unwrap();
            let plus = basis_sample(mode, t, p + h).unwrap();
            let minus = basis_sample(mode, t, p - h).unwrap();
            assert!((b.s_phi - (plus.s - minus.s) / (2.0 * h)).abs() < 1e-8);
            assert!((b.s_thetaphi - (plus.s_theta - minus.s_theta) / (2.0 * h)).abs() < 1e-7);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dtheta_matches_central_difference(n in 0usize..10, m_frac in 0.0f64..1.0, theta in 0.2f64..2.9) {
                let m = ((n as f64 + 1.0) * m_frac).floor().min(n as f64) as usize;
                let p = |t: f64| assoc_legendre(n, m, t.cos());
                let h = 1e-6;
                let fd = (p(theta + h) - p(theta - h)) / (2.0 * h);
                let exact = assoc_legendre_dtheta(n, m, theta).unwrap();
                let scale = exact.abs().max(p(theta).abs()).max(1.0);
                prop_assert!((fd - exact).abs() / scale < 1e-6);
            }

            #[test]
            fn d2theta_matches_second_difference(n in 0usize..10, m_frac in 0.0f64..1.0, theta in 0.2f64..2.9) {
                let m = ((n as f64 + 1.0) * m_frac).floor().min(n as f64) as usize;
                let p = |t: f64| assoc_legendre(n, m, t.cos());
                let h = 1e-3;
                let fd = (-p(theta + 2.0 * h) + 16.0 * p(theta + h) - 30.0 * p(theta) + 16.0 * p(theta - h)
                    - p(theta - 2.0 * h))
                    / (12.0 * h * h);
                let exact = assoc_legendre_d2theta(n, m, theta).unwrap();
                let scale = exact.abs().max(p(theta).abs()).max(1.0);
                prop_assert!((fd - exact).abs() / scale < 1e-6);
            }
        }
    }
}
