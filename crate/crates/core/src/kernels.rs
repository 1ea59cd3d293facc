//! Closed-form heat kernels, the backward test function and the constants of
//! the Jensen lower bound on the quadratic variation of the mass martingale.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::quad::adaptive_simpson;

/// Relative truncation threshold for both Dirichlet kernel series.
const SERIES_TOL: f64 = 1e-15;

/// The spatial interval `[0, J]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    length: f64,
}

impl Domain {
    pub fn new(length: f64) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return domain(format!("domain length must be positive, got {length}"));
        }
        Ok(Self { length })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn contains(&self, x: f64) -> bool {
        (0.0..=self.length).contains(&x)
    }
}

/// Parameters of the backward test function: horizon `T` and spatial center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionParams {
    pub horizon: f64,
    pub center: f64,
}

impl TestFunctionParams {
    pub fn new(horizon: f64) -> Result<Self> {
        Self::centered(horizon, 0.0)
    }

    pub fn centered(horizon: f64, center: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return domain(format!("test function horizon must be positive, got {horizon}"));
        }
        if !center.is_finite() {
            return domain("test function center must be finite");
        }
        Ok(Self { horizon, center })
    }
}

/// Free-space Gaussian heat kernel `(4πt)^{-1/2} exp(-x²/4t)`.
pub fn free_kernel(t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("heat kernel needs t > 0, got {t}"));
    }
    Ok(gaussian(t, x))
}

#[inline]
fn gaussian(t: f64, x: f64) -> f64 {
    (-x * x / (4.0 * t)).exp() / (4.0 * PI * t).sqrt()
}

fn check_kernel_args(t: f64, x: f64, y: f64, dom: &Domain) -> Result<()> {
    if !(t > 0.0) {
        return domain(format!("heat kernel needs t > 0, got {t}"));
    }
    if !dom.contains(x) || !dom.contains(y) {
        return domain(format!(
            "kernel arguments ({x}, {y}) outside [0, {}]",
            dom.length()
        ));
    }
    Ok(())
}

/// Dirichlet heat kernel on `[0, J]`.
///
/// Uses the method of images for `t ≤ J²/4` and the sine eigenfunction
/// expansion otherwise.
pub fn dirichlet_kernel(t: f64, x: f64, y: f64, dom: &Domain) -> Result<f64> {
    check_kernel_args(t, x, y, dom)?;
    let j = dom.length();
    if x == 0.0 || x == j || y == 0.0 || y == j {
        return Ok(0.0);
    }
    let v = if t <= j * j / 4.0 {
        image_series(t, x, y, j)
    } else {
        eigen_series(t, x, y, j)
    };
    Ok(v.max(0.0))
}

/// Image-series representation, valid for every `t > 0`.
pub fn dirichlet_kernel_images(t: f64, x: f64, y: f64, dom: &Domain) -> Result<f64> {
    check_kernel_args(t, x, y, dom)?;
    Ok(image_series(t, x, y, dom.length()))
}

/// Eigenfunction-series representation, valid for every `t > 0`.
pub fn dirichlet_kernel_eigen(t: f64, x: f64, y: f64, dom: &Domain) -> Result<f64> {
    check_kernel_args(t, x, y, dom)?;
    Ok(eigen_series(t, x, y, dom.length()))
}

fn image_series(t: f64, x: f64, y: f64, j: f64) -> f64 {
    let pair = |n: f64| gaussian(t, x - y + 2.0 * n * j) - gaussian(t, x + y + 2.0 * n * j);
    let mut sum = pair(0.0);
    let mut scale = gaussian(t, x - y) + gaussian(t, x + y);
    for n in 1.. {
        let n = n as f64;
        let plus = pair(n);
        let minus = pair(-n);
        sum += plus + minus;
        let added = gaussian(t, x - y + 2.0 * n * j)
            + gaussian(t, x + y + 2.0 * n * j)
            + gaussian(t, x - y - 2.0 * n * j)
            + gaussian(t, x + y - 2.0 * n * j);
        scale += added;
        // Images move away from [0, J] monotonically once |n| ≥ 1.
        if added <= SERIES_TOL * scale.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    sum
}

fn eigen_series(t: f64, x: f64, y: f64, j: f64) -> f64 {
    let mut sum = 0.0;
    let mut scale = 0.0_f64;
    for k in 1.. {
        let w = k as f64 * PI / j;
        let bound = 2.0 / j * (-w * w * t).exp();
        let term = bound * (w * x).sin() * (w * y).sin();
        sum += term;
        scale += term.abs();
        if bound <= SERIES_TOL * scale.max(1e-300) {
            break;
        }
    }
    sum
}

/// Backward test function `φ^(T)(t, x)`: the heat kernel at time `2T - t`,
/// centered at `p.center`.
pub fn phi(t: f64, x: f64, p: &TestFunctionParams) -> Result<f64> {
    check_time(t, p.horizon)?;
    Ok(phi_unchecked(t, x, p))
}

#[inline]
pub(crate) fn phi_unchecked(t: f64, x: f64, p: &TestFunctionParams) -> f64 {
    gaussian(2.0 * p.horizon - t, x - p.center)
}

fn check_time(t: f64, horizon: f64) -> Result<()> {
    if !(0.0..=horizon).contains(&t) {
        return domain(format!("time {t} outside [0, {horizon}]"));
    }
    Ok(())
}

/// `φ(t, x) / φ(T, x)` for a test function centered at zero.
pub fn phi_ratio(t: f64, x: f64, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) {
        return domain("test function horizon must be positive");
    }
    check_time(t, horizon)?;
    let s = 2.0 * horizon - t;
    Ok((horizon / s).sqrt() * (x * x / 4.0 * (1.0 / horizon - 1.0 / s)).exp())
}

/// Whole-line closed form of `∫ φ(t, x)^a dx`, namely
/// `C'(a) (2T - t)^{(1-a)/2}` with `C'(a) = (4π)^{(1-a)/2} a^{-1/2}`.
/// It bounds the integral over any bounded interval from above.
pub fn phi_l1_norm(t: f64, horizon: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return domain(format!("exponent must be positive, got {a}"));
    }
    if !(horizon > 0.0) {
        return domain("test function horizon must be positive");
    }
    check_time(t, horizon)?;
    Ok(l1_prefactor(a) * (2.0 * horizon - t).powf(0.5 * (1.0 - a)))
}

/// `C'(a)`.
pub fn l1_prefactor(a: f64) -> f64 {
    (4.0 * PI).powf(0.5 * (1.0 - a)) / a.sqrt()
}

/// Quadrature value of `∫_0^J φ(t, x)^a dx` on the bounded interval.
pub fn phi_l1_norm_on_interval(
    t: f64,
    p: &TestFunctionParams,
    a: f64,
    dom: &Domain,
) -> Result<f64> {
    if !(a > 0.0) {
        return domain(format!("exponent must be positive, got {a}"));
    }
    check_time(t, p.horizon)?;
    Ok(adaptive_simpson(
        |x| phi_unchecked(t, x, p).powf(a),
        0.0,
        dom.length(),
        1e-14,
    ))
}

/// Constants of the Jensen lower bound for a given noise exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JensenConstants {
    pub gamma: f64,
    /// `a = (2γ-2)/(2γ-1)`.
    pub a: f64,
    /// `C'(a)`.
    pub c_prime: f64,
    /// `C(a) = 2^{(1-a)/2} C'(a)`.
    pub c_of_a: f64,
    /// `C₁ = C(a)^{1-2γ}`.
    pub c1: f64,
}

impl JensenConstants {
    /// `(2-a)/(2γ) + a`, identically one.
    pub fn weight_identity(&self) -> f64 {
        (2.0 - self.a) / (2.0 * self.gamma) + self.a
    }

    /// `(1-a)/2 · (1-2γ)`, identically `-1/2`.
    pub fn horizon_exponent(&self) -> f64 {
        0.5 * (1.0 - self.a) * (1.0 - 2.0 * self.gamma)
    }
}

pub fn jensen_constants(gamma: f64) -> Result<JensenConstants> {
    if !(gamma > 1.0 && gamma.is_finite()) {
        return domain(format!("Jensen constants need γ > 1, got {gamma}"));
    }
    let a = (2.0 * gamma - 2.0) / (2.0 * gamma - 1.0);
    let c_prime = l1_prefactor(a);
    let c_of_a = 2f64.powf(0.5 * (1.0 - a)) * c_prime;
    let c1 = c_of_a.powf(1.0 - 2.0 * gamma);
    Ok(JensenConstants {
        gamma,
        a,
        c_prime,
        c_of_a,
        c1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn free_kernel_at_origin() {
        let v = free_kernel(0.25, 0.0).unwrap();
        assert!((v - 0.5641895835477563).abs() < 1e-15);
        assert!(free_kernel(0.0, 1.0).is_err());
        assert!(free_kernel(-1.0, 1.0).is_err());
    }

    #[test]
    fn free_kernel_mass_by_quadrature() {
        let m = adaptive_simpson(|x| free_kernel(1.0, x).unwrap(), -20.0, 20.0, 1e-14);
        assert!((m - 1.0).abs() < 1e-10, "mass {m}");
    }

    #[test]
    fn dirichlet_boundary_and_domain() {
        let dom = Domain::new(2.0).unwrap();
        assert_eq!(dirichlet_kernel(0.3, 0.0, 0.7, &dom).unwrap(), 0.0);
        assert_eq!(dirichlet_kernel(0.3, 2.0, 0.7, &dom).unwrap(), 0.0);
        assert!(dirichlet_kernel(0.3, -0.1, 0.7, &dom).is_err());
        assert!(dirichlet_kernel(0.3, 0.5, 2.1, &dom).is_err());
        assert!(dirichlet_kernel(0.0, 0.5, 0.5, &dom).is_err());
        assert!(Domain::new(0.0).is_err());
    }

    #[test]
    fn image_and_eigen_series_agree() {
        let dom = Domain::new(1.0).unwrap();
        for &t in &[0.01, 0.05, 0.2, 0.25, 0.5, 2.0] {
            for i in 1..10 {
                for k in 1..10 {
                    let (x, y) = (i as f64 / 10.0, k as f64 / 10.0);
                    let a = dirichlet_kernel_images(t, x, y, &dom).unwrap();
                    let b = dirichlet_kernel_eigen(t, x, y, &dom).unwrap();
                    assert!((a - b).abs() < 1e-10, "t={t} x={x} y={y}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn dirichlet_below_free_on_grid() {
        let dom = Domain::new(1.0).unwrap();
        for &t in &[0.001, 0.01, 0.1, 1.0] {
            for i in 0..=20 {
                for k in 0..=20 {
                    let (x, y) = (i as f64 / 20.0, k as f64 / 20.0);
                    let g = dirichlet_kernel(t, x, y, &dom).unwrap();
                    assert!(g >= 0.0);
                    assert!(g <= free_kernel(t, x - y).unwrap() * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn dirichlet_kernel_is_symmetric_and_conserves_at_most_mass() {
        let dom = Domain::new(1.0).unwrap();
        let a = dirichlet_kernel(0.02, 0.3, 0.6, &dom).unwrap();
        let b = dirichlet_kernel(0.02, 0.6, 0.3, &dom).unwrap();
        assert!((a - b).abs() < 1e-14);
        let m = adaptive_simpson(|y| dirichlet_kernel(0.02, 0.5, y, &dom).unwrap(), 0.0, 1.0, 1e-12);
        assert!(m < 1.0 && m > 0.9);
    }

    #[test]
    fn phi_closed_forms() {
        let p = TestFunctionParams::new(0.7).unwrap();
        let at_t = phi(0.7, 0.0, &p).unwrap();
        assert!((at_t - 1.0 / (4.0 * PI * 0.7).sqrt()).abs() < 1e-15);
        let at_0 = phi(0.0, 0.0, &p).unwrap();
        assert!((at_0 - 1.0 / (8.0 * PI * 0.7).sqrt()).abs() < 1e-15);
        assert!(phi(0.8, 0.0, &p).is_err());
        assert!(phi(-0.1, 0.0, &p).is_err());
        let shifted = TestFunctionParams::centered(0.7, 0.4).unwrap();
        assert_eq!(phi(0.3, 0.9, &shifted).unwrap(), phi(0.3, 0.5, &p).unwrap());
        assert_eq!(phi(0.7, 0.3, &p).unwrap(), free_kernel(0.7, 0.3).unwrap());
    }

    #[test]
    fn phi_solves_backward_heat_equation() {
        // Centered differences: residual of φ_t + φ_xx shrinks as h².
        let p = TestFunctionParams::new(1.0).unwrap();
        let residual = |h: f64| {
            let mut worst = 0.0_f64;
            for i in 1..10 {
                let t = i as f64 / 10.0;
                for k in -10..=10 {
                    let x = k as f64 * 0.3;
                    let f = |t: f64, x: f64| phi(t, x, &p).unwrap();
                    let dt = (f(t + h, x) - f(t - h, x)) / (2.0 * h);
                    let dxx = (f(t, x + h) - 2.0 * f(t, x) + f(t, x - h)) / (h * h);
                    worst = worst.max((dt + dxx).abs());
                }
            }
            worst
        };
        let coarse = residual(1e-2);
        let fine = residual(5e-3);
        assert!(coarse < 1e-4, "coarse residual {coarse}");
        assert!(fine < coarse / 3.0, "{fine} vs {coarse}");
    }

    #[test]
    fn phi_ratio_values() {
        assert_eq!(phi_ratio(1.0, 3.0, 1.0).unwrap(), 1.0);
        let r = phi_ratio(0.0, 0.0, 1.0).unwrap();
        assert!((r - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        // Grows without bound in |x| at t = 0.
        assert!(phi_ratio(0.0, 20.0, 1.0).unwrap() > 1e4);
        // Direct ratio of the two evaluations.
        let p = TestFunctionParams::new(2.0).unwrap();
        let direct = phi(0.5, 1.3, &p).unwrap() / phi(2.0, 1.3, &p).unwrap();
        assert!((direct - phi_ratio(0.5, 1.3, 2.0).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn phi_l1_norm_matches_quadrature() {
        for &a in &[0.3, 0.5, 1.0, 1.7] {
            for &frac in &[0.0, 0.5, 1.0] {
                let horizon = 1.0;
                let t = frac * horizon;
                let p = TestFunctionParams::new(horizon).unwrap();
                let q = adaptive_simpson(|x| phi(t, x, &p).unwrap().powf(a), -80.0, 80.0, 1e-13);
                let c = phi_l1_norm(t, horizon, a).unwrap();
                assert!((q - c).abs() < 1e-8, "a={a} t={t}: {q} vs {c}");
            }
        }
        assert_eq!(phi_l1_norm(0.3, 1.0, 1.0).unwrap(), 1.0);
        assert!(phi_l1_norm(1.0, 1.0, 0.5).unwrap() <= phi_l1_norm(0.0, 1.0, 0.5).unwrap());
        assert!(phi_l1_norm(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn bounded_interval_l1_is_below_closed_form() {
        let dom = Domain::new(1.0).unwrap();
        let p = TestFunctionParams::centered(0.3, 0.5).unwrap();
        let inside = phi_l1_norm_on_interval(0.1, &p, 0.5, &dom).unwrap();
        assert!(inside < phi_l1_norm(0.1, 0.3, 0.5).unwrap());
    }

    #[test]
    fn constants_at_three_halves() {
        let c = jensen_constants(1.5).unwrap();
        assert_eq!(c.a, 0.5);
        assert_eq!(c.weight_identity(), 1.0);
        // C'(1/2) checked against quadrature of φ^{1/2} with 2T - t = 1.
        let q = adaptive_simpson(
            |x| free_kernel(1.0, x).unwrap().sqrt(),
            -80.0,
            80.0,
            1e-13,
        );
        assert!((q - c.c_prime).abs() < 1e-9);
        assert!((c.c_prime - (4.0 * PI).powf(0.25) * 2f64.sqrt()).abs() < 1e-14);
        assert!((c.c1 - 0.09973557010035818).abs() < 1e-12);
        assert!(jensen_constants(1.0).is_err());
    }

    proptest! {
        #[test]
        fn constant_identities(gamma in 1.0001f64..4.0) {
            let c = jensen_constants(gamma).unwrap();
            prop_assert!(c.a > 0.0 && c.a < 1.0);
            prop_assert!((c.weight_identity() - 1.0).abs() < 1e-14);
            prop_assert!((c.horizon_exponent() + 0.5).abs() < 1e-14);
            prop_assert!(c.c1 > 0.0);
        }

        #[test]
        fn free_kernel_even(t in 1e-3f64..10.0, x in -10f64..10.0) {
            prop_assert_eq!(free_kernel(t, x).unwrap(), free_kernel(t, -x).unwrap());
        }

        #[test]
        fn dirichlet_dominated(t in 1e-4f64..3.0, x in 0f64..1.0, y in 0f64..1.0) {
            let dom = Domain::new(1.0).unwrap();
            let g = dirichlet_kernel(t, x, y, &dom).unwrap();
            prop_assert!(g >= 0.0);
            prop_assert!(g <= free_kernel(t, x - y).unwrap() * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn ratio_bounded_below(frac in 0f64..=1.0, x in -10f64..10.0, horizon in 0.01f64..10.0) {
            let r = phi_ratio(frac * horizon, x, horizon).unwrap();
            prop_assert!(r >= std::f64::consts::FRAC_1_SQRT_2 * (1.0 - 1e-15));
        }
    }
}
