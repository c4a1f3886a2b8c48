//! Predictor kernels `K`, the Gaussian response kernel `φ`, and the moment
//! constants that enter the asymptotic bias and variance formulas.
//!
//! | Kernel       | `K(t)`               | Support   | `μ₂`  | `ν₀`        |
//! |--------------|----------------------|-----------|-------|-------------|
//! | Epanechnikov | `0.75 (1 - t²)`      | `[-1, 1]` | `1/5` | `3/5`       |
//! | Gaussian     | `exp(-t²/2) / √(2π)` | `ℝ`       | `1`   | `1/(2√π)`   |
//!
//! The Epanechnikov kernel is the default because the theory asks for a
//! symmetric density with compact support. The Gaussian kernel is offered for
//! smoothness experiments; with it the compact-support condition is violated
//! and every observation enters every local fit.
//!
//! ```
//! use modalreg::kernels::{kernel_eval, kernel_moments, KernelSpec};
//!
//! assert_eq!(kernel_eval(KernelSpec::Epanechnikov, 0.0), 0.75);
//! let m = kernel_moments(KernelSpec::Epanechnikov, 1);
//! assert!((m.mu[2] - 0.2).abs() < 1e-15);
//! assert!((m.nu[0] - 0.6).abs() < 1e-15);
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModalError;

/// `1/√(2π)`
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Predictor kernel family. The response kernel is always the standard normal density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSpec {
    #[default]
    Epanechnikov,
    Gaussian,
}

impl KernelSpec {
    /// Evaluates `K(t)`.
    #[inline]
    pub fn eval(self, t: f64) -> f64 {
        match self {
            KernelSpec::Epanechnikov => {
                if t.abs() < 1.0 {
                    0.75 * (1.0 - t * t)
                } else {
                    0.0
                }
            }
            KernelSpec::Gaussian => normal_pdf(t),
        }
    }

    /// Evaluates the scaled kernel `K_h(u) = K(u/h)/h`.
    #[inline]
    pub fn scaled(self, u: f64, h: f64) -> f64 {
        self.eval(u / h) / h
    }

    /// Half-width of the support in units of the bandwidth, `None` when unbounded.
    pub fn support_radius(self) -> Option<f64> {
        match self {
            KernelSpec::Epanechnikov => Some(1.0),
            KernelSpec::Gaussian => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelSpec::Epanechnikov => "epanechnikov",
            KernelSpec::Gaussian => "gaussian",
        }
    }

    /// Moments `μ_j`, `ν_j` for `j = 0..=2p+2` and the response-kernel constant `ν̃`.
    pub fn moments(self, p: usize) -> KernelMoments {
        let len = 2 * p + 3;
        let mut mu = vec![0.0; len];
        let mut nu = vec![0.0; len];
        for j in (0..len).step_by(2) {
            let jf = j as f64;
            match self {
                KernelSpec::Epanechnikov => {
                    mu[j] = 1.5 * (1.0 / (jf + 1.0) - 1.0 / (jf + 3.0));
                    nu[j] = 1.125 * (1.0 / (jf + 1.0) - 2.0 / (jf + 3.0) + 1.0 / (jf + 5.0));
                }
                KernelSpec::Gaussian => {
                    let dfact = double_factorial_odd(j);
                    mu[j] = dfact;
                    nu[j] = dfact / (2f64.powf(jf / 2.0 + 1.0) * PI.sqrt());
                }
            }
        }
        KernelMoments {
            mu,
            nu,
            tilde_nu: TILDE_NU,
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelSpec {
    type Err = ModalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "epanechnikov" => Ok(KernelSpec::Epanechnikov),
            "gaussian" => Ok(KernelSpec::Gaussian),
            other => Err(ModalError::InvalidInput(format!(
                "unknown kernel {other:?}; expected \"epanechnikov\" or \"gaussian\""
            ))),
        }
    }
}

/// `ν̃ = ∫ t² φ²(t) dt = 1/(4√π)`.
pub const TILDE_NU: f64 = 0.141_047_395_886_939_08;

/// Kernel moment constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMoments {
    /// `μ_j = ∫ tʲ K(t) dt`
    pub mu: Vec<f64>,
    /// `ν_j = ∫ tʲ K²(t) dt`
    pub nu: Vec<f64>,
    /// `ν̃ = ∫ t² φ²(t) dt`
    pub tilde_nu: f64,
}

pub fn kernel_eval(spec: KernelSpec, t: f64) -> f64 {
    spec.eval(t)
}

pub fn kernel_moments(spec: KernelSpec, p: usize) -> KernelMoments {
    spec.moments(p)
}

/// `(j-1)!!` for even `j`, with `(-1)!! = 1`.
fn double_factorial_odd(j: usize) -> f64 {
    let mut acc = 1.0;
    let mut k = 1;
    while k < j {
        acc *= k as f64;
        k += 2;
    }
    acc
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(t: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * t * t).exp()
}

/// `φ_h(t) = φ(t/h)/h`.
#[inline]
pub fn response_kernel(t: f64, h: f64) -> f64 {
    normal_pdf(t / h) / h
}

/// `ν`-th derivative of the standard normal density, `(-1)^ν He_ν(t) φ(t)`
/// with `He` the probabilists' Hermite polynomials.
pub fn normal_pdf_derivative(t: f64, order: usize) -> f64 {
    let mut he_prev = 1.0;
    let mut he = t;
    let he_n = match order {
        0 => 1.0,
        1 => t,
        _ => {
            for k in 1..order {
                let next = t * he - k as f64 * he_prev;
                he_prev = he;
                he = next;
            }
            he
        }
    };
    let sign = if order.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * he_n * normal_pdf(t)
}

/// Standard normal distribution function.
pub fn normal_cdf(t: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-t / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = if n.is_multiple_of(2) { n } else { n + 1 };
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    fn support(spec: KernelSpec) -> (f64, f64) {
        match spec {
            KernelSpec::Epanechnikov => (-1.0, 1.0),
            KernelSpec::Gaussian => (-12.0, 12.0),
        }
    }

    #[test]
    fn point_values() {
        assert_eq!(kernel_eval(KernelSpec::Epanechnikov, 0.0), 0.75);
        assert_eq!(kernel_eval(KernelSpec::Epanechnikov, 2.0), 0.0);
        assert_eq!(kernel_eval(KernelSpec::Epanechnikov, 1.0), 0.0);
        assert!((kernel_eval(KernelSpec::Gaussian, 0.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-16);
    }

    #[test]
    fn kernels_integrate_to_one_and_are_symmetric() {
        for spec in [KernelSpec::Epanechnikov, KernelSpec::Gaussian] {
            let (a, b) = support(spec);
            let total = simpson(|t| spec.eval(t), a, b, 20_000);
            assert!((total - 1.0).abs() < 1e-8, "{spec}: {total}");
            for t in [0.1, 0.5, 0.99, 1.7, 3.0] {
                assert_eq!(spec.eval(t), spec.eval(-t));
            }
        }
    }

    #[test]
    fn moments_match_quadrature() {
        for spec in [KernelSpec::Epanechnikov, KernelSpec::Gaussian] {
            let (a, b) = support(spec);
            let m = spec.moments(3);
            assert_eq!(m.mu.len(), 9);
            for j in 0..m.mu.len() {
                let mu = simpson(|t| t.powi(j as i32) * spec.eval(t), a, b, 40_000);
                let nu = simpson(|t| t.powi(j as i32) * spec.eval(t).powi(2), a, b, 40_000);
                assert!((m.mu[j] - mu).abs() < 1e-8, "{spec} mu[{j}] {} vs {mu}", m.mu[j]);
                assert!((m.nu[j] - nu).abs() < 1e-8, "{spec} nu[{j}] {} vs {nu}", m.nu[j]);
                if j % 2 == 1 {
                    assert_eq!(m.mu[j], 0.0);
                    assert_eq!(m.nu[j], 0.0);
                }
            }
            assert_eq!(m.mu[0], 1.0);
        }
    }

    #[test]
    fn reference_constants() {
        let e = kernel_moments(KernelSpec::Epanechnikov, 1);
        assert!((e.mu[2] - 0.2).abs() < 1e-15);
        assert!((e.nu[0] - 0.6).abs() < 1e-15);
        let g = kernel_moments(KernelSpec::Gaussian, 1);
        assert_eq!(g.mu[2], 1.0);
        let tilde = simpson(|t| t * t * normal_pdf(t).powi(2), -12.0, 12.0, 40_000);
        assert!((g.tilde_nu - tilde).abs() < 1e-12);
        assert!((TILDE_NU - 1.0 / (4.0 * PI.sqrt())).abs() < 1e-16);
    }

    #[test]
    fn normal_derivatives_match_finite_differences() {
        let step = 1e-4;
        for order in 1..=4 {
            for &t in &[-1.3, 0.0, 0.4, 2.2] {
                let fd = (normal_pdf_derivative(t + step, order - 1)
                    - normal_pdf_derivative(t - step, order - 1))
                    / (2.0 * step);
                assert!((fd - normal_pdf_derivative(t, order)).abs() < 1e-7);
            }
        }
        assert!((normal_pdf_derivative(0.0, 2) + FRAC_1_SQRT_2PI).abs() < 1e-16);
    }

    #[test]
    fn parse_kernel_names() {
        assert_eq!("gaussian".parse::<KernelSpec>().unwrap(), KernelSpec::Gaussian);
        assert_eq!("Epanechnikov".parse::<KernelSpec>().unwrap(), KernelSpec::Epanechnikov);
        assert!("tricube".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        let v = normal_cdf(1.959_963_984_540_054);
        assert!((v - 0.975).abs() < 1e-11, "{v:e}");
    }
}
