//! Monte-Carlo checks of the asymptotic bias, variance and normality of the
//! local polynomial and varying-coefficient modal estimators.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ModalError, Result};
use crate::kernels::{KernelMoments, KernelSpec};
use crate::linalg;
use crate::modal_lpr::{factorial, fit_point, Bandwidths, EMConfig};
use crate::stats;
use crate::study::scenario::{Scenario, Target};
use crate::study::{ks_distance_normal, substream};
use crate::varying_coeff::vc_fit_point;

/// Floor below which `n h₁ h₂⁵` counts as a gross violation of the rate conditions.
pub const RATE_FLOOR: f64 = 0.1;

/// Asymptotic bias and variance ingredients of the scalar estimator at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryQuantities {
    pub p: usize,
    pub g0: f64,
    pub g2: f64,
    pub g3: f64,
    pub f: f64,
    /// `(μ_{j+l})`, row-major `(p+1)×(p+1)`
    pub s: Vec<f64>,
    /// `(μ_{j+l+1})`
    pub s_tilde: Vec<f64>,
    /// `(ν_{j+l})`
    pub s_star: Vec<f64>,
    /// `(μ_{p+1}, …, μ_{2p+1})`
    pub c_p: Vec<f64>,
    /// `(μ_{p+2}, …, μ_{2p+2})`
    pub c_tilde_p: Vec<f64>,
    /// `(μ_0, …, μ_p)`
    pub c_star_p: Vec<f64>,
    /// `Γ = g''(0|x₀) f(x₀)`
    pub gamma: f64,
    /// `Γ'(x₀)/Γ(x₀)`, needed only for even `p − v`.
    pub gamma_log_derivative: f64,
    pub tilde_nu: f64,
}

impl TheoryQuantities {
    pub fn new(kernel: KernelSpec, p: usize, g0: f64, g2: f64, g3: f64, f: f64) -> Result<Self> {
        if !(g2 < 0.0) {
            return Err(ModalError::NonconcaveAtZero { g2 });
        }
        if !(g0 > 0.0 && f > 0.0) {
            return Err(ModalError::InvalidInput("g(0) and f(x₀) must be positive".into()));
        }
        let km: KernelMoments = kernel.moments(p);
        let q = p + 1;
        let mat = |off: usize, m: &[f64]| -> Vec<f64> {
            (0..q * q).map(|k| m[k / q + k % q + off]).collect()
        };
        Ok(TheoryQuantities {
            p,
            g0,
            g2,
            g3,
            f,
            s: mat(0, &km.mu),
            s_tilde: mat(1, &km.mu),
            s_star: mat(0, &km.nu),
            c_p: (0..q).map(|j| km.mu[p + 1 + j]).collect(),
            c_tilde_p: (0..q).map(|j| km.mu[p + 2 + j]).collect(),
            c_star_p: (0..q).map(|j| km.mu[j]).collect(),
            gamma: g2 * f,
            gamma_log_derivative: 0.0,
            tilde_nu: km.tilde_nu,
        })
    }

    fn s_inv_row(&self, v: usize) -> Result<Vec<f64>> {
        let q = self.p + 1;
        let inv = linalg::spd_inverse(&self.s, q)?;
        Ok(inv[v * q..(v + 1) * q].to_vec())
    }

    /// `e_{v+1}ᵀ S⁻¹ S* S⁻¹ e_{v+1} · v!² g(0) ν̃ / (f g''(0)² n h₁^{1+2v} h₂³)`
    pub fn variance(&self, v: usize, n: usize, h1: f64, h2: f64) -> Result<f64> {
        let q = self.p + 1;
        let row = self.s_inv_row(v)?;
        let mut quad = 0.0;
        for a in 0..q {
            for b in 0..q {
                quad += row[a] * self.s_star[a * q + b] * row[b];
            }
        }
        let vf = factorial(v);
        Ok(quad * vf * vf * self.g0 * self.tilde_nu
            / (self.f * self.g2 * self.g2 * n as f64 * h1.powi(1 + 2 * v as i32) * h2.powi(3)))
    }

    /// Leading bias of `m̂_v(x₀)`; `m_derivs[k]` is `m^{(k)}(x₀)` for `k ≤ p + 2`.
    pub fn bias(&self, v: usize, h1: f64, h2: f64, m_derivs: &[f64]) -> Result<f64> {
        let p = self.p;
        if v > p {
            return Err(ModalError::InvalidInput(format!("derivative order {v} exceeds p = {p}")));
        }
        let row = self.s_inv_row(v)?;
        let dot = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        let vf = factorial(v);
        let response = self.g3 * vf * h2 * h2 / (2.0 * self.g2 * h1.powi(v as i32)) * dot(&self.c_star_p);
        let need = if (p - v) % 2 == 1 { p + 1 } else { p + 2 };
        if m_derivs.len() <= need {
            return Err(ModalError::InvalidInput(format!("need m derivatives up to order {need}")));
        }
        let smooth = if (p - v) % 2 == 1 {
            h1.powi((p + 1 - v) as i32) * vf / factorial(p + 1) * m_derivs[p + 1] * dot(&self.c_p)
        } else {
            h1.powi((p + 2 - v) as i32) * vf / factorial(p + 2)
                * (m_derivs[p + 2] + (p + 2) as f64 * m_derivs[p + 1] * self.gamma_log_derivative)
                * dot(&self.c_tilde_p)
        };
        Ok(smooth - response)
    }
}

/// Asymptotic bias and covariance ingredients of the varying-coefficient estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcTheoryQuantities {
    pub p: usize,
    /// `Δ(u₀)`, row-major
    pub delta: Vec<f64>,
    /// `Δ̃(u₀)`
    pub tilde_delta: Vec<f64>,
    /// `αⱼ(u₀) = E{x xⱼ q''(0|x,u₀)}` stored as the columns of a row-major matrix
    pub alpha: Vec<f64>,
    /// `β(u₀) = E{x q'''(0|x,u₀)}`
    pub beta: Vec<f64>,
    pub f: f64,
    pub mu2: f64,
    pub nu0: f64,
    pub tilde_nu: f64,
}

impl VcTheoryQuantities {
    /// Error density independent of `(x, u)`: `Δ = g''(0) E[xxᵀ]`, `Δ̃ = g(0) E[xxᵀ]`,
    /// `αⱼ = g''(0) E[x xⱼ]`, `β = g'''(0) E[x]`.
    pub fn homoscedastic(
        kernel: KernelSpec,
        second_moment: &[f64],
        first_moment: &[f64],
        (g0, g2, g3): (f64, f64, f64),
        f: f64,
    ) -> Result<Self> {
        let p = first_moment.len();
        if second_moment.len() != p * p || p == 0 {
            return Err(ModalError::InvalidInput("moment dimensions disagree".into()));
        }
        if !(g2 < 0.0) {
            return Err(ModalError::NonconcaveAtZero { g2 });
        }
        let km = kernel.moments(1);
        Ok(VcTheoryQuantities {
            p,
            delta: second_moment.iter().map(|v| g2 * v).collect(),
            tilde_delta: second_moment.iter().map(|v| g0 * v).collect(),
            alpha: second_moment.iter().map(|v| g2 * v).collect(),
            beta: first_moment.iter().map(|v| g3 * v).collect(),
            f,
            mu2: km.mu[2],
            nu0: km.nu[0],
            tilde_nu: km.tilde_nu,
        })
    }

    fn neg_delta_inverse(&self) -> Result<Vec<f64>> {
        // Δ is negative definite; invert −Δ with the SPD routine
        let neg: Vec<f64> = self.delta.iter().map(|v| -v).collect();
        linalg::spd_inverse(&neg, self.p)
    }

    /// `ν̃ν₀/(n h₁ h₂³ f) Δ⁻¹ Δ̃ Δ⁻¹`, row-major.
    pub fn covariance(&self, n: usize, h1: f64, h2: f64) -> Result<Vec<f64>> {
        let p = self.p;
        let inv = self.neg_delta_inverse()?;
        let factor = self.tilde_nu * self.nu0 / (n as f64 * h1 * h2.powi(3) * self.f);
        let mut out = vec![0.0; p * p];
        for a in 0..p {
            for b in 0..p {
                let mut s = 0.0;
                for k in 0..p {
                    for l in 0..p {
                        s += inv[a * p + k] * self.tilde_delta[k * p + l] * inv[l * p + b];
                    }
                }
                out[a * p + b] = factor * s;
            }
        }
        Ok(out)
    }

    /// `½ Δ⁻¹ {μ₂ h₁² Σⱼ gⱼ''(u₀) αⱼ(u₀) − h₂² β(u₀)}`.
    pub fn bias(&self, h1: f64, h2: f64, g_second: &[f64]) -> Result<Vec<f64>> {
        let p = self.p;
        if g_second.len() != p {
            return Err(ModalError::InvalidInput("one second derivative per coefficient".into()));
        }
        let inv = self.neg_delta_inverse()?;
        let inner: Vec<f64> = (0..p)
            .map(|r| {
                let a: f64 = (0..p).map(|j| g_second[j] * self.alpha[r * p + j]).sum();
                self.mu2 * h1 * h1 * a - h2 * h2 * self.beta[r]
            })
            .collect();
        Ok((0..p)
            .map(|a| -0.5 * (0..p).map(|b| inv[a * p + b] * inner[b]).sum::<f64>())
            .collect())
    }
}

fn check_rates(n: usize, bw: Bandwidths, p: usize) -> Result<()> {
    let lower = n as f64 * bw.h1 * bw.h2.powi(5);
    if lower < RATE_FLOOR {
        return Err(ModalError::RateViolation(format!("n·h₁·h₂⁵ = {lower:.3e} is below {RATE_FLOOR}")));
    }
    let upper = bw.h1.powi(p as i32 + 1) / bw.h2;
    if upper > 1.0 {
        return Err(ModalError::RateViolation(format!("h₁^(p+1)/h₂ = {upper:.3} exceeds 1")));
    }
    Ok(())
}

/// Bandwidths following the optimal `n^{-1/8}` rate from a reference pair at `n_ref`.
pub fn optimal_rate_bandwidths(n: usize, n_ref: usize, reference: Bandwidths) -> Bandwidths {
    let r = (n as f64 / n_ref as f64).powf(-0.125);
    Bandwidths {
        h1: reference.h1 * r,
        h2: reference.h2 * r,
    }
}

/// Sample size at which [`reference_bandwidths`] is anchored.
pub const REFERENCE_N: usize = 20_000;

/// Default bandwidths for the theory checks on the homoscedastic presets:
/// `(0.15, 0.25)` at [`REFERENCE_N`], scaled at the optimal rate.
pub fn reference_bandwidths(n: usize) -> Bandwidths {
    optimal_rate_bandwidths(n, REFERENCE_N, Bandwidths { h1: 0.15, h2: 0.25 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCheckConfig {
    pub scenario: Scenario,
    pub x0: f64,
    pub bandwidths: Bandwidths,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub em: EMConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub x0: f64,
    pub n: usize,
    pub h1: f64,
    pub h2: f64,
    pub replications: usize,
    pub failed: usize,
    pub truth: f64,
    pub empirical_bias: f64,
    pub empirical_variance: f64,
    pub theoretical_bias: f64,
    /// `½ m''(x₀) μ₂ h₁²`
    pub theoretical_bias_h1: f64,
    /// `−g'''(0) h₂² / (2 g''(0))`
    pub theoretical_bias_h2: f64,
    pub theoretical_variance: f64,
    pub variance_ratio: f64,
    pub bias_ratio: f64,
    /// KS distance of `(m̂ − m − b)/√var` using the theoretical bias and variance.
    pub ks_theoretical: f64,
    /// KS distance of the estimates standardised by their own mean and sd.
    pub ks_empirical: f64,
    pub estimates: Vec<f64>,
}

fn error_derivatives_at_zero(scenario: &Scenario, s: f64) -> (f64, f64, f64) {
    let m = scenario.error_mode();
    let e = &scenario.error;
    (
        e.pdf_derivative(m, 0) / s,
        e.pdf_derivative(m, 2) / s.powi(3),
        e.pdf_derivative(m, 3) / s.powi(4),
    )
}

fn summarize(estimates: &[f64]) -> (f64, f64) {
    (stats::mean(estimates), stats::std_dev(estimates).powi(2))
}

/// Empirical bias and variance of the local linear modal estimate at `x0`
/// against the asymptotic formulas, with a normality diagnostic.
pub fn mc_theory_check(cfg: &TheoryCheckConfig) -> Result<TheoryReport> {
    let s = &cfg.scenario;
    if s.is_vc() {
        return Err(ModalError::InvalidInput("scalar scenario required".into()));
    }
    if !(0.0..=1.0).contains(&cfg.x0) || cfg.replications < 2 {
        return Err(ModalError::InvalidInput("need x₀ in [0, 1] and at least two replications".into()));
    }
    let em = cfg.em.with_order(1);
    em.validate()?;
    let bw = cfg.bandwidths;
    check_rates(cfg.n, bw, 1)?;
    let sigma = s.scale.at(cfg.x0);
    let (g0, g2, g3) = error_derivatives_at_zero(s, sigma);
    let tq = TheoryQuantities::new(em.kernel, 1, g0, g2, g3, 1.0)?;
    let m2 = s.location_derivative(cfg.x0, 2);
    let truth = s.truth_scalar(cfg.x0, Target::Mode);
    let theoretical_variance = tq.variance(0, cfg.n, bw.h1, bw.h2)?;
    let theoretical_bias = tq.bias(0, bw.h1, bw.h2, &[truth, s.location_derivative(cfg.x0, 1), m2])?;
    let mu2 = em.kernel.moments(2).mu[2];

    let fits: Vec<Result<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let data = s.generate_scalar(cfg.n, &mut substream(cfg.seed, r as u64))?;
            Ok(fit_point(&data, cfg.x0, bw, &em)?.coefficients.beta[0])
        })
        .collect();
    let estimates: Vec<f64> = fits.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let failed = cfg.replications - estimates.len();
    if estimates.len() < 2 {
        return Err(ModalError::AllFitsFailed);
    }
    let (mean, var) = summarize(&estimates);
    let sd_t = theoretical_variance.sqrt();
    let z_t: Vec<f64> = estimates.iter().map(|m| (m - truth - theoretical_bias) / sd_t).collect();
    let z_e: Vec<f64> = estimates.iter().map(|m| (m - mean) / var.sqrt()).collect();
    Ok(TheoryReport {
        x0: cfg.x0,
        n: cfg.n,
        h1: bw.h1,
        h2: bw.h2,
        replications: cfg.replications,
        failed,
        truth,
        empirical_bias: mean - truth,
        empirical_variance: var,
        theoretical_bias,
        theoretical_bias_h1: 0.5 * m2 * mu2 * bw.h1 * bw.h1,
        theoretical_bias_h2: -g3 * bw.h2 * bw.h2 / (2.0 * g2),
        theoretical_variance,
        variance_ratio: var / theoretical_variance,
        bias_ratio: (mean - truth) / theoretical_bias,
        ks_theoretical: ks_distance_normal(&z_t),
        ks_empirical: ks_distance_normal(&z_e),
        estimates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcTheoryCheckConfig {
    pub scenario: Scenario,
    pub u0: f64,
    pub bandwidths: Bandwidths,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub em: EMConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcTheoryReport {
    pub u0: f64,
    pub n: usize,
    pub h1: f64,
    pub h2: f64,
    pub replications: usize,
    pub failed: usize,
    pub truth: Vec<f64>,
    pub empirical_bias: Vec<f64>,
    pub theoretical_bias: Vec<f64>,
    /// Row-major `p × p`.
    pub empirical_covariance: Vec<f64>,
    pub theoretical_covariance: Vec<f64>,
    pub diagonal_ratios: Vec<f64>,
    /// KS distance of each coefficient standardised by its own mean and sd.
    pub ks_empirical: Vec<f64>,
}

/// Covariate moments `E[xxᵀ]` and `E[x]` for `x = (1, x₁, x₂)` with standard
/// normal `x₁, x₂` of correlation `ρ`.
pub fn vc_covariate_moments(rho: f64) -> (Vec<f64>, Vec<f64>) {
    (
        vec![1.0, 0.0, 0.0, 0.0, 1.0, rho, 0.0, rho, 1.0],
        vec![1.0, 0.0, 0.0],
    )
}

/// Empirical bias and covariance of `ĝ(u₀)` against the asymptotic formulas.
pub fn vc_theory_check(cfg: &VcTheoryCheckConfig) -> Result<VcTheoryReport> {
    let s = &cfg.scenario;
    if !s.is_vc() {
        return Err(ModalError::InvalidInput("varying-coefficient scenario required".into()));
    }
    if !(0.0..=1.0).contains(&cfg.u0) || cfg.replications < 2 {
        return Err(ModalError::InvalidInput("need u₀ in [0, 1] and at least two replications".into()));
    }
    let em = cfg.em.with_order(1);
    em.validate()?;
    let bw = cfg.bandwidths;
    check_rates(cfg.n, bw, 1)?;
    let sigma = s.scale.at(cfg.u0);
    let (sxx, ex) = vc_covariate_moments(s.covariate_correlation);
    let vq = VcTheoryQuantities::homoscedastic(em.kernel, &sxx, &ex, error_derivatives_at_zero(s, sigma), 1.0)?;
    let truth = s.truth_coefficients(cfg.u0, Target::Mode).to_vec();
    let theoretical_bias = vq.bias(bw.h1, bw.h2, &s.coefficient_derivatives(cfg.u0, 2))?;
    let theoretical_covariance = vq.covariance(cfg.n, bw.h1, bw.h2)?;

    let fits: Vec<Result<Vec<f64>>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let data = s.generate_vc(cfg.n, &mut substream(cfg.seed, r as u64))?;
            Ok(vc_fit_point(&data, cfg.u0, bw, &em)?.coefficients.b)
        })
        .collect();
    let estimates: Vec<Vec<f64>> = fits.into_iter().filter_map(|r| r.ok()).collect();
    let failed = cfg.replications - estimates.len();
    if estimates.len() < 2 {
        return Err(ModalError::AllFitsFailed);
    }
    let p = vq.p;
    let k = estimates.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| estimates.iter().map(|e| e[j]).sum::<f64>() / k).collect();
    let mut cov = vec![0.0; p * p];
    for e in &estimates {
        for a in 0..p {
            for b in 0..p {
                cov[a * p + b] += (e[a] - mean[a]) * (e[b] - mean[b]) / (k - 1.0);
            }
        }
    }
    let ks_empirical = (0..p)
        .map(|j| {
            let sd = cov[j * p + j].sqrt();
            let z: Vec<f64> = estimates.iter().map(|e| (e[j] - mean[j]) / sd).collect();
            ks_distance_normal(&z)
        })
        .collect();
    Ok(VcTheoryReport {
        u0: cfg.u0,
        n: cfg.n,
        h1: bw.h1,
        h2: bw.h2,
        replications: cfg.replications,
        failed,
        empirical_bias: mean.iter().zip(&truth).map(|(m, t)| m - t).collect(),
        truth,
        theoretical_bias,
        diagonal_ratios: (0..p).map(|j| cov[j * p + j] / theoretical_covariance[j * p + j]).collect(),
        empirical_covariance: cov,
        theoretical_covariance,
        ks_empirical,
    })
}
