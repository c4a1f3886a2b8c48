use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ModalError, Result};
use crate::kernels::{normal_cdf, normal_pdf_derivative};
use crate::study::golden_section_max;

/// Two-component normal mixture error law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMixture {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub sds: [f64; 2],
}

impl Default for ErrorMixture {
    /// `0.5 N(−1, 2.5²) + 0.5 N(1, 0.5²)`: mean zero, skewed, mode near 1.
    fn default() -> Self {
        ErrorMixture {
            weights: [0.5, 0.5],
            means: [-1.0, 1.0],
            sds: [2.5, 0.5],
        }
    }
}

impl ErrorMixture {
    pub fn new(weights: [f64; 2], means: [f64; 2], sds: [f64; 2]) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights[0] + weights[1] - 1.0).abs() > 1e-12 {
            return Err(ModalError::InvalidInput("mixture weights must be nonnegative and sum to 1".into()));
        }
        if sds.iter().any(|s| !(*s > 0.0 && s.is_finite())) || means.iter().any(|m| !m.is_finite()) {
            return Err(ModalError::InvalidInput("mixture components need finite means and positive sds".into()));
        }
        Ok(ErrorMixture { weights, means, sds })
    }

    /// A single normal component.
    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        Self::new([1.0, 0.0], [mean, mean], [sd, sd])
    }

    pub fn mean(&self) -> f64 {
        self.weights[0] * self.means[0] + self.weights[1] * self.means[1]
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        (0..2)
            .map(|k| self.weights[k] * (self.sds[k].powi(2) + (self.means[k] - m).powi(2)))
            .sum()
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn pdf(&self, e: f64) -> f64 {
        self.pdf_derivative(e, 0)
    }

    /// `ν`-th derivative of the density.
    pub fn pdf_derivative(&self, e: f64, order: usize) -> f64 {
        (0..2)
            .map(|k| {
                let s = self.sds[k];
                self.weights[k] * normal_pdf_derivative((e - self.means[k]) / s, order) / s.powi(order as i32 + 1)
            })
            .sum()
    }

    pub fn cdf(&self, e: f64) -> f64 {
        (0..2)
            .map(|k| self.weights[k] * normal_cdf((e - self.means[k]) / self.sds[k]))
            .sum()
    }

    fn support_hint(&self) -> (f64, f64) {
        let lo = (0..2).map(|k| self.means[k] - 8.0 * self.sds[k]).fold(f64::INFINITY, f64::min);
        let hi = (0..2).map(|k| self.means[k] + 8.0 * self.sds[k]).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Global maximiser of the density: a fine scan followed by golden-section refinement.
    pub fn mode(&self) -> f64 {
        let (lo, hi) = (
            self.means[0].min(self.means[1]) - 1e-9,
            self.means[0].max(self.means[1]) + 1e-9,
        );
        let steps = 4000;
        let step = (hi - lo) / steps as f64;
        let best = (0..=steps)
            .map(|k| lo + k as f64 * step)
            .max_by(|a, b| self.pdf(*a).total_cmp(&self.pdf(*b)))
            .expect("nonempty scan");
        let mut e = golden_section_max(|e| self.pdf(e), best - step, best + step, 1e-13);
        // polish on g'(e) = 0
        for _ in 0..8 {
            let d2 = self.pdf_derivative(e, 2);
            if !(d2 < 0.0) {
                break;
            }
            let next = e - self.pdf_derivative(e, 1) / d2;
            if !((next - e).abs() < step) {
                break;
            }
            e = next;
        }
        e
    }

    /// Solves `F(e) = prob` by bisection.
    pub fn quantile(&self, prob: f64) -> f64 {
        let (mut lo, mut hi) = self.support_hint();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < prob {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// The same law translated by `by`.
    pub fn shifted(&self, by: f64) -> Self {
        ErrorMixture {
            means: self.means.map(|m| m + by),
            ..*self
        }
    }

    /// The law of `s·ε`.
    pub fn scaled(&self, s: f64) -> Self {
        ErrorMixture {
            means: self.means.map(|m| m * s),
            sds: self.sds.map(|v| v * s),
            ..*self
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let k = if rng.random::<f64>() < self.weights[0] { 0 } else { 1 };
        let z: f64 = rng.sample(StandardNormal);
        self.means[k] + self.sds[k] * z
    }
}
