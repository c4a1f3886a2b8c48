use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ModalError, Result};
use crate::modal_lpr::Dataset;
use crate::study::mixture::ErrorMixture;
use crate::study::substream;
use crate::varying_coeff::VCDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// `Y = 2 sin(πX) + σ(X) ε`, `X ∼ U(0,1)`.
    Example1,
    /// `g₀ = exp(2u−1)`, `g₁ = 8u(1−u)`, `g₂ = 2 sin²(2πu)`.
    VcModel1,
    /// `g₀ = sin(2πu)`, `g₁ = (2u−1)² + 0.5`, `g₂ = exp(2u−1) − 1`.
    VcModel2,
    /// `Y = P(X) + σ(X) ε` for a user polynomial `P`, `X ∼ U(0,1)`.
    Custom,
}

/// Which conditional location a truth curve follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Mode,
    Median,
    Mean,
}

/// `σ(t) = intercept + slope·t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearScale {
    pub intercept: f64,
    pub slope: f64,
}

impl LinearScale {
    pub fn at(&self, t: f64) -> f64 {
        self.intercept + self.slope * t
    }
}

/// A data-generating process with its truth curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub error: ErrorMixture,
    pub scale: LinearScale,
    /// Correlation of the two standard normal covariates (varying-coefficient kinds).
    pub covariate_correlation: f64,
    /// Coefficients of `P` for `Custom`, lowest degree first.
    pub custom_mean: Vec<f64>,
    error_mode: f64,
    error_median: f64,
}

fn check_scale(scale: LinearScale) -> Result<()> {
    if !(scale.at(0.0) > 0.0 && scale.at(1.0) > 0.0) {
        return Err(ModalError::InvalidInput("σ(t) must be positive on [0, 1]".into()));
    }
    Ok(())
}

impl Scenario {
    fn build(kind: ScenarioKind, error: ErrorMixture, scale: LinearScale, custom_mean: Vec<f64>) -> Result<Self> {
        check_scale(scale)?;
        Ok(Scenario {
            kind,
            error,
            scale,
            covariate_correlation: FRAC_1_SQRT_2,
            custom_mean,
            error_mode: error.mode(),
            error_median: error.median(),
        })
    }

    pub fn example1() -> Self {
        Self::build(
            ScenarioKind::Example1,
            ErrorMixture::default(),
            LinearScale { intercept: 1.0, slope: 2.0 },
            Vec::new(),
        )
        .expect("valid preset")
    }

    pub fn vc_model(model: u8) -> Result<Self> {
        let kind = match model {
            1 => ScenarioKind::VcModel1,
            2 => ScenarioKind::VcModel2,
            _ => return Err(ModalError::InvalidInput(format!("unknown varying-coefficient model {model}"))),
        };
        Self::build(kind, ErrorMixture::default(), LinearScale { intercept: 1.0, slope: 2.0 }, Vec::new())
    }

    pub fn custom(mean_poly: Vec<f64>, error: ErrorMixture, scale: LinearScale) -> Result<Self> {
        if mean_poly.is_empty() || mean_poly.iter().any(|c| !c.is_finite()) {
            return Err(ModalError::InvalidInput("custom mean polynomial needs finite coefficients".into()));
        }
        Self::build(ScenarioKind::Custom, error, scale, mean_poly)
    }

    /// Same regression function with error `s·(ε − mode(ε))`, independent of the design.
    pub fn homoscedastic(&self, s: f64) -> Result<Self> {
        let mut out = Self::build(
            self.kind,
            self.error.shifted(-self.error_mode).scaled(s),
            LinearScale { intercept: 1.0, slope: 0.0 },
            self.custom_mean.clone(),
        )?;
        out.covariate_correlation = self.covariate_correlation;
        Ok(out)
    }

    pub fn is_vc(&self) -> bool {
        matches!(self.kind, ScenarioKind::VcModel1 | ScenarioKind::VcModel2)
    }

    pub fn error_mode(&self) -> f64 {
        self.error_mode
    }

    pub fn error_location(&self, target: Target) -> f64 {
        match target {
            Target::Mode => self.error_mode,
            Target::Median => self.error_median,
            Target::Mean => self.error.mean(),
        }
    }

    /// `k`-th derivative (k ≤ 2 for the fixed kinds) of the regression function without the error part.
    pub fn location_derivative(&self, x: f64, k: usize) -> f64 {
        match self.kind {
            ScenarioKind::Example1 => 2.0 * PI.powi(k as i32) * (PI * x + k as f64 * PI / 2.0).sin(),
            ScenarioKind::Custom => {
                let mut total = 0.0;
                for (d, c) in self.custom_mean.iter().enumerate().skip(k) {
                    let falling: f64 = ((d - k + 1)..=d).map(|v| v as f64).product();
                    total += c * falling * x.powi((d - k) as i32);
                }
                total
            }
            _ => f64::NAN,
        }
    }

    /// `k`-th derivative (k ≤ 2) of each coefficient function, before adding the error location.
    pub fn coefficient_derivatives(&self, u: f64, k: usize) -> [f64; 3] {
        let e = (2.0 * u - 1.0).exp();
        match (self.kind, k) {
            (ScenarioKind::VcModel1, 0) => [e, 8.0 * u * (1.0 - u), 2.0 * (2.0 * PI * u).sin().powi(2)],
            (ScenarioKind::VcModel1, 1) => [2.0 * e, 8.0 - 16.0 * u, 4.0 * PI * (4.0 * PI * u).sin()],
            (ScenarioKind::VcModel1, 2) => [4.0 * e, -16.0, 16.0 * PI * PI * (4.0 * PI * u).cos()],
            (ScenarioKind::VcModel2, 0) => [(2.0 * PI * u).sin(), (2.0 * u - 1.0).powi(2) + 0.5, e - 1.0],
            (ScenarioKind::VcModel2, 1) => [2.0 * PI * (2.0 * PI * u).cos(), 4.0 * (2.0 * u - 1.0), 2.0 * e],
            (ScenarioKind::VcModel2, 2) => [-4.0 * PI * PI * (2.0 * PI * u).sin(), 8.0, 4.0 * e],
            _ => [f64::NAN; 3],
        }
    }

    /// Conditional mode, median or mean of `Y` given `X = x` (scalar kinds).
    pub fn truth_scalar(&self, x: f64, target: Target) -> f64 {
        self.location_derivative(x, 0) + self.scale.at(x) * self.error_location(target)
    }

    /// Coefficient functions of the chosen conditional location, `σ(u)·loc` folded into the intercept.
    pub fn truth_coefficients(&self, u: f64, target: Target) -> [f64; 3] {
        let mut g = self.coefficient_derivatives(u, 0);
        g[0] += self.scale.at(u) * self.error_location(target);
        g
    }

    pub fn truth_vc(&self, u: f64, x: [f64; 2], target: Target) -> f64 {
        let g = self.truth_coefficients(u, target);
        g[0] + g[1] * x[0] + g[2] * x[1]
    }

    /// Location and scale of `Y` at a design point: `Y = loc + σ ε`.
    pub fn conditional_law(&self, point: &DesignPoint) -> (f64, f64) {
        match *point {
            DesignPoint::Scalar(x) => (self.location_derivative(x, 0), self.scale.at(x)),
            DesignPoint::Vc { u, x } => {
                let g = self.coefficient_derivatives(u, 0);
                (g[0] + g[1] * x[0] + g[2] * x[1], self.scale.at(u))
            }
        }
    }

    pub fn generate_scalar<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        if self.is_vc() {
            return Err(ModalError::InvalidInput("scenario generates varying-coefficient data".into()));
        }
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = rng.random();
            let e = self.error.sample(rng);
            x.push(xi);
            y.push(self.location_derivative(xi, 0) + self.scale.at(xi) * e);
        }
        Dataset::new(x, y)
    }

    pub fn generate_vc<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<VCDataset> {
        if !self.is_vc() {
            return Err(ModalError::InvalidInput("scenario generates scalar data".into()));
        }
        let rho = self.covariate_correlation;
        let tail = (1.0 - rho * rho).sqrt();
        let mut u = Vec::with_capacity(n);
        let mut cov = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let ui: f64 = rng.random();
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let x = [z1, rho * z1 + tail * z2];
            let e = self.error.sample(rng);
            let (loc, s) = self.conditional_law(&DesignPoint::Vc { u: ui, x });
            u.push(ui);
            cov.push(x.to_vec());
            y.push(loc + s * e);
        }
        VCDataset::with_intercept(u, cov, y)
    }
}

/// Where a prediction is made.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DesignPoint {
    Scalar(f64),
    Vc { u: f64, x: [f64; 2] },
}

/// An Example 1 sample of size `n` with its scenario.
pub fn generate_example1(n: usize, seed: u64) -> Result<(Dataset, Scenario)> {
    let scenario = Scenario::example1();
    let data = scenario.generate_scalar(n, &mut substream(seed, 0))?;
    Ok((data, scenario))
}

/// A Model 1 or Model 2 sample of size `n` with its scenario.
pub fn generate_vc_model(model: u8, n: usize, seed: u64) -> Result<(VCDataset, Scenario)> {
    let scenario = Scenario::vc_model(model)?;
    let data = scenario.generate_vc(n, &mut substream(seed, 0))?;
    Ok((data, scenario))
}
