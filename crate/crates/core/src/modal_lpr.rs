//! Local polynomial modal regression.
//!
//! At a point `x₀` the estimator maximises
//!
//! ```text
//! ℓ(β) = (1/n) Σᵢ K_{h₁}(xᵢ − x₀) φ_{h₂}(yᵢ − Σⱼ βⱼ (xᵢ − x₀)ʲ)
//! ```
//!
//! over `β = (β₀, …, β_p)` with the modal EM algorithm, started from several
//! points. `v! β̂_v` estimates the `v`-th derivative of the conditional mode.
//!
//! Internally the design columns are `((xᵢ − x₀)/h₁)ʲ`, which keeps the
//! normal equations equilibrated; coefficients are converted back on output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{self, EmSettings, LocalDesign};
use crate::error::{ModalError, Result};
use crate::kernels::{response_kernel, KernelSpec};

/// Paired observations `(xᵢ, yᵢ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(ModalError::InvalidInput(format!(
                "x has {} entries but y has {}",
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 {
            return Err(ModalError::InvalidInput("need at least two observations".into()));
        }
        if let Some(i) = x.iter().chain(&y).position(|v| !v.is_finite()) {
            return Err(ModalError::InvalidInput(format!(
                "non-finite value in observation {}",
                i % x.len()
            )));
        }
        Ok(Dataset { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(
            idx.iter().map(|&i| self.x[i]).collect(),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }

    pub fn x_range(&self) -> (f64, f64) {
        let lo = self.x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Predictor-space and response-space bandwidths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub h1: f64,
    pub h2: f64,
}

impl Bandwidths {
    pub fn new(h1: f64, h2: f64) -> Result<Self> {
        for (name, h) in [("h1", h1), ("h2", h2)] {
            if !(h > 0.0 && h.is_finite()) {
                return Err(ModalError::InvalidInput(format!("{name} must be positive and finite, got {h}")));
            }
        }
        Ok(Bandwidths { h1, h2 })
    }
}

/// Local polynomial coefficients `β₀..β_p` at `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalCoefficients {
    pub beta: Vec<f64>,
    pub center: f64,
}

impl ModalCoefficients {
    pub fn new(beta: Vec<f64>, center: f64) -> Self {
        ModalCoefficients { beta, center }
    }

    pub fn order(&self) -> usize {
        self.beta.len() - 1
    }

    /// `v! β_v`, the estimate of the `v`-th derivative of the mode curve.
    pub fn derivative(&self, v: usize) -> f64 {
        factorial(v) * self.beta[v]
    }

    /// Value of the local polynomial at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let d = x - self.center;
        self.beta.iter().rev().fold(0.0, |acc, b| acc * d + b)
    }
}

pub(crate) fn factorial(v: usize) -> f64 {
    (1..=v).map(|k| k as f64).product()
}

/// Settings for the modal EM iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EMConfig {
    pub max_iter: usize,
    /// Relative objective change below which an iteration may stop.
    pub tol_obj: f64,
    /// Sup-norm coefficient change below which an iteration may stop.
    pub tol_param: f64,
    pub n_starts: usize,
    /// Seeds the extra starts used when `n_starts` exceeds five.
    pub seed: u64,
    /// Local polynomial order `p`.
    pub order: usize,
    pub kernel: KernelSpec,
}

impl Default for EMConfig {
    fn default() -> Self {
        EMConfig {
            max_iter: 500,
            tol_obj: 1e-8,
            tol_param: 1e-6,
            n_starts: 5,
            seed: 0,
            order: 1,
            kernel: KernelSpec::Epanechnikov,
        }
    }
}

impl EMConfig {
    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn with_kernel(mut self, kernel: KernelSpec) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(ModalError::InvalidInput("max_iter must be at least 1".into()));
        }
        if !(self.tol_obj > 0.0 && self.tol_param > 0.0) {
            return Err(ModalError::InvalidInput("tolerances must be positive".into()));
        }
        if self.n_starts == 0 {
            return Err(ModalError::InvalidInput("n_starts must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn settings(&self) -> EmSettings {
        EmSettings {
            max_iter: self.max_iter,
            tol_obj: self.tol_obj,
            tol_param: self.tol_param,
        }
    }
}

/// Result of the multi-start modal EM at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFit {
    pub coefficients: ModalCoefficients,
    /// `ℓ(β̂)` at the winning solution.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_starts_used: usize,
    /// Final objective reached from each start.
    pub start_objectives: Vec<f64>,
}

/// Point fits over an evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveEstimate {
    pub grid: Vec<f64>,
    pub fits: Vec<Result<PointFit>>,
    pub derivative_order: usize,
}

impl CurveEstimate {
    /// `v! β̂_v` at each grid point, `None` where the fit failed.
    pub fn values(&self) -> Vec<Option<f64>> {
        self.fits
            .iter()
            .map(|f| f.as_ref().ok().map(|f| f.coefficients.derivative(self.derivative_order)))
            .collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = (f64, &ModalError)> {
        self.grid
            .iter()
            .zip(&self.fits)
            .filter_map(|(g, f)| f.as_ref().err().map(|e| (*g, e)))
    }
}

/// Local design at `x0` with columns `((x − x₀)/scale)ʲ`, keeping only rows with
/// positive kernel weight.
pub(crate) fn local_design(
    data: &Dataset,
    x0: f64,
    bw: Bandwidths,
    kernel: KernelSpec,
    p: usize,
    scale: f64,
) -> LocalDesign {
    let q = p + 1;
    let mut design = LocalDesign {
        q,
        rows: Vec::new(),
        kw: Vec::new(),
        y: Vec::new(),
        index: Vec::new(),
        n_total: data.len(),
        h2: bw.h2,
    };
    for (i, (&x, &y)) in data.x.iter().zip(&data.y).enumerate() {
        let k = kernel.scaled(x - x0, bw.h1);
        if k > 0.0 {
            let t = (x - x0) / scale;
            let mut z = 1.0;
            for _ in 0..q {
                design.rows.push(z);
                z *= t;
            }
            design.kw.push(k);
            design.y.push(y);
            design.index.push(i);
        }
    }
    design
}

fn to_scaled(beta: &[f64], scale: f64) -> Vec<f64> {
    let mut s = 1.0;
    beta.iter()
        .map(|b| {
            let v = b * s;
            s *= scale;
            v
        })
        .collect()
}

fn from_scaled(theta: &[f64], scale: f64) -> Vec<f64> {
    let mut s = 1.0;
    theta
        .iter()
        .map(|t| {
            let v = t / s;
            s *= scale;
            v
        })
        .collect()
}

fn check_finite(theta: &ModalCoefficients) -> Result<()> {
    if theta.beta.is_empty() {
        return Err(ModalError::InvalidInput("coefficient vector is empty".into()));
    }
    if theta.beta.iter().any(|b| !b.is_finite()) || !theta.center.is_finite() {
        return Err(ModalError::InvalidInput("coefficients must be finite".into()));
    }
    Ok(())
}

/// The local polynomial modal objective `ℓ(β)` at `theta.center`.
pub fn objective(data: &Dataset, theta: &ModalCoefficients, bw: Bandwidths, kernel: KernelSpec) -> Result<f64> {
    check_finite(theta)?;
    let sum: f64 = data
        .x
        .iter()
        .zip(&data.y)
        .map(|(&x, &y)| {
            let k = kernel.scaled(x - theta.center, bw.h1);
            if k == 0.0 {
                0.0
            } else {
                k * response_kernel(y - theta.eval(x), bw.h2)
            }
        })
        .sum();
    Ok(sum / data.len() as f64)
}

/// E-step responsibilities `π(j | θ)` for every observation (zero outside the window).
pub fn e_step(data: &Dataset, theta: &ModalCoefficients, bw: Bandwidths, kernel: KernelSpec) -> Result<Vec<f64>> {
    check_finite(theta)?;
    let design = local_design(data, theta.center, bw, kernel, theta.order(), bw.h1);
    let w = design.responsibilities(&to_scaled(&theta.beta, bw.h1), theta.center)?;
    let mut full = vec![0.0; data.len()];
    for (&i, wi) in design.index.iter().zip(w) {
        full[i] = wi;
    }
    Ok(full)
}

/// M-step: weighted least squares on the columns `(xᵢ − x₀)ʲ`, `j = 0..=p`.
pub fn m_step(data: &Dataset, weights: &[f64], x0: f64, p: usize) -> Result<ModalCoefficients> {
    if weights.len() != data.len() {
        return Err(ModalError::InvalidInput("one weight per observation is required".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(ModalError::InvalidInput("weights must be finite and nonnegative".into()));
    }
    let scale = data
        .x
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(x, _)| (x - x0).abs())
        .fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let q = p + 1;
    let mut rows = Vec::with_capacity(data.len() * q);
    for &x in &data.x {
        let t = (x - x0) / scale;
        let mut z = 1.0;
        for _ in 0..q {
            rows.push(z);
            z *= t;
        }
    }
    let theta = crate::linalg::weighted_least_squares(&rows, q, weights, &data.y)?;
    Ok(ModalCoefficients::new(from_scaled(&theta, scale), x0))
}

fn check_window(design: &LocalDesign, x0: f64, p: usize) -> Result<()> {
    if design.len() == 0 {
        return Err(ModalError::DegenerateWindow { center: x0 });
    }
    if design.len() < p + 1 {
        return Err(ModalError::SingularDesign { condition: f64::INFINITY });
    }
    Ok(())
}

/// Multi-start modal EM at `x0`.
pub fn fit_point(data: &Dataset, x0: f64, bw: Bandwidths, cfg: &EMConfig) -> Result<PointFit> {
    fit_point_stream(data, x0, bw, cfg, 0)
}

pub(crate) fn fit_point_stream(data: &Dataset, x0: f64, bw: Bandwidths, cfg: &EMConfig, stream: u64) -> Result<PointFit> {
    cfg.validate()?;
    let design = local_design(data, x0, bw, cfg.kernel, cfg.order, bw.h1);
    check_window(&design, x0, cfg.order)?;
    let starts = em::starting_values(&design, cfg.n_starts, cfg.seed, stream, x0)?;
    let run = em::multi_start(&design, &starts, cfg.settings(), x0)?;
    Ok(PointFit {
        coefficients: ModalCoefficients::new(from_scaled(&run.best.theta, bw.h1), x0),
        objective: run.best.objective,
        iterations: run.best.iterations,
        converged: run.best.converged,
        n_starts_used: starts.len(),
        start_objectives: run.start_objectives,
    })
}

/// Single EM run from a caller-supplied start.
pub fn fit_point_from(data: &Dataset, bw: Bandwidths, cfg: &EMConfig, start: &ModalCoefficients) -> Result<PointFit> {
    cfg.validate()?;
    check_finite(start)?;
    let x0 = start.center;
    let design = local_design(data, x0, bw, cfg.kernel, start.order(), bw.h1);
    check_window(&design, x0, start.order())?;
    let run = em::run_em(&design, &to_scaled(&start.beta, bw.h1), cfg.settings(), x0, None)?;
    Ok(PointFit {
        coefficients: ModalCoefficients::new(from_scaled(&run.theta, bw.h1), x0),
        objective: run.objective,
        iterations: run.iterations,
        converged: run.converged,
        n_starts_used: 1,
        start_objectives: vec![run.objective],
    })
}

/// Objective values along an EM run from `start`: the starting value followed by
/// the value after each iteration.
pub fn ascent_trace(data: &Dataset, bw: Bandwidths, cfg: &EMConfig, start: &ModalCoefficients) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_finite(start)?;
    let x0 = start.center;
    let design = local_design(data, x0, bw, cfg.kernel, start.order(), bw.h1);
    check_window(&design, x0, start.order())?;
    let mut trace = Vec::new();
    em::run_em(&design, &to_scaled(&start.beta, bw.h1), cfg.settings(), x0, Some(&mut trace))?;
    Ok(trace)
}

/// Independent point fits over `grid`; a failing point is recorded, not fatal.
pub fn fit_curve(data: &Dataset, grid: &[f64], bw: Bandwidths, cfg: &EMConfig, v: usize) -> Result<CurveEstimate> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(ModalError::InvalidInput("evaluation grid is empty".into()));
    }
    if v > cfg.order {
        return Err(ModalError::InvalidInput(format!(
            "derivative order {v} exceeds polynomial order {}",
            cfg.order
        )));
    }
    let fits = grid
        .par_iter()
        .enumerate()
        .map(|(i, &x0)| fit_point_stream(data, x0, bw, cfg, i as u64))
        .collect();
    Ok(CurveEstimate {
        grid: grid.to_vec(),
        fits,
        derivative_order: v,
    })
}

/// Local constant conditional mode, the `p = 0` special case.
pub fn local_constant_mode(data: &Dataset, x0: f64, bw: Bandwidths, cfg: &EMConfig) -> Result<f64> {
    let cfg = cfg.with_order(0);
    Ok(fit_point(data, x0, bw, &cfg)?.coefficients.beta[0])
}
