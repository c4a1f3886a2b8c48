//! Varying-coefficient modal regression.
//!
//! The conditional mode is `Σⱼ gⱼ(u) xⱼ` with smooth coefficient functions
//! `gⱼ`. At an index point `u₀` each `gⱼ` is approximated locally by
//! `bⱼ + cⱼ (u − u₀)` and the coefficients maximise
//!
//! ```text
//! Σᵢ K_{h₁}(uᵢ − u₀) φ_{h₂}(yᵢ − Σⱼ {bⱼ + cⱼ (uᵢ − u₀)} xᵢⱼ)
//! ```
//!
//! with the same modal EM used for the scalar model. The free parameter is
//! stored as `θ = (b, h₁c)`, so that with one covariate identically equal to
//! one the local design coincides with the scalar local linear design.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{self, LocalDesign};
use crate::error::{ModalError, Result};
use crate::kernels::{response_kernel, KernelSpec};
use crate::modal_lpr::{Bandwidths, EMConfig};

/// Observations `(uᵢ, xᵢ, yᵢ)`; the first covariate column is identically one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VCDataset {
    u: Vec<f64>,
    /// Row-major `n × p` covariates.
    x: Vec<f64>,
    y: Vec<f64>,
    p: usize,
}

impl VCDataset {
    /// Builds a dataset from covariate rows that already include the leading one.
    pub fn new(u: Vec<f64>, rows: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let n = u.len();
        if rows.len() != n || y.len() != n {
            return Err(ModalError::InvalidInput(format!(
                "inconsistent lengths: u {n}, x {}, y {}",
                rows.len(),
                y.len()
            )));
        }
        if n < 2 {
            return Err(ModalError::InvalidInput("need at least two observations".into()));
        }
        let p = rows[0].len();
        if p == 0 {
            return Err(ModalError::InvalidInput("need at least one covariate".into()));
        }
        let mut x = Vec::with_capacity(n * p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(ModalError::InvalidInput(format!("row {i} has {} covariates, expected {p}", r.len())));
            }
            if r[0] != 1.0 {
                return Err(ModalError::InvalidInput(format!("row {i}: first covariate must equal 1")));
            }
            x.extend_from_slice(r);
        }
        if let Some(i) = (0..n).find(|&i| {
            !u[i].is_finite() || !y[i].is_finite() || x[i * p..(i + 1) * p].iter().any(|v| !v.is_finite())
        }) {
            return Err(ModalError::InvalidInput(format!("non-finite value in observation {i}")));
        }
        Ok(VCDataset { u, x, y, p })
    }

    /// Builds a dataset from covariates without the intercept column, which is synthesised.
    pub fn with_intercept(u: Vec<f64>, covariates: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let rows = covariates
            .into_iter()
            .map(|c| std::iter::once(1.0).chain(c).collect())
            .collect();
        Self::new(u, rows, y)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Number of coefficient functions, intercept included.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn subset(&self, idx: &[usize]) -> Result<VCDataset> {
        VCDataset::new(
            idx.iter().map(|&i| self.u[i]).collect(),
            idx.iter().map(|&i| self.row(i).to_vec()).collect(),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }
}

/// Coefficient values `b = ĝ(u₀)` and derivatives `c = ĝ'(u₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VCCoefficients {
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub center: f64,
}

impl VCCoefficients {
    /// Local linear prediction `Σⱼ {bⱼ + cⱼ(u − u₀)} xⱼ`.
    pub fn predict_local(&self, u: f64, x: &[f64]) -> f64 {
        let d = u - self.center;
        self.b.iter().zip(&self.c).zip(x).map(|((b, c), x)| (b + c * d) * x).sum()
    }

    fn to_theta(&self, h1: f64) -> Vec<f64> {
        self.b.iter().copied().chain(self.c.iter().map(|c| c * h1)).collect()
    }

    fn from_theta(theta: &[f64], scale: f64, center: f64) -> Self {
        let p = theta.len() / 2;
        VCCoefficients {
            b: theta[..p].to_vec(),
            c: theta[p..].iter().map(|t| t / scale).collect(),
            center,
        }
    }
}

/// Multi-start modal EM result at one index point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VCPointFit {
    pub coefficients: VCCoefficients,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_starts_used: usize,
    pub start_objectives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VCCurveEstimate {
    pub grid: Vec<f64>,
    pub fits: Vec<Result<VCPointFit>>,
}

/// Local design with rows `(xᵢ, xᵢ (uᵢ − u₀)/scale)` over the kernel window.
pub(crate) fn vc_local_design(
    data: &VCDataset,
    u0: f64,
    h1: f64,
    h2: f64,
    kernel: KernelSpec,
    scale: f64,
    weights: Option<&[f64]>,
) -> LocalDesign {
    let p = data.p;
    let mut design = LocalDesign {
        q: 2 * p,
        rows: Vec::new(),
        kw: Vec::new(),
        y: Vec::new(),
        index: Vec::new(),
        n_total: data.len(),
        h2,
    };
    for i in 0..data.len() {
        let k = match weights {
            Some(w) => w[i],
            None => kernel.scaled(data.u[i] - u0, h1),
        };
        if k > 0.0 {
            let t = (data.u[i] - u0) / scale;
            let r = data.row(i);
            design.rows.extend_from_slice(r);
            design.rows.extend(r.iter().map(|x| x * t));
            design.kw.push(k);
            design.y.push(data.y[i]);
            design.index.push(i);
        }
    }
    design
}

fn check_theta(data: &VCDataset, theta: &VCCoefficients) -> Result<()> {
    if theta.b.len() != data.p || theta.c.len() != data.p {
        return Err(ModalError::InvalidInput(format!(
            "coefficients must have length {} (got b {}, c {})",
            data.p,
            theta.b.len(),
            theta.c.len()
        )));
    }
    if theta.b.iter().chain(&theta.c).any(|v| !v.is_finite()) || !theta.center.is_finite() {
        return Err(ModalError::InvalidInput("coefficients must be finite".into()));
    }
    Ok(())
}

/// The varying-coefficient modal objective (an unnormalised sum).
pub fn vc_objective(data: &VCDataset, theta: &VCCoefficients, bw: Bandwidths, kernel: KernelSpec) -> Result<f64> {
    check_theta(data, theta)?;
    Ok((0..data.len())
        .map(|i| {
            let k = kernel.scaled(data.u[i] - theta.center, bw.h1);
            if k == 0.0 {
                0.0
            } else {
                k * response_kernel(data.y[i] - theta.predict_local(data.u[i], data.row(i)), bw.h2)
            }
        })
        .sum())
}

/// E-step responsibilities for every observation (zero outside the window).
pub fn vc_e_step(data: &VCDataset, theta: &VCCoefficients, bw: Bandwidths, kernel: KernelSpec) -> Result<Vec<f64>> {
    check_theta(data, theta)?;
    let design = vc_local_design(data, theta.center, bw.h1, bw.h2, kernel, bw.h1, None);
    let w = design.responsibilities(&theta.to_theta(bw.h1), theta.center)?;
    let mut full = vec![0.0; data.len()];
    for (&i, wi) in design.index.iter().zip(w) {
        full[i] = wi;
    }
    Ok(full)
}

/// M-step: weighted least squares on the columns `{xᵢⱼ, xᵢⱼ (uᵢ − u₀)}`.
pub fn vc_m_step(data: &VCDataset, weights: &[f64], u0: f64) -> Result<VCCoefficients> {
    if weights.len() != data.len() {
        return Err(ModalError::InvalidInput("one weight per observation is required".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(ModalError::InvalidInput("weights must be finite and nonnegative".into()));
    }
    let scale = data
        .u
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(u, _)| (u - u0).abs())
        .fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let design = vc_local_design(data, u0, 1.0, 1.0, KernelSpec::Gaussian, scale, Some(weights));
    if design.len() == 0 {
        return Err(ModalError::DegenerateWindow { center: u0 });
    }
    let theta = design.weighted_ls(&design.kw)?;
    Ok(VCCoefficients::from_theta(&theta, scale, u0))
}

fn checked_design(data: &VCDataset, u0: f64, bw: Bandwidths, kernel: KernelSpec) -> Result<LocalDesign> {
    let design = vc_local_design(data, u0, bw.h1, bw.h2, kernel, bw.h1, None);
    if design.len() == 0 {
        return Err(ModalError::DegenerateWindow { center: u0 });
    }
    if design.len() < design.q {
        return Err(ModalError::SingularDesign { condition: f64::INFINITY });
    }
    Ok(design)
}

/// Multi-start modal EM at `u0`. Only `cfg.order` is ignored: the fit is local linear.
pub fn vc_fit_point(data: &VCDataset, u0: f64, bw: Bandwidths, cfg: &EMConfig) -> Result<VCPointFit> {
    vc_fit_point_stream(data, u0, bw, cfg, 0)
}

fn vc_fit_point_stream(data: &VCDataset, u0: f64, bw: Bandwidths, cfg: &EMConfig, stream: u64) -> Result<VCPointFit> {
    cfg.validate()?;
    let design = checked_design(data, u0, bw, cfg.kernel)?;
    let starts = em::starting_values(&design, cfg.n_starts, cfg.seed, stream, u0)?;
    let run = em::multi_start(&design, &starts, cfg.settings(), u0)?;
    Ok(VCPointFit {
        coefficients: VCCoefficients::from_theta(&run.best.theta, bw.h1, u0),
        objective: run.best.objective * data.len() as f64,
        iterations: run.best.iterations,
        converged: run.best.converged,
        n_starts_used: starts.len(),
        start_objectives: run.start_objectives.iter().map(|o| o * data.len() as f64).collect(),
    })
}

/// Objective values along a single EM run from `start` (unnormalised, like [`vc_objective`]).
pub fn vc_ascent_trace(data: &VCDataset, bw: Bandwidths, cfg: &EMConfig, start: &VCCoefficients) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_theta(data, start)?;
    let design = checked_design(data, start.center, bw, cfg.kernel)?;
    let mut trace = Vec::new();
    em::run_em(&design, &start.to_theta(bw.h1), cfg.settings(), start.center, Some(&mut trace))?;
    let n = data.len() as f64;
    Ok(trace.into_iter().map(|o| o * n).collect())
}

/// Independent fits over an index grid; failures are recorded per point.
pub fn vc_fit_curves(data: &VCDataset, grid: &[f64], bw: Bandwidths, cfg: &EMConfig) -> Result<VCCurveEstimate> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(ModalError::InvalidInput("evaluation grid is empty".into()));
    }
    let fits = grid
        .par_iter()
        .enumerate()
        .map(|(i, &u0)| vc_fit_point_stream(data, u0, bw, cfg, i as u64))
        .collect();
    Ok(VCCurveEstimate {
        grid: grid.to_vec(),
        fits,
    })
}

/// `Σⱼ ĝⱼ(u) xⱼ`, interpolating `ĝ` linearly between grid points.
pub fn vc_predict(fit: &VCCurveEstimate, u: f64, x: &[f64]) -> Result<f64> {
    let g = vc_coefficients_at(fit, u)?;
    if g.len() != x.len() {
        return Err(ModalError::InvalidInput(format!("expected {} covariates, got {}", g.len(), x.len())));
    }
    Ok(g.iter().zip(x).map(|(g, x)| g * x).sum())
}

/// `ĝ(u)` by linear interpolation between the fitted grid points.
pub fn vc_coefficients_at(fit: &VCCurveEstimate, u: f64) -> Result<Vec<f64>> {
    let grid = &fit.grid;
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    if !(u >= lo && u <= hi) {
        return Err(ModalError::OutOfRange { value: u, lo, hi });
    }
    let at = |i: usize| -> Result<&Vec<f64>> {
        fit.fits[i].as_ref().map(|f| &f.coefficients.b).map_err(Clone::clone)
    };
    if let Some(i) = grid.iter().position(|&g| g == u) {
        return Ok(at(i)?.clone());
    }
    let j = grid.iter().position(|&g| g > u).expect("u is inside the grid range");
    let (a, b) = (at(j - 1)?, at(j)?);
    let w = (u - grid[j - 1]) / (grid[j] - grid[j - 1]);
    Ok(a.iter().zip(b).map(|(a, b)| a + w * (b - a)).collect())
}
