//! Comparator estimators: local linear mean (LL), local Huber M-estimate (LM)
//! and local median (LMD), for the scalar and varying-coefficient models,
//! with cross-validated bandwidths.
//!
//! All three are local linear fits with Epanechnikov weights that differ
//! only in the loss. LM uses the Huber loss with tuning constant `c`
//! (1.345 by default) and a MAD scale re-estimated at every iteration. LMD
//! minimises the smoothed absolute loss `√(r² + δ²)`, `δ = 1e-6`, by
//! iteratively reweighted least squares.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::LocalDesign;
use crate::error::{ModalError, Result};
use crate::kernels::KernelSpec;
use crate::modal_lpr::{local_design, Bandwidths, Dataset};
use crate::stats;
use crate::varying_coeff::{vc_local_design, VCDataset};

pub const DEFAULT_HUBER_C: f64 = 1.345;
/// Smoothing constant of the absolute loss used by the local median.
pub const MEDIAN_SMOOTHING: f64 = 1e-6;
pub const IRLS_MAX_ITER: usize = 200;
const IRLS_TOL: f64 = 1e-10;
/// Number of candidate bandwidths in the cross-validation grid.
pub const CV_GRID_SIZE: usize = 20;
pub const CV_DEFAULT_FOLDS: usize = 5;

/// Estimation methods understood by the CLI and the study harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Local linear mean regression.
    LL,
    /// Local linear Huber M-estimate.
    LM,
    /// Local linear median regression.
    LMD,
    /// Local linear modal regression.
    LLMR,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::LL, Method::LM, Method::LMD, Method::LLMR];

    pub fn name(self) -> &'static str {
        match self {
            Method::LL => "ll",
            Method::LM => "lm",
            Method::LMD => "lmd",
            Method::LLMR => "llmr",
        }
    }

    pub fn is_baseline(self) -> bool {
        self != Method::LLMR
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ModalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ll" => Ok(Method::LL),
            "lm" => Ok(Method::LM),
            "lmd" => Ok(Method::LMD),
            "llmr" => Ok(Method::LLMR),
            other => Err(ModalError::InvalidInput(format!(
                "unknown method {other:?}; expected one of ll, lm, lmd, llmr"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub method: Method,
    pub h: f64,
    pub huber_c: f64,
}

impl BaselineSpec {
    pub fn new(method: Method, h: f64) -> Result<Self> {
        let spec = BaselineSpec {
            method,
            h,
            huber_c: DEFAULT_HUBER_C,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_huber_c(mut self, c: f64) -> Result<Self> {
        self.huber_c = c;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !self.method.is_baseline() {
            return Err(ModalError::InvalidInput("llmr is not a baseline method".into()));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(ModalError::InvalidInput(format!("bandwidth must be positive, got {}", self.h)));
        }
        if self.method == Method::LM && !(self.huber_c > 0.0) {
            return Err(ModalError::InvalidInput("huber_c must be positive".into()));
        }
        Ok(())
    }
}

/// Coefficients of an iteratively reweighted fit with its convergence status.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn sup_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn irls(design: &LocalDesign, start: Vec<f64>, reweight: impl Fn(&[f64], &mut [f64])) -> Result<BaselineFit> {
    let mut theta = start;
    let mut residuals = vec![0.0; design.len()];
    let mut weights = vec![0.0; design.len()];
    let scale = 1.0 + theta.iter().map(|t| t.abs()).fold(0.0, f64::max);
    for it in 1..=IRLS_MAX_ITER {
        for (i, r) in residuals.iter_mut().enumerate() {
            *r = design.residual(&theta, i);
        }
        reweight(&residuals, &mut weights);
        let next = design.weighted_ls(&weights)?;
        let change = sup_change(&theta, &next);
        theta = next;
        if change < IRLS_TOL * scale {
            return Ok(BaselineFit {
                coefficients: theta,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(BaselineFit {
        coefficients: theta,
        iterations: IRLS_MAX_ITER,
        converged: false,
    })
}

/// Fits the chosen loss on an already assembled local design.
pub(crate) fn fit_design(design: &LocalDesign, spec: &BaselineSpec, center: f64) -> Result<BaselineFit> {
    if design.len() == 0 {
        return Err(ModalError::DegenerateWindow { center });
    }
    let ls = design.mean_fit(center)?;
    match spec.method {
        Method::LL | Method::LLMR => Ok(BaselineFit {
            coefficients: ls,
            iterations: 1,
            converged: true,
        }),
        Method::LM => {
            let c = spec.huber_c;
            irls(design, ls, |r, w| {
                let s = stats::mad(r);
                for ((wi, ri), ki) in w.iter_mut().zip(r).zip(&design.kw) {
                    let cut = c * s;
                    *wi = if s > 0.0 && ri.abs() > cut { ki * cut / ri.abs() } else { *ki };
                }
            })
        }
        Method::LMD => irls(design, ls, |r, w| {
            for ((wi, ri), ki) in w.iter_mut().zip(r).zip(&design.kw) {
                *wi = ki / (ri * ri + MEDIAN_SMOOTHING * MEDIAN_SMOOTHING).sqrt();
            }
        }),
    }
}

fn scalar_design(data: &Dataset, x0: f64, h: f64) -> LocalDesign {
    // h₂ is unused by the baselines
    let bw = Bandwidths { h1: h, h2: 1.0 };
    local_design(data, x0, bw, KernelSpec::Epanechnikov, 1, h)
}

/// Local linear fit at `x0`; returns `(intercept, slope)` in original units.
pub fn baseline_fit(data: &Dataset, x0: f64, spec: &BaselineSpec) -> Result<BaselineFit> {
    spec.validate()?;
    let design = scalar_design(data, x0, spec.h);
    let mut fit = fit_design(&design, spec, x0)?;
    fit.coefficients[1] /= spec.h;
    Ok(fit)
}

pub fn local_linear_mean(data: &Dataset, x0: f64, h: f64) -> Result<f64> {
    Ok(baseline_fit(data, x0, &BaselineSpec::new(Method::LL, h)?)?.coefficients[0])
}

pub fn local_median(data: &Dataset, x0: f64, h: f64) -> Result<f64> {
    Ok(baseline_fit(data, x0, &BaselineSpec::new(Method::LMD, h)?)?.coefficients[0])
}

pub fn local_m_huber(data: &Dataset, x0: f64, h: f64, c: f64) -> Result<f64> {
    let spec = BaselineSpec::new(Method::LM, h)?.with_huber_c(c)?;
    Ok(baseline_fit(data, x0, &spec)?.coefficients[0])
}

/// Baseline estimate of the regression function at every grid point.
pub fn baseline_curve(data: &Dataset, grid: &[f64], spec: &BaselineSpec) -> Vec<Result<f64>> {
    grid.par_iter()
        .map(|&x0| baseline_fit(data, x0, spec).map(|f| f.coefficients[0]))
        .collect()
}

/// Local-linear-in-`u` baseline fit of the varying-coefficient model; returns `ĝ(u₀)`.
pub fn vc_baseline_fit(data: &VCDataset, u0: f64, spec: &BaselineSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let design = vc_local_design(data, u0, spec.h, 1.0, KernelSpec::Epanechnikov, spec.h, None);
    let fit = fit_design(&design, spec, u0)?;
    Ok(fit.coefficients[..data.p()].to_vec())
}

/// Candidate bandwidths: log-spaced from 0.05 to 1.0 times `range`.
pub fn cv_grid(range: f64) -> Vec<f64> {
    let (lo, hi) = (0.05f64.ln(), 0.0f64);
    (0..CV_GRID_SIZE)
        .map(|k| range * (lo + (hi - lo) * k as f64 / (CV_GRID_SIZE - 1) as f64).exp())
        .collect()
}

/// Fold label of an observation, a hash of its values so that identical rows share a fold.
pub(crate) fn fold_of(values: &[f64], folds: usize) -> usize {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for v in values {
        h ^= v.to_bits();
        h = splitmix(h);
    }
    (h % folds as u64) as usize
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Cross-validation score of every candidate; `None` when some held-out prediction failed.
pub(crate) fn cv_scores(
    labels: &[usize],
    folds: usize,
    candidates: &[f64],
    absolute: bool,
    predict_fold: impl Fn(&[usize], &[usize], f64) -> Result<Vec<f64>> + Sync,
    response: &[f64],
) -> Vec<Option<f64>> {
    let groups: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i] == f);
            (train, test)
        })
        .filter(|(_, test)| !test.is_empty())
        .collect();
    candidates
        .par_iter()
        .map(|&h| {
            let mut total = 0.0;
            let mut count = 0usize;
            for (train, test) in &groups {
                let pred = predict_fold(train, test, h).ok()?;
                for (p, &i) in pred.iter().zip(test) {
                    let e = response[i] - p;
                    total += if absolute { e.abs() } else { e * e };
                    count += 1;
                }
            }
            Some(total / count as f64)
        })
        .collect()
}

/// Picks the candidate with the smallest score; ties go to the larger bandwidth.
pub(crate) fn select_min(candidates: &[f64], scores: &[Option<f64>]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&h, s) in candidates.iter().zip(scores) {
        if let Some(s) = *s {
            if best.is_none_or(|(_, bs)| s <= bs) {
                best = Some((h, s));
            }
        }
    }
    best.map(|(h, _)| h).ok_or(ModalError::AllFitsFailed)
}

fn check_folds(folds: usize, n: usize) -> Result<()> {
    if folds < 2 || folds > n {
        return Err(ModalError::InvalidInput(format!("fold count must be in 2..={n}, got {folds}")));
    }
    Ok(())
}

/// Cross-validation scores of the scalar baseline over the candidate grid.
pub fn cv_profile(data: &Dataset, method: Method, folds: usize) -> Result<Vec<(f64, Option<f64>)>> {
    check_folds(folds, data.len())?;
    if !method.is_baseline() {
        return Err(ModalError::InvalidInput("cross-validation applies to ll, lm and lmd".into()));
    }
    let (lo, hi) = data.x_range();
    let candidates = cv_grid(hi - lo);
    let labels: Vec<usize> = (0..data.len()).map(|i| fold_of(&[data.x()[i], data.y()[i]], folds)).collect();
    let scores = cv_scores(
        &labels,
        folds,
        &candidates,
        method == Method::LMD,
        |train, test, h| {
            let sub = data.subset(train)?;
            let spec = BaselineSpec::new(method, h)?;
            test.iter()
                .map(|&i| baseline_fit(&sub, data.x()[i], &spec).map(|f| f.coefficients[0]))
                .collect()
        },
        data.y(),
    );
    Ok(candidates.into_iter().zip(scores).collect())
}

/// Bandwidth minimising the out-of-fold squared error (LL, LM) or absolute error (LMD).
pub fn cv_bandwidth(data: &Dataset, method: Method, folds: usize) -> Result<f64> {
    let profile = cv_profile(data, method, folds)?;
    let (c, s): (Vec<f64>, Vec<Option<f64>>) = profile.into_iter().unzip();
    select_min(&c, &s)
}

/// Cross-validated bandwidth for a varying-coefficient baseline.
pub fn vc_cv_bandwidth(data: &VCDataset, method: Method, folds: usize) -> Result<f64> {
    check_folds(folds, data.len())?;
    if !method.is_baseline() {
        return Err(ModalError::InvalidInput("cross-validation applies to ll, lm and lmd".into()));
    }
    let lo = data.u().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.u().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let candidates = cv_grid(hi - lo);
    let labels: Vec<usize> = (0..data.len())
        .map(|i| {
            let mut key = vec![data.u()[i], data.y()[i]];
            key.extend_from_slice(data.row(i));
            fold_of(&key, folds)
        })
        .collect();
    let scores = cv_scores(
        &labels,
        folds,
        &candidates,
        method == Method::LMD,
        |train, test, h| {
            let sub = data.subset(train)?;
            let spec = BaselineSpec::new(method, h)?;
            test.iter()
                .map(|&i| {
                    let g = vc_baseline_fit(&sub, data.u()[i], &spec)?;
                    Ok(g.iter().zip(data.row(i)).map(|(g, x)| g * x).sum())
                })
                .collect()
        },
        data.y(),
    );
    select_min(&candidates, &scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data(n: usize) -> Dataset {
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let y = x.iter().map(|v| 1.0 - 3.0 * v).collect();
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("mean".parse::<Method>().is_err());
    }

    #[test]
    fn exact_line_recovered_by_every_baseline() {
        let data = line_data(41);
        for x0 in [0.1, 0.5, 0.93] {
            let truth = 1.0 - 3.0 * x0;
            assert!((local_linear_mean(&data, x0, 0.2).unwrap() - truth).abs() < 1e-8);
            assert!((local_median(&data, x0, 0.2).unwrap() - truth).abs() < 1e-8);
            assert!((local_m_huber(&data, x0, 0.2, DEFAULT_HUBER_C).unwrap() - truth).abs() < 1e-8);
        }
    }

    #[test]
    fn huge_bandwidth_gives_global_ols() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * v + 0.1 * (i as f64).sin()).collect();
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let ols = my + sxy / sxx * (0.3 - mx);
        assert!((local_linear_mean(&data, 0.3, 1e7).unwrap() - ols).abs() < 1e-8);
    }

    #[test]
    fn median_with_point_mass() {
        let data = Dataset::new(vec![-0.1, 0.0, 0.1, 5.0, 6.0], vec![2.0, 2.0, 2.0, 9.0, -4.0]).unwrap();
        assert!((local_median(&data, 0.0, 0.5).unwrap() - 2.0).abs() < 1e-9);
        // every in-window x identical: the local line is not identified
        let data = Dataset::new(vec![0.0, 0.0, 5.0, 6.0], vec![2.0, 2.0, 9.0, -4.0]).unwrap();
        assert!(matches!(local_median(&data, 0.0, 0.5), Err(ModalError::SingularDesign { .. })));
    }

    #[test]
    fn huber_limit_is_least_squares() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + ((i * 17) % 5) as f64 - 2.0).collect();
        let data = Dataset::new(x, y).unwrap();
        for x0 in [0.2, 0.5, 0.8] {
            let ll = local_linear_mean(&data, x0, 0.3).unwrap();
            let lm = local_m_huber(&data, x0, 0.3, 1e12).unwrap();
            assert!((ll - lm).abs() < 1e-8);
        }
    }

    #[test]
    fn huber_resists_gross_outlier() {
        let x: Vec<f64> = (0..41).map(|i| i as f64 / 40.0).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 2.0 * v + 0.2 * ((i * 7) as f64).sin()).collect();
        let clean = Dataset::new(x.clone(), y.clone()).unwrap();
        let mut dirty_y = y;
        dirty_y[20] += 50.0;
        let dirty = Dataset::new(x, dirty_y).unwrap();
        let ll = (local_linear_mean(&dirty, 0.5, 0.3).unwrap() - local_linear_mean(&clean, 0.5, 0.3).unwrap()).abs();
        let lm = (local_m_huber(&dirty, 0.5, 0.3, DEFAULT_HUBER_C).unwrap()
            - local_m_huber(&clean, 0.5, 0.3, DEFAULT_HUBER_C).unwrap())
        .abs();
        assert!(lm < ll, "lm moved {lm}, ll moved {ll}");
    }

    #[test]
    fn vc_reduces_to_scalar() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.sin() + 0.3 * ((i * 3) as f64).cos()).collect();
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let vc = VCDataset::new(x, vec![vec![1.0]; 40], y).unwrap();
        for method in [Method::LL, Method::LM, Method::LMD] {
            let spec = BaselineSpec::new(method, 0.25).unwrap();
            let s = baseline_fit(&data, 0.4, &spec).unwrap().coefficients[0];
            let v = vc_baseline_fit(&vc, 0.4, &spec).unwrap()[0];
            assert!((s - v).abs() < 1e-12, "{method}: {s} vs {v}");
        }
    }

    #[test]
    fn cv_grid_shape() {
        let g = cv_grid(2.0);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 0.1).abs() < 1e-15);
        assert!((g[19] - 2.0).abs() < 1e-15);
        assert!(cv_bandwidth(&line_data(10), Method::LL, 1).is_err());
        assert!(cv_bandwidth(&line_data(10), Method::LLMR, 5).is_err());
    }
}
